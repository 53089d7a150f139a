#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace divtol {

/// Coarse error classes. The CLI maps these to exit codes and to the
/// "class" field of its machine-readable error object.
enum class ErrorClass {
  input,          // malformed arguments to an in-memory operation
  estimation,     // estimator preconditions (e.g. a missing group)
  degenerate,     // objective without curvature in theta
  inference,      // bootstrap could not produce an interval
  configuration,  // invalid simulation or CLI configuration
  parse,          // unparseable file content
  schema,         // file structure does not match the layout
  data,           // values out of their domain
  linkage,        // actions and exposures do not join
  study,          // Monte-Carlo study produced nothing usable
  io,             // file could not be opened or written
};

constexpr std::string_view to_string(ErrorClass c) noexcept {
  switch (c) {
    case ErrorClass::input: return "input";
    case ErrorClass::estimation: return "estimation";
    case ErrorClass::degenerate: return "degenerate";
    case ErrorClass::inference: return "inference";
    case ErrorClass::configuration: return "configuration";
    case ErrorClass::parse: return "parse";
    case ErrorClass::schema: return "schema";
    case ErrorClass::data: return "data";
    case ErrorClass::linkage: return "linkage";
    case ErrorClass::study: return "study";
    case ErrorClass::io: return "io";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& what)
      : std::runtime_error(what), class_(cls) {}

  ErrorClass error_class() const noexcept { return class_; }

 private:
  ErrorClass class_;
};

inline void require(bool condition, ErrorClass cls, const std::string& what) {
  if (!condition) throw Error(cls, what);
}

}  // namespace divtol
