#pragma once

#include <stdexcept>
#include <string>

namespace protofed {

/// Base class for every error raised by the library. `kind()` is the stable
/// machine-readable name written into the CLI's error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

#define PROTOFED_DEFINE_ERROR(Name)                                  \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(#Name, what) {}   \
  };

PROTOFED_DEFINE_ERROR(ShapeError)
PROTOFED_DEFINE_ERROR(NumericError)
PROTOFED_DEFINE_ERROR(LayoutError)
PROTOFED_DEFINE_ERROR(ConfigError)
PROTOFED_DEFINE_ERROR(DataError)
PROTOFED_DEFINE_ERROR(ParseError)
PROTOFED_DEFINE_ERROR(TrainingError)
PROTOFED_DEFINE_ERROR(IoError)

#undef PROTOFED_DEFINE_ERROR

}  // namespace protofed
