#pragma once

#include <stdexcept>
#include <string>

namespace imotion {

// Base of every error raised by the library. The CLI maps these to exit code 2.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define IMOTION_DEFINE_ERROR(Name)                                   \
  class Name : public Error {                                        \
   public:                                                           \
    explicit Name(const std::string& what) : Error(#Name ": " + what) {} \
  }

IMOTION_DEFINE_ERROR(DegenerateRotation);
IMOTION_DEFINE_ERROR(TopologyMismatch);
IMOTION_DEFINE_ERROR(DimensionMismatch);
IMOTION_DEFINE_ERROR(ShapeMismatch);
IMOTION_DEFINE_ERROR(EmptyTimeSubset);
IMOTION_DEFINE_ERROR(UnknownSequence);
IMOTION_DEFINE_ERROR(EmptyDataset);
IMOTION_DEFINE_ERROR(IoError);
IMOTION_DEFINE_ERROR(FormatVersionMismatch);
IMOTION_DEFINE_ERROR(InsufficientData);
IMOTION_DEFINE_ERROR(DegenerateData);
IMOTION_DEFINE_ERROR(LengthOutOfRange);
IMOTION_DEFINE_ERROR(InvalidArgument);

#undef IMOTION_DEFINE_ERROR

// Raised by the motion-file reader; carries the 1-based line number.
class SchemaError : public Error {
 public:
  SchemaError(std::size_t line, const std::string& what)
      : Error("SchemaError: line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

}  // namespace imotion
