// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace fg3d {

/// Broad failure classes; the CLI maps each one to an exit code.
enum class ErrorKind {
  kDimension,
  kNumeric,
  kContract,
  kParse,
  kGeometry,
  kConfig,
  kData,
  kDetection,
  kIo,
  kVersion,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

#define FG3D_DEFINE_ERROR(Name, Kind)                                   \
  class Name : public Error {                                           \
   public:                                                              \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

FG3D_DEFINE_ERROR(DimensionError, kDimension)
FG3D_DEFINE_ERROR(NumericError, kNumeric)
FG3D_DEFINE_ERROR(ContractError, kContract)
FG3D_DEFINE_ERROR(GeometryError, kGeometry)
FG3D_DEFINE_ERROR(ConfigError, kConfig)
FG3D_DEFINE_ERROR(DataError, kData)
FG3D_DEFINE_ERROR(DetectionError, kDetection)
FG3D_DEFINE_ERROR(IoError, kIo)
FG3D_DEFINE_ERROR(VersionError, kVersion)

#undef FG3D_DEFINE_ERROR

/// Parse failure carrying the 1-based line number where it happened.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(ErrorKind::kParse,
              source + ":" + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace fg3d
