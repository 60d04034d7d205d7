#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace retreg {

enum class ErrorCode {
  // tensorio
  BadMagic,
  TruncatedFile,
  NonFiniteValue,
  IoError,
  UnsupportedFormat,
  AlreadyGrayscale,
  // geometry
  DegenerateProjection,
  DegenerateConfiguration,
  RankDeficient,
  TooFewMatches,
  NoModelFound,
  SingularHomography,
  ZeroDimension,
  // keypoints / descriptors
  OutOfBoundsKeypoint,
  DimMismatch,
  ZeroVector,
  OutOfBounds,
  // batchgen / losses
  TooFewSurvivingKeypoints,
  Divergent,
  // metrics
  AllPointsExcluded,
  EmptyInput,
  ImageTooSmall,
  BadCounts,
  LengthMismatch,
  ConstantInput,
  // harness
  NoPositives,
  InfeasibleOverlap,
  // cli
  MissingColumn,
  EmptyFile,
  InvalidArgument,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace retreg
