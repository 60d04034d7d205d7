#include "retreg/error.hpp"

namespace retreg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::AlreadyGrayscale: return "AlreadyGrayscale";
    case ErrorCode::DegenerateProjection: return "DegenerateProjection";
    case ErrorCode::DegenerateConfiguration: return "DegenerateConfiguration";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::TooFewMatches: return "TooFewMatches";
    case ErrorCode::NoModelFound: return "NoModelFound";
    case ErrorCode::SingularHomography: return "SingularHomography";
    case ErrorCode::ZeroDimension: return "ZeroDimension";
    case ErrorCode::OutOfBoundsKeypoint: return "OutOfBoundsKeypoint";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::TooFewSurvivingKeypoints: return "TooFewSurvivingKeypoints";
    case ErrorCode::Divergent: return "Divergent";
    case ErrorCode::AllPointsExcluded: return "AllPointsExcluded";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::ImageTooSmall: return "ImageTooSmall";
    case ErrorCode::BadCounts: return "BadCounts";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::ConstantInput: return "ConstantInput";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::InfeasibleOverlap: return "InfeasibleOverlap";
    case ErrorCode::MissingColumn: return "MissingColumn";
    case ErrorCode::EmptyFile: return "EmptyFile";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace retreg
