// SPDX-License-Identifier: Apache-2.0
#include "xmr/error.hpp"

namespace xmr {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonPositiveTemperature: return "NonPositiveTemperature";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::EmptyAttributeSet: return "EmptyAttributeSet";
    case ErrorCode::EmptyImage: return "EmptyImage";
    case ErrorCode::PatchOutOfBounds: return "PatchOutOfBounds";
    case ErrorCode::EmptyQuery: return "EmptyQuery";
    case ErrorCode::SingleClassData: return "SingleClassData";
    case ErrorCode::UntrainedClassifier: return "UntrainedClassifier";
    case ErrorCode::UnknownToken: return "UnknownToken";
    case ErrorCode::StaleCache: return "StaleCache";
    case ErrorCode::NoInclusionRow: return "NoInclusionRow";
    case ErrorCode::NoMaskPresent: return "NoMaskPresent";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::TaskDatasetMismatch: return "TaskDatasetMismatch";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::CorruptCheckpoint: return "CorruptCheckpoint";
    case ErrorCode::EmptyGallery: return "EmptyGallery";
    case ErrorCode::MissingGroundTruth: return "MissingGroundTruth";
    case ErrorCode::UnroutedQuery: return "UnroutedQuery";
    case ErrorCode::IncomparableRuns: return "IncomparableRuns";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

}  // namespace xmr
