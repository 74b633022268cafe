// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace xmr {

enum class ErrorCode {
  ZeroVector,
  DimensionMismatch,
  ShapeMismatch,
  NonPositiveTemperature,
  ConfigInvalid,
  EmptyAttributeSet,
  EmptyImage,
  PatchOutOfBounds,
  EmptyQuery,
  SingleClassData,
  UntrainedClassifier,
  UnknownToken,
  StaleCache,
  NoInclusionRow,
  NoMaskPresent,
  EmptyBatch,
  TaskDatasetMismatch,
  DivergedLoss,
  CorruptCheckpoint,
  EmptyGallery,
  MissingGroundTruth,
  UnroutedQuery,
  IncomparableRuns,
  Io,
};

std::string_view to_string(ErrorCode code);

/// Every failure in the library surfaces as this exception; `code()` names the
/// contract that was violated.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace xmr
