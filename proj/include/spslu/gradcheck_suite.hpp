#pragma once

#include "spslu/gradcheck.hpp"
#include "spslu/model.hpp"

namespace spslu {

/// Step size used by the `gradcheck` command.
inline constexpr double kGradCheckEpsilon = 1e-4;

/// A single LSTM cell step on one input row, double precision.
GradCheckResult gradcheck_lstm_cell(const GradCheckOptions& opts = {},
                                    std::uint64_t seed = 1);

/// One LSTM cell unrolled over three steps followed by a self-attention
/// block with one masked key, double precision.
GradCheckResult gradcheck_small(const GradCheckOptions& opts = {},
                                std::uint64_t seed = 1);

/// The whole model of `variant` on a single two-token utterance in train
/// mode with dropout disabled, double precision. Parameters are drawn from
/// U(-1, 1). Pipeline models are checked phase by phase, the slot phase
/// over its trainable tensors only.
GradCheckResult gradcheck_full(const GradCheckOptions& opts = {},
                               Variant variant = Variant::kFull,
                               bool teacher_forcing = true, std::uint64_t seed = 1);

}  // namespace spslu
