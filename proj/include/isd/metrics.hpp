#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "isd/tensor.hpp"

// Segmentation / classification evaluation metrics. Plain double-precision
// functions; any nonzero value counts as foreground.

namespace isd::metrics {

// 2*|pred & gt| / (|pred| + |gt|); both empty -> 1.0.
double dice(const Tensor<float>& pred, const Tensor<float>& gt);

// Symmetric Hausdorff distance between foreground index coordinates under the
// Euclidean metric, brute force over all pairs. Throws DomainError if either
// mask is empty.
double hausdorff(const Tensor<float>& pred, const Tensor<float>& gt);

// Mann-Whitney formulation: probability a random positive outscores a random
// negative, ties counting 1/2. Needs at least one of each class.
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

}  // namespace isd::metrics
