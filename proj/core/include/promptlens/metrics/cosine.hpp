#pragma once

#include <span>

namespace promptlens {

/// dot(u, v) / (|u| |v|), clamped to [-1, 1]. Accumulates in double.
/// Throws kDimensionMismatch for unequal lengths, kZeroVector when either
/// input has zero norm.
double cosine_similarity(std::span<const double> u, std::span<const double> v);
double cosine_similarity(std::span<const float> u, std::span<const float> v);

}  // namespace promptlens
