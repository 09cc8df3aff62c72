#pragma once

#include <string_view>

namespace scoreid {

enum class WeightKind { Uniform, InvertedDistance, InvertedDistanceSquared, ExponentialDecay };

/// Rank weight W(n) for n in [1, N].
struct WeightFunction {
  WeightKind kind = WeightKind::InvertedDistance;
  double uniform_k = 1.0;
  double decay = 0.5;
};

/// Uniform: K; InvertedDistance: N/n; InvertedDistanceSquared: N/n^2;
/// ExponentialDecay: exp(-a n). Rank outside [1, N] is an argument error.
double weight(int rank, int writers, const WeightFunction& fn);

std::string_view to_string(WeightKind kind);
WeightKind parse_weight_kind(std::string_view name);

}  // namespace scoreid
