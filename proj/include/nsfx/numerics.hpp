#pragma once

#include <span>
#include <vector>

namespace nsfx {

double dot(std::span<const double> u, std::span<const double> v);
double l2_norm(std::span<const double> v);

/// Max-shifted softmax. Throws InvalidInput on empty or non-finite logits.
std::vector<double> stable_softmax(std::span<const double> logits);

/// dot(u, v) / (|u| |v|) clamped into [-1, 1].
/// Throws DegenerateVector when either argument has zero norm.
double cosine_angle(std::span<const double> u, std::span<const double> v);

}  // namespace nsfx
