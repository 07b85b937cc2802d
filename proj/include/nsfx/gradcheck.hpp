#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nsfx/losses.hpp"
#include "nsfx/tensor.hpp"

namespace nsfx {

inline constexpr double kDefaultStep = 1e-6;
inline constexpr double kRelativeFloor = 1e-8;

/// |a - n| / max(|a|, |n|, 1e-8).
double relative_error(double analytic, double numeric);

struct BlockReport {
    std::string name;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    std::size_t worst_index = 0;
};

struct GradReport {
    std::vector<BlockReport> blocks;
    double tolerance = 0.0;
    bool passed = false;

    double max_rel_err() const;
    std::string to_string() const;
};

BlockReport compare_gradients(std::string name, const Tensor& analytic, const Tensor& numeric);

/// Central differences (L(p + h e_k) - L(p - h e_k)) / 2h for every element k.
/// The difference is taken in the precision the loss returns, so an
/// extended-precision loss keeps its extra digits.
/// Throws NumericError naming the element if a probe returns a non-finite loss.
Tensor finite_diff(const std::function<long double(const Tensor&)>& loss_fn, const Tensor& param,
                   double h = kDefaultStep);

/// Frozen-noise per-sample losses evaluated in long double. Written directly
/// from the loss definition and shares no code with the losses module; this
/// is what the gradient checks differentiate numerically. Each term keeps
/// relative accuracy even when the sample is saturated.
std::vector<long double> reference_sample_losses(const HeadParams& head, const Tensor& features,
                                                 const std::vector<std::size_t>& labels, const NoiseSpec& spec,
                                                 const std::vector<double>& xi);

/// Batch mean of reference_sample_losses.
long double reference_noisy_loss(const HeadParams& head, const Tensor& features,
                                 const std::vector<std::size_t>& labels, const NoiseSpec& spec,
                                 const std::vector<double>& xi);

struct CaseShape {
    std::size_t classes = 2;
    std::size_t dim = 1;
    std::size_t batch = 1;
};

/// Uniform shape with classes in [2, 10], dim in [1, 50], batch in [1, 16].
CaseShape random_case_shape(std::uint64_t seed);

/// Random head, features, labels and frozen draws for one loss check.
struct LossCase {
    HeadParams head;
    Tensor features;
    std::vector<std::size_t> labels;
    std::vector<double> xi;
};

/// Rows of X and W whose norm falls below a small threshold are redrawn so
/// probes never straddle the non-differentiable point of the norm.
/// The draws are standard normal for every variant, so the same seed gives
/// the same case across variants.
LossCase make_loss_case(const CaseShape& shape, std::uint64_t seed);

/// Analytic (dX, dW, db) from noisy_backward against finite differences of
/// the frozen-noise loss. Passes iff every relative error is below `tolerance`.
GradReport check_loss_gradients(const CaseShape& shape, const NoiseSpec& spec, std::uint64_t seed,
                                double tolerance, double h = kDefaultStep);

GradReport check_loss_gradients(const LossCase& c, const NoiseSpec& spec, double tolerance,
                                double h = kDefaultStep);

}  // namespace nsfx
