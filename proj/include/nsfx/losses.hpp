#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "nsfx/rng.hpp"
#include "nsfx/tensor.hpp"

namespace nsfx {

/// Final fully connected component: logits f = W X + b.
/// W is classes x dim (row j is the class-j weight vector), b has length classes.
struct HeadParams {
    Tensor W;
    Tensor b;

    HeadParams() = default;
    HeadParams(Tensor weights, Tensor bias);
    static HeadParams zeros(std::size_t classes, std::size_t dim);

    std::size_t classes() const noexcept { return W.empty() ? 0 : W.dim(0); }
    std::size_t dim() const noexcept { return W.empty() ? 0 : W.dim(1); }
};

enum class NoiseVariant { none, annealed, normal, negative, free, amplitude };

inline constexpr NoiseVariant kAllVariants[] = {NoiseVariant::none,     NoiseVariant::annealed,
                                                NoiseVariant::normal,   NoiseVariant::negative,
                                                NoiseVariant::free,     NoiseVariant::amplitude};

std::string_view to_string(NoiseVariant v);
/// Throws InvalidInput for unknown names.
NoiseVariant parse_variant(std::string_view name);

/// Selects how the true-class logit is perturbed.
///
///   annealed   n = sigma |xi|,  sigma = alpha |W_y| |X| (1 - cos theta_y)
///   normal     n = sigma xi     (annealed sigma)
///   negative   n = -sigma |xi|  (annealed sigma)
///   free       n = alpha |xi|
///   amplitude  n = alpha |W_y| |X| |xi|
///
/// and the noisy logit is f_y - n. The noise location is fixed at zero.
struct NoiseSpec {
    NoiseVariant variant = NoiseVariant::none;
    double alpha = 0.0;

    static constexpr double mu = 0.0;

    /// The user-facing knob is alpha squared.
    static NoiseSpec from_alpha_squared(NoiseVariant variant, double alpha_squared);
    double alpha_squared() const noexcept { return alpha * alpha; }
    /// Variants other than `none` consume one normal draw per sample.
    bool consumes_draws() const noexcept { return variant != NoiseVariant::none; }
};

/// f_j = dot(W_j, X) + b_j.
std::vector<double> compute_logits(const HeadParams& head, std::span<const double> features);

/// Noise scale for one sample. Zero-norm W_y or X yields 0.
double noise_sigma(const HeadParams& head, std::span<const double> features, std::size_t label,
                   const NoiseSpec& spec);

/// Standard normal draws for a batch, one per sample. `none` draws nothing
/// and returns zeros.
std::vector<double> draw_noise(const NoiseSpec& spec, std::size_t count, Rng& rng);

/// Everything the backward pass needs for one sample.
struct ForwardRecord {
    std::vector<double> logits;
    double xi = 0.0;          ///< raw standard normal draw
    double xi_abs = 0.0;
    double multiplier = 0.0;  ///< n = sigma * multiplier (|xi|, xi or -|xi|)
    double sigma = 0.0;
    double noisy_logit = 0.0;
    std::vector<double> probs;  ///< softmax over the noise-substituted logits
    double loss = 0.0;
    std::size_t label = 0;
};

struct ForwardResult {
    double loss = 0.0;  ///< batch mean
    NoiseSpec spec;
    std::vector<ForwardRecord> records;
};

struct HeadGradients {
    Tensor dX;  ///< N x D
    Tensor dW;  ///< C x D
    Tensor db;  ///< C
};

/// Noisy softmax cross-entropy over a batch with fresh draws from `rng`.
ForwardResult noisy_forward(const HeadParams& head, const Tensor& features, std::span<const std::size_t> labels,
                            const NoiseSpec& spec, Rng& rng);

/// Same as noisy_forward but replays the given draws (frozen noise).
ForwardResult noisy_forward(const HeadParams& head, const Tensor& features, std::span<const std::size_t> labels,
                            const NoiseSpec& spec, std::span<const double> xi);

/// Batch-mean loss only; no records are built. Used for finite-difference probes.
double noisy_loss(const HeadParams& head, const Tensor& features, std::span<const std::size_t> labels,
                  const NoiseSpec& spec, std::span<const double> xi);

/// Analytic gradients of the batch-mean loss, treating the draws as constants.
HeadGradients noisy_backward(const ForwardResult& forward, const HeadParams& head, const Tensor& features);

/// Plain softmax cross-entropy, batch mean, and its gradients. Reference path
/// that never touches the noise code.
double softmax_cross_entropy(const HeadParams& head, const Tensor& features, std::span<const std::size_t> labels,
                             HeadGradients* grads = nullptr);

/// Mean true-class probability under the plain softmax.
double average_prediction(const HeadParams& head, const Tensor& features, std::span<const std::size_t> labels);

/// Angle whose cosine is (1 + alpha |xi|) cos theta - alpha |xi|.
/// Throws DomainError when that value leaves [-1, 1].
double augmentation_angle(double theta, double alpha, double xi_abs);

}  // namespace nsfx
