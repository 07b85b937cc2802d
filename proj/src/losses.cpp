#include "nsfx/losses.hpp"

#include <algorithm>
#include <cmath>

#include "nsfx/errors.hpp"
#include "nsfx/numerics.hpp"

namespace nsfx {

namespace {

// Past this shift exp() of the largest competing logit gap is computed
// relative to the max instead of relative to the true-class logit.
constexpr double kShiftThreshold = 600.0;

struct SigmaTerms {
    double sigma = 0.0;
    double norm_w = 0.0;
    double norm_x = 0.0;
    bool degenerate = true;
};

bool uses_norms(NoiseVariant v) { return v != NoiseVariant::none && v != NoiseVariant::free; }

bool uses_annealed_sigma(NoiseVariant v) {
    return v == NoiseVariant::annealed || v == NoiseVariant::normal || v == NoiseVariant::negative;
}

SigmaTerms sigma_terms(std::span<const double> w_y, std::span<const double> x, const NoiseSpec& spec) {
    SigmaTerms t;
    switch (spec.variant) {
        case NoiseVariant::none:
            return t;
        case NoiseVariant::free:
            t.sigma = spec.alpha;
            t.degenerate = false;
            return t;
        default:
            break;
    }
    t.norm_w = l2_norm(w_y);
    t.norm_x = l2_norm(x);
    if (t.norm_w == 0.0 || t.norm_x == 0.0) return t;
    t.degenerate = false;
    const double amplitude = spec.alpha * t.norm_w * t.norm_x;
    t.sigma = uses_annealed_sigma(spec.variant) ? amplitude * (1.0 - cosine_angle(w_y, x)) : amplitude;
    return t;
}

double noise_multiplier(NoiseVariant v, double xi) {
    switch (v) {
        case NoiseVariant::none: return 0.0;
        case NoiseVariant::normal: return xi;
        case NoiseVariant::negative: return -std::fabs(xi);
        default: return std::fabs(xi);
    }
}

// -log softmax_y where the true-class logit is replaced by `true_logit`.
// Written as log(1 + sum_{j != y} exp(f_j - true_logit)) so that lowering the
// true-class logit can never lower the computed loss.
double true_class_nll(std::span<const double> f, std::size_t y, double true_logit) {
    double shift = 0.0;
    for (std::size_t j = 0; j < f.size(); ++j) {
        if (j != y) shift = std::max(shift, f[j] - true_logit);
    }
    if (shift < kShiftThreshold) {
        double s = 0.0;
        for (std::size_t j = 0; j < f.size(); ++j) {
            if (j != y) s += std::exp(f[j] - true_logit);
        }
        return std::log1p(s);
    }
    double s = std::exp(-shift);
    for (std::size_t j = 0; j < f.size(); ++j) {
        if (j != y) s += std::exp(f[j] - true_logit - shift);
    }
    return shift + std::log(s);
}

void check_batch(const HeadParams& head, const Tensor& features, std::span<const std::size_t> labels) {
    if (features.rank() != 2) throw ShapeError("features must be N x D, got " + shape_string(features.shape()));
    if (features.dim(0) == 0) throw InvalidInput("empty batch");
    if (features.dim(1) != head.dim()) {
        throw ShapeError("feature dim " + std::to_string(features.dim(1)) + " != head dim " +
                         std::to_string(head.dim()));
    }
    if (labels.size() != features.dim(0)) {
        throw ShapeError(std::to_string(labels.size()) + " labels for " + std::to_string(features.dim(0)) +
                         " samples");
    }
    for (std::size_t y : labels) {
        if (y >= head.classes()) {
            throw IndexError("label " + std::to_string(y) + " outside [0, " + std::to_string(head.classes()) + ")");
        }
    }
}

void check_logits(std::span<const double> f) {
    for (double v : f) {
        if (!std::isfinite(v)) throw NumericError("non-finite logit");
    }
}

void compute_logits_into(const HeadParams& head, std::span<const double> x, std::span<double> out) {
    for (std::size_t j = 0; j < head.classes(); ++j) out[j] = dot(head.W.row(j), x) + head.b[j];
}

}  // namespace

HeadParams::HeadParams(Tensor weights, Tensor bias) : W(std::move(weights)), b(std::move(bias)) {
    if (W.rank() != 2 || b.rank() != 1 || W.dim(0) != b.dim(0)) {
        throw ShapeError("head W " + shape_string(W.shape()) + " and b " + shape_string(b.shape()) + " disagree");
    }
    if (W.dim(0) < 2 || W.dim(1) < 1) throw ShapeError("head needs at least 2 classes and 1 feature");
    require_finite(W, "head weights");
    require_finite(b, "head bias");
}

HeadParams HeadParams::zeros(std::size_t classes, std::size_t dim) {
    return HeadParams(Tensor({classes, dim}), Tensor({classes}));
}

std::string_view to_string(NoiseVariant v) {
    switch (v) {
        case NoiseVariant::none: return "none";
        case NoiseVariant::annealed: return "annealed";
        case NoiseVariant::normal: return "normal";
        case NoiseVariant::negative: return "negative";
        case NoiseVariant::free: return "free";
        case NoiseVariant::amplitude: return "amplitude";
    }
    return "?";
}

NoiseVariant parse_variant(std::string_view name) {
    for (NoiseVariant v : kAllVariants) {
        if (to_string(v) == name) return v;
    }
    throw InvalidInput("unknown noise variant '" + std::string(name) + "'");
}

NoiseSpec NoiseSpec::from_alpha_squared(NoiseVariant variant, double alpha_squared) {
    if (!(alpha_squared >= 0.0) || !std::isfinite(alpha_squared)) {
        throw InvalidInput("alpha_squared must be a finite non-negative number");
    }
    return NoiseSpec{variant, std::sqrt(alpha_squared)};
}

std::vector<double> compute_logits(const HeadParams& head, std::span<const double> features) {
    if (features.size() != head.dim()) {
        throw ShapeError("feature length " + std::to_string(features.size()) + " != head dim " +
                         std::to_string(head.dim()));
    }
    std::vector<double> f(head.classes());
    compute_logits_into(head, features, f);
    return f;
}

double noise_sigma(const HeadParams& head, std::span<const double> features, std::size_t label,
                   const NoiseSpec& spec) {
    if (label >= head.classes()) throw IndexError("label " + std::to_string(label) + " out of range");
    if (features.size() != head.dim()) throw ShapeError("feature length does not match head dim");
    return sigma_terms(head.W.row(label), features, spec).sigma;
}

std::vector<double> draw_noise(const NoiseSpec& spec, std::size_t count, Rng& rng) {
    std::vector<double> xi(count, 0.0);
    if (!spec.consumes_draws()) return xi;
    for (double& v : xi) v = rng.normal();
    return xi;
}

ForwardResult noisy_forward(const HeadParams& head, const Tensor& features, std::span<const std::size_t> labels,
                            const NoiseSpec& spec, Rng& rng) {
    check_batch(head, features, labels);
    const std::vector<double> xi = draw_noise(spec, labels.size(), rng);
    return noisy_forward(head, features, labels, spec, xi);
}

ForwardResult noisy_forward(const HeadParams& head, const Tensor& features, std::span<const std::size_t> labels,
                            const NoiseSpec& spec, std::span<const double> xi) {
    check_batch(head, features, labels);
    if (xi.size() != labels.size()) throw ConsistencyError("one noise draw per sample is required");

    const std::size_t n = labels.size();
    ForwardResult result;
    result.spec = spec;
    result.records.resize(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ForwardRecord& r = result.records[i];
        const auto x = features.row(i);
        r.label = labels[i];
        r.logits = compute_logits(head, x);
        check_logits(r.logits);
        r.xi = xi[i];
        r.xi_abs = std::fabs(xi[i]);
        r.multiplier = noise_multiplier(spec.variant, xi[i]);
        r.sigma = sigma_terms(head.W.row(r.label), x, spec).sigma;
        r.noisy_logit = r.logits[r.label] - r.sigma * r.multiplier;
        if (!std::isfinite(r.noisy_logit)) throw NumericError("non-finite noisy logit");

        std::vector<double> substituted = r.logits;
        substituted[r.label] = r.noisy_logit;
        r.probs = stable_softmax(substituted);
        r.loss = true_class_nll(r.logits, r.label, r.noisy_logit);
        total += r.loss;
    }
    result.loss = total / static_cast<double>(n);
    return result;
}

double noisy_loss(const HeadParams& head, const Tensor& features, std::span<const std::size_t> labels,
                  const NoiseSpec& spec, std::span<const double> xi) {
    check_batch(head, features, labels);
    if (xi.size() != labels.size()) throw ConsistencyError("one noise draw per sample is required");
    std::vector<double> f(head.classes());
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto x = features.row(i);
        const std::size_t y = labels[i];
        compute_logits_into(head, x, f);
        check_logits(f);
        const double n = sigma_terms(head.W.row(y), x, spec).sigma * noise_multiplier(spec.variant, xi[i]);
        total += true_class_nll(f, y, f[y] - n);
    }
    const double loss = total / static_cast<double>(labels.size());
    if (!std::isfinite(loss)) throw NumericError("non-finite loss");
    return loss;
}

HeadGradients noisy_backward(const ForwardResult& forward, const HeadParams& head, const Tensor& features) {
    const std::size_t n = forward.records.size();
    const std::size_t c = head.classes();
    const std::size_t d = head.dim();
    if (features.rank() != 2 || features.dim(0) != n || features.dim(1) != d) {
        throw ConsistencyError("backward batch " + shape_string(features.shape()) + " does not match " +
                               std::to_string(n) + " forward records");
    }

    HeadGradients g{Tensor({n, d}), Tensor({c, d}), Tensor({c})};
    const double inv_n = 1.0 / static_cast<double>(n);
    const NoiseSpec& spec = forward.spec;
    std::vector<double> df(c);

    for (std::size_t i = 0; i < n; ++i) {
        const ForwardRecord& r = forward.records[i];
        if (r.probs.size() != c || r.logits.size() != c || r.label >= c) {
            throw ConsistencyError("forward record " + std::to_string(i) + " does not match the head");
        }
        const auto x = features.row(i);
        auto dx = g.dX.row(i);
        for (std::size_t j = 0; j < c; ++j) df[j] = (r.probs[j] - (j == r.label ? 1.0 : 0.0)) * inv_n;

        for (std::size_t j = 0; j < c; ++j) {
            const auto w = head.W.row(j);
            auto dw = g.dW.row(j);
            for (std::size_t k = 0; k < d; ++k) {
                dx[k] += df[j] * w[k];
                dw[k] += df[j] * x[k];
            }
            g.db[j] += df[j];
        }

        // The noisy logit is f_y - multiplier * sigma(W_y, X); add the
        // -multiplier * dsigma terms on the true-class path.
        if (!uses_norms(spec.variant) || r.multiplier == 0.0 || spec.alpha == 0.0) continue;
        const auto w_y = head.W.row(r.label);
        const SigmaTerms t = sigma_terms(w_y, x, spec);
        if (t.degenerate) continue;
        const double scale = -df[r.label] * r.multiplier * spec.alpha;
        const bool annealed = uses_annealed_sigma(spec.variant);
        const double x_coeff = t.norm_w / t.norm_x;
        const double w_coeff = t.norm_x / t.norm_w;
        auto dw_y = g.dW.row(r.label);
        for (std::size_t k = 0; k < d; ++k) {
            const double dsigma_dx = x_coeff * x[k] - (annealed ? w_y[k] : 0.0);
            const double dsigma_dw = w_coeff * w_y[k] - (annealed ? x[k] : 0.0);
            dx[k] += scale * dsigma_dx;
            dw_y[k] += scale * dsigma_dw;
        }
    }
    require_finite(g.dX, "feature gradient");
    require_finite(g.dW, "head weight gradient");
    return g;
}

double softmax_cross_entropy(const HeadParams& head, const Tensor& features, std::span<const std::size_t> labels,
                             HeadGradients* grads) {
    check_batch(head, features, labels);
    const std::size_t n = labels.size();
    const std::size_t c = head.classes();
    const std::size_t d = head.dim();
    if (grads) *grads = HeadGradients{Tensor({n, d}), Tensor({c, d}), Tensor({c})};
    const double inv_n = 1.0 / static_cast<double>(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const auto x = features.row(i);
        const std::vector<double> f = compute_logits(head, x);
        const std::vector<double> p = stable_softmax(f);
        const double m = *std::max_element(f.begin(), f.end());
        double s = 0.0;
        for (double v : f) s += std::exp(v - m);
        total += m + std::log(s) - f[labels[i]];
        if (!grads) continue;
        for (std::size_t j = 0; j < c; ++j) {
            const double df = (p[j] - (j == labels[i] ? 1.0 : 0.0)) * inv_n;
            for (std::size_t k = 0; k < d; ++k) {
                grads->dX.at(i, k) += df * head.W.at(j, k);
                grads->dW.at(j, k) += df * x[k];
            }
            grads->db[j] += df;
        }
    }
    return total * inv_n;
}

double average_prediction(const HeadParams& head, const Tensor& features, std::span<const std::size_t> labels) {
    if (labels.empty()) throw InvalidInput("average prediction over an empty dataset");
    check_batch(head, features, labels);
    // Running mean: exact for constant inputs, so a uniform head gives 1/C.
    double mean = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const std::vector<double> p = stable_softmax(compute_logits(head, features.row(i)));
        mean += (p[labels[i]] - mean) / static_cast<double>(i + 1);
    }
    return mean;
}

double augmentation_angle(double theta, double alpha, double xi_abs) {
    const double a = alpha * xi_abs;
    // (1 + a) cos t - a, arranged so that cos t = 1 maps to exactly 1.
    const double cos_t = std::cos(theta);
    const double c = cos_t - a * (1.0 - cos_t);
    if (!(c >= -1.0) || c > 1.0) {
        throw DomainError("augmented cosine " + std::to_string(c) + " outside [-1, 1]");
    }
    return std::acos(c);
}

}  // namespace nsfx
