#include "nsfx/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "nsfx/errors.hpp"
#include "nsfx/numerics.hpp"
#include "nsfx/rng.hpp"

namespace nsfx {

namespace {

constexpr double kMinRowNorm = 1e-2;

void draw_row(std::span<double> row, double scale, Rng& rng) {
    do {
        for (double& v : row) v = scale * rng.normal();
    } while (l2_norm(row) < kMinRowNorm);
}

}  // namespace

double relative_error(double analytic, double numeric) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), kRelativeFloor});
    return std::fabs(analytic - numeric) / denom;
}

double GradReport::max_rel_err() const {
    double worst = 0.0;
    for (const auto& b : blocks) worst = std::max(worst, b.max_rel_err);
    return worst;
}

std::string GradReport::to_string() const {
    std::string out;
    char line[160];
    for (const auto& b : blocks) {
        std::snprintf(line, sizeof line, "%-4s max_abs=%.3e max_rel=%.3e worst_index=%zu\n", b.name.c_str(),
                      b.max_abs_err, b.max_rel_err, b.worst_index);
        out += line;
    }
    std::snprintf(line, sizeof line, "%s (tolerance %.1e)\n", passed ? "PASS" : "FAIL", tolerance);
    return out + line;
}

BlockReport compare_gradients(std::string name, const Tensor& analytic, const Tensor& numeric) {
    if (analytic.shape() != numeric.shape()) {
        throw ShapeError("gradient " + name + ": " + shape_string(analytic.shape()) + " vs " +
                         shape_string(numeric.shape()));
    }
    BlockReport r{std::move(name)};
    for (std::size_t k = 0; k < analytic.size(); ++k) {
        const double rel = relative_error(analytic[k], numeric[k]);
        r.max_abs_err = std::max(r.max_abs_err, std::fabs(analytic[k] - numeric[k]));
        if (rel > r.max_rel_err) {
            r.max_rel_err = rel;
            r.worst_index = k;
        }
    }
    return r;
}

Tensor finite_diff(const std::function<long double(const Tensor&)>& loss_fn, const Tensor& param, double h) {
    if (!(h > 0.0)) throw InvalidInput("finite difference step must be positive");
    Tensor grad(param.shape());
    Tensor probe = param;
    for (std::size_t k = 0; k < param.size(); ++k) {
        const double original = probe[k];
        probe[k] = original + h;
        const long double up = loss_fn(probe);
        probe[k] = original - h;
        const long double down = loss_fn(probe);
        probe[k] = original;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("non-finite loss while probing element " + std::to_string(k));
        }
        grad[k] = static_cast<double>((up - down) / (2.0L * h));
    }
    return grad;
}

std::vector<long double> reference_sample_losses(const HeadParams& head, const Tensor& features,
                                                 const std::vector<std::size_t>& labels, const NoiseSpec& spec,
                                                 const std::vector<double>& xi) {
    const std::size_t c = head.classes(), d = head.dim(), n = labels.size();
    if (features.rank() != 2 || features.dim(0) != n || features.dim(1) != d || xi.size() != n) {
        throw ShapeError("reference loss: inconsistent batch");
    }
    const long double alpha = spec.alpha;
    std::vector<long double> f(c);
    std::vector<long double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = labels[i];
        long double xx = 0.0L, ww = 0.0L, wx = 0.0L;
        for (std::size_t j = 0; j < c; ++j) {
            long double acc = head.b[j];
            for (std::size_t k = 0; k < d; ++k) acc += static_cast<long double>(head.W.at(j, k)) * features.at(i, k);
            f[j] = acc;
        }
        for (std::size_t k = 0; k < d; ++k) {
            const long double x = features.at(i, k), w = head.W.at(y, k);
            xx += x * x;
            ww += w * w;
            wx += w * x;
        }
        const long double amp = std::sqrt(xx) * std::sqrt(ww);
        const long double cos_t = amp > 0.0L ? std::clamp(wx / amp, -1.0L, 1.0L) : 1.0L;
        const long double abs_xi = std::fabs(static_cast<long double>(xi[i]));
        long double noise = 0.0L;  // n, with f_y <- f_y - n
        switch (spec.variant) {
            case NoiseVariant::none: break;
            case NoiseVariant::annealed: noise = alpha * amp * (1.0L - cos_t) * abs_xi; break;
            case NoiseVariant::normal: noise = alpha * amp * (1.0L - cos_t) * xi[i]; break;
            case NoiseVariant::negative: noise = -alpha * amp * (1.0L - cos_t) * abs_xi; break;
            case NoiseVariant::free: noise = alpha * abs_xi; break;
            case NoiseVariant::amplitude: noise = alpha * amp * abs_xi; break;
        }
        const long double true_logit = f[y] - noise;
        // -log(e^t / (e^t + sum_{j != y} e^f_j)) = log(1 + sum_{j != y} e^(f_j - t))
        long double shift = 0.0L;
        for (std::size_t j = 0; j < c; ++j) {
            if (j != y) shift = std::max(shift, f[j] - true_logit);
        }
        long double rest = 0.0L;
        for (std::size_t j = 0; j < c; ++j) {
            if (j != y) rest += std::exp(f[j] - true_logit - shift);
        }
        out[i] = shift > 0.0L ? shift + std::log(std::exp(-shift) + rest) : std::log1p(rest);
    }
    return out;
}

long double reference_noisy_loss(const HeadParams& head, const Tensor& features,
                                 const std::vector<std::size_t>& labels, const NoiseSpec& spec,
                                 const std::vector<double>& xi) {
    long double total = 0.0L;
    for (long double l : reference_sample_losses(head, features, labels, spec, xi)) total += l;
    return total / static_cast<long double>(labels.size());
}

CaseShape random_case_shape(std::uint64_t seed) {
    Rng rng(seed);
    CaseShape s;
    s.classes = 2 + rng.index(9);
    s.dim = 1 + rng.index(50);
    s.batch = 1 + rng.index(16);
    return s;
}

LossCase make_loss_case(const CaseShape& shape, std::uint64_t seed) {
    if (shape.classes < 2 || shape.dim < 1 || shape.batch < 1) throw InvalidInput("degenerate case shape");
    Rng rng = Rng::substream(seed, 0x67726164ULL);
    const double w_scale = 1.0 / std::sqrt(static_cast<double>(shape.dim));
    Tensor W({shape.classes, shape.dim});
    Tensor b({shape.classes});
    for (std::size_t j = 0; j < shape.classes; ++j) draw_row(W.row(j), w_scale, rng);
    for (double& v : b.values()) v = 0.5 * rng.normal();

    LossCase c{HeadParams(std::move(W), std::move(b)), Tensor({shape.batch, shape.dim}), {}, {}};
    for (std::size_t i = 0; i < shape.batch; ++i) {
        draw_row(c.features.row(i), 1.0, rng);
        c.labels.push_back(rng.index(shape.classes));
        c.xi.push_back(rng.normal());
    }
    return c;
}

GradReport check_loss_gradients(const LossCase& c, const NoiseSpec& spec, double tolerance, double h) {
    const ForwardResult fwd = noisy_forward(c.head, c.features, c.labels, spec, c.xi);
    const HeadGradients g = noisy_backward(fwd, c.head, c.features);

    // Probes return the batch loss minus its value at the base point, taken
    // sample by sample. The constant offset cancels in the central difference
    // and unperturbed samples contribute exactly zero.
    const std::vector<long double> base = reference_sample_losses(c.head, c.features, c.labels, spec, c.xi);
    auto shifted = [&](const HeadParams& head, const Tensor& x) {
        const auto terms = reference_sample_losses(head, x, c.labels, spec, c.xi);
        long double total = 0.0L;
        for (std::size_t i = 0; i < terms.size(); ++i) total += terms[i] - base[i];
        return total / static_cast<long double>(terms.size());
    };

    const Tensor num_dx = finite_diff([&](const Tensor& x) { return shifted(c.head, x); }, c.features, h);
    HeadParams probe = c.head;
    const Tensor num_dw = finite_diff(
        [&](const Tensor& w) {
            probe.W = w;
            return shifted(probe, c.features);
        },
        c.head.W, h);
    probe = c.head;
    const Tensor num_db = finite_diff(
        [&](const Tensor& b) {
            probe.b = b;
            return shifted(probe, c.features);
        },
        c.head.b, h);

    GradReport report;
    report.tolerance = tolerance;
    report.blocks.push_back(compare_gradients("dX", g.dX, num_dx));
    report.blocks.push_back(compare_gradients("dW", g.dW, num_dw));
    report.blocks.push_back(compare_gradients("db", g.db, num_db));
    report.passed = report.max_rel_err() < tolerance;
    return report;
}

GradReport check_loss_gradients(const CaseShape& shape, const NoiseSpec& spec, std::uint64_t seed,
                                double tolerance, double h) {
    if (shape.classes > 10 || shape.dim > 50 || shape.batch > 16) {
        throw InvalidInput("gradient checks are limited to C <= 10, D <= 50, N <= 16");
    }
    return check_loss_gradients(make_loss_case(shape, seed), spec, tolerance, h);
}

}  // namespace nsfx
