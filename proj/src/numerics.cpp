#include "nsfx/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "nsfx/errors.hpp"

namespace nsfx {

double dot(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        throw ShapeError("dot: length " + std::to_string(u.size()) + " vs " + std::to_string(v.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
}

double l2_norm(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

std::vector<double> stable_softmax(std::span<const double> logits) {
    if (logits.empty()) throw InvalidInput("softmax of an empty vector");
    for (double v : logits) {
        if (!std::isfinite(v)) throw InvalidInput("softmax input is not finite");
    }
    const double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> out(logits.size());
    double total = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        out[j] = std::exp(logits[j] - m);
        total += out[j];
    }
    for (double& v : out) v /= total;
    return out;
}

double cosine_angle(std::span<const double> u, std::span<const double> v) {
    const double nu = l2_norm(u);
    const double nv = l2_norm(v);
    if (nu == 0.0 || nv == 0.0) throw DegenerateVector("cosine of a zero-norm vector");
    return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

}  // namespace nsfx
