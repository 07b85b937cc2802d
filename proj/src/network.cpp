#include "nsfx/network.hpp"

#include <charconv>
#include <cmath>

#include "nsfx/errors.hpp"

namespace nsfx {

namespace {

Shape with_batch(std::size_t n, const Shape& sample) {
    Shape s{n};
    s.insert(s.end(), sample.begin(), sample.end());
    return s;
}

Shape sample_shape(const Tensor& x) { return Shape(x.shape().begin() + 1, x.shape().end()); }

void require_shape(const Tensor& t, const Shape& expected, const char* what) {
    if (t.shape() != expected) {
        throw ShapeError(std::string(what) + ": expected " + shape_string(expected) + ", got " +
                         shape_string(t.shape()));
    }
}

Parameter make_param(std::string name, Tensor value, bool decays) {
    Tensor grad(value.shape());
    return Parameter{std::move(name), std::move(value), std::move(grad), decays};
}

class Dense final : public Layer {
public:
    Dense(const LayerSpec& spec, Rng& rng, const std::string& name) : in_(spec.in), out_(spec.out) {
        auto init = he_init(spec, rng);
        w_ = make_param(name + ".weight", std::move(init[0]), true);
        b_ = make_param(name + ".bias", std::move(init[1]), false);
    }

    Shape output_shape(const Shape& in) const override {
        if (in.size() != 1 || in[0] != in_) {
            throw ShapeError("dense expects a flat input of " + std::to_string(in_) + ", got " + shape_string(in));
        }
        return {out_};
    }

    Tensor forward(const Tensor& x) const override {
        const std::size_t n = x.dim(0);
        Tensor y({n, out_});
        std::size_t s = 0;
        // Four samples share each weight row; every sample keeps its own
        // left-to-right summation order.
        for (; s + 4 <= n; s += 4) {
            const double* x0 = x.data() + s * in_;
            const double* x1 = x0 + in_;
            const double* x2 = x1 + in_;
            const double* x3 = x2 + in_;
            for (std::size_t o = 0; o < out_; ++o) {
                const double* w = w_.value.data() + o * in_;
                double a0 = b_.value[o], a1 = a0, a2 = a0, a3 = a0;
                for (std::size_t i = 0; i < in_; ++i) {
                    a0 += w[i] * x0[i];
                    a1 += w[i] * x1[i];
                    a2 += w[i] * x2[i];
                    a3 += w[i] * x3[i];
                }
                y.data()[s * out_ + o] = a0;
                y.data()[(s + 1) * out_ + o] = a1;
                y.data()[(s + 2) * out_ + o] = a2;
                y.data()[(s + 3) * out_ + o] = a3;
            }
        }
        for (; s < n; ++s) {
            const double* xs = x.data() + s * in_;
            double* ys = y.data() + s * out_;
            for (std::size_t o = 0; o < out_; ++o) {
                const double* w = w_.value.data() + o * in_;
                double acc = b_.value[o];
                for (std::size_t i = 0; i < in_; ++i) acc += w[i] * xs[i];
                ys[o] = acc;
            }
        }
        return y;
    }

    Tensor backward(const Tensor& x, const Tensor& dy, bool input_grad) override {
        const std::size_t n = x.dim(0);
        Tensor dx({n, in_});
        for (std::size_t s = 0; s < n; ++s) {
            const double* xs = x.data() + s * in_;
            const double* dys = dy.data() + s * out_;
            double* dxs = dx.data() + s * in_;
            for (std::size_t o = 0; o < out_; ++o) {
                const double g = dys[o];
                if (g == 0.0) continue;
                const double* w = w_.value.data() + o * in_;
                double* dw = w_.grad.data() + o * in_;
                for (std::size_t i = 0; i < in_; ++i) dw[i] += g * xs[i];
                if (input_grad) {
                    for (std::size_t i = 0; i < in_; ++i) dxs[i] += g * w[i];
                }
                b_.grad[o] += g;
            }
        }
        return dx;
    }

    std::vector<Parameter*> parameters() override { return {&w_, &b_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dense>(*this); }

private:
    std::size_t in_, out_;
    Parameter w_, b_;
};

// Per-channel slopes; channel axis is 1 (features of a flat input).
class PRelu final : public Layer {
public:
    PRelu(const LayerSpec& spec, Rng& rng, const std::string& name) : channels_(spec.in) {
        slope_ = make_param(name + ".slope", std::move(he_init(spec, rng)[0]), false);
    }

    Shape output_shape(const Shape& in) const override {
        if (in.empty() || in[0] != channels_) {
            throw ShapeError("prelu expects " + std::to_string(channels_) + " channels, got " + shape_string(in));
        }
        return in;
    }

    Tensor forward(const Tensor& x) const override {
        Tensor y = x;
        const std::size_t inner = inner_size(x);
        for (std::size_t i = 0; i < y.size(); ++i) {
            if (y[i] < 0.0) y[i] *= slope_.value[(i / inner) % channels_];
        }
        return y;
    }

    Tensor backward(const Tensor& x, const Tensor& dy, bool) override {
        Tensor dx = dy;
        const std::size_t inner = inner_size(x);
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (x[i] < 0.0) {
                const std::size_t c = (i / inner) % channels_;
                slope_.grad[c] += dy[i] * x[i];
                dx[i] = dy[i] * slope_.value[c];
            }
        }
        return dx;
    }

    std::vector<Parameter*> parameters() override { return {&slope_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<PRelu>(*this); }

private:
    static std::size_t inner_size(const Tensor& x) {
        std::size_t inner = 1;
        for (std::size_t a = 2; a < x.rank(); ++a) inner *= x.dim(a);
        return inner;
    }

    std::size_t channels_;
    Parameter slope_;
};

class Conv2d final : public Layer {
public:
    Conv2d(const LayerSpec& spec, Rng& rng, const std::string& name) : in_ch_(spec.in), out_ch_(spec.out) {
        auto init = he_init(spec, rng);
        w_ = make_param(name + ".weight", std::move(init[0]), true);
        b_ = make_param(name + ".bias", std::move(init[1]), false);
    }

    Shape output_shape(const Shape& in) const override {
        if (in.size() != 3 || in[0] != in_ch_) {
            throw ShapeError("conv expects " + std::to_string(in_ch_) + " x H x W, got " + shape_string(in));
        }
        return {out_ch_, in[1], in[2]};
    }

    Tensor forward(const Tensor& x) const override {
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        Tensor y({n, out_ch_, h, w});
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t o = 0; o < out_ch_; ++o) {
                double* plane = y.data() + ((s * out_ch_ + o) * h) * w;
                for (std::size_t i = 0; i < h * w; ++i) plane[i] = b_.value[o];
                for (std::size_t c = 0; c < in_ch_; ++c) {
                    const double* src = x.data() + ((s * in_ch_ + c) * h) * w;
                    const double* k = w_.value.data() + (o * in_ch_ + c) * 9;
                    for_each_tap(h, w, [&](std::size_t oy, std::size_t ox, std::size_t iy, std::size_t ix,
                                           std::size_t t) { plane[oy * w + ox] += k[t] * src[iy * w + ix]; });
                }
            }
        }
        return y;
    }

    Tensor backward(const Tensor& x, const Tensor& dy, bool input_grad) override {
        const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3);
        Tensor dx(x.shape());
        for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t o = 0; o < out_ch_; ++o) {
                const double* g = dy.data() + ((s * out_ch_ + o) * h) * w;
                for (std::size_t i = 0; i < h * w; ++i) b_.grad[o] += g[i];
                for (std::size_t c = 0; c < in_ch_; ++c) {
                    const double* src = x.data() + ((s * in_ch_ + c) * h) * w;
                    double* dsrc = dx.data() + ((s * in_ch_ + c) * h) * w;
                    const double* k = w_.value.data() + (o * in_ch_ + c) * 9;
                    double* dk = w_.grad.data() + (o * in_ch_ + c) * 9;
                    for_each_tap(h, w, [&](std::size_t oy, std::size_t ox, std::size_t iy, std::size_t ix,
                                           std::size_t t) { dk[t] += g[oy * w + ox] * src[iy * w + ix]; });
                    if (!input_grad) continue;
                    for_each_tap(h, w, [&](std::size_t oy, std::size_t ox, std::size_t iy, std::size_t ix,
                                           std::size_t t) { dsrc[iy * w + ix] += g[oy * w + ox] * k[t]; });
                }
            }
        }
        return dx;
    }

    std::vector<Parameter*> parameters() override { return {&w_, &b_}; }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

private:
    // Visits every in-bounds (output pixel, input pixel, tap index) triple of
    // a 3x3 kernel with padding 1.
    template <typename F>
    static void for_each_tap(std::size_t h, std::size_t w, F&& f) {
        for (std::size_t ky = 0; ky < 3; ++ky) {
            for (std::size_t kx = 0; kx < 3; ++kx) {
                const std::size_t t = ky * 3 + kx;
                const std::size_t y0 = ky == 0 ? 1 : 0, y1 = ky == 2 ? h - 1 : h;
                const std::size_t x0 = kx == 0 ? 1 : 0, x1 = kx == 2 ? w - 1 : w;
                for (std::size_t oy = y0; oy < y1; ++oy) {
                    for (std::size_t ox = x0; ox < x1; ++ox) f(oy, ox, oy + ky - 1, ox + kx - 1, t);
                }
            }
        }
    }

    std::size_t in_ch_, out_ch_;
    Parameter w_, b_;
};

class MaxPool final : public Layer {
public:
    Shape output_shape(const Shape& in) const override {
        if (in.size() != 3) throw ShapeError("maxpool expects C x H x W, got " + shape_string(in));
        if (in[1] % 2 || in[2] % 2) throw ShapeError("maxpool needs even spatial dims, got " + shape_string(in));
        return {in[0], in[1] / 2, in[2] / 2};
    }

    Tensor forward(const Tensor& x) const override {
        const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
        Tensor y({x.dim(0), x.dim(1), h / 2, w / 2});
        for (std::size_t p = 0; p < planes; ++p) {
            const double* src = x.data() + p * h * w;
            double* dst = y.data() + p * (h / 2) * (w / 2);
            for (std::size_t oy = 0; oy < h / 2; ++oy) {
                for (std::size_t ox = 0; ox < w / 2; ++ox) dst[oy * (w / 2) + ox] = src[argmax(src, w, oy, ox)];
            }
        }
        return y;
    }

    Tensor backward(const Tensor& x, const Tensor& dy, bool) override {
        const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
        Tensor dx(x.shape());
        for (std::size_t p = 0; p < planes; ++p) {
            const double* src = x.data() + p * h * w;
            const double* g = dy.data() + p * (h / 2) * (w / 2);
            double* dsrc = dx.data() + p * h * w;
            for (std::size_t oy = 0; oy < h / 2; ++oy) {
                for (std::size_t ox = 0; ox < w / 2; ++ox) dsrc[argmax(src, w, oy, ox)] += g[oy * (w / 2) + ox];
            }
        }
        return dx;
    }

    std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool>(*this); }

private:
    // First maximum in row-major window order.
    static std::size_t argmax(const double* src, std::size_t w, std::size_t oy, std::size_t ox) {
        std::size_t best = (2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
                if (src[idx] > src[best]) best = idx;
            }
        }
        return best;
    }
};

class Flatten final : public Layer {
public:
    Shape output_shape(const Shape& in) const override { return {shape_size(in)}; }
    Tensor forward(const Tensor& x) const override { return x.reshaped({x.dim(0), x.row_size()}); }
    Tensor backward(const Tensor& x, const Tensor& dy, bool) override { return dy.reshaped(x.shape()); }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Flatten>(*this); }
};

std::size_t parse_extent(std::string_view token, std::string_view text) {
    std::size_t value = 0;
    const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (ec != std::errc() || ptr != token.data() + token.size() || value == 0) {
        throw InvalidInput("bad extent '" + std::string(token) + "' in layer '" + std::string(text) + "'");
    }
    return value;
}

}  // namespace

LayerSpec LayerSpec::parse(std::string_view text) {
    std::vector<std::string_view> parts;
    std::size_t start = 0;
    for (;;) {
        const std::size_t colon = text.find(':', start);
        parts.push_back(text.substr(start, colon - start));
        if (colon == std::string_view::npos) break;
        start = colon + 1;
    }
    const std::string_view kind = parts[0];
    auto arity = [&](std::size_t n) {
        if (parts.size() != n + 1) throw InvalidInput("layer '" + std::string(text) + "' has the wrong arity");
    };
    if (kind == "dense") {
        arity(2);
        return dense(parse_extent(parts[1], text), parse_extent(parts[2], text));
    }
    if (kind == "conv") {
        arity(2);
        return conv2d(parse_extent(parts[1], text), parse_extent(parts[2], text));
    }
    if (kind == "prelu") {
        arity(1);
        return prelu(parse_extent(parts[1], text));
    }
    if (kind == "maxpool") {
        arity(0);
        return maxpool();
    }
    if (kind == "flatten") {
        arity(0);
        return flatten();
    }
    throw InvalidInput("unknown layer kind '" + std::string(kind) + "'");
}

std::string LayerSpec::to_string() const {
    switch (kind) {
        case LayerKind::dense: return "dense:" + std::to_string(in) + ":" + std::to_string(out);
        case LayerKind::conv2d: return "conv:" + std::to_string(in) + ":" + std::to_string(out);
        case LayerKind::prelu: return "prelu:" + std::to_string(in);
        case LayerKind::maxpool: return "maxpool";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

std::vector<Tensor> he_init(const LayerSpec& layer, Rng& rng) {
    auto gaussian = [&rng](Shape shape, std::size_t fan_in) {
        Tensor t(std::move(shape));
        const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& v : t.values()) v = std_dev * rng.normal();
        return t;
    };
    switch (layer.kind) {
        case LayerKind::dense:
            return {gaussian({layer.out, layer.in}, layer.in), Tensor({layer.out})};
        case LayerKind::conv2d:
            return {gaussian({layer.out, layer.in, 3, 3}, layer.in * 9), Tensor({layer.out})};
        case LayerKind::prelu:
            return {Tensor({layer.in}, 0.25)};
        default:
            return {};
    }
}

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, Rng& init_rng, const std::string& name) {
    switch (spec.kind) {
        case LayerKind::dense: return std::make_unique<Dense>(spec, init_rng, name);
        case LayerKind::prelu: return std::make_unique<PRelu>(spec, init_rng, name);
        case LayerKind::conv2d: return std::make_unique<Conv2d>(spec, init_rng, name);
        case LayerKind::maxpool: return std::make_unique<MaxPool>();
        case LayerKind::flatten: return std::make_unique<Flatten>();
    }
    throw InvalidInput("unknown layer kind");
}

Network::Network(Shape input_shape, std::vector<LayerSpec> layers, Rng& init_rng)
    : input_shape_(std::move(input_shape)), specs_(std::move(layers)) {
    Shape shape = input_shape_;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
        auto layer = make_layer(specs_[i], init_rng, "layer" + std::to_string(i));
        try {
            shape = layer->output_shape(shape);
        } catch (const ShapeError& e) {
            throw ShapeError("layer " + std::to_string(i) + " (" + specs_[i].to_string() + "): " + e.what());
        }
        layers_.push_back(std::move(layer));
    }
    if (shape.size() != 1) throw ShapeError("network output must be flat, got " + shape_string(shape));
    feature_dim_ = shape[0];
}

Network::Network(const Network& other)
    : input_shape_(other.input_shape_), specs_(other.specs_), feature_dim_(other.feature_dim_) {
    for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
    if (this != &other) *this = Network(other);
    return *this;
}

Tensor Network::forward(const Tensor& x, ForwardCache* cache) const {
    if (x.rank() < 1 || x.row_size() != shape_size(input_shape_)) {
        throw ShapeError("network input " + shape_string(x.shape()) + " does not match sample shape " +
                         shape_string(input_shape_));
    }
    Tensor h = x.reshaped(with_batch(x.dim(0), input_shape_));
    if (cache) cache->inputs.clear();
    for (const auto& layer : layers_) {
        if (cache) cache->inputs.push_back(h);
        h = layer->forward(h);
    }
    if (cache) cache->output_shape = h.shape();
    return h;
}

Tensor Network::backward(const ForwardCache& cache, const Tensor& d_features, bool input_grad) {
    if (cache.inputs.size() != layers_.size()) throw ConsistencyError("forward cache does not match this network");
    require_shape(d_features, cache.output_shape, "feature gradient");
    if (!cache.inputs.empty() && sample_shape(cache.inputs.front()) != input_shape_) {
        throw ConsistencyError("forward cache does not match this network");
    }
    Tensor g = d_features;
    for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(cache.inputs[i], g, i > 0 || input_grad);
    return g;
}

std::vector<Parameter*> Network::parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers_) {
        for (Parameter* p : l->parameters()) out.push_back(p);
    }
    return out;
}

std::vector<const Parameter*> Network::parameters() const {
    std::vector<const Parameter*> out;
    for (const auto& l : layers_) {
        for (Parameter* p : l->parameters()) out.push_back(p);
    }
    return out;
}

void Network::zero_grad() {
    for (Parameter* p : parameters()) p->grad.fill(0.0);
}

std::vector<LayerSpec> desk_cnn_layers() {
    return {LayerSpec::conv2d(1, 8),  LayerSpec::prelu(8),  LayerSpec::maxpool(),
            LayerSpec::conv2d(8, 16), LayerSpec::prelu(16), LayerSpec::maxpool(),
            LayerSpec::flatten(),     LayerSpec::dense(16 * 7 * 7, 64), LayerSpec::prelu(64)};
}

std::vector<LayerSpec> desk_mlp_layers() {
    return {LayerSpec::dense(784, 128), LayerSpec::prelu(128), LayerSpec::dense(128, 64), LayerSpec::prelu(64)};
}

}  // namespace nsfx
