#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "nsfx/rng.hpp"
#include "nsfx/tensor.hpp"

namespace nsfx {

enum class LayerKind { dense, prelu, conv2d, maxpool, flatten };

/// Layer descriptor. Textual form used in config files:
///   dense:<in>:<out>   prelu:<channels>   conv:<in_ch>:<out_ch>   maxpool   flatten
/// conv is always 3x3, stride 1, pad 1; maxpool is always 2x2, stride 2.
struct LayerSpec {
    LayerKind kind = LayerKind::flatten;
    std::size_t in = 0;   ///< dense in_dim, conv in_ch, prelu channel count
    std::size_t out = 0;  ///< dense out_dim, conv out_ch

    static LayerSpec dense(std::size_t in_dim, std::size_t out_dim) { return {LayerKind::dense, in_dim, out_dim}; }
    static LayerSpec prelu(std::size_t channels) { return {LayerKind::prelu, channels, channels}; }
    static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch) { return {LayerKind::conv2d, in_ch, out_ch}; }
    static LayerSpec maxpool() { return {LayerKind::maxpool, 0, 0}; }
    static LayerSpec flatten() { return {LayerKind::flatten, 0, 0}; }

    /// Throws InvalidInput on malformed descriptors.
    static LayerSpec parse(std::string_view text);
    std::string to_string() const;

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Trainable tensor with its gradient buffer.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;
    bool decays = true;  ///< false for biases and PReLU slopes
};

/// He initialisation: weights ~ N(0, 2 / fan_in), biases 0, PReLU slopes 0.25.
/// Returns the parameter tensors in layer order (weights before bias).
std::vector<Tensor> he_init(const LayerSpec& layer, Rng& rng);

class Layer {
public:
    virtual ~Layer() = default;
    /// Per-sample output shape; throws ShapeError if `in` is not accepted.
    virtual Shape output_shape(const Shape& in) const = 0;
    /// x has a leading batch axis.
    virtual Tensor forward(const Tensor& x) const = 0;
    /// Accumulates parameter gradients and returns dL/dx (left zero when
    /// `input_grad` is false).
    virtual Tensor backward(const Tensor& x, const Tensor& dy, bool input_grad) = 0;
    virtual std::vector<Parameter*> parameters() { return {}; }
    virtual std::unique_ptr<Layer> clone() const = 0;
};

std::unique_ptr<Layer> make_layer(const LayerSpec& spec, Rng& init_rng, const std::string& name);

/// Intermediate inputs recorded by a forward pass.
struct ForwardCache {
    std::vector<Tensor> inputs;  ///< input to each layer
    Shape output_shape;
};

/// Ordered layer stack mapping raw samples to flat feature vectors.
/// An empty stack is the identity on flat inputs.
class Network {
public:
    Network() = default;
    Network(Shape input_shape, std::vector<LayerSpec> layers, Rng& init_rng);
    Network(const Network& other);
    Network& operator=(const Network& other);
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    const Shape& input_shape() const noexcept { return input_shape_; }
    const std::vector<LayerSpec>& specs() const noexcept { return specs_; }
    std::size_t feature_dim() const noexcept { return feature_dim_; }

    /// x is N x input_shape (any shape with the same element count per sample).
    Tensor forward(const Tensor& x, ForwardCache* cache = nullptr) const;
    /// Accumulates parameter gradients; returns gradient w.r.t. the input
    /// batch, or zeros when `input_grad` is false (the training loop has no
    /// use for it).
    Tensor backward(const ForwardCache& cache, const Tensor& d_features, bool input_grad = true);

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    void zero_grad();

private:
    Shape input_shape_;
    std::vector<LayerSpec> specs_;
    std::vector<std::unique_ptr<Layer>> layers_;
    std::size_t feature_dim_ = 0;
};

/// conv(1->8) prelu pool conv(8->16) prelu pool flatten dense(784->64) prelu.
std::vector<LayerSpec> desk_cnn_layers();
/// dense(784->128) prelu dense(128->64) prelu.
std::vector<LayerSpec> desk_mlp_layers();

}  // namespace nsfx
