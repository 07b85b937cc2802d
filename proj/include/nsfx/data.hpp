#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "nsfx/tensor.hpp"

namespace nsfx {

/// Labelled samples. `images` has a leading sample axis; `provenance[i]` is
/// the row of sample i in the file or generator it came from.
struct Dataset {
    Tensor images;
    std::vector<std::size_t> labels;
    std::size_t class_count = 0;
    std::vector<std::size_t> provenance;

    std::size_t size() const noexcept { return labels.size(); }
    Shape sample_shape() const;
    /// Throws InvalidInput if counts disagree or a label is out of range.
    void validate() const;
    /// Rows `indices` in the given order.
    Dataset select(std::span<const std::size_t> indices) const;
    /// Count of samples per class.
    std::vector<std::size_t> histogram() const;
};

/// Raw file contents, transparently inflated when the file starts with the
/// gzip magic 1f 8b. Throws IoError / FormatError.
std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path);

/// Big-endian IDX pair (images magic 0x00000803, labels magic 0x00000801).
/// Pixels are scaled to [0, 1]; images come back as N x 1 x rows x cols.
Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// Same, from in-memory file contents.
Dataset parse_mnist_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes);

/// `per_class` samples from each class, drawn without replacement.
Dataset subset_per_class(const Dataset& ds, std::size_t per_class, std::uint64_t seed);

/// Class 0 ~ N(-s e1, I), class 1 ~ N(+s e1, I), s = separation / 2.
/// Samples alternate between the classes.
Dataset synthetic_two_gaussians(std::size_t n_per_class, std::size_t dim, double separation, std::uint64_t seed);

struct MeanSubtraction {
    Dataset train;
    std::vector<Dataset> others;
    Tensor mean;  ///< per-feature mean of the original training images
};

/// Subtracts the training-set per-feature mean from train and every other set.
MeanSubtraction mean_subtract(const Dataset& train, std::vector<Dataset> others);

}  // namespace nsfx
