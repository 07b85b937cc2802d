#include "nsfx/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

#include "nsfx/errors.hpp"
#include "nsfx/rng.hpp"

namespace nsfx {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset, const char* field) {
    if (bytes.size() < offset + 4) throw FormatError(std::string("truncated IDX header: missing ") + field);
    return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
           (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

std::vector<std::uint8_t> inflate_gzip(const std::vector<std::uint8_t>& in, const std::filesystem::path& path) {
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw IoError("zlib init failed");
    zs.next_in = const_cast<Bytef*>(in.data());
    zs.avail_in = static_cast<uInt>(in.size());
    std::vector<std::uint8_t> out;
    std::uint8_t buf[1 << 16];
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = buf;
        zs.avail_out = sizeof buf;
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw FormatError("corrupt gzip stream in " + path.string());
        }
        out.insert(out.end(), buf, buf + (sizeof buf - zs.avail_out));
        if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
            inflateEnd(&zs);
            throw FormatError("truncated gzip stream in " + path.string());
        }
    }
    inflateEnd(&zs);
    return out;
}

}  // namespace

Shape Dataset::sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }

void Dataset::validate() const {
    if (images.rank() < 2 || images.dim(0) != labels.size()) {
        throw InvalidInput("dataset has " + std::to_string(labels.size()) + " labels for images " +
                           shape_string(images.shape()));
    }
    if (!provenance.empty() && provenance.size() != labels.size()) {
        throw InvalidInput("dataset provenance length does not match sample count");
    }
    for (std::size_t y : labels) {
        if (y >= class_count) {
            throw InvalidInput("label " + std::to_string(y) + " outside [0, " + std::to_string(class_count) + ")");
        }
    }
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
    Shape shape = images.shape();
    shape[0] = indices.size();
    Dataset out;
    out.images = Tensor(shape);
    out.class_count = class_count;
    out.labels.reserve(indices.size());
    out.provenance.reserve(indices.size());
    const std::size_t width = images.row_size();
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const std::size_t i = indices[k];
        if (i >= size()) throw IndexError("sample index " + std::to_string(i) + " out of range");
        std::copy_n(images.data() + i * width, width, out.images.data() + k * width);
        out.labels.push_back(labels[i]);
        out.provenance.push_back(provenance.empty() ? i : provenance[i]);
    }
    return out;
}

std::vector<std::size_t> Dataset::histogram() const {
    std::vector<std::size_t> h(class_count, 0);
    for (std::size_t y : labels) ++h[y];
    return h;
}

std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed for " + path.string());
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) return inflate_gzip(bytes, path);
    return bytes;
}

Dataset parse_mnist_idx(std::span<const std::uint8_t> image_bytes, std::span<const std::uint8_t> label_bytes) {
    const std::uint32_t image_magic = read_be32(image_bytes, 0, "image magic");
    if (image_magic != kImageMagic) throw FormatError("image magic: expected 0x00000803");
    const std::uint32_t label_magic = read_be32(label_bytes, 0, "label magic");
    if (label_magic != kLabelMagic) throw FormatError("label magic: expected 0x00000801");

    const std::size_t count = read_be32(image_bytes, 4, "image count");
    const std::size_t rows = read_be32(image_bytes, 8, "row count");
    const std::size_t cols = read_be32(image_bytes, 12, "column count");
    const std::size_t label_count = read_be32(label_bytes, 4, "label count");
    if (count != label_count) {
        throw FormatError("image count " + std::to_string(count) + " != label count " + std::to_string(label_count));
    }
    if (rows == 0 || cols == 0) throw FormatError("image dims must be positive");
    const std::size_t pixels = rows * cols;
    if (image_bytes.size() != 16 + count * pixels) throw FormatError("image data: truncated or oversized payload");
    if (label_bytes.size() != 8 + count) throw FormatError("label data: truncated or oversized payload");

    Dataset ds;
    ds.images = Tensor({count, 1, rows, cols});
    for (std::size_t i = 0; i < count * pixels; ++i) ds.images[i] = image_bytes[16 + i] / 255.0;
    ds.labels.resize(count);
    ds.provenance.resize(count);
    std::size_t max_label = 0;
    for (std::size_t i = 0; i < count; ++i) {
        ds.labels[i] = label_bytes[8 + i];
        ds.provenance[i] = i;
        max_label = std::max(max_label, ds.labels[i]);
    }
    ds.class_count = count ? max_label + 1 : 0;
    return ds;
}

Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    const auto images = read_maybe_gzip(images_path);
    const auto labels = read_maybe_gzip(labels_path);
    try {
        return parse_mnist_idx(images, labels);
    } catch (const FormatError& e) {
        throw FormatError(images_path.filename().string() + " / " + labels_path.filename().string() + ": " +
                          e.what());
    }
}

Dataset subset_per_class(const Dataset& ds, std::size_t per_class, std::uint64_t seed) {
    if (per_class == 0) throw InvalidInput("per_class must be positive");
    std::vector<std::vector<std::size_t>> by_class(ds.class_count);
    for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(i);

    Rng rng = Rng::substream(seed, streams::subset);
    std::vector<std::size_t> picked;
    picked.reserve(per_class * ds.class_count);
    for (std::size_t c = 0; c < ds.class_count; ++c) {
        auto& pool = by_class[c];
        if (pool.size() < per_class) {
            throw InvalidInput("class " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                               " samples, need " + std::to_string(per_class));
        }
        // Partial Fisher-Yates: the first per_class slots are a uniform draw.
        for (std::size_t k = 0; k < per_class; ++k) {
            std::swap(pool[k], pool[k + rng.index(pool.size() - k)]);
        }
        picked.insert(picked.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(per_class));
    }
    return ds.select(picked);
}

Dataset synthetic_two_gaussians(std::size_t n_per_class, std::size_t dim, double separation, std::uint64_t seed) {
    if (n_per_class == 0 || dim == 0) throw InvalidInput("synthetic dataset needs n_per_class >= 1 and dim >= 1");
    if (!(separation >= 0.0)) throw InvalidInput("separation must be non-negative");
    const std::size_t n = 2 * n_per_class;
    Rng rng(seed);
    Dataset ds;
    ds.images = Tensor({n, dim});
    ds.class_count = 2;
    ds.labels.resize(n);
    ds.provenance.resize(n);
    const double s = separation / 2.0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t y = i % 2;
        ds.labels[i] = y;
        ds.provenance[i] = i;
        auto row = ds.images.row(i);
        for (double& v : row) v = rng.normal();
        row[0] += y == 0 ? -s : s;
    }
    return ds;
}

MeanSubtraction mean_subtract(const Dataset& train, std::vector<Dataset> others) {
    if (train.size() == 0) throw InvalidInput("mean subtraction needs a non-empty training set");
    const std::size_t width = train.images.row_size();
    for (const Dataset& o : others) {
        if (o.sample_shape() != train.sample_shape()) {
            throw ShapeError("sample shape " + shape_string(o.sample_shape()) + " differs from training shape " +
                             shape_string(train.sample_shape()));
        }
    }
    Tensor mean(train.sample_shape());
    for (std::size_t i = 0; i < train.size(); ++i) {
        const auto row = train.images.row(i);
        for (std::size_t k = 0; k < width; ++k) mean[k] += row[k];
    }
    for (double& v : mean.values()) v /= static_cast<double>(train.size());

    MeanSubtraction out{train, std::move(others), std::move(mean)};
    auto apply = [&](Dataset& ds) {
        for (std::size_t i = 0; i < ds.size(); ++i) {
            auto row = ds.images.row(i);
            for (std::size_t k = 0; k < width; ++k) row[k] -= out.mean[k];
        }
    };
    apply(out.train);
    for (Dataset& o : out.others) apply(o);
    return out;
}

}  // namespace nsfx
