#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace nsfx {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array of doubles.
///
/// The element count always equals the product of the extents. Rank-2
/// tensors double as matrices (rows = first extent).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<double> values);
    static Tensor vector(std::initializer_list<double> values);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t size() const noexcept { return data_.size(); }
    std::size_t dim(std::size_t axis) const;
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }
    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Element (r, c) of a rank-2 tensor.
    double& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

    /// Contiguous slice for index `i` along the first axis.
    std::span<double> row(std::size_t i);
    std::span<const double> row(std::size_t i) const;
    std::size_t row_size() const noexcept;

    void fill(double value);
    Tensor reshaped(Shape shape) const;
    bool all_finite() const noexcept;

    friend bool operator==(const Tensor&, const Tensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

/// Throws NumericError naming `what` if any element is NaN or infinite.
void require_finite(const Tensor& t, std::string_view what);

}  // namespace nsfx
