#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace layoutgen {

/// Dense row-major real matrix.
class Matrix {
  public:
    Matrix() = default;
    Matrix(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {}

    [[nodiscard]] int rows() const noexcept { return rows_; }
    [[nodiscard]] int cols() const noexcept { return cols_; }
    [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

    double& at(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    [[nodiscard]] double at(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

    [[nodiscard]] std::span<double> row(int r) {
        return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)};
    }
    [[nodiscard]] std::span<const double> row(int r) const {
        return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)};
    }

    [[nodiscard]] std::vector<double>& data() noexcept { return data_; }
    [[nodiscard]] const std::vector<double>& data() const noexcept { return data_; }

    bool operator==(const Matrix&) const = default;

  private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

/// Pre-softmax attention scores, pixels × tokens.
using SimilarityMatrix = Matrix;

/// Q·Kᵀ/sqrt(d). Throws DimensionMismatch.
[[nodiscard]] SimilarityMatrix attention_scores(const Matrix& queries, const Matrix& keys);

/// Numerically stable in-place row softmax.
void softmax_rows(Matrix& m);

/// probs·V. Throws DimensionMismatch.
[[nodiscard]] Matrix weighted_values(const Matrix& probs, const Matrix& values);

/// softmax(Q·Kᵀ/sqrt(d))·V
[[nodiscard]] Matrix scaled_dot_product_attention(const Matrix& queries, const Matrix& keys,
                                                  const Matrix& values);

/// Rows of `m` at `indices`, in order.
[[nodiscard]] Matrix gather_rows(const Matrix& m, std::span<const int> indices);

} // namespace layoutgen
