#include "layoutgen/attention.hpp"

#include "layoutgen/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace layoutgen {

SimilarityMatrix attention_scores(const Matrix& queries, const Matrix& keys) {
    if (queries.cols() != keys.cols()) {
        throw Error(Errc::DimensionMismatch, "query dim " + std::to_string(queries.cols()) +
                                                 " != key dim " + std::to_string(keys.cols()));
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
    SimilarityMatrix s(queries.rows(), keys.rows());
    for (int i = 0; i < queries.rows(); ++i) {
        const auto q = queries.row(i);
        for (int j = 0; j < keys.rows(); ++j) {
            const auto k = keys.row(j);
            double dot = 0.0;
            for (std::size_t d = 0; d < q.size(); ++d) dot += q[d] * k[d];
            s.at(i, j) = dot * scale;
        }
    }
    return s;
}

void softmax_rows(Matrix& m) {
    for (int i = 0; i < m.rows(); ++i) {
        auto r = m.row(i);
        if (r.empty()) continue;
        const double peak = *std::max_element(r.begin(), r.end());
        double total = 0.0;
        for (auto& v : r) {
            v = std::exp(v - peak);
            total += v;
        }
        for (auto& v : r) v /= total;
    }
}

Matrix weighted_values(const Matrix& probs, const Matrix& values) {
    if (probs.cols() != values.rows()) {
        throw Error(Errc::DimensionMismatch, "attention weights over " + std::to_string(probs.cols()) +
                                                 " tokens but " + std::to_string(values.rows()) +
                                                 " value rows");
    }
    Matrix out(probs.rows(), values.cols());
    for (int i = 0; i < probs.rows(); ++i) {
        auto o = out.row(i);
        for (int j = 0; j < probs.cols(); ++j) {
            const double w = probs.at(i, j);
            const auto v = values.row(j);
            for (std::size_t d = 0; d < o.size(); ++d) o[d] += w * v[d];
        }
    }
    return out;
}

Matrix scaled_dot_product_attention(const Matrix& queries, const Matrix& keys, const Matrix& values) {
    Matrix probs = attention_scores(queries, keys);
    softmax_rows(probs);
    return weighted_values(probs, values);
}

Matrix gather_rows(const Matrix& m, std::span<const int> indices) {
    Matrix out(static_cast<int>(indices.size()), m.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto src = m.row(indices[i]);
        std::copy(src.begin(), src.end(), out.row(static_cast<int>(i)).begin());
    }
    return out;
}

} // namespace layoutgen
