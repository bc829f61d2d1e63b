#pragma once

// Flat weight-vector arithmetic shared by every model, pool and aggregation
// routine. A model's parameters live in one contiguous column vector so that
// interpolation, averaging and distances are plain linear algebra.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lss {

template <typename Scalar>
using ParamVectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using ParamVector = ParamVectorT<double>;

/// Tolerance on the sum of aggregation weights.
inline constexpr double kWeightSumTolerance = 1e-9;

class DimensionError : public std::invalid_argument {
public:
    DimensionError(const std::string& what, Eigen::Index lhs, Eigen::Index rhs)
        : std::invalid_argument(what + ": dimension mismatch (" + std::to_string(lhs) + " vs " +
                                std::to_string(rhs) + ")"),
          lhs_dim(lhs),
          rhs_dim(rhs) {}

    Eigen::Index lhs_dim;
    Eigen::Index rhs_dim;
};

namespace detail {

template <typename A, typename B>
void require_same_dim(const char* op, const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    if (a.size() != b.size()) throw DimensionError(op, a.size(), b.size());
}

}  // namespace detail

template <typename Derived>
bool all_finite(const Eigen::MatrixBase<Derived>& v) {
    for (Eigen::Index k = 0; k < v.size(); ++k) {
        if (!std::isfinite(v(k))) return false;
    }
    return true;
}

/// Sum of squares, accumulated left to right so results do not depend on
/// vectorization width.
template <typename Derived>
typename Derived::Scalar squared_norm(const Eigen::MatrixBase<Derived>& v) {
    typename Derived::Scalar acc{0};
    for (Eigen::Index k = 0; k < v.size(); ++k) acc += v(k) * v(k);
    return acc;
}

template <typename Derived>
typename Derived::Scalar norm(const Eigen::MatrixBase<Derived>& v) {
    using std::sqrt;
    return sqrt(squared_norm(v));
}

template <typename A, typename B>
typename A::Scalar l2_distance(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    detail::require_same_dim("l2_distance", a, b);
    using std::sqrt;
    typename A::Scalar acc{0};
    for (Eigen::Index k = 0; k < a.size(); ++k) {
        const auto d = a(k) - b(k);
        acc += d * d;
    }
    return sqrt(acc);
}

/// y + alpha * x.
template <typename A, typename B>
ParamVectorT<typename A::Scalar> axpy(const Eigen::MatrixBase<A>& y, typename A::Scalar alpha,
                                      const Eigen::MatrixBase<B>& x) {
    detail::require_same_dim("axpy", y, x);
    ParamVectorT<typename A::Scalar> out = y + alpha * x;
    return out;
}

/// Convex combination sum_i weights[i] * models[i]. Models are accumulated in
/// list order so the result is reproducible bit for bit.
template <typename Scalar>
ParamVectorT<Scalar> weighted_average(std::span<const ParamVectorT<Scalar>> models,
                                      std::span<const Scalar> weights) {
    if (models.empty()) throw std::invalid_argument("weighted_average: empty model list");
    if (models.size() != weights.size()) {
        throw std::invalid_argument("weighted_average: " + std::to_string(models.size()) +
                                    " models but " + std::to_string(weights.size()) + " weights");
    }
    Scalar total{0};
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (!(weights[i] >= Scalar{0})) {
            throw std::invalid_argument("weighted_average: weight " + std::to_string(i) +
                                        " is negative or NaN");
        }
        total += weights[i];
    }
    using std::abs;
    if (abs(total - Scalar{1}) > Scalar(kWeightSumTolerance)) {
        throw std::invalid_argument("weighted_average: weights sum to " + std::to_string(double(total)));
    }
    const Eigen::Index dim = models.front().size();
    for (const auto& m : models) {
        if (m.size() != dim) throw DimensionError("weighted_average", dim, m.size());
    }
    ParamVectorT<Scalar> out = weights[0] * models[0];
    for (std::size_t i = 1; i < models.size(); ++i) out += weights[i] * models[i];
    return out;
}

template <typename Scalar>
ParamVectorT<Scalar> weighted_average(const std::vector<ParamVectorT<Scalar>>& models,
                                      const std::vector<Scalar>& weights) {
    return weighted_average<Scalar>(std::span<const ParamVectorT<Scalar>>(models),
                                    std::span<const Scalar>(weights));
}

/// Uniform average, the Averaging(.) primitive of the model pool.
template <typename Scalar>
ParamVectorT<Scalar> uniform_average(std::span<const ParamVectorT<Scalar>> models) {
    if (models.empty()) throw std::invalid_argument("uniform_average: empty model list");
    std::vector<Scalar> w(models.size(), Scalar{1} / Scalar(models.size()));
    return weighted_average<Scalar>(models, std::span<const Scalar>(w));
}

template <typename Scalar>
ParamVectorT<Scalar> uniform_average(const std::vector<ParamVectorT<Scalar>>& models) {
    return uniform_average<Scalar>(std::span<const ParamVectorT<Scalar>>(models));
}

}  // namespace lss
