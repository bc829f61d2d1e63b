#pragma once

// Small fully connected classifiers evaluated directly on a flat ParamVector.
// With no hidden layers the model is multinomial logistic (softmax)
// regression. Parameters are packed layer by layer: the weight matrix
// (out x in, column-major) followed by the bias (out).

#include "lss/checkpoint.hpp"
#include "lss/param_core.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lss {

enum class Activation { relu, tanh };

struct MlpSpec {
    int input_dim = 0;
    std::vector<int> hidden_dims;
    int num_classes = 2;
    Activation activation = Activation::relu;

    /// Layer widths including input and output.
    std::vector<int> widths() const {
        std::vector<int> w{input_dim};
        w.insert(w.end(), hidden_dims.begin(), hidden_dims.end());
        w.push_back(num_classes);
        return w;
    }
    Eigen::Index param_count() const {
        const auto w = widths();
        Eigen::Index n = 0;
        for (std::size_t l = 0; l + 1 < w.size(); ++l) n += Eigen::Index(w[l]) * w[l + 1] + w[l + 1];
        return n;
    }
    void validate() const;
    ShapeSpec shape() const;

    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

/// Rebuilds an MlpSpec from a checkpoint's layer table.
MlpSpec spec_from_shape(const ShapeSpec& shape, Activation activation);

template <typename Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Row-per-sample features with integer class labels.
template <typename Scalar>
struct BatchT {
    MatrixT<Scalar> features;
    std::vector<int> labels;

    Eigen::Index size() const { return features.rows(); }
};

using Batch = BatchT<double>;

template <typename Scalar>
struct LossGrad {
    Scalar loss{0};
    ParamVectorT<Scalar> grad;
};

ParamVector init_params(const MlpSpec& spec, std::uint64_t seed);

namespace detail {

inline void check_batch(const MlpSpec& spec, Eigen::Index params_dim, Eigen::Index rows, Eigen::Index cols,
                        std::span<const int> labels) {
    if (params_dim != spec.param_count()) throw DimensionError("model parameters", params_dim, spec.param_count());
    if (rows == 0) throw std::invalid_argument("empty batch");
    if (cols != spec.input_dim) throw DimensionError("batch features", cols, spec.input_dim);
    if (static_cast<Eigen::Index>(labels.size()) != rows) {
        throw DimensionError("batch labels", static_cast<Eigen::Index>(labels.size()), rows);
    }
    for (int y : labels) {
        if (y < 0 || y >= spec.num_classes) throw std::invalid_argument("label " + std::to_string(y) + " out of range");
    }
}

template <typename Scalar>
void activate(const MlpSpec& spec, MatrixT<Scalar>& z) {
    if (spec.activation == Activation::relu) {
        z = z.cwiseMax(Scalar{0});
    } else {
        z = z.array().tanh().matrix();
    }
}

// Derivative of the activation expressed through its output.
template <typename Scalar>
MatrixT<Scalar> activation_slope(const MlpSpec& spec, const MatrixT<Scalar>& out) {
    if (spec.activation == Activation::relu) {
        return (out.array() > Scalar{0}).template cast<Scalar>().matrix();
    }
    return (Scalar{1} - out.array().square()).matrix();
}

template <typename Scalar>
std::vector<MatrixT<Scalar>> forward(const ParamVectorT<Scalar>& params, const MlpSpec& spec,
                                     const Eigen::Ref<const MatrixT<Scalar>>& x) {
    const auto w = spec.widths();
    std::vector<MatrixT<Scalar>> acts;
    acts.reserve(w.size());
    acts.emplace_back(x);
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        const Eigen::Index in = w[l], out = w[l + 1];
        Eigen::Map<const MatrixT<Scalar>> weight(params.data() + offset, out, in);
        offset += in * out;
        Eigen::Map<const ParamVectorT<Scalar>> bias(params.data() + offset, out);
        offset += out;
        MatrixT<Scalar> z = acts.back() * weight.transpose();
        z.rowwise() += bias.transpose();
        if (l + 2 < w.size()) activate(spec, z);
        acts.push_back(std::move(z));
    }
    return acts;
}

// Row-wise log-softmax with max subtraction.
template <typename Scalar>
MatrixT<Scalar> log_softmax(const MatrixT<Scalar>& logits) {
    using std::exp;
    using std::log;
    MatrixT<Scalar> out(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Scalar m = logits(i, 0);
        for (Eigen::Index c = 1; c < logits.cols(); ++c) m = std::max(m, logits(i, c));
        Scalar s{0};
        for (Eigen::Index c = 0; c < logits.cols(); ++c) s += exp(logits(i, c) - m);
        const Scalar lse = m + log(s);
        for (Eigen::Index c = 0; c < logits.cols(); ++c) out(i, c) = logits(i, c) - lse;
    }
    return out;
}

}  // namespace detail

/// Mean cross-entropy over the batch and its exact gradient by backpropagation.
template <typename Scalar>
LossGrad<Scalar> loss_and_grad(const ParamVectorT<Scalar>& params, const MlpSpec& spec,
                               const Eigen::Ref<const MatrixT<Scalar>>& features, std::span<const int> labels) {
    detail::check_batch(spec, params.size(), features.rows(), features.cols(), labels);
    const auto w = spec.widths();
    const auto acts = detail::forward(params, spec, features);
    const MatrixT<Scalar> logp = detail::log_softmax<Scalar>(acts.back());
    const Eigen::Index batch = features.rows();
    const Scalar inv_b = Scalar{1} / Scalar(batch);

    LossGrad<Scalar> out;
    for (Eigen::Index i = 0; i < batch; ++i) out.loss -= logp(i, labels[i]);
    out.loss *= inv_b;

    // dL/dlogits = (softmax - onehot) / B
    MatrixT<Scalar> delta = logp.array().exp().matrix();
    for (Eigen::Index i = 0; i < batch; ++i) delta(i, labels[i]) -= Scalar{1};
    delta *= inv_b;

    out.grad.setZero(params.size());
    Eigen::Index offset = params.size();
    for (std::size_t l = w.size() - 1; l-- > 0;) {
        const Eigen::Index in = w[l], outw = w[l + 1];
        offset -= in * outw + outw;
        Eigen::Map<MatrixT<Scalar>> gw(out.grad.data() + offset, outw, in);
        Eigen::Map<ParamVectorT<Scalar>> gb(out.grad.data() + offset + in * outw, outw);
        gw.noalias() = delta.transpose() * acts[l];
        gb = delta.colwise().sum().transpose();
        if (l > 0) {
            Eigen::Map<const MatrixT<Scalar>> weight(params.data() + offset, outw, in);
            MatrixT<Scalar> back = delta * weight;
            delta = back.cwiseProduct(detail::activation_slope<Scalar>(spec, acts[l]));
        }
    }
    return out;
}

template <typename Scalar>
LossGrad<Scalar> loss_and_grad(const ParamVectorT<Scalar>& params, const MlpSpec& spec, const BatchT<Scalar>& batch) {
    return loss_and_grad<Scalar>(params, spec, batch.features, batch.labels);
}

inline LossGrad<double> loss_and_grad(const ParamVector& params, const MlpSpec& spec,
                                     const Eigen::Ref<const Eigen::MatrixXd>& features, std::span<const int> labels) {
    return loss_and_grad<double>(params, spec, features, labels);
}

inline LossGrad<double> loss_and_grad(const ParamVector& params, const MlpSpec& spec, const Batch& batch) {
    return loss_and_grad<double>(params, spec, batch.features, batch.labels);
}

/// Class probabilities, one row per sample.
Eigen::MatrixXd predict_proba(const ParamVector& params, const MlpSpec& spec,
                              const Eigen::Ref<const Eigen::MatrixXd>& features);

/// Index of the largest logit per sample; ties go to the lowest class index.
std::vector<int> predict(const ParamVector& params, const MlpSpec& spec,
                         const Eigen::Ref<const Eigen::MatrixXd>& features);

double accuracy(const ParamVector& params, const MlpSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& features,
                std::span<const int> labels);
double accuracy(const ParamVector& params, const MlpSpec& spec, const Batch& data);

double mean_loss(const ParamVector& params, const MlpSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& features,
                 std::span<const int> labels);

const char* to_string(Activation a);
Activation activation_from_string(const std::string& s);

}  // namespace lss
