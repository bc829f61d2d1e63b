#include "lss/model.hpp"

#include <cmath>
#include <random>

namespace lss {

void MlpSpec::validate() const {
    if (input_dim <= 0) throw std::invalid_argument("model input_dim must be positive");
    if (num_classes < 2) throw std::invalid_argument("model num_classes must be at least 2");
    for (int h : hidden_dims) {
        if (h <= 0) throw std::invalid_argument("model hidden widths must be positive");
    }
}

ShapeSpec MlpSpec::shape() const {
    ShapeSpec s;
    const auto w = widths();
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        s.layers.push_back({static_cast<std::uint64_t>(w[l + 1]), static_cast<std::uint64_t>(w[l]), true});
    }
    return s;
}

MlpSpec spec_from_shape(const ShapeSpec& shape, Activation activation) {
    if (shape.layers.empty()) throw std::invalid_argument("shape has no layers");
    MlpSpec spec;
    spec.activation = activation;
    spec.input_dim = static_cast<int>(shape.layers.front().cols);
    for (std::size_t l = 0; l < shape.layers.size(); ++l) {
        const auto& layer = shape.layers[l];
        if (!layer.has_bias) throw std::invalid_argument("layers without bias are not supported");
        if (l > 0 && layer.cols != shape.layers[l - 1].rows) {
            throw std::invalid_argument("shape layers do not chain");
        }
        if (l + 1 < shape.layers.size()) spec.hidden_dims.push_back(static_cast<int>(layer.rows));
    }
    spec.num_classes = static_cast<int>(shape.layers.back().rows);
    spec.validate();
    return spec;
}

ParamVector init_params(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    ParamVector p = ParamVector::Zero(spec.param_count());
    const auto w = spec.widths();
    Eigen::Index offset = 0;
    for (std::size_t l = 0; l + 1 < w.size(); ++l) {
        const Eigen::Index in = w[l], out = w[l + 1];
        const double s = std::sqrt(6.0 / double(in + out));
        std::uniform_real_distribution<double> dist(-s, s);
        for (Eigen::Index k = 0; k < in * out; ++k) p(offset + k) = dist(rng);
        offset += in * out + out;  // biases stay zero
    }
    return p;
}

Eigen::MatrixXd predict_proba(const ParamVector& params, const MlpSpec& spec,
                              const Eigen::Ref<const Eigen::MatrixXd>& features) {
    std::vector<int> dummy(static_cast<std::size_t>(features.rows()), 0);
    detail::check_batch(spec, params.size(), features.rows(), features.cols(), dummy);
    const auto acts = detail::forward<double>(params, spec, features);
    return detail::log_softmax<double>(acts.back()).array().exp().matrix();
}

std::vector<int> predict(const ParamVector& params, const MlpSpec& spec,
                         const Eigen::Ref<const Eigen::MatrixXd>& features) {
    std::vector<int> dummy(static_cast<std::size_t>(features.rows()), 0);
    detail::check_batch(spec, params.size(), features.rows(), features.cols(), dummy);
    const auto acts = detail::forward<double>(params, spec, features);
    const auto& logits = acts.back();
    std::vector<int> out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < logits.cols(); ++c) {
            if (logits(i, c) > logits(i, best)) best = c;
        }
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

double accuracy(const ParamVector& params, const MlpSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& features,
                std::span<const int> labels) {
    if (features.rows() == 0) throw std::invalid_argument("accuracy: empty data");
    if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
        throw DimensionError("accuracy labels", static_cast<Eigen::Index>(labels.size()), features.rows());
    }
    const auto pred = predict(params, spec, features);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i] ? 1 : 0;
    return double(correct) / double(pred.size());
}

double accuracy(const ParamVector& params, const MlpSpec& spec, const Batch& data) {
    return accuracy(params, spec, data.features, data.labels);
}

double mean_loss(const ParamVector& params, const MlpSpec& spec, const Eigen::Ref<const Eigen::MatrixXd>& features,
                 std::span<const int> labels) {
    detail::check_batch(spec, params.size(), features.rows(), features.cols(), labels);
    const auto acts = detail::forward<double>(params, spec, features);
    const Eigen::MatrixXd logp = detail::log_softmax<double>(acts.back());
    double loss = 0.0;
    for (Eigen::Index i = 0; i < logp.rows(); ++i) loss -= logp(i, labels[static_cast<std::size_t>(i)]);
    return loss / double(logp.rows());
}

const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "tanh"; }

Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw std::invalid_argument("unknown activation '" + s + "' (expected relu or tanh)");
}

}  // namespace lss
