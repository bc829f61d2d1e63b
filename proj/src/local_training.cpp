#include "lss/local_training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lss {

const char* to_string(CoeffMode m) { return m == CoeffMode::uniform_random ? "uniform_random" : "active_only"; }

CoeffMode coeff_mode_from_string(const std::string& s) {
    if (s == "uniform_random") return CoeffMode::uniform_random;
    if (s == "active_only") return CoeffMode::active_only;
    throw std::invalid_argument("unknown coeff_mode '" + s + "' (expected uniform_random or active_only)");
}

void LocalConfig::validate() const {
    if (!(eta > 0.0)) throw std::invalid_argument("local.eta must be positive");
    if (tau < 0) throw std::invalid_argument("local.tau must be non-negative");
    if (batch_size < 1) throw std::invalid_argument("local.batch_size must be >= 1");
    if (!(lambda_a >= 0.0)) throw std::invalid_argument("local.lambda_a must be >= 0");
    if (!(lambda_d >= 0.0)) throw std::invalid_argument("local.lambda_d must be >= 0");
    if (num_pool_models < 1) throw std::invalid_argument("local.num_pool_models must be >= 1");
    if (!(mu_prox >= 0.0)) throw std::invalid_argument("local.mu_prox must be >= 0");
    if (!(dist_epsilon > 0.0)) throw std::invalid_argument("local.dist_epsilon must be positive");
}

ModelPool::ModelPool(ParamVector anchor) : anchor_(std::move(anchor)) {
    if (anchor_.size() == 0) throw std::invalid_argument("model pool anchor is empty");
    members_.push_back(anchor_);
}

ParamVector& ModelPool::add_averaged_member() {
    members_.push_back(uniform_average<double>(members_));
    return members_.back();
}

void ModelPool::add_member(ParamVector m) {
    if (m.size() != anchor_.size()) throw DimensionError("model pool member", m.size(), anchor_.size());
    members_.push_back(std::move(m));
}

std::vector<double> sample_interp_coeffs(std::size_t pool_size, CoeffMode mode, Rng& rng) {
    if (pool_size == 0) throw std::invalid_argument("sample_interp_coeffs: empty pool");
    std::vector<double> a(pool_size, 0.0);
    if (mode == CoeffMode::active_only) {
        a.back() = 1.0;
        return a;
    }
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double total = 0.0;
    do {
        total = 0.0;
        for (auto& v : a) total += (v = unif(rng));
    } while (!(total > 0.0));
    for (auto& v : a) v /= total;
    return a;
}

ParamVector interpolate(std::span<const ParamVector> members, std::span<const double> coeffs) {
    if (members.size() != coeffs.size()) {
        throw std::invalid_argument("interpolate: " + std::to_string(coeffs.size()) + " coefficients for " +
                                    std::to_string(members.size()) + " members");
    }
    return weighted_average<double>(members, coeffs);
}

ParamVector interpolate(const ModelPool& pool, std::span<const double> coeffs) {
    return interpolate(std::span<const ParamVector>(pool.members()), coeffs);
}

double diversity_loss(const ParamVector& f, std::span<const ParamVector> models) {
    if (models.empty()) throw std::invalid_argument("diversity_loss: empty pool");
    double acc = 0.0;
    for (const auto& m : models) acc += l2_distance(f, m);
    return acc / double(models.size());
}

double diversity_loss(const ParamVector& f, const ModelPool& pool) {
    return diversity_loss(f, std::span<const ParamVector>(pool.members()));
}

double affinity_loss(const ParamVector& f, const ParamVector& anchor) { return l2_distance(f, anchor); }

LossGrad<double> lss_regularized_grad(const ParamVector& active, const ModelPool& pool,
                                      std::span<const double> coeffs, const MlpSpec& spec, const Batch& batch,
                                      const LocalConfig& config) {
    if (pool.size() < 2) throw std::invalid_argument("lss_regularized_grad: pool has no trainable member");
    if (active.size() != pool.active().size()) {
        throw DimensionError("lss_regularized_grad active", active.size(), pool.active().size());
    }
    if (&active != &pool.active() && active != pool.active()) {
        throw std::invalid_argument("lss_regularized_grad: active model is not the last pool member");
    }
    const ParamVector mixed = interpolate(pool, coeffs);
    LossGrad<double> out = loss_and_grad<double>(mixed, spec, batch);
    // only the active member's share of the interpolation receives gradient
    out.grad *= coeffs.back();

    const double eps = config.dist_epsilon;
    if (config.lambda_a > 0.0) {
        const ParamVector diff = active - pool.anchor();
        const double dist = norm(diff);
        out.loss += config.lambda_a * dist;
        out.grad += (config.lambda_a / std::max(dist, eps)) * diff;
    }
    if (config.lambda_d > 0.0) {
        const auto frozen = pool.frozen();
        const double scale = config.lambda_d / double(frozen.size());
        double acc = 0.0;
        for (const auto& m : frozen) {
            const ParamVector diff = active - m;
            const double dist = norm(diff);
            acc += dist;
            out.grad -= (scale / std::max(dist, eps)) * diff;
        }
        out.loss -= scale * acc;
    }
    return out;
}

MinibatchSampler::MinibatchSampler(const Dataset& data, int batch_size, std::uint64_t seed)
    : data_(&data), rng_(seed) {
    if (data.size() == 0) throw std::invalid_argument("client dataset is empty");
    if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
    batch_ = std::min<std::size_t>(static_cast<std::size_t>(batch_size), data.size());
    order_.resize(data.size());
    reshuffle();
}

void MinibatchSampler::reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
}

Batch MinibatchSampler::next() {
    if (pos_ + batch_ > order_.size()) reshuffle();
    Batch b;
    b.features.resize(static_cast<Eigen::Index>(batch_), data_->features.cols());
    b.labels.resize(batch_);
    for (std::size_t i = 0; i < batch_; ++i) {
        const auto idx = order_[pos_ + i];
        b.features.row(static_cast<Eigen::Index>(i)) = data_->features.row(static_cast<Eigen::Index>(idx));
        b.labels[i] = data_->labels[idx];
    }
    pos_ += batch_;
    return b;
}

LossGrad<double> fedprox_loss_and_grad(const ParamVector& f, const ParamVector& anchor, const MlpSpec& spec,
                                       const Batch& batch, double mu) {
    if (f.size() != anchor.size()) throw DimensionError("fedprox anchor", f.size(), anchor.size());
    auto lg = loss_and_grad<double>(f, spec, batch);
    // skipped at mu == 0 so that FedProx reduces to SGD bit for bit
    if (mu > 0.0) {
        const ParamVector diff = f - anchor;
        lg.loss += 0.5 * mu * squared_norm(diff);
        lg.grad += mu * diff;
    }
    return lg;
}

namespace {

ParamVector proximal_sgd(const ParamVector& anchor, const MlpSpec& spec, const Dataset& data,
                         const LocalConfig& config, double mu, std::uint64_t seed) {
    config.validate();
    ParamVector f = anchor;
    if (config.tau == 0) return f;
    MinibatchSampler sampler(data, config.batch_size, derive_seed(seed, Stream::batches));
    for (int t = 0; t < config.tau; ++t) {
        const Batch batch = sampler.next();
        f -= config.eta * fedprox_loss_and_grad(f, anchor, spec, batch, mu).grad;
    }
    return f;
}

}  // namespace

ParamVector sgd_local_train(const ParamVector& anchor, const MlpSpec& spec, const Dataset& client_data,
                            const LocalConfig& config, std::uint64_t seed) {
    return proximal_sgd(anchor, spec, client_data, config, 0.0, seed);
}

ParamVector fedprox_local_train(const ParamVector& anchor, const MlpSpec& spec, const Dataset& client_data,
                                const LocalConfig& config, std::uint64_t seed) {
    return proximal_sgd(anchor, spec, client_data, config, config.mu_prox, seed);
}

LssResult lss_local_train(const ParamVector& anchor, const MlpSpec& spec, const Dataset& client_data,
                          const LocalConfig& config, std::uint64_t seed) {
    config.validate();
    if (anchor.size() != spec.param_count()) throw DimensionError("lss anchor", anchor.size(), spec.param_count());
    MinibatchSampler sampler(client_data, config.batch_size, derive_seed(seed, Stream::batches));
    Rng coeff_rng(derive_seed(seed, Stream::coeffs));

    ModelPool pool(anchor);
    LssResult result;
    for (int member = 0; member < config.num_pool_models; ++member) {
        pool.add_averaged_member();
        result.trace.pool_at_append.push_back(pool.members());
        for (int t = 0; t < config.tau; ++t) {
            const auto coeffs = sample_interp_coeffs(pool.size(), config.coeff_mode, coeff_rng);
            const Batch batch = sampler.next();
            const auto lg = lss_regularized_grad(pool.active(), pool, coeffs, spec, batch, config);
            result.trace.step_losses.push_back(lg.loss);
            pool.active() -= config.eta * lg.grad;
        }
    }
    result.final = uniform_average<double>(pool.members());
    result.trace.pool = pool.members();
    return result;
}

double mean_pairwise_distance(std::span<const ParamVector> models) {
    if (models.size() < 2) return 0.0;
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < models.size(); ++i) {
        for (std::size_t j = i + 1; j < models.size(); ++j, ++pairs) acc += l2_distance(models[i], models[j]);
    }
    return acc / double(pairs);
}

}  // namespace lss
