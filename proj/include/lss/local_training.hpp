#pragma once

// Client-side update rules: plain minibatch SGD (FedAvg), proximal SGD
// (FedProx), and the model-pool procedure that sequentially trains N new
// members under random interpolation, an affinity pull towards the round's
// anchor, and a diversity push away from the frozen members.

#include "lss/data.hpp"
#include "lss/model.hpp"
#include "lss/param_core.hpp"
#include "lss/rng.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace lss {

enum class CoeffMode { uniform_random, active_only };

const char* to_string(CoeffMode m);
CoeffMode coeff_mode_from_string(const std::string& s);

struct LocalConfig {
    double eta = 5e-4;
    int tau = 8;
    int batch_size = 64;
    double lambda_a = 3.0;
    double lambda_d = 3.0;
    int num_pool_models = 4;
    double mu_prox = 0.0;
    CoeffMode coeff_mode = CoeffMode::uniform_random;
    double dist_epsilon = 1e-8;

    void validate() const;
};

/// Ordered pool of candidate models. members[0] is the anchor; the last
/// member is the one being trained.
class ModelPool {
public:
    explicit ModelPool(ParamVector anchor);

    const ParamVector& anchor() const { return anchor_; }
    const std::vector<ParamVector>& members() const { return members_; }
    std::size_t size() const { return members_.size(); }

    const ParamVector& active() const { return members_.back(); }
    ParamVector& active() { return members_.back(); }

    /// Appends the uniform average of the current members and returns it.
    ParamVector& add_averaged_member();
    void add_member(ParamVector m);

    /// Members other than the active one.
    std::span<const ParamVector> frozen() const { return {members_.data(), members_.size() - 1}; }

private:
    ParamVector anchor_;
    std::vector<ParamVector> members_;
};

/// Simplex weights for random interpolation. uniform_random normalizes i.i.d.
/// Uniform(0,1) draws; active_only puts all mass on the last member.
std::vector<double> sample_interp_coeffs(std::size_t pool_size, CoeffMode mode, Rng& rng);

ParamVector interpolate(const ModelPool& pool, std::span<const double> coeffs);
ParamVector interpolate(std::span<const ParamVector> members, std::span<const double> coeffs);

/// Mean l2 distance from f to each model in `models`.
double diversity_loss(const ParamVector& f, std::span<const ParamVector> models);
double diversity_loss(const ParamVector& f, const ModelPool& pool);

double affinity_loss(const ParamVector& f, const ParamVector& anchor);

/// Regularized objective of the active member:
///   CE(interpolate(pool, coeffs)) + lambda_a * |active - anchor|
///     - lambda_d * mean_n |active - frozen_n|
/// and its gradient with respect to the active member only. `active` must be
/// the pool's last member.
LossGrad<double> lss_regularized_grad(const ParamVector& active, const ModelPool& pool,
                                      std::span<const double> coeffs, const MlpSpec& spec, const Batch& batch,
                                      const LocalConfig& config);

/// Epoch-wise shuffling without replacement; reshuffles once fewer than a
/// full batch of unseen samples remain. Datasets smaller than the batch size
/// yield the whole dataset every step.
class MinibatchSampler {
public:
    MinibatchSampler(const Dataset& data, int batch_size, std::uint64_t seed);

    Batch next();
    std::size_t batch_size() const { return batch_; }

private:
    void reshuffle();

    const Dataset* data_;
    std::size_t batch_;
    Rng rng_;
    std::vector<std::size_t> order_;
    std::size_t pos_ = 0;
};

struct LssTrace {
    std::vector<ParamVector> pool;  // final pool, anchor first
    /// Copy of the pool taken right after each new member was appended.
    std::vector<std::vector<ParamVector>> pool_at_append;
    std::vector<double> step_losses;
};

struct LssResult {
    ParamVector final;
    LssTrace trace;
};

LssResult lss_local_train(const ParamVector& anchor, const MlpSpec& spec, const Dataset& client_data,
                          const LocalConfig& config, std::uint64_t seed);

ParamVector sgd_local_train(const ParamVector& anchor, const MlpSpec& spec, const Dataset& client_data,
                            const LocalConfig& config, std::uint64_t seed);

/// CE(f) + mu/2 * |f - anchor|^2 on a batch and its gradient.
LossGrad<double> fedprox_loss_and_grad(const ParamVector& f, const ParamVector& anchor, const MlpSpec& spec,
                                       const Batch& batch, double mu);

/// SGD on CE(f) + mu/2 * |f - anchor|^2.
ParamVector fedprox_local_train(const ParamVector& anchor, const MlpSpec& spec, const Dataset& client_data,
                                const LocalConfig& config, std::uint64_t seed);

/// Mean pairwise l2 distance over all unordered pairs.
double mean_pairwise_distance(std::span<const ParamVector> models);

}  // namespace lss
