#pragma once

// Convergence-theory calculators, estimators of the heterogeneity and noise
// constants they depend on, and loss-landscape diagnostics of model pools.

#include "lss/data.hpp"
#include "lss/model.hpp"
#include "lss/param_core.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace lss {

/// Constants of the convex-smooth convergence analysis.
///   beta   smoothness
///   sigma  stochastic-gradient noise bound
///   zeta   local/global gradient gap bound
///   c      bound on the per-step regularizer update
///   d      distance from initialization to the optimum
///   M, tau, R  clients, local steps, rounds
/// K defaults to M * tau * R when left at 0.
struct TheoryParams {
    double beta = 1.0;
    double sigma = 0.0;
    double zeta = 0.0;
    double c = 0.0;
    double d = 1.0;
    double M = 1.0;
    double tau = 1.0;
    double R = 1.0;
    double K = 0.0;

    double total_gradient_computations() const { return K > 0.0 ? K : M * tau * R; }
};

/// Learning rate
///   min{ 1/(4 beta), sqrt(M) d / (sqrt(tau R) sigma),
///        d^(2/3) / (tau^(2/3) R^(1/3) beta^(1/3) sigma^(2/3)),
///        d^(2/3) / (tau R^(1/3) beta^(1/3) (zeta+c)^(2/3)) }
/// where a term whose denominator vanishes (sigma = 0, zeta + c = 0) is +inf.
double lr_choice(const TheoryParams& p);

/// First term as printed uses R^2; the alternative reading uses d^2.
enum class BoundReading { as_printed, distance_squared };

struct BoundTerms {
    double optimization = 0.0;   // 2 beta R^2 / (tau R)   (or 2 beta d^2 / (tau R))
    double statistical = 0.0;    // 2 sigma d / sqrt(M tau R)
    double local_noise = 0.0;    // 5 beta^(1/3) sigma^(2/3) d^(4/3) / (tau^(1/3) R^(2/3))
    double heterogeneity = 0.0;  // 15 beta^(1/3) (zeta+c)^(2/3) d^(4/3) / R^(2/3)

    double total() const { return optimization + statistical + local_noise + heterogeneity; }
};

BoundTerms convergence_bound_terms(const TheoryParams& p, BoundReading reading = BoundReading::as_printed);
double convergence_bound(const TheoryParams& p, BoundReading reading = BoundReading::as_printed);

/// Largest tau for which the O(1/sqrt(K)) term dominates:
///   sigma/(zeta+c) * sqrt( sigma/(d beta) * sqrt(K) / M^2 ).
/// Returns +inf when zeta + c == 0.
double max_local_steps(const TheoryParams& p);

/// max_i |g_i - sum_j w_j g_j| for precomputed full-batch client gradients.
double estimate_zeta(std::span<const ParamVector> client_grads, std::span<const double> weights);

/// Same, from full-batch gradients of the model on each client's data with
/// data-proportional weights. This samples the supremum over models at one
/// point only, so it is a lower bound on the true constant.
double estimate_zeta(const ParamVector& params, const MlpSpec& spec, std::span<const Dataset> clients);

/// sqrt(mean |g_batch - g_full|^2) over num_draws random minibatches drawn
/// without replacement. Zero when batch_size >= |data|.
double estimate_sigma(const ParamVector& params, const MlpSpec& spec, const Dataset& data, int batch_size,
                      int num_draws, std::uint64_t seed);

struct BvclStats {
    double variance = 0.0;
    double covariance = 0.0;
    double locality = 0.0;
};

/// Variance and covariance of the per-class predicted probabilities across
/// the given models (centred on the cross-model mean, averaged over classes
/// and test points), and locality max_i |f_i - mean(f)|.
BvclStats bvcl_diagnostics(std::span<const ParamVector> models, const MlpSpec& spec,
                           const Eigen::Ref<const Eigen::MatrixXd>& test_features);

/// Repeated draws of an N-member ensemble's predictions: samples[t](n, x) is
/// member n's prediction at point x in draw t. Moments are taken across draws.
struct EnsembleVarianceSplit {
    double member_variance = 0.0;    // mean over members and points
    double pair_covariance = 0.0;    // mean over ordered pairs i != j and points
    double ensemble_variance = 0.0;  // variance of the member mean, mean over points
    std::size_t members = 0;

    /// member_variance / N + (N - 1) / N * pair_covariance
    double predicted_ensemble_variance() const;
};

EnsembleVarianceSplit ensemble_variance_split(std::span<const Eigen::MatrixXd> samples);

using GradientFn = std::function<ParamVector(const ParamVector&)>;

/// Dominant Hessian eigenvalue at `at` by power iteration on finite-difference
/// Hessian-vector products (central differences of the gradient with step
/// 1e-4 * (1 + |at|) along a unit probe). Returns the final Rayleigh quotient.
double power_iteration_top_eig(const GradientFn& grad, const ParamVector& at, int iters, std::uint64_t seed);

/// Median over consecutive batches of `data` of the dominant eigenvalue of
/// the batch loss Hessian.
double hessian_top_eig(const ParamVector& params, const MlpSpec& spec, const Dataset& data, int batch_size,
                       int iters, std::uint64_t seed);

using Report = std::vector<std::pair<std::string, double>>;

/// "key: value" lines.
void write_report(std::ostream& out, const Report& report);

}  // namespace lss
