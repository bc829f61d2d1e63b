#include "lss/analysis.hpp"

#include "lss/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace lss {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_counts(const TheoryParams& p) {
    if (!(p.M >= 1.0) || !(p.tau >= 1.0) || !(p.R >= 1.0)) {
        throw std::invalid_argument("theory: M, tau and R must be >= 1");
    }
    if (p.sigma < 0.0 || p.zeta < 0.0 || p.c < 0.0) {
        throw std::invalid_argument("theory: sigma, zeta and c must be non-negative");
    }
}

}  // namespace

double lr_choice(const TheoryParams& p) {
    if (!(p.beta > 0.0)) throw std::invalid_argument("lr_choice: beta must be positive");
    if (!(p.d > 0.0)) throw std::invalid_argument("lr_choice: d must be positive");
    check_counts(p);
    const double gap = p.zeta + p.c;
    const double smooth = 1.0 / (4.0 * p.beta);
    const double noise = p.sigma > 0.0 ? std::sqrt(p.M) * p.d / (std::sqrt(p.tau * p.R) * p.sigma) : kInf;
    const double local = p.sigma > 0.0 ? std::cbrt(p.d * p.d) / (std::cbrt(p.tau * p.tau) * std::cbrt(p.R) *
                                                                  std::cbrt(p.beta) * std::cbrt(p.sigma * p.sigma))
                                       : kInf;
    const double hetero =
        gap > 0.0 ? std::cbrt(p.d * p.d) / (p.tau * std::cbrt(p.R) * std::cbrt(p.beta) * std::cbrt(gap * gap)) : kInf;
    return std::min({smooth, noise, local, hetero});
}

BoundTerms convergence_bound_terms(const TheoryParams& p, BoundReading reading) {
    check_counts(p);
    if (!(p.beta > 0.0)) throw std::invalid_argument("convergence_bound: beta must be positive");
    if (p.d < 0.0) throw std::invalid_argument("convergence_bound: d must be non-negative");
    const double d43 = std::cbrt(p.d * p.d * p.d * p.d);
    const double r23 = std::cbrt(p.R * p.R);
    const double gap = p.zeta + p.c;
    BoundTerms t;
    const double lead = reading == BoundReading::as_printed ? p.R * p.R : p.d * p.d;
    t.optimization = 2.0 * p.beta * lead / (p.tau * p.R);
    t.statistical = 2.0 * p.sigma * p.d / std::sqrt(p.M * p.tau * p.R);
    t.local_noise = 5.0 * std::cbrt(p.beta) * std::cbrt(p.sigma * p.sigma) * d43 / (std::cbrt(p.tau) * r23);
    t.heterogeneity = 15.0 * std::cbrt(p.beta) * std::cbrt(gap * gap) * d43 / r23;
    return t;
}

double convergence_bound(const TheoryParams& p, BoundReading reading) {
    return convergence_bound_terms(p, reading).total();
}

double max_local_steps(const TheoryParams& p) {
    if (!(p.beta > 0.0)) throw std::invalid_argument("max_local_steps: beta must be positive");
    if (!(p.d > 0.0)) throw std::invalid_argument("max_local_steps: d must be positive");
    if (!(p.M >= 1.0)) throw std::invalid_argument("max_local_steps: M must be >= 1");
    const double k = p.total_gradient_computations();
    if (!(k >= 1.0)) throw std::invalid_argument("max_local_steps: K must be >= 1");
    if (p.sigma < 0.0 || p.zeta < 0.0 || p.c < 0.0) {
        throw std::invalid_argument("max_local_steps: sigma, zeta and c must be non-negative");
    }
    const double gap = p.zeta + p.c;
    if (gap == 0.0) return kInf;
    return p.sigma / gap * std::sqrt(p.sigma / (p.d * p.beta) * std::sqrt(k) / (p.M * p.M));
}

double estimate_zeta(std::span<const ParamVector> client_grads, std::span<const double> weights) {
    if (client_grads.empty()) throw std::invalid_argument("estimate_zeta: no clients");
    const ParamVector global = weighted_average<double>(client_grads, weights);
    double worst = 0.0;
    for (const auto& g : client_grads) worst = std::max(worst, l2_distance(g, global));
    return worst;
}

double estimate_zeta(const ParamVector& params, const MlpSpec& spec, std::span<const Dataset> clients) {
    if (clients.empty()) throw std::invalid_argument("estimate_zeta: no clients");
    std::vector<ParamVector> grads;
    std::vector<double> weights;
    double total = 0.0;
    for (const auto& c : clients) total += double(c.size());
    for (const auto& c : clients) {
        grads.push_back(loss_and_grad<double>(params, spec, c.features, c.labels).grad);
        weights.push_back(double(c.size()) / total);
    }
    return estimate_zeta(grads, weights);
}

double estimate_sigma(const ParamVector& params, const MlpSpec& spec, const Dataset& data, int batch_size,
                      int num_draws, std::uint64_t seed) {
    if (num_draws < 2) throw std::invalid_argument("estimate_sigma: num_draws must be >= 2");
    if (batch_size < 1) throw std::invalid_argument("estimate_sigma: batch_size must be >= 1");
    if (static_cast<std::size_t>(batch_size) >= data.size()) return 0.0;
    const ParamVector full = loss_and_grad<double>(params, spec, data.features, data.labels).grad;
    Rng rng(seed);
    std::vector<std::size_t> order(data.size());
    double acc = 0.0;
    for (int draw = 0; draw < num_draws; ++draw) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        const Dataset batch =
            subset(data, std::span<const std::size_t>(order).subspan(0, static_cast<std::size_t>(batch_size)));
        const ParamVector g = loss_and_grad<double>(params, spec, batch.features, batch.labels).grad;
        acc += squared_norm(g - full);
    }
    return std::sqrt(acc / double(num_draws));
}

BvclStats bvcl_diagnostics(std::span<const ParamVector> models, const MlpSpec& spec,
                           const Eigen::Ref<const Eigen::MatrixXd>& test_features) {
    if (models.size() < 2) throw std::invalid_argument("bvcl_diagnostics: need at least 2 models");
    if (test_features.rows() == 0) throw std::invalid_argument("bvcl_diagnostics: empty test data");
    const std::size_t n = models.size();
    std::vector<Eigen::MatrixXd> probs;
    probs.reserve(n);
    for (const auto& m : models) probs.push_back(predict_proba(m, spec, test_features));

    const Eigen::Index points = test_features.rows();
    const Eigen::Index classes = probs.front().cols();
    Eigen::MatrixXd mean = probs[0];
    for (std::size_t i = 1; i < n; ++i) mean += probs[i];
    mean /= double(n);

    double var = 0.0, cov = 0.0;
    for (Eigen::Index x = 0; x < points; ++x) {
        for (Eigen::Index c = 0; c < classes; ++c) {
            double sq = 0.0, cross = 0.0, sum = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double dev = probs[i](x, c) - mean(x, c);
                sq += dev * dev;
                sum += dev;
            }
            // sum over ordered pairs i != j of dev_i * dev_j
            cross = sum * sum - sq;
            var += sq / double(n);
            cov += cross / double(n * (n - 1));
        }
    }
    const double cells = double(points) * double(classes);
    BvclStats s;
    s.variance = var / cells;
    s.covariance = cov / cells;
    const ParamVector avg = uniform_average<double>(models);
    for (const auto& m : models) s.locality = std::max(s.locality, l2_distance(m, avg));
    return s;
}

double EnsembleVarianceSplit::predicted_ensemble_variance() const {
    const double n = double(members);
    return member_variance / n + (n - 1.0) / n * pair_covariance;
}

EnsembleVarianceSplit ensemble_variance_split(std::span<const Eigen::MatrixXd> samples) {
    if (samples.size() < 2) throw std::invalid_argument("ensemble_variance_split: need at least 2 draws");
    const Eigen::Index n = samples.front().rows();
    const Eigen::Index points = samples.front().cols();
    if (n < 2) throw std::invalid_argument("ensemble_variance_split: need at least 2 members");
    for (const auto& s : samples) {
        if (s.rows() != n || s.cols() != points) throw std::invalid_argument("ensemble_variance_split: ragged samples");
    }
    const double t = double(samples.size());
    Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(n, points);
    for (const auto& s : samples) mean += s;
    mean /= t;

    EnsembleVarianceSplit out;
    out.members = static_cast<std::size_t>(n);
    double var = 0.0, cov = 0.0, ens = 0.0;
    for (Eigen::Index x = 0; x < points; ++x) {
        Eigen::MatrixXd c = Eigen::MatrixXd::Zero(n, n);
        double ens_x = 0.0;
        const double ens_mean = mean.col(x).mean();
        for (const auto& s : samples) {
            const Eigen::VectorXd dev = s.col(x) - mean.col(x);
            c.noalias() += dev * dev.transpose();
            const double e = s.col(x).mean() - ens_mean;
            ens_x += e * e;
        }
        c /= t;
        var += c.diagonal().sum() / double(n);
        cov += (c.sum() - c.diagonal().sum()) / double(n * (n - 1));
        ens += ens_x / t;
    }
    out.member_variance = var / double(points);
    out.pair_covariance = cov / double(points);
    out.ensemble_variance = ens / double(points);
    return out;
}

double power_iteration_top_eig(const GradientFn& grad, const ParamVector& at, int iters, std::uint64_t seed) {
    if (iters < 1) throw std::invalid_argument("power_iteration_top_eig: iters must be >= 1");
    const double step = 1e-4 * (1.0 + norm(at));
    auto hvp = [&](const ParamVector& v) -> ParamVector {
        return (grad(at + step * v) - grad(at - step * v)) / (2.0 * step);
    };
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto random_unit = [&] {
        ParamVector v(at.size());
        do {
            for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = normal(rng);
        } while (norm(v) == 0.0);
        return ParamVector(v / norm(v));
    };

    ParamVector v = random_unit();
    bool reseeded = false;
    for (int it = 0; it < iters; ++it) {
        const ParamVector hv = hvp(v);
        const double len = norm(hv);
        if (!(len > 0.0)) {
            if (reseeded) throw std::runtime_error("power iteration: Hessian-vector product vanished twice");
            reseeded = true;
            v = random_unit();
            continue;
        }
        v = hv / len;
    }
    return v.dot(hvp(v));
}

double hessian_top_eig(const ParamVector& params, const MlpSpec& spec, const Dataset& data, int batch_size,
                       int iters, std::uint64_t seed) {
    if (data.size() == 0) throw std::invalid_argument("hessian_top_eig: empty data");
    if (batch_size < 1) throw std::invalid_argument("hessian_top_eig: batch_size must be >= 1");
    const auto bs = std::min<std::size_t>(static_cast<std::size_t>(batch_size), data.size());
    std::vector<double> eigs;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start + bs <= data.size(); start += bs) {
        idx.resize(bs);
        std::iota(idx.begin(), idx.end(), start);
        const Dataset batch = subset(data, idx);
        const GradientFn grad = [&](const ParamVector& f) {
            return loss_and_grad<double>(f, spec, batch.features, batch.labels).grad;
        };
        eigs.push_back(power_iteration_top_eig(grad, params, iters, derive_seed(seed, {start})));
    }
    std::sort(eigs.begin(), eigs.end());
    const std::size_t m = eigs.size();
    return m % 2 == 1 ? eigs[m / 2] : 0.5 * (eigs[m / 2 - 1] + eigs[m / 2]);
}

void write_report(std::ostream& out, const Report& report) {
    char buf[64];
    for (const auto& [key, value] : report) {
        std::snprintf(buf, sizeof buf, "%.12g", value);
        out << key << ": " << buf << '\n';
    }
}

}  // namespace lss
