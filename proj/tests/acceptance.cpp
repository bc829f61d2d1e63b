// Acceptance suite: one PASS/FAIL line per criterion. Exit status is nonzero
// if any criterion fails.

#include "lss/analysis.hpp"
#include "lss/config.hpp"
#include "lss/experiment.hpp"
#include "lss/federation.hpp"
#include "lss/local_training.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#ifndef LSS_CONFIG_DIR
#error "LSS_CONFIG_DIR must point at configs/"
#endif

namespace fs = std::filesystem;
using lss::ParamVector;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

bool bit_equal(const ParamVector& a, const ParamVector& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

double rel_err(double analytic, double fd) {
    return std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
}

// Max relative error of `grad` against central differences of `loss` at x.
double fd_check(const std::function<double(const ParamVector&)>& loss, const ParamVector& grad, const ParamVector& x) {
    const double h = 1e-5;
    double worst = 0.0;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        ParamVector a = x, b = x;
        a(k) += h;
        b(k) -= h;
        worst = std::max(worst, rel_err(grad(k), (loss(a) - loss(b)) / (2 * h)));
    }
    return worst;
}

lss::Batch random_batch(std::mt19937_64& rng, const lss::MlpSpec& spec, int n) {
    std::normal_distribution<double> g(0.0, 1.0);
    lss::Batch b;
    b.features = Eigen::MatrixXd::NullaryExpr(n, spec.input_dim, [&] { return g(rng); });
    for (int i = 0; i < n; ++i) b.labels.push_back(int(rng() % std::uint64_t(spec.num_classes)));
    return b;
}

lss::MlpSpec random_spec(std::mt19937_64& rng) {
    lss::MlpSpec s;
    s.input_dim = 1 + int(rng() % 5);
    s.num_classes = 2 + int(rng() % 3);
    const int depth = int(rng() % 3);
    for (int l = 0; l < depth; ++l) s.hidden_dims.push_back(2 + int(rng() % 4));
    s.activation = (rng() & 1) ? lss::Activation::tanh : lss::Activation::relu;
    return s;
}

ParamVector gaussian(std::mt19937_64& rng, Eigen::Index n, double scale) {
    std::normal_distribution<double> g(0.0, scale);
    return ParamVector::NullaryExpr(n, [&] { return g(rng); });
}

// 1. Analytic gradients versus central finite differences.
Outcome gradient_oracles() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(101);
    const int instances = 60;
    double task = 0.0, prox = 0.0, reg = 0.0;
    for (int i = 0; i < instances; ++i) {
        const auto spec = random_spec(rng);
        const auto batch = random_batch(rng, spec, 1 + int(rng() % 8));
        const ParamVector f = lss::init_params(spec, rng()) + gaussian(rng, spec.param_count(), 0.1);
        auto ce = [&](const ParamVector& x) { return lss::mean_loss(x, spec, batch.features, batch.labels); };
        task = std::max(task, fd_check(ce, lss::loss_and_grad(f, spec, batch).grad, f));

        const ParamVector anchor = f + gaussian(rng, f.size(), 0.3);
        const double mu = std::uniform_real_distribution<double>(0.01, 5.0)(rng);
        auto prox_loss = [&](const ParamVector& x) { return lss::fedprox_loss_and_grad(x, anchor, spec, batch, mu).loss; };
        prox = std::max(prox, fd_check(prox_loss, lss::fedprox_loss_and_grad(f, anchor, spec, batch, mu).grad, f));

        lss::ModelPool pool(anchor);
        const int extra = 1 + int(rng() % 3);
        for (int k = 0; k < extra; ++k) pool.add_member(anchor + gaussian(rng, f.size(), 0.3));
        lss::Rng crng(rng());
        const auto coeffs = lss::sample_interp_coeffs(pool.size(), lss::CoeffMode::uniform_random, crng);
        lss::LocalConfig cfg;
        cfg.lambda_a = std::uniform_real_distribution<double>(0.1, 5.0)(rng);
        cfg.lambda_d = std::uniform_real_distribution<double>(0.1, 5.0)(rng);
        const ParamVector active = pool.active();
        auto reg_loss = [&](const ParamVector& x) {
            lss::ModelPool p(anchor);
            for (std::size_t m = 1; m + 1 < pool.size(); ++m) p.add_member(pool.members()[m]);
            p.add_member(x);
            return lss::lss_regularized_grad(p.active(), p, coeffs, spec, batch, cfg).loss;
        };
        reg = std::max(reg, fd_check(reg_loss, lss::lss_regularized_grad(pool.active(), pool, coeffs, spec, batch, cfg).grad,
                                     active));
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = task < 1e-4 && prox < 1e-4 && reg < 1e-4 && secs < 30.0;
    o.detail = std::to_string(instances) + " instances each; max rel err task " + fmt("%.2e", task) + ", fedprox " +
               fmt("%.2e", prox) + ", lss " + fmt("%.2e", reg) + "; " + fmt("%.2f s", secs);
    return o;
}

// 2. Reductions that must hold bit for bit.
Outcome reductions() {
    const auto data = lss::gen_blobs(4, 40, 6, 1.0, 5);
    lss::MlpSpec spec{6, {8}, 4};
    const ParamVector anchor = lss::init_params(spec, 3);
    lss::LocalConfig cfg;
    cfg.eta = 0.1;
    cfg.tau = 13;
    cfg.batch_size = 24;

    bool a = true;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        cfg.mu_prox = 0.0;
        a = a && bit_equal(lss::fedprox_local_train(anchor, spec, data, cfg, seed),
                           lss::sgd_local_train(anchor, spec, data, cfg, seed));
    }

    bool b = true;
    lss::LocalConfig red = cfg;
    red.num_pool_models = 1;
    red.lambda_a = red.lambda_d = 0.0;
    red.coeff_mode = lss::CoeffMode::active_only;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        for (int tau : {1, 5, 13}) {
            red.tau = tau;
            const auto res = lss::lss_local_train(anchor, spec, data, red, seed);
            b = b && res.trace.pool.size() == 2 &&
                bit_equal(res.trace.pool[1], lss::sgd_local_train(anchor, spec, data, red, seed));
        }
    }

    // single client holding all data versus a centralized loop
    std::vector<lss::Client> clients{{0, data, 1.0}};
    const auto trainer = lss::make_trainer(lss::Strategy::fedavg, spec, cfg);
    ParamVector fed = anchor, central = anchor;
    const std::uint64_t master = 77;
    for (int r = 1; r <= 4; ++r) {
        fed = lss::run_round(fed, clients, trainer, spec, data, master, r).global;
        lss::MinibatchSampler sampler(data, cfg.batch_size,
                                      lss::derive_seed(lss::client_seed(master, r, 0), lss::Stream::batches));
        for (int t = 0; t < cfg.tau; ++t) {
            const lss::Batch batch = sampler.next();
            central -= cfg.eta * lss::loss_and_grad(central, spec, batch).grad;
        }
    }
    const bool c = bit_equal(fed, central);
    return {a && b && c, std::string("(a) fedprox mu=0 ") + (a ? "identical" : "differs") + ", (b) lss reduction " +
                             (b ? "identical" : "differs") + ", (c) single-client fedavg " +
                             (c ? "identical" : "differs")};
}

// 3. Simplex and aggregation invariants.
Outcome simplex_invariants() {
    lss::Rng rng(3);
    std::size_t bad = 0;
    double worst_sum = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const auto a = lss::sample_interp_coeffs(1 + std::size_t(i % 9), lss::CoeffMode::uniform_random, rng);
        double s = 0.0;
        for (double x : a) {
            if (x < 0.0) ++bad;
            s += x;
        }
        worst_sum = std::max(worst_sum, std::abs(s - 1.0));
    }
    std::mt19937_64 r(4);
    double idem = 0.0, perm = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = 1 + std::size_t(trial % 8);
        std::vector<double> w(n);
        for (auto& x : w) x = std::uniform_real_distribution<double>(0.0, 1.0)(r);
        const double total = std::accumulate(w.begin(), w.end(), 0.0);
        for (auto& x : w) x /= total;
        const ParamVector f = gaussian(r, 32, 2.0);
        idem = std::max(idem, (lss::weighted_average(std::vector<ParamVector>(n, f), w) - f).cwiseAbs().maxCoeff());

        std::vector<ParamVector> models;
        for (std::size_t i = 0; i < n; ++i) models.push_back(gaussian(r, 32, 2.0));
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), r);
        std::vector<ParamVector> pm;
        std::vector<double> pw;
        for (auto i : order) {
            pm.push_back(models[i]);
            pw.push_back(w[i]);
        }
        perm = std::max(perm, (lss::weighted_average(models, w) - lss::weighted_average(pm, pw)).cwiseAbs().maxCoeff());
    }
    Outcome o;
    o.pass = bad == 0 && worst_sum < 1e-12 && idem <= 1e-12 && perm <= 1e-12;
    o.detail = "1e5 samples, " + std::to_string(bad) + " negative, max |sum-1| " + fmt("%.1e", worst_sum) +
               "; idempotence " + fmt("%.1e", idem) + ", permutation " + fmt("%.1e", perm);
    return o;
}

double final_accuracy(const lss::ExperimentConfig& base, std::uint64_t seed, lss::Strategy strategy, int rounds) {
    lss::ExperimentConfig c = base;
    c.master_seed = seed;
    c.federation.master_seed = seed;
    c.federation.strategy = strategy;
    c.federation.rounds = rounds;
    const auto fed = lss::build_federation(c.federation, c.data, c.model);
    return lss::run_experiment(c.federation, fed, c.local).rounds.back().global_test_accuracy;
}

// 4. LSS after one round against FedAvg after one and three rounds.
Outcome headline() {
    const auto t0 = Clock::now();
    const auto base = lss::parse_config(fs::path(LSS_CONFIG_DIR) / "label_shift.yaml");
    double lss1 = 0.0, avg1 = 0.0, avg3 = 0.0;
    for (std::uint64_t seed : {1, 2, 3}) {
        lss1 += final_accuracy(base, seed, lss::Strategy::lss, 1) / 3.0;
        avg1 += final_accuracy(base, seed, lss::Strategy::fedavg, 1) / 3.0;
        avg3 += final_accuracy(base, seed, lss::Strategy::fedavg, 3) / 3.0;
    }
    const double secs = seconds_since(t0);
    Outcome o;
    o.pass = lss1 >= avg1 + 0.03 && lss1 >= avg3 && secs < 180.0;
    o.detail = "3-seed mean accuracy: lss R=1 " + fmt("%.4f", lss1) + ", fedavg R=1 " + fmt("%.4f", avg1) +
               ", fedavg R=3 " + fmt("%.4f", avg3) + " (need lss >= fedavg R=1 + 0.03 and >= fedavg R=3); " +
               fmt("%.1f s", secs);
    return o;
}

// 5. FedAvg accuracy rises and then falls with the number of local steps.
Outcome local_step_trend() {
    const auto base = lss::parse_config(fs::path(LSS_CONFIG_DIR) / "tau_sweep.yaml");
    const int taus[] = {1, 4, 8, 16};
    double acc[4] = {0, 0, 0, 0};
    for (int i = 0; i < 4; ++i) {
        lss::ExperimentConfig c = base;
        c.local.tau = taus[i];
        for (std::uint64_t seed : {1, 2, 3}) acc[i] += final_accuracy(c, seed, lss::Strategy::fedavg, 1) / 3.0;
    }
    const int peak = int(std::max_element(acc, acc + 4) - acc);
    Outcome o;
    o.pass = peak != 3 && acc[peak] > acc[0] && acc[peak] > acc[3];
    o.detail = "3-seed mean accuracy tau=1 " + fmt("%.4f", acc[0]) + ", 4 " + fmt("%.4f", acc[1]) + ", 8 " +
               fmt("%.4f", acc[2]) + ", 16 " + fmt("%.4f", acc[3]) + "; peak at tau=" + std::to_string(taus[peak]);
    return o;
}

// 6. Theory calculators against a separate scalar evaluation.
namespace ref {

double lr(double b, double s, double g, double d, double M, double t, double R) {
    std::vector<double> terms{1 / (4 * b)};
    if (s > 0) {
        terms.push_back(std::pow(M, 0.5) * d / (std::pow(t * R, 0.5) * s));
        terms.push_back(std::pow(d, 2.0 / 3) / (std::pow(t, 2.0 / 3) * std::pow(R, 1.0 / 3) * std::pow(b, 1.0 / 3) *
                                                std::pow(s, 2.0 / 3)));
    }
    if (g > 0) terms.push_back(std::pow(d, 2.0 / 3) / (t * std::pow(R, 1.0 / 3) * std::pow(b, 1.0 / 3) * std::pow(g, 2.0 / 3)));
    return *std::min_element(terms.begin(), terms.end());
}

double bound(double b, double s, double g, double d, double M, double t, double R) {
    const double t1 = 2 * b * R * R / (t * R);
    const double t2 = 2 * s * d / std::pow(M * t * R, 0.5);
    const double t3 = 5 * std::pow(b, 1.0 / 3) * std::pow(s, 2.0 / 3) * std::pow(d, 4.0 / 3) / (std::pow(t, 1.0 / 3) * std::pow(R, 2.0 / 3));
    const double t4 = 15 * std::pow(b, 1.0 / 3) * std::pow(g, 2.0 / 3) * std::pow(d, 4.0 / 3) / std::pow(R, 2.0 / 3);
    return t1 + t2 + t3 + t4;
}

double steps(double b, double s, double g, double d, double M, double K) {
    return s / g * std::pow(s / (d * b) * std::pow(K, 0.5) / (M * M), 0.5);
}

}  // namespace ref

Outcome theory() {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(0.1, 4.0);
    double worst = 0.0;
    bool mono = true;
    for (int i = 0; i < 20; ++i) {
        lss::TheoryParams p;
        p.beta = u(rng);
        p.sigma = u(rng);
        p.zeta = u(rng);
        p.c = 0.5 * u(rng);
        p.d = u(rng);
        p.M = double(1 + rng() % 10);
        p.tau = double(1 + rng() % 32);
        p.R = double(1 + rng() % 20);
        const double g = p.zeta + p.c, K = p.M * p.tau * p.R;
        const auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(a), std::abs(b)); };
        worst = std::max({worst, rel(lss::lr_choice(p), ref::lr(p.beta, p.sigma, g, p.d, p.M, p.tau, p.R)),
                          rel(lss::convergence_bound(p), ref::bound(p.beta, p.sigma, g, p.d, p.M, p.tau, p.R)),
                          rel(lss::max_local_steps(p), ref::steps(p.beta, p.sigma, g, p.d, p.M, K))});

        lss::TheoryParams z = p, c = p, k = p;
        z.zeta *= 1.1;
        c.c += 0.1;
        k.K = 2 * K;
        mono = mono && lss::max_local_steps(z) < lss::max_local_steps(p) &&
               lss::max_local_steps(c) < lss::max_local_steps(p) && lss::max_local_steps(k) > lss::max_local_steps(p) &&
               lss::convergence_bound(z) > lss::convergence_bound(p) && lss::convergence_bound(c) > lss::convergence_bound(p);
    }
    Outcome o;
    o.pass = worst <= 1e-12 && mono;
    o.detail = "20 grid points, max relative deviation " + fmt("%.1e", worst) + ", monotonicity " + (mono ? "holds" : "violated");
    return o;
}

// 7. Landscape diagnostics.
Outcome diagnostics() {
    std::mt19937_64 rng(12);
    // quadratic 1/2 f^T A f with eigenvalues 7, 3, 2, 1, 0.5, 0.1
    const Eigen::VectorXd eig = (Eigen::VectorXd(6) << 7, 3, 2, 1, 0.5, 0.1).finished();
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(
                                  Eigen::MatrixXd::NullaryExpr(6, 6, [&] { return std::normal_distribution<double>()(rng); }))
                                  .householderQ();
    const Eigen::MatrixXd A = q * eig.asDiagonal() * q.transpose();
    const lss::GradientFn grad = [&](const ParamVector& f) { return ParamVector(A * f); };
    const double top = lss::power_iteration_top_eig(grad, gaussian(rng, 6, 1.0), 100, 5);
    const double eig_err = std::abs(top - 7.0) / 7.0;

    std::normal_distribution<double> g(0.0, 1.0);
    double split_err = 0.0;
    for (int members : {2, 4, 6}) {
        std::vector<Eigen::MatrixXd> draws;
        for (int t = 0; t < 300; ++t) {
            Eigen::MatrixXd s(members, 10);
            for (int x = 0; x < 10; ++x) {
                const double shared = g(rng);
                for (int n = 0; n < members; ++n) s(n, x) = 0.6 * shared + 0.5 * g(rng);
            }
            draws.push_back(s);
        }
        const auto split = lss::ensemble_variance_split(draws);
        split_err = std::max(split_err, std::abs(split.ensemble_variance - split.predicted_ensemble_variance()));
    }

    // Across one set of models centred on their own mean the member mean has
    // no spread, so var/N + (N-1)/N * cov must vanish.
    const auto data = lss::gen_blobs(3, 20, 4, 1.0, 2);
    lss::MlpSpec spec{4, {5}, 3};
    std::vector<ParamVector> models;
    for (std::uint64_t s = 0; s < 5; ++s) models.push_back(lss::init_params(spec, s));
    const auto b = lss::bvcl_diagnostics(models, spec, data.features);
    const double n = double(models.size());
    split_err = std::max(split_err, std::abs(b.variance / n + (n - 1) / n * b.covariance));

    const std::vector<ParamVector> pair{models[0], models[1]};
    const double loc_err =
        std::abs(lss::bvcl_diagnostics(pair, spec, data.features).locality - 0.5 * lss::l2_distance(models[0], models[1]));

    Outcome o;
    o.pass = eig_err <= 0.01 && split_err <= 1e-8 && loc_err <= 1e-12;
    o.detail = "top eigenvalue rel err " + fmt("%.1e", eig_err) + ", variance split " + fmt("%.1e", split_err) +
               ", locality vs half distance " + fmt("%.1e", loc_err);
    return o;
}

// 8. Regularizer geometry on a fixed client.
Outcome geometry() {
    auto data = lss::gen_blobs(4, 50, 5, 1.0, 31);
    data.features *= 10.0;
    lss::MlpSpec spec{5, {}, 4};
    const ParamVector anchor = lss::init_params(spec, 2);
    lss::LocalConfig cfg;
    cfg.eta = 0.01;
    cfg.tau = 32;
    cfg.batch_size = 32;
    cfg.lambda_d = 0.0;
    std::vector<double> dist;
    for (double la : {0.0, 1.0, 3.0, 10.0}) {
        cfg.lambda_a = la;
        dist.push_back(lss::l2_distance(lss::lss_local_train(anchor, spec, data, cfg, 8).final, anchor));
    }
    bool mono = true;
    for (std::size_t i = 1; i < dist.size(); ++i) mono = mono && dist[i] <= dist[i - 1] + 1e-6;
    cfg.lambda_a = 0.0;
    const double d0 = lss::mean_pairwise_distance(lss::lss_local_train(anchor, spec, data, cfg, 8).trace.pool);
    cfg.lambda_d = 3.0;
    const double d3 = lss::mean_pairwise_distance(lss::lss_local_train(anchor, spec, data, cfg, 8).trace.pool);
    Outcome o;
    o.pass = mono && d3 > d0;
    o.detail = "|f - anchor| at lambda_a 0/1/3/10: " + fmt("%.4f", dist[0]) + " " + fmt("%.4f", dist[1]) + " " +
               fmt("%.4f", dist[2]) + " " + fmt("%.4f", dist[3]) + "; pool spread lambda_d 0 " + fmt("%.4f", d0) +
               " vs 3 " + fmt("%.4f", d3);
    return o;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

// 9. Byte-identical reruns regardless of LSS_THREADS.
Outcome reproducibility() {
    const fs::path root = fs::temp_directory_path() / ("lss_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(root);
    const fs::path cfg = fs::path(LSS_CONFIG_DIR) / "label_shift.yaml";
    bool same = true;
    int runs = 0;
    for (const std::string strategy : {"lss", "fedprox", "fedavg"}) {
        std::string rounds0, ckpt0;
        for (const char* threads : {"1", "4", "2"}) {
            setenv("LSS_THREADS", threads, 1);
            const fs::path dir = root / (strategy + "_" + threads);
            std::ostringstream o, e;
            const int rc = lss::cmd_run(cfg, {"output.dir=" + dir.string(), "federation.strategy=" + strategy,
                                              "federation.rounds=2", "local.mu_prox=0.1"},
                                        o, e);
            ++runs;
            if (rc != 0) return {false, "run failed: " + e.str()};
            const std::string r = slurp(dir / lss::kRoundsFile), c = slurp(dir / lss::kCheckpointFile);
            if (rounds0.empty()) {
                rounds0 = r;
                ckpt0 = c;
            } else {
                same = same && r == rounds0 && c == ckpt0;
            }
        }
    }
    unsetenv("LSS_THREADS");
    fs::remove_all(root);
    return {same, std::to_string(runs) + " runs (3 strategies x LSS_THREADS 1/4/2): rounds.csv and final.lssw " +
                      (same ? "byte-identical" : "differ")};
}

}  // namespace

int main() {
    struct Criterion {
        const char* name;
        Outcome (*run)();
    };
    const Criterion criteria[] = {
        {"1 gradient oracles", gradient_oracles},
        {"2 reductions", reductions},
        {"3 simplex and aggregation invariants", simplex_invariants},
        {"4 lss vs fedavg under label shift", headline},
        {"5 local-step rise then fall", local_step_trend},
        {"6 theory calculators", theory},
        {"7 landscape diagnostics", diagnostics},
        {"8 regularizer geometry", geometry},
        {"9 reproducibility across thread counts", reproducibility},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        if (!o.pass) ++failed;
        std::printf("%s criterion %s: %s\n", o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", int(std::size(criteria)) - failed, std::size(criteria));
    return failed == 0 ? 0 : 1;
}
