#include "lss/experiment.hpp"

#include "lss/checkpoint.hpp"
#include "lss/rng.hpp"

#include <fstream>
#include <ostream>
#include <sstream>
#include <system_error>

namespace lss {
namespace fs = std::filesystem;

namespace {

Dataset concat_clients(const std::vector<Client>& clients) {
    Dataset all;
    all.num_classes = clients.front().data.num_classes;
    Eigen::Index rows = 0;
    for (const auto& c : clients) rows += c.data.features.rows();
    all.features.resize(rows, clients.front().data.features.cols());
    Eigen::Index r = 0;
    for (const auto& c : clients) {
        all.features.middleRows(r, c.data.features.rows()) = c.data.features;
        r += c.data.features.rows();
        all.labels.insert(all.labels.end(), c.data.labels.begin(), c.data.labels.end());
    }
    return all;
}

}  // namespace

RunArtifacts execute(const ExperimentConfig& config) {
    config.validate();
    FederationConfig fed = config.federation;
    fed.master_seed = config.master_seed;
    const Federation federation = build_federation(fed, config.data, config.model);

    RunArtifacts art;
    art.plan = federation.plan;
    art.result = run_experiment(fed, federation, config.local);
    const auto& res = art.result;
    const auto& spec = federation.spec;
    const auto& test = federation.test;

    Report& rep = art.diagnostics;
    rep.emplace_back("rounds", double(res.rounds.size()));
    rep.emplace_back("num_params", double(spec.param_count()));
    rep.emplace_back("initial_test_accuracy", accuracy(res.initial, spec, test.features, test.labels));
    rep.emplace_back("final_test_accuracy", res.rounds.back().global_test_accuracy);
    rep.emplace_back("final_test_loss", res.rounds.back().global_test_loss);
    rep.emplace_back("final_distance_from_initial", l2_distance(res.final, res.initial));

    const Dataset pooled = concat_clients(federation.clients);
    {
        const Eigen::VectorXd global = label_marginal(pooled.labels, pooled.num_classes);
        double tv = 0.0;
        for (const auto& c : federation.clients) {
            tv += 0.5 * (label_marginal(c.data.labels, c.data.num_classes) - global).cwiseAbs().sum();
        }
        rep.emplace_back("client_label_tv_distance", tv / double(federation.clients.size()));
    }

    std::vector<Dataset> client_data;
    for (const auto& c : federation.clients) client_data.push_back(c.data);
    if (config.analysis.zeta) {
        rep.emplace_back("zeta_hat_initial", estimate_zeta(res.initial, spec, client_data));
        rep.emplace_back("zeta_hat_final", estimate_zeta(res.final, spec, client_data));
    }
    if (config.analysis.sigma) {
        double sigma = 0.0;
        for (const auto& c : federation.clients) {
            sigma = std::max(sigma, estimate_sigma(res.final, spec, c.data, config.local.batch_size,
                                                   config.analysis.sigma_draws,
                                                   derive_seed(config.master_seed, Stream::analysis, {c.id})));
        }
        rep.emplace_back("sigma_hat_final", sigma);
    }
    if (config.analysis.bvcl && res.last_updates.size() >= 2) {
        std::vector<ParamVector> models;
        for (const auto& u : res.last_updates) models.push_back(u.params);
        const auto b = bvcl_diagnostics(models, spec, test.features);
        rep.emplace_back("bvcl_variance", b.variance);
        rep.emplace_back("bvcl_covariance", b.covariance);
        rep.emplace_back("bvcl_locality", b.locality);
    }
    if (config.analysis.hessian) {
        rep.emplace_back("hessian_top_eig_final",
                         hessian_top_eig(res.final, spec, pooled, config.analysis.hessian_batch,
                                         config.analysis.hessian_iters,
                                         derive_seed(config.master_seed, Stream::analysis, {0xE16ULL})));
    }
    return art;
}

void write_run_outputs(const fs::path& dir, const ExperimentConfig& config, const RunArtifacts& artifacts) {
    std::error_code ec;
    const bool existed = fs::exists(dir, ec);
    if (existed && !fs::is_directory(dir, ec)) throw std::runtime_error(dir.string() + " is not a directory");
    if (!existed) {
        fs::create_directories(dir, ec);
        if (ec) throw std::runtime_error("cannot create output directory " + dir.string() + ": " + ec.message());
    }

    const std::vector<std::string> names{kRoundsFile, kDiagnosticsFile, kCheckpointFile, kConfigSnapshotFile,
                                         kPartitionFile};
    auto staged = [&](const std::string& name) { return dir / ("." + name + ".tmp"); };
    std::vector<fs::path> renamed;
    try {
        {
            std::ofstream f(staged(kRoundsFile), std::ios::binary);
            write_rounds_csv(f, artifacts.result.rounds, config.output.record_timing);
            if (!f) throw std::runtime_error("write failed: rounds.csv");
        }
        {
            std::ofstream f(staged(kDiagnosticsFile), std::ios::binary);
            write_report(f, artifacts.diagnostics);
            if (!f) throw std::runtime_error("write failed: diagnostics.txt");
        }
        save_checkpoint(staged(kCheckpointFile), artifacts.result.final, artifacts.result.spec.shape());
        {
            std::ofstream f(staged(kConfigSnapshotFile), std::ios::binary);
            f << serialize_config(config);
            if (!f) throw std::runtime_error("write failed: config.yaml");
        }
        {
            std::ofstream f(staged(kPartitionFile), std::ios::binary);
            write_partition_plan(f, artifacts.plan);
            if (!f) throw std::runtime_error("write failed: partition.json");
        }
        for (const auto& n : names) {
            fs::rename(staged(n), dir / n);
            renamed.push_back(dir / n);
        }
    } catch (...) {
        for (const auto& n : names) fs::remove(staged(n), ec);
        for (const auto& p : renamed) fs::remove(p, ec);
        if (!existed) fs::remove(dir, ec);
        throw;
    }
}

int cmd_run(const fs::path& config_path, const std::vector<std::string>& overrides, std::ostream& out,
            std::ostream& err) {
    try {
        const auto cfg = parse_config(config_path, overrides);
        if (cfg.output.dir.empty()) throw ConfigError("output.dir", "missing required key");
        const auto art = execute(cfg);
        write_run_outputs(cfg.output.dir, cfg, art);
        const auto& last = art.result.rounds.back();
        out << "strategy " << to_string(cfg.federation.strategy) << ", " << art.result.rounds.size()
            << " round(s): global test accuracy " << last.global_test_accuracy << "\n";
        out << "outputs written to " << cfg.output.dir << "\n";
        return 0;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

SweepAxis parse_sweep_axis(const std::string& text) {
    const auto eq = text.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == text.size()) {
        throw ConfigError("", "sweep axis '" + text + "' must look like section.key=v1,v2,...");
    }
    SweepAxis axis;
    axis.key = text.substr(0, eq);
    std::stringstream ss(text.substr(eq + 1));
    for (std::string v; std::getline(ss, v, ',');) {
        if (v.empty()) throw ConfigError(axis.key, "empty value in sweep axis");
        axis.values.push_back(v);
    }
    return axis;
}

int cmd_sweep(const fs::path& config_path, const std::vector<SweepAxis>& axes,
              const std::vector<std::string>& overrides, std::ostream& out, std::ostream& err) {
    ExperimentConfig base;
    try {
        base = parse_config(config_path, overrides);
        if (base.output.dir.empty()) throw ConfigError("output.dir", "missing required key");
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    std::size_t cells = 1;
    for (const auto& a : axes) {
        if (a.values.empty()) {
            err << "error: sweep axis " << a.key << " has no values\n";
            return 1;
        }
        cells *= a.values.size();
    }
    const fs::path root = base.output.dir;
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec || !fs::is_directory(root)) {
        err << "error: cannot create output directory " << root.string() << "\n";
        return 1;
    }

    std::ostringstream summary;
    summary << "cell";
    for (const auto& a : axes) summary << ',' << a.key;
    summary << ",final_acc,status\n";

    int failures = 0;
    for (std::size_t cell = 0; cell < cells; ++cell) {
        std::vector<std::string> cell_overrides = overrides;
        std::vector<std::string> values;
        std::size_t rest = cell;
        for (std::size_t k = axes.size(); k-- > 0;) {
            values.insert(values.begin(), axes[k].values[rest % axes[k].values.size()]);
            rest /= axes[k].values.size();
        }
        for (std::size_t k = 0; k < axes.size(); ++k) cell_overrides.push_back(axes[k].key + "=" + values[k]);
        char name[32];
        std::snprintf(name, sizeof name, "cell_%03zu", cell);
        const fs::path dir = root / name;
        cell_overrides.push_back("output.dir=" + dir.string());

        summary << name;
        for (const auto& v : values) summary << ',' << v;
        try {
            const auto cfg = parse_config(config_path, cell_overrides);
            const auto art = execute(cfg);
            write_run_outputs(dir, cfg, art);
            char acc[32];
            std::snprintf(acc, sizeof acc, "%.10g", art.result.rounds.back().global_test_accuracy);
            summary << ',' << acc << ",ok\n";
            out << name << ": final accuracy " << acc << "\n";
        } catch (const std::exception& e) {
            ++failures;
            std::string msg = e.what();
            for (auto& ch : msg) {
                if (ch == ',' || ch == '\n') ch = ';';
            }
            summary << ",,failed: " << msg << "\n";
            err << name << ": " << e.what() << "\n";
        }
    }
    std::ofstream f(root / "summary.csv", std::ios::binary);
    f << summary.str();
    if (!f) {
        err << "error: cannot write summary.csv\n";
        return 1;
    }
    return failures == 0 ? 0 : 2;
}

}  // namespace lss
