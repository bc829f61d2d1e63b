// lss: federated fine-tuning experiment runner.
//
//   lss run    CONFIG [--set key=value ...]
//   lss sweep  CONFIG --grid key=v1,v2 [--grid ...] [--set key=value ...]
//   lss eval   --checkpoint FILE (--config CONFIG | --images F --labels F)
//   lss bound  --beta B --sigma S --zeta Z --c C --d D --clients M --tau T --rounds R [--K K]

#include "lss/analysis.hpp"
#include "lss/checkpoint.hpp"
#include "lss/config.hpp"
#include "lss/experiment.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <iostream>

namespace {

int run_eval(const std::string& checkpoint, const std::string& config, const std::vector<std::string>& overrides,
             const std::string& images, const std::string& labels, const std::string& activation) {
    try {
        const auto ck = lss::load_checkpoint(checkpoint);
        lss::Dataset data;
        lss::Activation act = lss::activation_from_string(activation);
        if (!config.empty()) {
            const auto cfg = lss::parse_config(config, overrides);
            act = cfg.model.activation;
            data = lss::build_federation(cfg.federation, cfg.data, cfg.model).test;
        } else if (!images.empty() && !labels.empty()) {
            data = lss::load_idx(images, labels);
        } else {
            std::cerr << "error: eval needs --config or both --images and --labels\n";
            return 1;
        }
        const auto spec = lss::spec_from_shape(ck.shape, act);
        std::cout << "accuracy: " << lss::accuracy(ck.params, spec, data.features, data.labels) << "\n";
        std::cout << "loss: " << lss::mean_loss(ck.params, spec, data.features, data.labels) << "\n";
        std::cout << "samples: " << data.size() << "\n";
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int run_bound(const lss::TheoryParams& p) {
    try {
        lss::Report rep;
        rep.emplace_back("K", p.total_gradient_computations());
        rep.emplace_back("lr_choice", lss::lr_choice(p));
        const auto t = lss::convergence_bound_terms(p);
        rep.emplace_back("bound_term_optimization", t.optimization);
        rep.emplace_back("bound_term_statistical", t.statistical);
        rep.emplace_back("bound_term_local_noise", t.local_noise);
        rep.emplace_back("bound_term_heterogeneity", t.heterogeneity);
        rep.emplace_back("convergence_bound", t.total());
        rep.emplace_back("convergence_bound_distance_squared",
                         lss::convergence_bound(p, lss::BoundReading::distance_squared));
        rep.emplace_back("max_local_steps", lss::max_local_steps(p));
        lss::write_report(std::cout, rep);
        return 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated fine-tuning simulator with model-pool local training"};
    app.require_subcommand(1);

    std::string config;
    std::vector<std::string> overrides;

    auto* run = app.add_subcommand("run", "Run one experiment");
    run->add_option("config", config, "Experiment config (YAML)")->required()->check(CLI::ExistingFile);
    run->add_option("--set", overrides, "Override a config key, e.g. local.lambda_a=3");

    std::vector<std::string> grid;
    auto* sweep = app.add_subcommand("sweep", "Run a cartesian grid of experiments");
    sweep->add_option("config", config, "Experiment config (YAML)")->required()->check(CLI::ExistingFile);
    sweep->add_option("--grid", grid, "Grid axis, e.g. local.lambda_a=0,1,3")->required();
    sweep->add_option("--set", overrides, "Override a config key");

    std::string checkpoint, images, labels, activation = "relu";
    auto* eval = app.add_subcommand("eval", "Accuracy of a checkpoint on a dataset");
    eval->add_option("--checkpoint", checkpoint, "Checkpoint (.lssw)")->required()->check(CLI::ExistingFile);
    eval->add_option("--config", config, "Evaluate on this experiment's test split");
    eval->add_option("--set", overrides, "Override a config key");
    eval->add_option("--images", images, "IDX image file");
    eval->add_option("--labels", labels, "IDX label file");
    eval->add_option("--activation", activation, "Hidden activation (relu|tanh) when no config is given");

    lss::TheoryParams tp;
    auto* bound = app.add_subcommand("bound", "Evaluate the convergence bound, learning rate and local-step ceiling");
    bound->add_option("--beta", tp.beta, "Smoothness")->required();
    bound->add_option("--sigma", tp.sigma, "Stochastic gradient noise")->required();
    bound->add_option("--zeta", tp.zeta, "Local/global gradient gap")->required();
    bound->add_option("--c", tp.c, "Regularizer update bound")->default_val(0.0);
    bound->add_option("--d", tp.d, "Initialization-to-optimum distance")->required();
    bound->add_option("--clients", tp.M, "Number of clients M")->required();
    bound->add_option("--tau", tp.tau, "Local steps")->required();
    bound->add_option("--rounds", tp.R, "Communication rounds")->required();
    bound->add_option("--K", tp.K, "Total gradient computations (default M*tau*R)");

    CLI11_PARSE(app, argc, argv);

    if (*run) return lss::cmd_run(config, overrides, std::cout, std::cerr);
    if (*sweep) {
        std::vector<lss::SweepAxis> axes;
        try {
            for (const auto& g : grid) axes.push_back(lss::parse_sweep_axis(g));
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return 1;
        }
        return lss::cmd_sweep(config, axes, overrides, std::cout, std::cerr);
    }
    if (*eval) return run_eval(checkpoint, config, overrides, images, labels, activation);
    if (*bound) return run_bound(tp);
    return 1;
}
