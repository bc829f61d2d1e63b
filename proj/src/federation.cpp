#include "lss/federation.hpp"

#include "lss/rng.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <ostream>
#include <stdexcept>
#include <thread>

namespace lss {

const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::fedavg: return "fedavg";
        case Strategy::fedprox: return "fedprox";
        case Strategy::lss: return "lss";
    }
    return "?";
}

Strategy strategy_from_string(const std::string& s) {
    if (s == "fedavg") return Strategy::fedavg;
    if (s == "fedprox") return Strategy::fedprox;
    if (s == "lss") return Strategy::lss;
    throw std::invalid_argument("unknown strategy '" + s + "' (expected fedavg, fedprox or lss)");
}

void FederationConfig::validate() const {
    if (num_clients < 1) throw std::invalid_argument("federation.num_clients must be >= 1");
    if (rounds < 1) throw std::invalid_argument("federation.rounds must be >= 1");
    if (warmup_steps < 0) throw std::invalid_argument("federation.warmup_steps must be >= 0");
    if (!(warmup_eta > 0.0)) throw std::invalid_argument("federation.warmup_eta must be positive");
    if (warmup_batch_size < 1) throw std::invalid_argument("federation.warmup_batch_size must be >= 1");
    if (threads < 0) throw std::invalid_argument("federation.threads must be >= 0");
    if (!client_weights.empty()) {
        if (client_weights.size() != static_cast<std::size_t>(num_clients)) {
            throw std::invalid_argument("federation.client_weights must have num_clients entries");
        }
        double total = 0.0;
        for (double w : client_weights) {
            if (!(w >= 0.0)) throw std::invalid_argument("federation.client_weights must be non-negative");
            total += w;
        }
        if (std::abs(total - 1.0) > kWeightSumTolerance) {
            throw std::invalid_argument("federation.client_weights must sum to 1");
        }
    }
}

void DataSetup::validate() const {
    if (source != "blobs" && source != "idx") throw std::invalid_argument("data.source must be blobs or idx");
    if (source == "blobs") {
        if (num_classes < 2) throw std::invalid_argument("data.num_classes must be >= 2");
        if (per_class < 1) throw std::invalid_argument("data.per_class must be >= 1");
        if (input_dim < 1) throw std::invalid_argument("data.input_dim must be >= 1");
        if (!(spread > 0.0)) throw std::invalid_argument("data.spread must be positive");
        if (proxy_per_class < 1) throw std::invalid_argument("data.proxy_per_class must be >= 1");
    } else {
        if (idx_images.empty()) throw std::invalid_argument("data.images is required for idx data");
        if (idx_labels.empty()) throw std::invalid_argument("data.labels is required for idx data");
    }
    if (partition == PartitionMode::dirichlet && !(alpha > 0.0)) {
        throw std::invalid_argument("partition.alpha must be positive");
    }
    if (!(shift_strength >= 0.0)) throw std::invalid_argument("partition.shift_strength must be >= 0");
    if (!(val_fraction > 0.0) || !(test_fraction > 0.0) || val_fraction + test_fraction >= 1.0) {
        throw std::invalid_argument("data.val_fraction and data.test_fraction must be positive and sum below 1");
    }
}

LocalTrainer make_trainer(Strategy strategy, const MlpSpec& spec, const LocalConfig& config) {
    switch (strategy) {
        case Strategy::fedavg:
            return [spec, config](const ParamVector& anchor, const Client& c, std::uint64_t seed) {
                return sgd_local_train(anchor, spec, c.data, config, seed);
            };
        case Strategy::fedprox:
            return [spec, config](const ParamVector& anchor, const Client& c, std::uint64_t seed) {
                return fedprox_local_train(anchor, spec, c.data, config, seed);
            };
        case Strategy::lss:
            return [spec, config](const ParamVector& anchor, const Client& c, std::uint64_t seed) {
                return lss_local_train(anchor, spec, c.data, config, seed).final;
            };
    }
    throw std::invalid_argument("unknown strategy");
}

std::uint64_t client_seed(std::uint64_t master_seed, int round, std::size_t client_id) {
    return derive_seed(master_seed, Stream::round, {static_cast<std::uint64_t>(round), client_id});
}

int threads_from_env() {
    const char* env = std::getenv("LSS_THREADS");
    if (env == nullptr) return 1;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) return 1;
    return static_cast<int>(std::min<long>(v, 256));
}

ParamVector aggregate(std::vector<ClientUpdate> updates) {
    std::sort(updates.begin(), updates.end(),
              [](const ClientUpdate& a, const ClientUpdate& b) { return a.client_id < b.client_id; });
    std::vector<ParamVector> models;
    std::vector<double> weights;
    models.reserve(updates.size());
    for (auto& u : updates) {
        models.push_back(std::move(u.params));
        weights.push_back(u.weight);
    }
    return weighted_average<double>(models, weights);
}

ParamVector warmup_pretrain(const MlpSpec& spec, const Dataset& proxy_data, int steps, std::uint64_t seed,
                            double eta, int batch_size) {
    if (steps < 0) throw std::invalid_argument("warmup steps must be >= 0");
    ParamVector f = init_params(spec, derive_seed(seed, Stream::init));
    if (steps == 0) return f;
    MinibatchSampler sampler(proxy_data, batch_size, derive_seed(seed, Stream::warmup));
    for (int t = 0; t < steps; ++t) {
        const auto lg = loss_and_grad<double>(f, spec, sampler.next());
        f -= eta * lg.grad;
    }
    return f;
}

RoundResult run_round(const ParamVector& global, const std::vector<Client>& clients, const LocalTrainer& trainer,
                      const MlpSpec& spec, const Dataset& test, std::uint64_t master_seed, int round, int threads) {
    if (clients.empty()) throw std::invalid_argument("run_round: no clients");
    if (global.size() != spec.param_count()) throw DimensionError("run_round global", global.size(), spec.param_count());
    const auto start = std::chrono::steady_clock::now();

    const std::size_t n = clients.size();
    std::vector<ParamVector> finals(n);
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                finals[i] = trainer(global, clients[i], client_seed(master_seed, round, clients[i].id));
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const auto workers = static_cast<std::size_t>(std::clamp(threads, 1, static_cast<int>(n)));
    if (workers == 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
    }

    // report the lowest failing client id
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return clients[a].id < clients[b].id; });
    for (auto i : order) {
        if (!errors[i]) continue;
        try {
            std::rethrow_exception(errors[i]);
        } catch (const std::exception& e) {
            throw std::runtime_error("client " + std::to_string(clients[i].id) + ": " + e.what());
        }
    }

    RoundResult out;
    out.record.round_index = round;
    for (auto i : order) {
        out.record.per_client_pre_agg_accuracy.push_back(accuracy(finals[i], spec, test.features, test.labels));
        out.record.per_client_update_norm.push_back(l2_distance(finals[i], global));
        out.updates.push_back({clients[i].id, clients[i].weight, finals[i]});
    }
    out.global = aggregate(out.updates);
    out.record.global_test_accuracy = accuracy(out.global, spec, test.features, test.labels);
    out.record.global_test_loss = mean_loss(out.global, spec, test.features, test.labels);
    out.record.wall_time_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

Federation build_federation(const FederationConfig& fed, const DataSetup& data, const ModelSetup& model) {
    fed.validate();
    data.validate();
    const std::uint64_t seed = fed.master_seed;

    Dataset full;
    Federation out;
    Splits splits;
    if (data.source == "blobs") {
        full = gen_blobs(data.num_classes, data.per_class, data.input_dim, data.spread,
                         derive_seed(seed, Stream::data));
        splits = split_dataset(full, data.val_fraction, data.test_fraction, derive_seed(seed, Stream::split));
        out.proxy = gen_blobs(data.num_classes, data.proxy_per_class, data.input_dim, data.spread,
                              derive_seed(seed, Stream::proxy));
    } else {
        full = load_idx(data.idx_images, data.idx_labels);
        splits = split_dataset(full, data.val_fraction, data.test_fraction, derive_seed(seed, Stream::split));
        // held-out validation split doubles as the warm-up proxy for real data
        out.proxy = splits.val;
    }

    out.spec.input_dim = static_cast<int>(full.input_dim());
    out.spec.num_classes = full.num_classes;
    out.spec.hidden_dims = model.hidden_dims;
    out.spec.activation = model.activation;
    out.spec.validate();

    const auto partition_seed = derive_seed(seed, Stream::partition);
    if (data.partition == PartitionMode::dirichlet) {
        out.plan = dirichlet_partition(splits.train, fed.num_clients, data.alpha, partition_seed);
        out.test = std::move(splits.test);
    } else {
        auto fs = feature_shift_partition(splits.train, fed.num_clients, partition_seed, data.shift_strength);
        out.plan = std::move(fs.plan);
        out.transforms = std::move(fs.transforms);
        // the global test set mixes all client domains, one sample per client in turn
        out.test = std::move(splits.test);
        for (Eigen::Index i = 0; i < out.test.features.rows(); ++i) {
            const auto& tf = out.transforms[static_cast<std::size_t>(i) % out.transforms.size()];
            out.test.features.row(i) = tf.apply(out.test.features.row(i)).row(0);
        }
    }

    const auto weights = fed.client_weights.empty() ? out.plan.data_weights() : fed.client_weights;
    for (std::size_t c = 0; c < out.plan.num_clients(); ++c) {
        Client client;
        client.id = c;
        client.data = subset(splits.train, out.plan.client_indices[c]);
        if (!out.transforms.empty()) client.data.features = out.transforms[c].apply(client.data.features);
        client.weight = weights[c];
        out.clients.push_back(std::move(client));
    }
    return out;
}

ExperimentResult run_experiment(const FederationConfig& fed, const Federation& federation, const LocalConfig& local) {
    fed.validate();
    local.validate();
    ExperimentResult res;
    res.spec = federation.spec;
    res.initial = warmup_pretrain(federation.spec, federation.proxy, fed.warmup_steps,
                                  derive_seed(fed.master_seed, Stream::warmup), fed.warmup_eta,
                                  fed.warmup_batch_size);
    const auto trainer = make_trainer(fed.strategy, federation.spec, local);
    const int threads = fed.threads > 0 ? fed.threads : threads_from_env();
    ParamVector global = res.initial;
    for (int r = 1; r <= fed.rounds; ++r) {
        auto round = run_round(global, federation.clients, trainer, federation.spec, federation.test,
                               fed.master_seed, r, threads);
        global = std::move(round.global);
        res.rounds.push_back(std::move(round.record));
        if (r == fed.rounds) res.last_updates = std::move(round.updates);
    }
    res.final = std::move(global);
    return res;
}

ExperimentResult run_experiment(const FederationConfig& fed, const DataSetup& data, const ModelSetup& model,
                                const LocalConfig& local) {
    local.validate();
    const auto federation = build_federation(fed, data, model);
    return run_experiment(fed, federation, local);
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string join(const std::vector<double>& xs) {
    std::string s;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) s += ';';
        s += fmt_double(xs[i]);
    }
    return s;
}

}  // namespace

void write_rounds_csv(std::ostream& out, const std::vector<RoundRecord>& rounds, bool include_timing) {
    out << "round,global_acc,global_loss,client_accs,update_norms,wall_time_s\n";
    for (const auto& r : rounds) {
        out << r.round_index << ',' << fmt_double(r.global_test_accuracy) << ',' << fmt_double(r.global_test_loss)
            << ',' << join(r.per_client_pre_agg_accuracy) << ',' << join(r.per_client_update_norm) << ','
            << (include_timing ? fmt_double(r.wall_time_seconds) : std::string("0")) << '\n';
    }
}

}  // namespace lss
