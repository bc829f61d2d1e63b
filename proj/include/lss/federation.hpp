#pragma once

// Server loop: broadcast the global model, train every client locally,
// aggregate with the client weights. Also builds the simulated federation
// (data, partition, shared warm-started initialization) for an experiment.

#include "lss/data.hpp"
#include "lss/local_training.hpp"
#include "lss/model.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace lss {

enum class Strategy { fedavg, fedprox, lss };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct FederationConfig {
    int num_clients = 5;
    int rounds = 1;
    Strategy strategy = Strategy::lss;
    std::vector<double> client_weights;  // empty: proportional to client data size
    std::uint64_t master_seed = 0;
    int warmup_steps = 200;
    double warmup_eta = 0.1;
    int warmup_batch_size = 64;
    int threads = 0;  // 0: LSS_THREADS or 1

    void validate() const;
};

struct DataSetup {
    std::string source = "blobs";  // blobs | idx
    int num_classes = 10;
    int per_class = 300;
    int input_dim = 16;
    double spread = 1.0;
    int proxy_per_class = 10;
    std::string idx_images;
    std::string idx_labels;
    PartitionMode partition = PartitionMode::dirichlet;
    double alpha = 1.0;
    double shift_strength = 1.0;
    double val_fraction = 0.1;
    double test_fraction = 0.1;

    void validate() const;
};

struct ModelSetup {
    std::vector<int> hidden_dims;
    Activation activation = Activation::relu;
};

struct Client {
    std::size_t id = 0;
    Dataset data;
    double weight = 0.0;
};

struct RoundRecord {
    int round_index = 0;
    double global_test_accuracy = 0.0;
    double global_test_loss = 0.0;
    std::vector<double> per_client_pre_agg_accuracy;
    std::vector<double> per_client_update_norm;
    double wall_time_seconds = 0.0;
};

struct ClientUpdate {
    std::size_t client_id = 0;
    double weight = 0.0;
    ParamVector params;
};

/// Local update rule: (anchor, client, per-client seed) -> trained model.
using LocalTrainer = std::function<ParamVector(const ParamVector&, const Client&, std::uint64_t)>;

LocalTrainer make_trainer(Strategy strategy, const MlpSpec& spec, const LocalConfig& config);

/// Seed of client `client_id` in round `round`; independent of scheduling.
std::uint64_t client_seed(std::uint64_t master_seed, int round, std::size_t client_id);

/// Worker count from LSS_THREADS (>= 1), or 1 when unset or invalid.
int threads_from_env();

/// Weighted average of client models, accumulated in ascending client id.
ParamVector aggregate(std::vector<ClientUpdate> updates);

ParamVector warmup_pretrain(const MlpSpec& spec, const Dataset& proxy_data, int steps, std::uint64_t seed,
                            double eta = 0.1, int batch_size = 64);

struct RoundResult {
    ParamVector global;
    RoundRecord record;
    std::vector<ClientUpdate> updates;  // sorted by client id
};

/// One communication round. Evaluation uses `test`.
RoundResult run_round(const ParamVector& global, const std::vector<Client>& clients, const LocalTrainer& trainer,
                      const MlpSpec& spec, const Dataset& test, std::uint64_t master_seed, int round,
                      int threads = 1);

struct Federation {
    MlpSpec spec;
    std::vector<Client> clients;
    Dataset test;
    Dataset proxy;
    PartitionPlan plan;
    std::vector<FeatureTransform> transforms;  // feature-shift only
};

/// Data generation/loading, split, partition and per-client transforms.
Federation build_federation(const FederationConfig& fed, const DataSetup& data, const ModelSetup& model);

struct ExperimentResult {
    std::vector<RoundRecord> rounds;
    ParamVector initial;
    ParamVector final;
    MlpSpec spec;
    std::vector<ClientUpdate> last_updates;
};

/// Warm-up, then `rounds` communication rounds; deterministic in master_seed.
ExperimentResult run_experiment(const FederationConfig& fed, const DataSetup& data, const ModelSetup& model,
                                const LocalConfig& local);
ExperimentResult run_experiment(const FederationConfig& fed, const Federation& federation, const LocalConfig& local);

/// Header: round,global_acc,global_loss,client_accs,update_norms,wall_time_s.
/// When include_timing is false the wall time column is written as 0.
void write_rounds_csv(std::ostream& out, const std::vector<RoundRecord>& rounds, bool include_timing);

}  // namespace lss
