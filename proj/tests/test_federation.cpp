#include "lss/federation.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <sstream>

#ifndef LSS_TEST_DATA_DIR
#error "LSS_TEST_DATA_DIR must point at tests/data"
#endif

using lss::Client;
using lss::ParamVector;

namespace {

bool bit_equal(const ParamVector& a, const ParamVector& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

ParamVector vec2(double a, double b) {
    ParamVector v(2);
    v << a, b;
    return v;
}

lss::MlpSpec tiny_spec() { return {1, {}, 2}; }  // 4 parameters

lss::Dataset tiny_test() {
    lss::Dataset d;
    d.features = Eigen::MatrixXd::Ones(2, 1);
    d.labels = {0, 1};
    return d;
}

lss::FederationConfig small_fed(lss::Strategy s, int rounds) {
    lss::FederationConfig f;
    f.num_clients = 4;
    f.rounds = rounds;
    f.strategy = s;
    f.master_seed = 1234;
    f.warmup_steps = 20;
    return f;
}

lss::DataSetup small_data() {
    lss::DataSetup d;
    d.num_classes = 4;
    d.per_class = 40;
    d.input_dim = 6;
    d.proxy_per_class = 8;
    d.alpha = 0.5;
    return d;
}

lss::LocalConfig small_local() {
    lss::LocalConfig l;
    l.eta = 0.1;
    l.tau = 5;
    l.batch_size = 16;
    l.num_pool_models = 3;
    return l;
}

}  // namespace

TEST_CASE("aggregation of hand-set client finals") {
    std::vector<lss::ClientUpdate> ups{{0, 0.25, vec2(1, 1)}, {1, 0.75, vec2(3, 3)}};
    const ParamVector g = lss::aggregate(ups);
    CHECK(g(0) == 2.5);
    CHECK(g(1) == 2.5);

    // the same through run_round with trainers that return fixed models
    std::vector<Client> clients(2);
    clients[0] = {0, tiny_test(), 0.25};
    clients[1] = {1, tiny_test(), 0.75};
    lss::MlpSpec spec = tiny_spec();
    const lss::LocalTrainer fixed = [](const ParamVector&, const Client& c, std::uint64_t) {
        return c.id == 0 ? ParamVector::Constant(4, 1.0) : ParamVector::Constant(4, 3.0);
    };
    const auto r = lss::run_round(ParamVector::Zero(4), clients, fixed, spec, tiny_test(), 1, 1);
    CHECK(r.global == ParamVector::Constant(4, 2.5));
    CHECK(r.record.per_client_update_norm == std::vector<double>{2.0, 6.0});
    CHECK(r.record.round_index == 1);
}

TEST_CASE("round edge cases") {
    const auto data = lss::gen_blobs(3, 20, 2, 1.0, 1);
    lss::MlpSpec spec{2, {}, 3};
    const ParamVector global = lss::init_params(spec, 4);
    lss::LocalConfig cfg = small_local();

    std::vector<Client> clients{{0, lss::subset(data, std::vector<std::size_t>{0, 1, 2, 30}), 0.5},
                                {1, lss::subset(data, std::vector<std::size_t>{40, 41, 50}), 0.5}};
    cfg.tau = 0;
    for (auto s : {lss::Strategy::fedavg, lss::Strategy::fedprox}) {
        const auto r = lss::run_round(global, clients, lss::make_trainer(s, spec, cfg), spec, data, 3, 1);
        CHECK(bit_equal(r.global, global));
    }

    cfg.tau = 4;
    std::vector<Client> one{{7, data, 1.0}};
    const auto trainer = lss::make_trainer(lss::Strategy::lss, spec, cfg);
    const auto r = lss::run_round(global, one, trainer, spec, data, 3, 2);
    CHECK(bit_equal(r.global, trainer(global, one[0], lss::client_seed(3, 2, 7))));
    CHECK(r.record.per_client_pre_agg_accuracy.size() == 1);
}

TEST_CASE("client errors carry the client id") {
    const auto data = lss::gen_blobs(3, 20, 2, 1.0, 1);
    lss::MlpSpec spec{2, {}, 3};
    std::vector<Client> clients{{3, data, 0.5}, {5, data, 0.5}};
    const lss::LocalTrainer failing = [](const ParamVector& g, const Client& c, std::uint64_t) -> ParamVector {
        if (c.id == 5) throw std::runtime_error("diverged");
        return g;
    };
    try {
        lss::run_round(lss::init_params(spec, 1), clients, failing, spec, data, 1, 1, 2);
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()) == "client 5: diverged");
    }
}

TEST_CASE("permuting clients leaves the new global model unchanged") {
    const auto fed = lss::build_federation(small_fed(lss::Strategy::lss, 1), small_data(), {});
    const ParamVector global = lss::init_params(fed.spec, 2);
    const auto trainer = lss::make_trainer(lss::Strategy::lss, fed.spec, small_local());
    auto clients = fed.clients;
    const auto a = lss::run_round(global, clients, trainer, fed.spec, fed.test, 99, 1);
    std::reverse(clients.begin(), clients.end());
    std::swap(clients[0], clients[2]);
    const auto b = lss::run_round(global, clients, trainer, fed.spec, fed.test, 99, 1);
    CHECK((a.global - b.global).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK(a.record.per_client_pre_agg_accuracy == b.record.per_client_pre_agg_accuracy);
}

TEST_CASE("sequential and threaded rounds are bit identical") {
    const auto fed = lss::build_federation(small_fed(lss::Strategy::lss, 1), small_data(), {{5}, lss::Activation::tanh});
    const ParamVector global = lss::init_params(fed.spec, 2);
    for (auto s : {lss::Strategy::fedavg, lss::Strategy::fedprox, lss::Strategy::lss}) {
        auto local = small_local();
        local.mu_prox = 0.5;
        const auto trainer = lss::make_trainer(s, fed.spec, local);
        const auto seq = lss::run_round(global, fed.clients, trainer, fed.spec, fed.test, 5, 1, 1);
        for (int threads : {2, 3, 8}) {
            const auto par = lss::run_round(global, fed.clients, trainer, fed.spec, fed.test, 5, 1, threads);
            CHECK(bit_equal(seq.global, par.global));
        }
    }
}

TEST_CASE("single-client fedavg equals centralized SGD") {
    const auto data = lss::gen_blobs(3, 30, 4, 1.0, 8);
    lss::MlpSpec spec{4, {3}, 3};
    const ParamVector start = lss::init_params(spec, 1);
    lss::LocalConfig cfg;
    cfg.eta = 0.2;
    cfg.tau = 7;
    cfg.batch_size = 16;
    const std::uint64_t master = 42;
    const int rounds = 3;

    std::vector<Client> clients{{0, data, 1.0}};
    const auto trainer = lss::make_trainer(lss::Strategy::fedavg, spec, cfg);
    ParamVector fed = start;
    for (int r = 1; r <= rounds; ++r) fed = lss::run_round(fed, clients, trainer, spec, data, master, r).global;

    // Centralized loop: tau steps per round on the whole dataset with the
    // round's batch stream.
    ParamVector central = start;
    for (int r = 1; r <= rounds; ++r) {
        lss::MinibatchSampler sampler(data, cfg.batch_size,
                                      lss::derive_seed(lss::client_seed(master, r, 0), lss::Stream::batches));
        for (int t = 0; t < cfg.tau; ++t) {
            const lss::Batch b = sampler.next();
            central -= cfg.eta * lss::loss_and_grad(central, spec, b).grad;
        }
    }
    CHECK(bit_equal(fed, central));
}

TEST_CASE("warm-up pre-training") {
    lss::MlpSpec spec{8, {}, 5};
    const auto proxy = lss::gen_blobs(5, 40, 8, 1.0, 3);
    const ParamVector raw = lss::warmup_pretrain(spec, proxy, 0, 17);
    CHECK(bit_equal(raw, lss::init_params(spec, lss::derive_seed(17, lss::Stream::init))));
    const ParamVector a = lss::warmup_pretrain(spec, proxy, 500, 17);
    CHECK(bit_equal(a, lss::warmup_pretrain(spec, proxy, 500, 17)));
    CHECK(lss::accuracy(a, spec, proxy.features, proxy.labels) > 0.8);
    CHECK_THROWS(lss::warmup_pretrain(spec, proxy, -1, 17));
}

TEST_CASE("federation construction") {
    const auto f = lss::build_federation(small_fed(lss::Strategy::lss, 1), small_data(), {});
    CHECK(f.clients.size() == 4);
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& c : f.clients) {
        total += c.weight;
        n += c.data.size();
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(n + f.test.size() + 16 == 160);  // 10% validation, 10% test
    CHECK(f.proxy.size() == 32);
    CHECK(f.spec.param_count() == 6 * 4 + 4);

    auto shifted = small_data();
    shifted.partition = lss::PartitionMode::feature_shift;
    const auto g = lss::build_federation(small_fed(lss::Strategy::lss, 1), shifted, {});
    CHECK(g.transforms.size() == 4);

    auto bad = small_fed(lss::Strategy::lss, 1);
    bad.client_weights = {0.5, 0.5};
    CHECK_THROWS(lss::build_federation(bad, small_data(), {}));
}

TEST_CASE("experiments are deterministic and one round equals run_round") {
    const auto fedcfg = small_fed(lss::Strategy::lss, 3);
    const auto a = lss::run_experiment(fedcfg, small_data(), {}, small_local());
    const auto b = lss::run_experiment(fedcfg, small_data(), {}, small_local());
    CHECK(a.rounds.size() == 3);
    CHECK(bit_equal(a.final, b.final));
    for (const auto& r : a.rounds) {
        CHECK(r.global_test_accuracy >= 0.0);
        CHECK(r.global_test_accuracy <= 1.0);
        for (double x : r.per_client_update_norm) CHECK(x >= 0.0);
    }

    auto one = fedcfg;
    one.rounds = 1;
    const auto fed = lss::build_federation(one, small_data(), {});
    const auto e = lss::run_experiment(one, fed, small_local());
    const auto r = lss::run_round(e.initial, fed.clients, lss::make_trainer(one.strategy, fed.spec, small_local()),
                                  fed.spec, fed.test, one.master_seed, 1);
    CHECK(bit_equal(e.final, r.global));
    CHECK(e.rounds[0].global_test_accuracy == r.record.global_test_accuracy);
}

TEST_CASE("rounds CSV matches the archived reference") {
    const auto res = lss::run_experiment(small_fed(lss::Strategy::lss, 2), small_data(), {}, small_local());
    std::ostringstream csv;
    lss::write_rounds_csv(csv, res.rounds, false);
    std::ifstream golden(std::string(LSS_TEST_DATA_DIR) + "/golden_rounds.csv", std::ios::binary);
    REQUIRE(golden.good());
    std::stringstream expect;
    expect << golden.rdbuf();
    CHECK(csv.str() == expect.str());

    std::ostringstream timed;
    lss::write_rounds_csv(timed, res.rounds, true);
    CHECK(timed.str().rfind("round,global_acc,global_loss,client_accs,update_norms,wall_time_s\n", 0) == 0);
}

TEST_CASE("strategy names and thread count from the environment") {
    CHECK(lss::strategy_from_string("fedprox") == lss::Strategy::fedprox);
    CHECK(std::string(lss::to_string(lss::Strategy::lss)) == "lss");
    CHECK_THROWS(lss::strategy_from_string("scaffold"));
    CHECK(lss::client_seed(1, 1, 0) != lss::client_seed(1, 1, 1));
    CHECK(lss::client_seed(1, 1, 0) != lss::client_seed(1, 2, 0));
}
