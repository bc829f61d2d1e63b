#include "lss/data.hpp"

#include "lss/rng.hpp"

#include <Eigen/LU>
#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

namespace lss {

void Dataset::validate() const {
    if (num_classes < 2) throw std::invalid_argument("dataset needs at least 2 classes");
    if (static_cast<Eigen::Index>(labels.size()) != features.rows()) {
        throw DimensionError("dataset labels", static_cast<Eigen::Index>(labels.size()), features.rows());
    }
    for (int y : labels) {
        if (y < 0 || y >= num_classes) throw std::invalid_argument("dataset label out of range");
    }
}

Dataset subset(const Dataset& data, std::span<const std::size_t> indices) {
    Dataset out;
    out.num_classes = data.num_classes;
    out.features.resize(static_cast<Eigen::Index>(indices.size()), data.features.cols());
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        if (indices[i] >= data.size()) throw std::out_of_range("subset index out of range");
        out.features.row(static_cast<Eigen::Index>(i)) = data.features.row(static_cast<Eigen::Index>(indices[i]));
        out.labels.push_back(data.labels[indices[i]]);
    }
    return out;
}

std::vector<std::size_t> label_counts(std::span<const int> labels, int num_classes) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
    for (int y : labels) ++counts.at(static_cast<std::size_t>(y));
    return counts;
}

Eigen::VectorXd label_marginal(std::span<const int> labels, int num_classes) {
    const auto counts = label_counts(labels, num_classes);
    Eigen::VectorXd m(num_classes);
    for (int c = 0; c < num_classes; ++c) {
        m(c) = labels.empty() ? 0.0 : double(counts[static_cast<std::size_t>(c)]) / double(labels.size());
    }
    return m;
}

Eigen::MatrixXd blob_centers(int num_classes, int input_dim) {
    Rng rng(derive_seed(0xB10B5ULL, {static_cast<std::uint64_t>(num_classes), static_cast<std::uint64_t>(input_dim)}));
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd centers(num_classes, input_dim);
    for (int c = 0; c < num_classes; ++c) {
        Eigen::VectorXd u(input_dim);
        do {
            for (int k = 0; k < input_dim; ++k) u(k) = normal(rng);
        } while (norm(u) < 1e-12);
        centers.row(c) = 3.0 * u.transpose() / norm(u);
    }
    return centers;
}

Dataset gen_blobs(int num_classes, int per_class, int input_dim, double spread, std::uint64_t seed) {
    if (num_classes < 2 || per_class <= 0 || input_dim <= 0) {
        throw std::invalid_argument("gen_blobs: num_classes >= 2, per_class > 0 and input_dim > 0 required");
    }
    if (!(spread >= 0.0)) throw std::invalid_argument("gen_blobs: spread must be non-negative");
    const Eigen::MatrixXd centers = blob_centers(num_classes, input_dim);
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Dataset d;
    d.num_classes = num_classes;
    d.features.resize(Eigen::Index(num_classes) * per_class, input_dim);
    d.labels.reserve(static_cast<std::size_t>(num_classes) * per_class);
    Eigen::Index row = 0;
    for (int c = 0; c < num_classes; ++c) {
        for (int i = 0; i < per_class; ++i, ++row) {
            for (int k = 0; k < input_dim; ++k) d.features(row, k) = centers(c, k) + spread * normal(rng);
            d.labels.push_back(c);
        }
    }
    return d;
}

Splits split_dataset(const Dataset& data, double val_fraction, double test_fraction, std::uint64_t seed) {
    const std::size_t n = data.size();
    if (n < 3) throw std::invalid_argument("split_dataset: need at least 3 samples");
    if (val_fraction <= 0 || test_fraction <= 0 || val_fraction + test_fraction >= 1) {
        throw std::invalid_argument("split_dataset: fractions must be positive and sum below 1");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(val_fraction * double(n))));
    const auto n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(test_fraction * double(n))));
    if (n_val + n_test >= n) throw std::invalid_argument("split_dataset: no samples left for training");
    std::span<const std::size_t> all(order);
    Splits s;
    s.test = subset(data, all.subspan(0, n_test));
    s.val = subset(data, all.subspan(n_test, n_val));
    std::vector<std::size_t> train(all.begin() + static_cast<std::ptrdiff_t>(n_test + n_val), all.end());
    std::sort(train.begin(), train.end());
    s.train = subset(data, train);
    return s;
}

std::vector<double> PartitionPlan::data_weights() const {
    std::size_t total = 0;
    for (const auto& c : client_indices) total += c.size();
    if (total == 0) throw std::invalid_argument("partition plan is empty");
    std::vector<double> w;
    w.reserve(client_indices.size());
    for (const auto& c : client_indices) w.push_back(double(c.size()) / double(total));
    return w;
}

void PartitionPlan::check_cover(std::size_t n) const {
    std::vector<char> seen(n, 0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < client_indices.size(); ++i) {
        if (client_indices[i].empty()) throw std::logic_error("client " + std::to_string(i) + " has no samples");
        for (auto idx : client_indices[i]) {
            if (idx >= n) throw std::logic_error("partition index out of range");
            if (seen[idx]) throw std::logic_error("partition index " + std::to_string(idx) + " assigned twice");
            seen[idx] = 1;
            ++count;
        }
    }
    if (count != n) throw std::logic_error("partition does not cover every sample");
}

namespace {

void fill_empty_clients(std::vector<std::vector<std::size_t>>& clients) {
    for (;;) {
        auto empty = std::find_if(clients.begin(), clients.end(), [](const auto& c) { return c.empty(); });
        if (empty == clients.end()) return;
        auto largest = std::max_element(clients.begin(), clients.end(),
                                        [](const auto& a, const auto& b) { return a.size() < b.size(); });
        if (largest->size() < 2) throw std::logic_error("not enough samples to give every client one");
        empty->push_back(largest->back());
        largest->pop_back();
    }
}

}  // namespace

PartitionPlan dirichlet_partition(const Dataset& data, int num_clients, double alpha, std::uint64_t seed) {
    if (!(alpha > 0.0)) throw std::invalid_argument("dirichlet_partition: alpha must be positive");
    if (num_clients < 1) throw std::invalid_argument("dirichlet_partition: num_clients must be >= 1");
    if (static_cast<std::size_t>(num_clients) > data.size()) {
        throw std::invalid_argument("dirichlet_partition: more clients (" + std::to_string(num_clients) +
                                    ") than samples (" + std::to_string(data.size()) + ")");
    }
    const auto m = static_cast<std::size_t>(num_clients);
    Rng rng(seed);
    std::gamma_distribution<double> gamma(alpha, 1.0);

    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.num_classes));
    for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);

    std::vector<std::vector<std::size_t>> clients(m);
    for (auto& idx : by_class) {
        std::shuffle(idx.begin(), idx.end(), rng);
        std::vector<double> p(m);
        double total = 0.0;
        for (auto& v : p) total += (v = gamma(rng));
        if (!(total > 0.0)) {
            // every gamma draw underflowed; the limit of a tiny alpha is a one-hot vector
            std::fill(p.begin(), p.end(), 0.0);
            p[std::uniform_int_distribution<std::size_t>(0, m - 1)(rng)] = 1.0;
            total = 1.0;
        }
        const double nc = double(idx.size());
        double cum = 0.0;
        std::size_t start = 0;
        for (std::size_t j = 0; j < m; ++j) {
            cum += p[j] / total;
            std::size_t end = j + 1 == m ? idx.size()
                                         : std::min(idx.size(), static_cast<std::size_t>(std::llround(cum * nc)));
            end = std::max(end, start);
            clients[j].insert(clients[j].end(), idx.begin() + static_cast<std::ptrdiff_t>(start),
                              idx.begin() + static_cast<std::ptrdiff_t>(end));
            start = end;
        }
    }
    for (auto& c : clients) std::sort(c.begin(), c.end());
    fill_empty_clients(clients);
    for (auto& c : clients) std::sort(c.begin(), c.end());

    PartitionPlan plan;
    plan.client_indices = std::move(clients);
    plan.mode = PartitionMode::dirichlet;
    plan.alpha = alpha;
    plan.seed = seed;
    return plan;
}

Eigen::MatrixXd FeatureTransform::apply(const Eigen::Ref<const Eigen::MatrixXd>& features) const {
    return features * linear.transpose();
}

Eigen::MatrixXd FeatureTransform::invert(const Eigen::Ref<const Eigen::MatrixXd>& features) const {
    return features * linear.inverse().transpose();
}

FeatureTransform FeatureTransform::identity(Eigen::Index dim) {
    return {Eigen::MatrixXd::Identity(dim, dim)};
}

FeatureShiftPartition feature_shift_partition(const Dataset& data, int num_clients, std::uint64_t seed,
                                              double strength) {
    if (num_clients < 1) throw std::invalid_argument("feature_shift_partition: num_clients must be >= 1");
    if (static_cast<std::size_t>(num_clients) > data.size()) {
        throw std::invalid_argument("feature_shift_partition: more clients than samples");
    }
    if (!(strength >= 0.0)) throw std::invalid_argument("feature_shift_partition: strength must be >= 0");
    const auto m = static_cast<std::size_t>(num_clients);
    const Eigen::Index dim = data.input_dim();
    Rng rng(seed);

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    FeatureShiftPartition out;
    out.plan.client_indices.resize(m);
    for (std::size_t i = 0; i < order.size(); ++i) out.plan.client_indices[i % m].push_back(order[i]);
    for (auto& c : out.plan.client_indices) std::sort(c.begin(), c.end());
    out.plan.mode = PartitionMode::feature_shift;
    out.plan.seed = seed;

    const double max_angle = strength * std::numbers::pi / 4.0;
    const double max_log_scale = strength * std::log(1.25);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (std::size_t c = 0; c < m; ++c) {
        Eigen::MatrixXd rot = Eigen::MatrixXd::Identity(dim, dim);
        if (dim >= 2) {
            std::uniform_int_distribution<Eigen::Index> axis(0, dim - 1);
            for (Eigen::Index g = 0; g < dim; ++g) {
                Eigen::Index p = axis(rng), q = axis(rng);
                while (q == p) q = axis(rng);
                const double theta = max_angle * unit(rng);
                Eigen::MatrixXd givens = Eigen::MatrixXd::Identity(dim, dim);
                givens(p, p) = std::cos(theta);
                givens(q, q) = std::cos(theta);
                givens(p, q) = -std::sin(theta);
                givens(q, p) = std::sin(theta);
                rot = givens * rot;
            }
        }
        Eigen::VectorXd scale(dim);
        for (Eigen::Index k = 0; k < dim; ++k) scale(k) = std::exp(max_log_scale * unit(rng));
        out.transforms.push_back({scale.asDiagonal() * rot});
    }
    return out;
}

namespace {

std::uint32_t read_be32(std::istream& in, const char* what) {
    std::array<unsigned char, 4> b{};
    in.read(reinterpret_cast<char*>(b.data()), 4);
    if (in.gcount() != 4) throw IdxError(std::string("IDX file truncated in header (") + what + ")");
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | b[3];
}

std::string hex32(std::uint32_t v) {
    std::ostringstream s;
    s << "0x" << std::hex;
    s.width(8);
    s.fill('0');
    s << v;
    return s.str();
}

void expect_magic(std::uint32_t actual, std::uint32_t expected, const char* file) {
    if (actual != expected) {
        throw IdxError(std::string("bad IDX magic in ") + file + " file: expected " + hex32(expected) + ", got " +
                       hex32(actual));
    }
}

}  // namespace

Dataset parse_idx(std::istream& images, std::istream& labels) {
    expect_magic(read_be32(images, "magic"), 0x00000803, "images");
    const std::uint32_t n_images = read_be32(images, "count");
    const std::uint32_t rows = read_be32(images, "rows");
    const std::uint32_t cols = read_be32(images, "cols");
    expect_magic(read_be32(labels, "magic"), 0x00000801, "labels");
    const std::uint32_t n_labels = read_be32(labels, "count");
    if (n_images != n_labels) {
        throw IdxError("IDX count mismatch: " + std::to_string(n_images) + " images vs " + std::to_string(n_labels) +
                       " labels");
    }
    const std::size_t pixels = std::size_t(rows) * cols;
    if (pixels == 0) throw IdxError("IDX images have zero size");

    Dataset d;
    d.features.resize(n_images, static_cast<Eigen::Index>(pixels));
    std::vector<unsigned char> buf(pixels);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        images.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels));
        if (images.gcount() != static_cast<std::streamsize>(pixels)) throw IdxError("IDX image file truncated");
        for (std::size_t k = 0; k < pixels; ++k) d.features(i, static_cast<Eigen::Index>(k)) = buf[k] / 255.0;
    }
    d.labels.resize(n_labels);
    int max_label = 0;
    for (std::uint32_t i = 0; i < n_labels; ++i) {
        const int ch = labels.get();
        if (ch == std::char_traits<char>::eof()) throw IdxError("IDX label file truncated");
        d.labels[i] = ch;
        max_label = std::max(max_label, ch);
    }
    d.num_classes = std::max(2, max_label + 1);
    return d;
}

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
    std::ifstream images(images_path, std::ios::binary);
    if (!images) throw IdxError("cannot open " + images_path.string());
    std::ifstream labels(labels_path, std::ios::binary);
    if (!labels) throw IdxError("cannot open " + labels_path.string());
    return parse_idx(images, labels);
}

void write_partition_plan(std::ostream& out, const PartitionPlan& plan) {
    nlohmann::json j;
    j["mode"] = plan.mode == PartitionMode::dirichlet ? "dirichlet" : "feature_shift";
    if (plan.mode == PartitionMode::dirichlet) j["alpha"] = plan.alpha;
    j["seed"] = plan.seed;
    j["clients"] = plan.client_indices;
    out << j.dump(1) << '\n';
}

PartitionPlan read_partition_plan(std::istream& in) {
    const auto j = nlohmann::json::parse(in);
    PartitionPlan plan;
    const auto mode = j.at("mode").get<std::string>();
    if (mode == "dirichlet") {
        plan.mode = PartitionMode::dirichlet;
        plan.alpha = j.at("alpha").get<double>();
    } else if (mode == "feature_shift") {
        plan.mode = PartitionMode::feature_shift;
    } else {
        throw std::invalid_argument("unknown partition mode '" + mode + "'");
    }
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.client_indices = j.at("clients").get<std::vector<std::vector<std::size_t>>>();
    return plan;
}

double mean_label_tv_distance(const Dataset& data, const PartitionPlan& plan) {
    const Eigen::VectorXd global = label_marginal(data.labels, data.num_classes);
    double acc = 0.0;
    for (const auto& idx : plan.client_indices) {
        std::vector<int> ys;
        ys.reserve(idx.size());
        for (auto i : idx) ys.push_back(data.labels[i]);
        acc += 0.5 * (label_marginal(ys, data.num_classes) - global).cwiseAbs().sum();
    }
    return acc / double(plan.client_indices.size());
}

}  // namespace lss
