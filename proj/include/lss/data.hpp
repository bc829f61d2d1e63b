#pragma once

// Datasets, train/validation/test splitting, and non-IID client partitions.

#include "lss/model.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lss {

struct Dataset {
    Eigen::MatrixXd features;  // n x input_dim
    std::vector<int> labels;
    int num_classes = 2;

    std::size_t size() const { return labels.size(); }
    Eigen::Index input_dim() const { return features.cols(); }
    void validate() const;
};

Dataset subset(const Dataset& data, std::span<const std::size_t> indices);

/// Per-class counts.
std::vector<std::size_t> label_counts(std::span<const int> labels, int num_classes);

/// Fraction of samples per class.
Eigen::VectorXd label_marginal(std::span<const int> labels, int num_classes);

/// Gaussian blobs: class c is centered at 3 * u_c, where u_c is a unit
/// direction fixed by (num_classes, input_dim) alone, so datasets drawn with
/// different seeds share their class centers.
Dataset gen_blobs(int num_classes, int per_class, int input_dim, double spread, std::uint64_t seed);

Eigen::MatrixXd blob_centers(int num_classes, int input_dim);

struct Splits {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Shuffled train/val/test split; val_fraction and test_fraction of the
/// samples (rounded, at least one each) go to the smaller splits.
Splits split_dataset(const Dataset& data, double val_fraction, double test_fraction, std::uint64_t seed);

enum class PartitionMode { dirichlet, feature_shift };

struct PartitionPlan {
    std::vector<std::vector<std::size_t>> client_indices;
    PartitionMode mode = PartitionMode::dirichlet;
    double alpha = 0.0;  // meaningful for dirichlet only
    std::uint64_t seed = 0;

    std::size_t num_clients() const { return client_indices.size(); }
    /// p_i = |D_i| / sum_j |D_j|.
    std::vector<double> data_weights() const;
    /// Throws unless the lists are disjoint, non-empty and cover [0, n).
    void check_cover(std::size_t n) const;
};

/// Label shift: for every class, client proportions are drawn from
/// Dirichlet(alpha * 1_M) and the shuffled class indices are split by their
/// cumulative sums. Clients left empty take one sample from the largest
/// client until none are empty.
PartitionPlan dirichlet_partition(const Dataset& data, int num_clients, double alpha, std::uint64_t seed);

/// x -> linear * x, applied to each sample row.
struct FeatureTransform {
    Eigen::MatrixXd linear;

    Eigen::MatrixXd apply(const Eigen::Ref<const Eigen::MatrixXd>& features) const;
    Eigen::MatrixXd invert(const Eigen::Ref<const Eigen::MatrixXd>& features) const;
    static FeatureTransform identity(Eigen::Index dim);
};

struct FeatureShiftPartition {
    PartitionPlan plan;
    std::vector<FeatureTransform> transforms;
};

/// IID index split plus one fixed affine distortion per client: a rotation
/// composed of Givens rotations with angles in [-strength*pi/4, strength*pi/4]
/// followed by per-coordinate scales in [1.25^-strength, 1.25^strength].
/// strength = 0 gives identity transforms.
FeatureShiftPartition feature_shift_partition(const Dataset& data, int num_clients, std::uint64_t seed,
                                              double strength = 1.0);

class IdxError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// MNIST-style IDX files: images (magic 0x00000803, u8 pixels scaled to
/// [0, 1], flattened row-major) and labels (magic 0x00000801).
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);
Dataset parse_idx(std::istream& images, std::istream& labels);

/// JSON: {"mode", "alpha", "seed", "clients": [[indices...], ...]}.
void write_partition_plan(std::ostream& out, const PartitionPlan& plan);
PartitionPlan read_partition_plan(std::istream& in);

/// Mean over clients of the total-variation distance between each client's
/// label marginal and the marginal of the whole dataset.
double mean_label_tv_distance(const Dataset& data, const PartitionPlan& plan);

}  // namespace lss
