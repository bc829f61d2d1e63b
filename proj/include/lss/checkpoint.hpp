#pragma once

#include "lss/param_core.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <vector>

namespace lss {

/// One dense layer: weight matrix of rows x cols, optionally followed by a
/// bias of length rows.
struct LayerDims {
    std::uint64_t rows = 0;
    std::uint64_t cols = 0;
    bool has_bias = true;

    std::uint64_t param_count() const { return rows * cols + (has_bias ? rows : 0); }
    friend bool operator==(const LayerDims&, const LayerDims&) = default;
};

struct ShapeSpec {
    std::vector<LayerDims> layers;

    std::uint64_t param_count() const {
        std::uint64_t n = 0;
        for (const auto& l : layers) n += l.param_count();
        return n;
    }
    friend bool operator==(const ShapeSpec&, const ShapeSpec&) = default;
};

struct Checkpoint {
    ParamVector params;
    ShapeSpec shape;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: "LSSW", u32 version, u64 dim, dim x f64, u64 layer count, then per
// layer u64 rows, u64 cols, u8 has_bias. All integers and floats little-endian.
void write_checkpoint(std::ostream& out, const ParamVector& params, const ShapeSpec& shape);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const ParamVector& params,
                     const ShapeSpec& shape);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lss
