#include "lss/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

namespace lss {
namespace {

constexpr std::array<char, 4> kMagic{'L', 'S', 'S', 'W'};

template <typename UInt>
void put_le(std::ostream& out, UInt v) {
    std::array<char, sizeof(UInt)> bytes{};
    for (std::size_t i = 0; i < sizeof(UInt); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(bytes.data(), bytes.size());
}

template <typename UInt>
UInt get_le(std::istream& in, const char* what) {
    std::array<unsigned char, sizeof(UInt)> bytes{};
    in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    if (in.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
    }
    UInt v = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) v |= static_cast<UInt>(bytes[i]) << (8 * i);
    return v;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ParamVector& params, const ShapeSpec& shape) {
    if (params.size() == 0) throw CheckpointError("cannot checkpoint an empty parameter vector");
    if (!shape.layers.empty() && shape.param_count() != static_cast<std::uint64_t>(params.size())) {
        throw CheckpointError("shape describes " + std::to_string(shape.param_count()) +
                              " parameters but vector has " + std::to_string(params.size()));
    }
    out.write(kMagic.data(), kMagic.size());
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint64_t>(out, static_cast<std::uint64_t>(params.size()));
    for (Eigen::Index k = 0; k < params.size(); ++k) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(params(k)));
    put_le<std::uint64_t>(out, shape.layers.size());
    for (const auto& l : shape.layers) {
        put_le<std::uint64_t>(out, l.rows);
        put_le<std::uint64_t>(out, l.cols);
        put_le<std::uint8_t>(out, l.has_bias ? 1 : 0);
    }
    if (!out) throw CheckpointError("write failed");
}

Checkpoint read_checkpoint(std::istream& in) {
    std::array<char, 4> magic{};
    in.read(magic.data(), magic.size());
    if (in.gcount() != 4 || magic != kMagic) throw CheckpointError("bad checkpoint magic (expected LSSW)");
    const auto version = get_le<std::uint32_t>(in, "version");
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto dim = get_le<std::uint64_t>(in, "dim");
    if (dim == 0) throw CheckpointError("checkpoint has zero dimension");
    Checkpoint ck;
    ck.params.resize(static_cast<Eigen::Index>(dim));
    for (std::uint64_t k = 0; k < dim; ++k) {
        ck.params(static_cast<Eigen::Index>(k)) = std::bit_cast<double>(get_le<std::uint64_t>(in, "weights"));
    }
    const auto nlayers = get_le<std::uint64_t>(in, "layer count");
    for (std::uint64_t i = 0; i < nlayers; ++i) {
        LayerDims l;
        l.rows = get_le<std::uint64_t>(in, "layer rows");
        l.cols = get_le<std::uint64_t>(in, "layer cols");
        l.has_bias = get_le<std::uint8_t>(in, "layer bias flag") != 0;
        ck.shape.layers.push_back(l);
    }
    if (!ck.shape.layers.empty() && ck.shape.param_count() != dim) {
        throw CheckpointError("checkpoint shape does not match its dimension");
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ParamVector& params, const ShapeSpec& shape) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
    write_checkpoint(out, params, shape);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path.string());
    return read_checkpoint(in);
}

}  // namespace lss
