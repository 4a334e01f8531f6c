#include "liwhiz/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <fstream>

#include "binary_io.hpp"
#include "liwhiz/error.hpp"

namespace liwhiz {

namespace {

constexpr std::array<char, 4> kMagic = {'L', 'W', 'P', 'Z'};

// Shapes are fully determined by (config, mode), so an empty skeleton from
// init_params provides the tensor sizes to read into.
BackendParams skeleton(const ModelConfig& config, Mode mode) {
    return init_params(config, mode, 0);
}

} // namespace

void save_checkpoint(const BackendParams& params, std::ostream& out) {
    validate_params(params);
    out.write(kMagic.data(), kMagic.size());
    detail::put_le<std::uint8_t>(out, kCheckpointVersion);
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(params.mode));
    detail::put_le<std::uint16_t>(out, 0);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.config.num_layers));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.config.feature_dim));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.config.hidden_dim));
    for (const auto& t : tensors(params)) detail::put_f32s(out, t.data);
    if (!out) fail(ErrorKind::io, "write failed while emitting checkpoint");
}

void save_checkpoint(const BackendParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
    save_checkpoint(params, out);
    out.flush();
    if (!out) fail(ErrorKind::io, "write failed for '" + path.string() + "'");
}

BackendParams load_checkpoint(std::istream& in) {
    std::array<char, 4> magic{};
    detail::read_exact(in, magic.data(), magic.size(), "checkpoint magic");
    if (magic != kMagic) fail(ErrorKind::format, "bad checkpoint magic");
    const auto version = detail::get_le<std::uint8_t>(in, "checkpoint header");
    if (version != kCheckpointVersion) {
        fail(ErrorKind::format, "unsupported checkpoint version " + std::to_string(version));
    }
    const auto mode_byte = detail::get_le<std::uint8_t>(in, "checkpoint header");
    if (mode_byte > 1) fail(ErrorKind::format, "invalid checkpoint mode byte");
    if (detail::get_le<std::uint16_t>(in, "checkpoint header") != 0) {
        fail(ErrorKind::format, "checkpoint reserved field must be zero");
    }
    ModelConfig config;
    config.num_layers = detail::get_le<std::uint32_t>(in, "checkpoint header");
    config.feature_dim = detail::get_le<std::uint32_t>(in, "checkpoint header");
    config.hidden_dim = detail::get_le<std::uint32_t>(in, "checkpoint header");
    try {
        config.validate();
    } catch (const Error& e) {
        fail(ErrorKind::format, std::string("checkpoint header: ") + e.what());
    }

    BackendParams params = skeleton(config, static_cast<Mode>(mode_byte));
    for (auto& t : tensors(params)) detail::get_f32s(in, t.data, "checkpoint tensor");
    validate_params(params);
    return params;
}

BackendParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open checkpoint '" + path.string() + "'");
    try {
        auto params = load_checkpoint(in);
        if (in.peek() != std::ifstream::traits_type::eof()) {
            fail(ErrorKind::format, "trailing bytes after checkpoint tensors");
        }
        return params;
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

std::vector<BackendParams> load_checkpoints(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) {
        fail(ErrorKind::io, "checkpoint directory '" + dir.string() + "' does not exist");
    }
    std::vector<std::filesystem::path> files;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".lwpz") {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) fail(ErrorKind::io, "no .lwpz checkpoints in '" + dir.string() + "'");
    std::vector<BackendParams> out;
    out.reserve(files.size());
    for (const auto& f : files) out.push_back(load_checkpoint(f));
    return out;
}

bool bit_equal(const BackendParams& a, const BackendParams& b) {
    if (!(a.config == b.config) || a.mode != b.mode) return false;
    const auto ta = tensors(a);
    const auto tb = tensors(b);
    if (ta.size() != tb.size()) return false;
    for (std::size_t i = 0; i < ta.size(); ++i) {
        if (ta[i].data.size() != tb[i].data.size()) return false;
        for (std::size_t j = 0; j < ta[i].data.size(); ++j) {
            if (std::bit_cast<std::uint32_t>(ta[i].data[j]) !=
                std::bit_cast<std::uint32_t>(tb[i].data[j])) {
                return false;
            }
        }
    }
    return true;
}

} // namespace liwhiz
