#include "liwhiz/feature_store.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "binary_io.hpp"
#include "liwhiz/error.hpp"

namespace liwhiz {

namespace {

constexpr std::array<char, 4> kMagic = {'F', 'M', 'P', '1'};

std::string side_name(Side side) {
    return side == Side::encoder ? "encoder" : "decoder";
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find('\t', start);
        fields.push_back(line.substr(start, pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
    }
    return fields;
}

std::optional<double> parse_label(const std::string& text, std::size_t line_no) {
    if (text == "-") return std::nullopt;
    double value = 0.0;
    const auto* first = text.data();
    const auto* last = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc{} || ptr != last || text.empty()) {
        fail(ErrorKind::format, "manifest line " + std::to_string(line_no) +
                                    ": unparseable label '" + text + "'");
    }
    return value;
}

} // namespace

FeatureStack::FeatureStack(Side side, std::size_t layer_count, std::size_t feature_dim,
                           std::size_t seq_len, std::vector<float> data)
    : m_side(side), m_layers(layer_count), m_features(feature_dim), m_seq_len(seq_len),
      m_data(std::move(data)) {
    if (m_layers < 1 || m_features < 1) {
        fail(ErrorKind::data, "feature stack needs layer_count >= 1 and feature_dim >= 1");
    }
    if (m_seq_len < 1) {
        fail(ErrorKind::data, "feature stack seq_len must be >= 1");
    }
    if (m_data.size() != m_layers * m_features * m_seq_len) {
        fail(ErrorKind::data, "feature stack payload has " + std::to_string(m_data.size()) +
                                  " values, shape requires " +
                                  std::to_string(m_layers * m_features * m_seq_len));
    }
    for (std::size_t i = 0; i < m_data.size(); ++i) {
        if (!std::isfinite(m_data[i])) {
            const std::size_t per_layer = m_features * m_seq_len;
            fail(ErrorKind::numeric,
                 "non-finite feature value at layer " + std::to_string(i / per_layer) +
                     ", frame " + std::to_string((i % per_layer) / m_features) +
                     ", feature " + std::to_string(i % m_features));
        }
    }
}

void write_fmap(const FeatureStack& stack, std::ostream& out) {
    for (float v : stack.data()) {
        if (!std::isfinite(v)) fail(ErrorKind::numeric, "refusing to write non-finite feature");
    }
    const auto max32 = std::numeric_limits<std::uint32_t>::max();
    if (stack.layer_count() > max32 || stack.feature_dim() > max32 || stack.seq_len() > max32) {
        fail(ErrorKind::format, "feature stack dimension exceeds u32 range");
    }
    out.write(kMagic.data(), kMagic.size());
    detail::put_le<std::uint8_t>(out, kFmapVersion);
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(stack.side()));
    detail::put_le<std::uint16_t>(out, 0);
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(stack.layer_count()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(stack.feature_dim()));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(stack.seq_len()));
    detail::put_f32s(out, stack.data());
    if (!out) fail(ErrorKind::io, "write failed while emitting FMAP payload");
}

void write_fmap(const FeatureStack& stack, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
    write_fmap(stack, out);
    out.flush();
    if (!out) fail(ErrorKind::io, "write failed for '" + path.string() + "'");
}

FeatureStack read_fmap(std::istream& in, const std::optional<ModelConfig>& expected) {
    std::array<char, 4> magic{};
    detail::read_exact(in, magic.data(), magic.size(), "FMAP magic");
    if (magic != kMagic) {
        fail(ErrorKind::format, "bad FMAP magic '" + std::string(magic.data(), 4) + "'");
    }
    const auto version = detail::get_le<std::uint8_t>(in, "FMAP header");
    if (version != kFmapVersion) {
        fail(ErrorKind::format, "unsupported FMAP version " + std::to_string(version));
    }
    const auto side_byte = detail::get_le<std::uint8_t>(in, "FMAP header");
    if (side_byte > 1) {
        fail(ErrorKind::format, "invalid FMAP side byte " + std::to_string(side_byte));
    }
    const auto reserved = detail::get_le<std::uint16_t>(in, "FMAP header");
    if (reserved != 0) fail(ErrorKind::format, "FMAP reserved field must be zero");
    const std::size_t layers = detail::get_le<std::uint32_t>(in, "FMAP header");
    const std::size_t features = detail::get_le<std::uint32_t>(in, "FMAP header");
    const std::size_t seq_len = detail::get_le<std::uint32_t>(in, "FMAP header");

    if (expected) {
        if (layers != expected->layer_count() || features != expected->feature_dim) {
            fail(ErrorKind::data, "FMAP shape (layers=" + std::to_string(layers) +
                                      ", F=" + std::to_string(features) +
                                      ") does not match config (layers=" +
                                      std::to_string(expected->layer_count()) +
                                      ", F=" + std::to_string(expected->feature_dim) + ")");
        }
    }
    if (layers == 0 || features == 0 || seq_len == 0) {
        fail(ErrorKind::format, "FMAP header declares an empty dimension");
    }

    std::vector<float> data(layers * features * seq_len);
    detail::get_f32s(in, data, "FMAP payload");
    return FeatureStack(static_cast<Side>(side_byte), layers, features, seq_len,
                        std::move(data));
}

FeatureStack read_fmap(const std::filesystem::path& path,
                       const std::optional<ModelConfig>& expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open FMAP file '" + path.string() + "'");
    try {
        auto stack = read_fmap(in, expected);
        if (in.peek() != std::ifstream::traits_type::eof()) {
            fail(ErrorKind::format, "trailing bytes after FMAP payload");
        }
        return stack;
    } catch (const Error& e) {
        throw Error(e.kind(), path.string() + ": " + e.what());
    }
}

Manifest parse_manifest(std::istream& in, std::filesystem::path base_dir) {
    Manifest manifest;
    manifest.base_dir = std::move(base_dir);
    std::unordered_set<std::string> seen;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        const auto fields = split_tabs(line);
        if (fields.size() != 6) {
            fail(ErrorKind::format, "manifest line " + std::to_string(line_no) + ": expected 6 "
                                    "tab-separated fields, got " + std::to_string(fields.size()));
        }
        if (fields[0].empty()) {
            fail(ErrorKind::format, "manifest line " + std::to_string(line_no) + ": empty id");
        }
        if (!seen.insert(fields[0]).second) {
            fail(ErrorKind::data, "duplicate excerpt id '" + fields[0] + "'");
        }
        manifest.records.push_back(ManifestRecord{fields[0], fields[1], fields[2], fields[3],
                                                  fields[4], parse_label(fields[5], line_no)});
    }
    return manifest;
}

Manifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::io, "cannot open manifest '" + path.string() + "'");
    return parse_manifest(in, path.parent_path());
}

void write_manifest(const Manifest& manifest, std::ostream& out) {
    out << "# excerpt_id\tenc_x\tenc_y\tdec_x\tdec_y\tlabel\n";
    for (const auto& r : manifest.records) {
        out << r.excerpt_id << '\t' << r.enc_x.generic_string() << '\t'
            << r.enc_y.generic_string() << '\t' << r.dec_x.generic_string() << '\t'
            << r.dec_y.generic_string() << '\t';
        if (r.label) {
            std::array<char, 32> buf{};
            const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), *r.label);
            out.write(buf.data(), res.ptr - buf.data());
        } else {
            out << '-';
        }
        out << '\n';
    }
}

void write_manifest(const Manifest& manifest, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
    write_manifest(manifest, out);
    if (!out) fail(ErrorKind::io, "write failed for '" + path.string() + "'");
}

ExcerptFeatures load_excerpt(const Manifest& manifest, const ManifestRecord& record,
                             const ModelConfig& config) {
    config.validate();
    if (record.label && !(*record.label >= 0.0 && *record.label <= 1.0)) {
        fail(ErrorKind::data, "excerpt '" + record.excerpt_id + "': label " +
                                  std::to_string(*record.label) + " outside [0,1]");
    }
    auto load = [&](const std::filesystem::path& rel, Side side) {
        const auto path = manifest.resolve(rel);
        if (!std::filesystem::exists(path)) {
            fail(ErrorKind::io, "excerpt '" + record.excerpt_id + "': missing file '" +
                                    path.string() + "'");
        }
        try {
            auto stack = read_fmap(path, config);
            if (stack.side() != side) {
                fail(ErrorKind::data, "expected " + side_name(side) + " stack, file says " +
                                          side_name(stack.side()));
            }
            return stack;
        } catch (const Error& e) {
            throw Error(e.kind(), "excerpt '" + record.excerpt_id + "': " + e.what());
        }
    };
    return ExcerptFeatures{record.excerpt_id,
                           load(record.enc_x, Side::encoder),
                           load(record.enc_y, Side::encoder),
                           load(record.dec_x, Side::decoder),
                           load(record.dec_y, Side::decoder),
                           record.label};
}

std::vector<ExcerptFeatures> load_dataset(const Manifest& manifest, const ModelConfig& config) {
    std::vector<ExcerptFeatures> out;
    out.reserve(manifest.records.size());
    for (const auto& record : manifest.records) {
        out.push_back(load_excerpt(manifest, record, config));
    }
    return out;
}

ModelConfig probe_config(const Manifest& manifest, std::size_t hidden_dim) {
    if (manifest.records.empty()) fail(ErrorKind::data, "manifest has no records");
    const auto path = manifest.resolve(manifest.records.front().enc_x);
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::io, "cannot open FMAP file '" + path.string() + "'");
    std::array<char, kFmapHeaderBytes> header{};
    detail::read_exact(in, header.data(), header.size(), "FMAP header");
    if (!std::equal(kMagic.begin(), kMagic.end(), header.begin())) {
        fail(ErrorKind::format, "bad FMAP magic in '" + path.string() + "'");
    }
    std::istringstream hs(std::string(header.data(), header.size()));
    hs.ignore(8);
    const std::size_t layers = detail::get_le<std::uint32_t>(hs, "FMAP header");
    const std::size_t features = detail::get_le<std::uint32_t>(hs, "FMAP header");
    if (layers < 2) fail(ErrorKind::format, "FMAP layer_count must be >= 2 (L >= 1)");
    ModelConfig config{layers - 1, features, hidden_dim};
    config.validate();
    return config;
}

} // namespace liwhiz
