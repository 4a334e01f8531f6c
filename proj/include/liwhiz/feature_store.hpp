#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "liwhiz/config.hpp"

namespace liwhiz {

enum class Side : std::uint8_t { encoder = 0, decoder = 1 };

/// Stacked per-layer feature maps of one signal, stored as
/// [layer][frame][feature] 32-bit floats. Immutable once constructed.
class FeatureStack {
public:
    using LayerMap = Eigen::Map<const Eigen::MatrixXf>;

    FeatureStack() = default;
    /// Validates shape and finiteness; throws Error on violation.
    FeatureStack(Side side, std::size_t layer_count, std::size_t feature_dim,
                 std::size_t seq_len, std::vector<float> data);

    Side side() const noexcept { return m_side; }
    std::size_t layer_count() const noexcept { return m_layers; }
    std::size_t feature_dim() const noexcept { return m_features; }
    std::size_t seq_len() const noexcept { return m_seq_len; }
    std::span<const float> data() const noexcept { return m_data; }

    float at(std::size_t layer, std::size_t frame, std::size_t feature) const {
        return m_data[(layer * m_seq_len + frame) * m_features + feature];
    }

    /// Layer `l` as an F x seq_len column-major view (feature index fastest).
    LayerMap layer(std::size_t l) const {
        return LayerMap(m_data.data() + l * m_seq_len * m_features,
                        static_cast<Eigen::Index>(m_features),
                        static_cast<Eigen::Index>(m_seq_len));
    }

    bool operator==(const FeatureStack&) const = default;

private:
    Side m_side = Side::encoder;
    std::size_t m_layers = 0;
    std::size_t m_features = 0;
    std::size_t m_seq_len = 0;
    std::vector<float> m_data;
};

/// The four stacks of one song excerpt plus its optional listener score.
struct ExcerptFeatures {
    std::string excerpt_id;
    FeatureStack enc_x;
    FeatureStack enc_y;
    FeatureStack dec_x;
    FeatureStack dec_y;
    std::optional<double> label;
};

struct ManifestRecord {
    std::string excerpt_id;
    std::filesystem::path enc_x;
    std::filesystem::path enc_y;
    std::filesystem::path dec_x;
    std::filesystem::path dec_y;
    std::optional<double> label;
};

/// Ordered excerpt list. Relative paths resolve against `base_dir`.
struct Manifest {
    std::vector<ManifestRecord> records;
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const std::filesystem::path& p) const {
        return p.is_absolute() ? p : base_dir / p;
    }
};

inline constexpr std::size_t kFmapHeaderBytes = 20;
inline constexpr std::uint8_t kFmapVersion = 1;

// FMAP layout (little-endian):
//   "FMP1" | u8 version | u8 side | u16 reserved | u32 layer_count |
//   u32 feature_dim | u32 seq_len | f32 payload[layer][frame][feature]
void write_fmap(const FeatureStack& stack, std::ostream& out);
void write_fmap(const FeatureStack& stack, const std::filesystem::path& path);

/// When `expected` is given, layer_count and feature_dim must match it.
FeatureStack read_fmap(std::istream& in,
                       const std::optional<ModelConfig>& expected = std::nullopt);
FeatureStack read_fmap(const std::filesystem::path& path,
                       const std::optional<ModelConfig>& expected = std::nullopt);

// Manifest: one `id\tenc_x\tenc_y\tdec_x\tdec_y\tlabel_or_dash` per line;
// lines starting with '#' and blank lines are skipped.
Manifest read_manifest(const std::filesystem::path& path);
Manifest parse_manifest(std::istream& in, std::filesystem::path base_dir = {});
void write_manifest(const Manifest& manifest, std::ostream& out);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

ExcerptFeatures load_excerpt(const Manifest& manifest, const ManifestRecord& record,
                             const ModelConfig& config);
std::vector<ExcerptFeatures> load_dataset(const Manifest& manifest, const ModelConfig& config);

/// Reads L and F from the first record's encoder-x header; H is supplied.
ModelConfig probe_config(const Manifest& manifest, std::size_t hidden_dim);

} // namespace liwhiz
