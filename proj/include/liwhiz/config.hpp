#pragma once

#include <cstddef>
#include <string_view>

namespace liwhiz {

/// Back-end dimensions. The reference system uses L=32, F=1280, H=512;
/// everything is configurable so tests can run at desk scale.
struct ModelConfig {
    std::size_t num_layers = 32;    // L transformer layers per stack side
    std::size_t feature_dim = 1280; // F
    std::size_t hidden_dim = 512;   // H, per LSTM direction

    std::size_t layer_count() const noexcept { return num_layers + 1; }

    /// Throws Error{config} unless L, F, H are all >= 1.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;
};

/// `full` feeds both the original (x) and the degraded (y) signal into each
/// branch; `y_only` removes the x branches entirely.
enum class Mode : unsigned char { full = 0, y_only = 1 };

std::string_view to_string(Mode mode) noexcept;
/// Accepts "full", "y-only" and "y_only".
Mode parse_mode(std::string_view text);

} // namespace liwhiz
