#include "liwhiz/config.hpp"
#include "liwhiz/error.hpp"

namespace liwhiz {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::config: return "config";
    case ErrorKind::io: return "io";
    case ErrorKind::format: return "format";
    case ErrorKind::data: return "data";
    case ErrorKind::numeric: return "numeric";
    }
    return "unknown";
}

void ModelConfig::validate() const {
    if (num_layers < 1 || feature_dim < 1 || hidden_dim < 1) {
        fail(ErrorKind::config, "model config requires L, F, H >= 1 (got L=" +
                                    std::to_string(num_layers) + ", F=" +
                                    std::to_string(feature_dim) + ", H=" +
                                    std::to_string(hidden_dim) + ")");
    }
}

std::string_view to_string(Mode mode) noexcept {
    return mode == Mode::full ? "full" : "y-only";
}

Mode parse_mode(std::string_view text) {
    if (text == "full") return Mode::full;
    if (text == "y-only" || text == "y_only") return Mode::y_only;
    fail(ErrorKind::config, "unknown mode '" + std::string(text) + "'");
}

} // namespace liwhiz
