#include "liwhiz/analysis.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>

#include "liwhiz/error.hpp"

namespace liwhiz {

std::string_view to_string(Branch branch) noexcept {
    switch (branch) {
    case Branch::enc_x: return "enc_x";
    case Branch::enc_y: return "enc_y";
    case Branch::dec_x: return "dec_x";
    case Branch::dec_y: return "dec_y";
    }
    return "unknown";
}

Branch parse_branch(std::string_view text) {
    for (auto b : {Branch::enc_x, Branch::enc_y, Branch::dec_x, Branch::dec_y}) {
        if (to_string(b) == text) return b;
    }
    fail(ErrorKind::config, "unknown branch '" + std::string(text) + "'");
}

WeightProfile normalize_weights(std::string name, std::span<const float> raw,
                                std::size_t layer_count) {
    WeightProfile p{std::move(name), std::vector<double>(layer_count, 0.0), false};
    double total = 0.0;
    for (float w : raw) total += std::abs(static_cast<double>(w));
    if (raw.size() != layer_count || total == 0.0) {
        p.degenerate = true;
        return p;
    }
    for (std::size_t l = 0; l < layer_count; ++l) {
        p.values[l] = std::abs(static_cast<double>(raw[l])) / total;
    }
    return p;
}

std::array<WeightProfile, 4> normalized_lml_weights(const BackendParams& params) {
    const auto n = params.config.layer_count();
    auto span_of = [](const Vec<float>& v) {
        return std::span<const float>(v.data(), static_cast<std::size_t>(v.size()));
    };
    return {normalize_weights("enc_x", span_of(params.lml_enc_x), n),
            normalize_weights("enc_y", span_of(params.lml_enc_y), n),
            normalize_weights("dec_x", span_of(params.lml_dec_x), n),
            normalize_weights("dec_y", span_of(params.lml_dec_y), n)};
}

std::array<WeightProfile, 4> ensemble_profiles(std::span<const BackendParams> models) {
    if (models.empty()) fail(ErrorKind::config, "ensemble has no models");
    const auto n = models.front().config.layer_count();
    std::array<WeightProfile, 4> out;
    std::array<std::size_t, 4> counts{};
    const std::array<Branch, 4> order{Branch::enc_x, Branch::enc_y, Branch::dec_x, Branch::dec_y};
    for (std::size_t b = 0; b < 4; ++b) {
        out[b].name = std::string(to_string(order[b])) + "_ensemble";
        out[b].values.assign(n, 0.0);
    }
    for (const auto& m : models) {
        if (m.config.layer_count() != n) fail(ErrorKind::config, "ensemble members disagree on L");
        const auto profiles = normalized_lml_weights(m);
        for (std::size_t b = 0; b < 4; ++b) {
            if (profiles[b].degenerate) continue;
            ++counts[b];
            for (std::size_t l = 0; l < n; ++l) out[b].values[l] += profiles[b].values[l];
        }
    }
    for (std::size_t b = 0; b < 4; ++b) {
        if (counts[b] == 0) {
            out[b].degenerate = true;
            continue;
        }
        for (auto& v : out[b].values) v /= static_cast<double>(counts[b]);
    }
    return out;
}

void export_profiles(std::span<const WeightProfile> profiles, std::ostream& out,
                     bool with_header) {
    if (with_header) out << "branch,layer,weight\n";
    std::array<char, 32> buf{};
    for (const auto& p : profiles) {
        for (std::size_t l = 0; l < p.values.size(); ++l) {
            const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), p.values[l]);
            out << p.name << ',' << l << ',';
            out.write(buf.data(), res.ptr - buf.data());
            out << '\n';
        }
    }
    if (!out) fail(ErrorKind::io, "failed writing weight profiles");
}

std::vector<WeightProfile> read_profiles(std::istream& in) {
    std::vector<WeightProfile> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line.front() == '#' || line == "branch,layer,weight") continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 == std::string::npos ? c1 : c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) {
            fail(ErrorKind::format, "bad weight profile row '" + line + "'");
        }
        const std::string name = line.substr(0, c1);
        std::size_t layer = 0;
        double weight = 0.0;
        const auto r1 = std::from_chars(line.data() + c1 + 1, line.data() + c2, layer);
        const auto r2 = std::from_chars(line.data() + c2 + 1, line.data() + line.size(), weight);
        if (r1.ec != std::errc{} || r2.ec != std::errc{}) {
            fail(ErrorKind::format, "bad weight profile row '" + line + "'");
        }
        if (out.empty() || out.back().name != name) out.push_back({name, {}, false});
        auto& values = out.back().values;
        if (layer != values.size()) {
            fail(ErrorKind::format, "weight profile '" + name + "' layers out of order");
        }
        values.push_back(weight);
    }
    for (auto& p : out) {
        double sum = 0.0;
        for (double v : p.values) sum += v;
        p.degenerate = sum == 0.0;
    }
    return out;
}

} // namespace liwhiz
