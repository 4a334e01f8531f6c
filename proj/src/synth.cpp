#include "liwhiz/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "liwhiz/error.hpp"
#include "seeding.hpp"

namespace liwhiz {

namespace {

const FeatureStack& stack_of(const ExcerptFeatures& e, Branch b) {
    switch (b) {
    case Branch::enc_x: return e.enc_x;
    case Branch::enc_y: return e.enc_y;
    case Branch::dec_x: return e.dec_x;
    case Branch::dec_y: return e.dec_y;
    }
    return e.enc_y;
}

FeatureStack random_stack(Side side, const ModelConfig& config, std::size_t seq_len,
                          std::mt19937_64& rng) {
    std::normal_distribution<float> normal(0.0f, 1.0f);
    std::vector<float> data(config.layer_count() * config.feature_dim * seq_len);
    for (auto& v : data) v = normal(rng);
    return FeatureStack(side, config.layer_count(), config.feature_dim, seq_len, std::move(data));
}

std::string excerpt_name(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "ex%04zu", index);
    return buf;
}

} // namespace

void SynthSpec::validate() const {
    config.validate();
    auto require = [](bool ok, const std::string& what) {
        if (!ok) fail(ErrorKind::config, "synth: " + what);
    };
    require(num_excerpts >= 1, "num_excerpts must be >= 1");
    require(t_min >= 1 && t_min <= t_max, "need 1 <= t_min <= t_max");
    require(m_min >= 1 && m_min <= m_max, "need 1 <= m_min <= m_max");
    require(plant.target_layer <= config.num_layers, "plant target_layer exceeds L");
    require(std::isfinite(plant.a) && std::isfinite(plant.b), "plant coefficients must be finite");
    require(label_noise_std >= 0.0, "label_noise_std must be >= 0");
}

double plant_score(const FeatureStack& stack, const Plant& plant) {
    const auto layer = stack.layer(plant.target_layer);
    double sum = 0.0;
    for (Eigen::Index j = 0; j < layer.cols(); ++j) {
        for (Eigen::Index i = 0; i < layer.rows(); ++i) sum += layer(i, j);
    }
    const double mean = sum / static_cast<double>(layer.size());
    return 1.0 / (1.0 + std::exp(-(plant.a * mean + plant.b)));
}

ExcerptFeatures synth_excerpt(const SynthSpec& spec, std::size_t index) {
    std::mt19937_64 rng(detail::derive_seed(spec.seed, index));
    std::uniform_int_distribution<std::size_t> t_dist(spec.t_min, spec.t_max);
    std::uniform_int_distribution<std::size_t> m_dist(spec.m_min, spec.m_max);
    const std::size_t t = t_dist(rng);
    const std::size_t m_x = m_dist(rng);
    const std::size_t m_y = m_dist(rng);

    ExcerptFeatures e;
    e.excerpt_id = excerpt_name(index);
    e.enc_x = random_stack(Side::encoder, spec.config, t, rng);
    e.enc_y = random_stack(Side::encoder, spec.config, t, rng);
    e.dec_x = random_stack(Side::decoder, spec.config, m_x, rng);
    e.dec_y = random_stack(Side::decoder, spec.config, m_y, rng);

    double label = plant_score(stack_of(e, spec.plant.branch), spec.plant);
    if (spec.label_noise_std > 0.0) {
        std::normal_distribution<double> noise(0.0, spec.label_noise_std);
        label += noise(rng);
    }
    e.label = std::clamp(label, 0.0, 1.0);
    return e;
}

Manifest generate_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) fail(ErrorKind::io, "cannot create '" + out_dir.string() + "': " + ec.message());

    Manifest manifest;
    manifest.base_dir = out_dir;
    for (std::size_t i = 0; i < spec.num_excerpts; ++i) {
        const auto e = synth_excerpt(spec, i);
        ManifestRecord record{e.excerpt_id,
                              e.excerpt_id + ".enc_x.fmap",
                              e.excerpt_id + ".enc_y.fmap",
                              e.excerpt_id + ".dec_x.fmap",
                              e.excerpt_id + ".dec_y.fmap",
                              e.label};
        write_fmap(e.enc_x, out_dir / record.enc_x);
        write_fmap(e.enc_y, out_dir / record.enc_y);
        write_fmap(e.dec_x, out_dir / record.dec_x);
        write_fmap(e.dec_y, out_dir / record.dec_y);
        manifest.records.push_back(std::move(record));
    }
    write_manifest(manifest, out_dir / "manifest.tsv");
    return manifest;
}

} // namespace liwhiz
