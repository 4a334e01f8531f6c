#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "liwhiz/error.hpp"
#include "liwhiz/synth.hpp"
#include "test_support.hpp"

using namespace liwhiz;
using liwhiz::testing::TempDir;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Re-reads a written FMAP byte by byte and recomputes the plant.
double plant_from_disk(const std::filesystem::path& file, std::size_t layer, double a, double b) {
    const auto bytes = slurp(file);
    auto u32 = [&](std::size_t off) {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(bytes[off + i])) << (8 * i);
        return v;
    };
    const std::size_t features = u32(12);
    const std::size_t frames = u32(16);
    double sum = 0.0;
    for (std::size_t t = 0; t < frames; ++t) {
        for (std::size_t f = 0; f < features; ++f) {
            const std::size_t off = 20 + 4 * ((layer * frames + t) * features + f);
            sum += std::bit_cast<float>(u32(off));
        }
    }
    const double mean = sum / static_cast<double>(features * frames);
    return 1.0 / (1.0 + std::exp(-(a * mean + b)));
}

} // namespace

TEST_CASE("flat plant gives constant labels") {
    SynthSpec spec;
    spec.num_excerpts = 10;
    spec.plant.a = 0.0;
    spec.plant.b = 0.7;
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(*synth_excerpt(spec, i).label == doctest::Approx(1.0 / (1.0 + std::exp(-0.7))).epsilon(1e-15));
    }
}

TEST_CASE("generated labels match a plant recomputed from disk") {
    TempDir dir;
    SynthSpec spec;
    spec.num_excerpts = 12;
    spec.plant = Plant{Branch::dec_x, 2, 4.0, 0.0};
    const auto manifest = generate_dataset(spec, dir.path());
    const auto reread = read_manifest(dir / "manifest.tsv");
    REQUIRE(reread.records.size() == 12);
    for (const auto& r : reread.records) {
        const double oracle = plant_from_disk(dir / r.dec_x.string(), 2, 4.0, 0.0);
        CHECK(std::abs(*r.label - oracle) < 1e-6);
    }
    const auto data = load_dataset(reread, spec.config);
    CHECK(data.size() == 12);
}

TEST_CASE("generation is byte-identical for the same seed") {
    TempDir a, b;
    SynthSpec spec;
    spec.num_excerpts = 4;
    spec.label_noise_std = 0.05;
    spec.seed = 77;
    generate_dataset(spec, a.path());
    generate_dataset(spec, b.path());
    for (const auto& entry : std::filesystem::directory_iterator(a.path())) {
        const auto name = entry.path().filename();
        CHECK(slurp(entry.path()) == slurp(b.path() / name));
    }
    spec.seed = 78;
    TempDir c;
    generate_dataset(spec, c.path());
    CHECK(slurp(a / "manifest.tsv") != slurp(c / "manifest.tsv"));
}

TEST_CASE("labels are varied, clipped and stacks well-formed") {
    SynthSpec spec;
    spec.num_excerpts = 40;
    double mean = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < 40; ++i) {
        const auto e = synth_excerpt(spec, i);
        CHECK(e.enc_x.seq_len() == e.enc_y.seq_len());
        CHECK(e.enc_x.seq_len() >= spec.t_min);
        CHECK(e.enc_x.seq_len() <= spec.t_max);
        CHECK(e.dec_y.seq_len() >= spec.m_min);
        CHECK(e.dec_y.layer_count() == 3);
        mean += *e.label;
        sq += *e.label * *e.label;
    }
    mean /= 40.0;
    CHECK(sq / 40.0 - mean * mean > 0.0);

    spec.label_noise_std = 5.0;
    for (std::size_t i = 0; i < 40; ++i) {
        const double l = *synth_excerpt(spec, i).label;
        CHECK(l >= 0.0);
        CHECK(l <= 1.0);
    }
}

TEST_CASE("synth spec validation") {
    SynthSpec spec;
    spec.plant.target_layer = 3;
    CHECK_THROWS_AS(spec.validate(), Error);
    spec = SynthSpec{};
    spec.t_min = 0;
    CHECK_THROWS_AS(spec.validate(), Error);
    spec = SynthSpec{};
    spec.m_min = 6;
    CHECK_THROWS_AS(spec.validate(), Error);
}
