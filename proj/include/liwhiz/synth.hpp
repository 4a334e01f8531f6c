#pragma once

#include <cstdint>
#include <filesystem>

#include "liwhiz/analysis.hpp"
#include "liwhiz/feature_store.hpp"

namespace liwhiz {

/// Planted intelligibility function: sigmoid(a * mean(stack[layer]) + b)
/// over one layer of one branch's stack.
struct Plant {
    Branch branch = Branch::enc_y;
    std::size_t target_layer = 1;
    double a = 4.0;
    double b = 0.0;
};

struct SynthSpec {
    ModelConfig config{2, 8, 8};
    std::size_t num_excerpts = 32;
    std::size_t t_min = 4; // encoder frames, shared by x and y
    std::size_t t_max = 8;
    std::size_t m_min = 2; // decoder tokens, drawn separately for x and y
    std::size_t m_max = 5;
    Plant plant;
    double label_noise_std = 0.0;
    std::uint64_t seed = 0;

    void validate() const;
};

double plant_score(const FeatureStack& stack, const Plant& plant);

/// Builds excerpt `index` of the dataset in memory; labels are always set.
ExcerptFeatures synth_excerpt(const SynthSpec& spec, std::size_t index);

/// Writes four FMAP files per excerpt plus `manifest.tsv` into `out_dir` and
/// returns the manifest (paths relative to `out_dir`).
Manifest generate_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

} // namespace liwhiz
