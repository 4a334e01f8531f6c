#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "liwhiz/model.hpp"

namespace liwhiz {

enum class Branch { enc_x, enc_y, dec_x, dec_y };

std::string_view to_string(Branch branch) noexcept;
Branch parse_branch(std::string_view text);

/// |w_l| / sum_j |w_j| for one mixing layer. `degenerate` is set (and all
/// values are zero) when every raw weight is exactly zero or the branch does
/// not exist, as for x branches in y_only mode.
struct WeightProfile {
    std::string name; // "enc_x", or with a suffix such as "enc_x_ensemble"
    std::vector<double> values;
    bool degenerate = false;
};

WeightProfile normalize_weights(std::string name, std::span<const float> raw,
                                std::size_t layer_count);

/// Profiles in the order enc_x, enc_y, dec_x, dec_y.
std::array<WeightProfile, 4> normalized_lml_weights(const BackendParams& params);

/// Per-branch mean of the members' normalized profiles, named `<branch>_ensemble`.
/// A branch's mean only includes non-degenerate members.
std::array<WeightProfile, 4> ensemble_profiles(std::span<const BackendParams> models);

/// CSV `branch,layer,weight`, layers ascending within each profile.
void export_profiles(std::span<const WeightProfile> profiles, std::ostream& out,
                     bool with_header = true);
/// Parses `export_profiles` output, grouping rows by branch in first-seen order.
std::vector<WeightProfile> read_profiles(std::istream& in);

} // namespace liwhiz
