#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "liwhiz/model.hpp"

namespace liwhiz {

/// Mean of the per-model scores. All models must share config and mode.
double ensemble_predict(const ExcerptFeatures& excerpt, std::span<const BackendParams> models,
                        Mode mode);

/// 100 * sqrt(mean((pred - label)^2)). Inputs must lie in [0, 1].
double rmse_percent(std::span<const double> preds, std::span<const double> labels);

/// Pearson correlation; std::nullopt when either vector has zero variance.
std::optional<double> ncc(std::span<const double> preds, std::span<const double> labels);

struct EvalRow {
    std::string excerpt_id;
    double prediction = 0.0;
    std::optional<double> label;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    /// Absent when no row carries a label.
    std::optional<double> rmse_percent;
    bool has_labels = false;
    /// Absent (with has_labels) means undefined: constant vector or < 2 labels.
    std::optional<double> ncc;
    Mode mode = Mode::full;
    std::size_t ensemble_size = 0;
};

/// Aggregates are computed over the labeled rows only.
EvalReport evaluate(std::span<const ExcerptFeatures> dataset, std::span<const BackendParams> models,
                    Mode mode);

/// CSV `excerpt_id,prediction,label` then `# rmse_percent=...` / `# ncc=...`.
void write_report(const EvalReport& report, std::ostream& out);
/// CSV `excerpt_id,prediction`.
void write_predictions(const EvalReport& report, std::ostream& out);

} // namespace liwhiz
