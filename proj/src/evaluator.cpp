#include "liwhiz/evaluator.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <ostream>

#include "liwhiz/error.hpp"

namespace liwhiz {

namespace {

void check_pair(std::span<const double> a, std::span<const double> b, std::size_t min_len,
                const char* what) {
    if (a.size() != b.size()) {
        fail(ErrorKind::data, std::string(what) + ": length mismatch (" +
                                  std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
    if (a.size() < min_len) {
        fail(ErrorKind::data, std::string(what) + ": needs at least " + std::to_string(min_len) +
                                  " values");
    }
}

// Shortest representation that parses back to the same double.
void write_number(std::ostream& out, double v) {
    std::array<char, 32> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    out.write(buf.data(), res.ptr - buf.data());
}

} // namespace

double ensemble_predict(const ExcerptFeatures& excerpt, std::span<const BackendParams> models,
                        Mode mode) {
    if (models.empty()) fail(ErrorKind::config, "ensemble has no models");
    const auto& first = models.front();
    for (const auto& m : models) {
        if (!(m.config == first.config) || m.mode != first.mode) {
            fail(ErrorKind::config, "ensemble members disagree on config or mode");
        }
    }
    double sum = 0.0;
    for (const auto& m : models) sum += forward(excerpt, m, mode);
    return sum / static_cast<double>(models.size());
}

double rmse_percent(std::span<const double> preds, std::span<const double> labels) {
    check_pair(preds, labels, 1, "rmse_percent");
    double sq = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (!(preds[i] >= 0.0 && preds[i] <= 1.0 && labels[i] >= 0.0 && labels[i] <= 1.0)) {
            fail(ErrorKind::data, "rmse_percent: values must lie in [0,1]");
        }
        const double d = preds[i] - labels[i];
        sq += d * d;
    }
    return 100.0 * std::sqrt(sq / static_cast<double>(preds.size()));
}

std::optional<double> ncc(std::span<const double> preds, std::span<const double> labels) {
    check_pair(preds, labels, 2, "ncc");
    const auto n = static_cast<double>(preds.size());
    double mp = 0.0;
    double ml = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        mp += preds[i];
        ml += labels[i];
    }
    mp /= n;
    ml /= n;
    double cov = 0.0;
    double vp = 0.0;
    double vl = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const double dp = preds[i] - mp;
        const double dl = labels[i] - ml;
        cov += dp * dl;
        vp += dp * dp;
        vl += dl * dl;
    }
    if (vp == 0.0 || vl == 0.0) return std::nullopt;
    return std::clamp(cov / std::sqrt(vp * vl), -1.0, 1.0);
}

EvalReport evaluate(std::span<const ExcerptFeatures> dataset, std::span<const BackendParams> models,
                    Mode mode) {
    EvalReport report;
    report.mode = mode;
    report.ensemble_size = models.size();
    std::vector<double> preds;
    std::vector<double> labels;
    for (const auto& e : dataset) {
        const double p = ensemble_predict(e, models, mode);
        report.rows.push_back({e.excerpt_id, p, e.label});
        if (e.label) {
            preds.push_back(p);
            labels.push_back(*e.label);
        }
    }
    if (!preds.empty()) {
        report.has_labels = true;
        report.rmse_percent = rmse_percent(preds, labels);
        if (preds.size() >= 2) report.ncc = ncc(preds, labels);
    }
    return report;
}

void write_report(const EvalReport& report, std::ostream& out) {
    out << "excerpt_id,prediction,label\n";
    for (const auto& r : report.rows) {
        out << r.excerpt_id << ',';
        write_number(out, r.prediction);
        out << ',';
        if (r.label) write_number(out, *r.label);
        out << '\n';
    }
    out << "# mode=" << to_string(report.mode) << '\n';
    out << "# ensemble_size=" << report.ensemble_size << '\n';
    out << "# rmse_percent=";
    if (report.rmse_percent) {
        write_number(out, *report.rmse_percent);
    } else {
        out << "absent";
    }
    out << "\n# ncc=";
    if (!report.has_labels) {
        out << "absent";
    } else if (report.ncc) {
        write_number(out, *report.ncc);
    } else {
        out << "undefined";
    }
    out << '\n';
}

void write_predictions(const EvalReport& report, std::ostream& out) {
    out << "excerpt_id,prediction\n";
    for (const auto& r : report.rows) {
        out << r.excerpt_id << ',';
        write_number(out, r.prediction);
        out << '\n';
    }
}

} // namespace liwhiz
