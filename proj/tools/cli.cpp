#include "cli.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "liwhiz/analysis.hpp"
#include "liwhiz/checkpoint.hpp"
#include "liwhiz/error.hpp"
#include "liwhiz/evaluator.hpp"
#include "liwhiz/synth.hpp"
#include "liwhiz/trainer.hpp"

namespace liwhiz::cli {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kExitCodeHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  unexpected internal error\n"
    "  2  usage (unknown or conflicting flags)\n"
    "  3  config (invalid hyperparameters or dimensions)\n"
    "  4  io (missing or unwritable files)\n"
    "  5  format (malformed FMAP, checkpoint or manifest)\n"
    "  6  data (bad labels, shape mismatch)\n"
    "  7  numeric (NaN/Inf in features, loss or gradients)\n"
    "Errors are printed as one line: error: <category>: <message>\n"
    "LIWHIZ_LOG=trace|debug|info|warn|error|off sets log verbosity (default warn).";

int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::config: return kExitConfig;
    case ErrorKind::io: return kExitIo;
    case ErrorKind::format: return kExitFormat;
    case ErrorKind::data: return kExitData;
    case ErrorKind::numeric: return kExitNumeric;
    }
    return kExitUnexpected;
}

void configure_logging() {
    const char* env = std::getenv("LIWHIZ_LOG");
    if (!env || !*env) {
        spdlog::set_level(spdlog::level::warn);
        return;
    }
    const auto level = spdlog::level::from_str(env);
    // from_str maps unknown names to off; only accept that for an explicit "off".
    if (level == spdlog::level::off && std::string_view(env) != "off") {
        fail(ErrorKind::config, std::string("unknown LIWHIZ_LOG level '") + env + "'");
    }
    spdlog::set_level(level);
}

struct SynthArgs {
    std::string out;
    SynthSpec spec;
    std::string plant_branch = "enc_y";
};

struct TrainArgs {
    std::string manifest;
    std::string out;
    std::string mode = "full";
    std::size_t hidden_dim = ModelConfig{}.hidden_dim;
    TrainConfig train;
    int parallel_folds = 1;
};

struct EvalArgs {
    std::string manifest;
    std::string checkpoints;
    std::string out = "-";
    std::optional<std::string> mode;
    bool no_labels = false;
    bool require_labels = false;
};

struct WeightsArgs {
    std::string checkpoints;
    std::string out = "-";
    bool per_fold = false;
};

/// Writes to `path`, or to `out` when the path is "-".
template <typename Fn>
void emit(const std::string& path, std::ostream& out, Fn&& write) {
    if (path == "-") {
        write(out);
        return;
    }
    const fs::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(p.parent_path(), ec);
    }
    std::ofstream file(p, std::ios::trunc);
    if (!file) fail(ErrorKind::io, "cannot open '" + path + "' for writing");
    write(file);
    file.flush();
    if (!file) fail(ErrorKind::io, "write failed for '" + path + "'");
}

std::vector<BackendParams> load_ensemble(const std::string& dir) {
    auto models = load_checkpoints(dir);
    if (models.empty()) fail(ErrorKind::io, "no *.lwpz checkpoints in '" + dir + "'");
    for (const auto& m : models) {
        if (m.config != models.front().config || m.mode != models.front().mode) {
            fail(ErrorKind::config, "checkpoints in '" + dir + "' disagree on config or mode");
        }
    }
    return models;
}

Mode resolve_mode(const std::optional<std::string>& flag, const BackendParams& model) {
    if (!flag) return model.mode;
    const Mode m = parse_mode(*flag);
    if (m != model.mode) {
        fail(ErrorKind::config, "--mode " + *flag + " does not match checkpoint mode " +
                                    std::string(to_string(model.mode)));
    }
    return m;
}

void run_synth(const SynthArgs& a, std::ostream& out) {
    SynthSpec spec = a.spec;
    spec.plant.branch = parse_branch(a.plant_branch);
    spec.validate();
    const auto manifest = generate_dataset(spec, a.out);
    out << "wrote " << manifest.records.size() << " excerpts to " << a.out << '\n';
}

// Shortest representation that parses back to the same double.
std::string num(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string replay_command(const TrainArgs& a, const fs::path& manifest) {
    const auto& t = a.train;
    std::ostringstream cmd;
    cmd << "liwhiz train --manifest " << manifest.string() << " --out " << a.out
        << " --mode " << to_string(parse_mode(a.mode)) << " --hidden-dim " << a.hidden_dim
        << " --lr " << num(t.learning_rate) << " --max-epochs " << t.max_epochs << " --patience "
        << t.patience << " --k-folds " << t.k_folds << " --batch-size " << t.batch_size
        << " --weight-decay " << num(t.weight_decay) << " --adam-beta1 " << num(t.adam_beta1)
        << " --adam-beta2 " << num(t.adam_beta2) << " --adam-eps " << num(t.adam_eps) << " --seed "
        << t.seed;
    return cmd.str();
}

void run_train(const TrainArgs& a, std::ostream& out) {
    const Mode mode = parse_mode(a.mode);
    if (a.parallel_folds < 1) fail(ErrorKind::config, "--parallel-folds must be >= 1");
    a.train.validate();
    const auto manifest = read_manifest(a.manifest);
    const ModelConfig model = probe_config(manifest, a.hidden_dim);
    const auto dataset = load_dataset(manifest, model);
    a.train.validate(dataset.size());

    const auto results = kfold_train(dataset, model, a.train, mode, a.parallel_folds);
    write_run(results, a.out);

    const auto& t = a.train;
    json folds = json::array();
    double mean_val = 0.0;
    for (const auto& r : results) {
        folds.push_back({{"fold", r.fold},
                         {"best_epoch", r.best_epoch},
                         {"stopped_epoch", r.stopped_epoch},
                         {"best_val_rmse_percent", 100.0 * r.best_val_rmse}});
        mean_val += 100.0 * r.best_val_rmse / static_cast<double>(results.size());
    }
    const fs::path manifest_abs = fs::absolute(a.manifest);
    json record = {
        {"subcommand", "train"},
        {"manifest", manifest_abs.string()},
        {"mode", std::string(to_string(mode))},
        {"model", {{"num_layers", model.num_layers},
                   {"feature_dim", model.feature_dim},
                   {"hidden_dim", model.hidden_dim}}},
        {"train", {{"learning_rate", t.learning_rate},
                   {"max_epochs", t.max_epochs},
                   {"patience", t.patience},
                   {"k_folds", t.k_folds},
                   {"batch_size", t.batch_size},
                   {"weight_decay", t.weight_decay},
                   {"adam_beta1", t.adam_beta1},
                   {"adam_beta2", t.adam_beta2},
                   {"adam_eps", t.adam_eps},
                   {"seed", t.seed}}},
        {"parallel_folds", a.parallel_folds},
        {"dataset_size", dataset.size()},
        {"folds", folds},
        {"mean_best_val_rmse_percent", mean_val},
        {"replay", replay_command(a, manifest_abs)},
    };
    emit((fs::path(a.out) / "run.json").string(), out,
         [&](std::ostream& s) { s << record.dump(2) << '\n'; });
    out << "trained " << results.size() << " folds on " << dataset.size()
        << " excerpts; mean best validation RMSE " << mean_val << "%\n";
}

EvalReport predict_report(const EvalArgs& a, bool keep_labels) {
    const auto models = load_ensemble(a.checkpoints);
    const Mode mode = resolve_mode(a.mode, models.front());
    const auto manifest = read_manifest(a.manifest);
    auto dataset = load_dataset(manifest, models.front().config);
    if (!keep_labels) {
        for (auto& e : dataset) e.label.reset();
    }
    return evaluate(dataset, models, mode);
}

void run_predict(const EvalArgs& a, std::ostream& out) {
    const auto report = predict_report(a, false);
    emit(a.out, out, [&](std::ostream& s) { write_predictions(report, s); });
}

void run_evaluate(const EvalArgs& a, std::ostream& out) {
    if (a.require_labels) {
        const auto manifest = read_manifest(a.manifest);
        for (const auto& r : manifest.records) {
            if (!r.label) fail(ErrorKind::data, "excerpt '" + r.excerpt_id + "' has no label");
        }
    }
    const auto report = predict_report(a, !a.no_labels);
    emit(a.out, out, [&](std::ostream& s) { write_report(report, s); });
}

void run_weights(const WeightsArgs& a, std::ostream& out) {
    const auto models = load_ensemble(a.checkpoints);
    const auto ens = ensemble_profiles(models);
    std::vector<WeightProfile> profiles(ens.begin(), ens.end());
    if (a.per_fold) {
        for (std::size_t i = 0; i < models.size(); ++i) {
            char suffix[16];
            std::snprintf(suffix, sizeof(suffix), "_fold%02zu", i);
            for (auto p : normalized_lml_weights(models[i])) {
                p.name += suffix;
                profiles.push_back(std::move(p));
            }
        }
    }
    emit(a.out, out, [&](std::ostream& s) { export_profiles(profiles, s); });
}

void add_train_flags(CLI::App& cmd, TrainArgs& a) {
    auto& t = a.train;
    cmd.add_option("--manifest", a.manifest, "Feature manifest (TSV)")->required();
    cmd.add_option("--out", a.out, "Run directory for checkpoints, history.csv, run.json")
        ->required();
    cmd.add_option("--mode", a.mode, "Model variant")
        ->check(CLI::IsMember({"full", "y-only", "y_only"}))
        ->capture_default_str();
    cmd.add_option("--hidden-dim", a.hidden_dim, "LSTM hidden size per direction")
        ->capture_default_str();
    cmd.add_option("--lr,--learning-rate", t.learning_rate, "AdamW learning rate")
        ->capture_default_str();
    cmd.add_option("--max-epochs", t.max_epochs)->capture_default_str();
    cmd.add_option("--patience", t.patience, "Early-stopping patience in epochs")
        ->capture_default_str();
    cmd.add_option("--k-folds", t.k_folds)->capture_default_str();
    cmd.add_option("--batch-size", t.batch_size)->capture_default_str();
    cmd.add_option("--weight-decay", t.weight_decay)->capture_default_str();
    cmd.add_option("--adam-beta1", t.adam_beta1)->capture_default_str();
    cmd.add_option("--adam-beta2", t.adam_beta2)->capture_default_str();
    cmd.add_option("--adam-eps", t.adam_eps)->capture_default_str();
    cmd.add_option("--seed", t.seed, "Seeds fold split, initialisation and batch order")
        ->capture_default_str();
    cmd.add_option("--parallel-folds", a.parallel_folds, "Folds trained concurrently")
        ->capture_default_str();
}

void add_synth_flags(CLI::App& cmd, SynthArgs& a) {
    auto& s = a.spec;
    cmd.add_option("--out", a.out, "Output dataset directory")->required();
    cmd.add_option("--num-excerpts", s.num_excerpts)->capture_default_str();
    cmd.add_option("--num-layers", s.config.num_layers)->capture_default_str();
    cmd.add_option("--feature-dim", s.config.feature_dim)->capture_default_str();
    cmd.add_option("--t-min", s.t_min)->capture_default_str();
    cmd.add_option("--t-max", s.t_max)->capture_default_str();
    cmd.add_option("--m-min", s.m_min)->capture_default_str();
    cmd.add_option("--m-max", s.m_max)->capture_default_str();
    cmd.add_option("--plant-branch", a.plant_branch, "enc_x, enc_y, dec_x or dec_y")
        ->check(CLI::IsMember({"enc_x", "enc_y", "dec_x", "dec_y"}))
        ->capture_default_str();
    cmd.add_option("--plant-layer", s.plant.target_layer)->capture_default_str();
    cmd.add_option("--plant-a", s.plant.a)->capture_default_str();
    cmd.add_option("--plant-b", s.plant.b)->capture_default_str();
    cmd.add_option("--label-noise", s.label_noise_std)->capture_default_str();
    cmd.add_option("--seed", s.seed)->capture_default_str();
}

void add_eval_flags(CLI::App& cmd, EvalArgs& a, const char* out_help) {
    cmd.add_option("--manifest", a.manifest, "Feature manifest (TSV)")->required();
    cmd.add_option("--checkpoints", a.checkpoints, "Directory of *.lwpz ensemble members")
        ->required();
    cmd.add_option("--out", a.out, out_help)->capture_default_str();
    cmd.add_option("--mode", a.mode, "Must match the checkpoints if given")
        ->check(CLI::IsMember({"full", "y-only", "y_only"}));
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Lyric intelligibility back-end: synth, train, predict, evaluate, weights",
                 "liwhiz"};
    app.footer(kExitCodeHelp);
    app.require_subcommand(1);

    SynthArgs synth;
    TrainArgs train;
    EvalArgs predict;
    EvalArgs evaluate_args;
    WeightsArgs weights;

    auto* synth_cmd = app.add_subcommand("synth", "Write a planted synthetic feature dataset");
    add_synth_flags(*synth_cmd, synth);

    auto* train_cmd = app.add_subcommand("train", "k-fold cross-validated training");
    add_train_flags(*train_cmd, train);

    auto* predict_cmd = app.add_subcommand("predict", "Ensemble predictions CSV");
    add_eval_flags(*predict_cmd, predict, "Predictions CSV path, '-' for stdout");

    auto* eval_cmd = app.add_subcommand("evaluate", "Ensemble predictions with RMSE and NCC");
    add_eval_flags(*eval_cmd, evaluate_args, "Report CSV path, '-' for stdout");
    auto* no_labels = eval_cmd->add_flag("--no-labels", evaluate_args.no_labels,
                                         "Ignore manifest labels; aggregates are absent");
    auto* require_labels = eval_cmd->add_flag("--require-labels", evaluate_args.require_labels,
                                              "Fail unless every excerpt is labeled");
    no_labels->excludes(require_labels);

    auto* weights_cmd = app.add_subcommand("weights", "Normalized layer-mixing profiles CSV");
    weights_cmd->add_option("--checkpoints", weights.checkpoints, "Directory of *.lwpz")
        ->required();
    weights_cmd->add_option("--out", weights.out, "CSV path, '-' for stdout")
        ->capture_default_str();
    weights_cmd->add_flag("--per-fold", weights.per_fold, "Also emit each member's profiles");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: usage: " << e.what() << '\n';
        return kExitUsage;
    }

    try {
        configure_logging();
        if (*synth_cmd) run_synth(synth, out);
        else if (*train_cmd) run_train(train, out);
        else if (*predict_cmd) run_predict(predict, out);
        else if (*eval_cmd) run_evaluate(evaluate_args, out);
        else if (*weights_cmd) run_weights(weights, out);
        return kExitOk;
    } catch (const Error& e) {
        err << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        err << "error: unexpected: " << e.what() << '\n';
        return kExitUnexpected;
    }
}

} // namespace liwhiz::cli
