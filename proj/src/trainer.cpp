#include "liwhiz/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

#include <spdlog/spdlog.h>

#include "liwhiz/checkpoint.hpp"
#include "liwhiz/error.hpp"
#include "seeding.hpp"

namespace liwhiz {

void TrainConfig::validate(std::size_t dataset_size) const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) fail(ErrorKind::config, what);
    };
    require(k_folds >= 2, "k_folds must be >= 2 (got " + std::to_string(k_folds) + ")");
    require(patience >= 1, "patience must be >= 1");
    require(max_epochs >= 1, "max_epochs must be >= 1");
    require(batch_size >= 1, "batch_size must be >= 1");
    require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be > 0");
    require(weight_decay >= 0.0, "weight_decay must be >= 0");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0, "adam_beta1 must lie in [0,1)");
    require(adam_beta2 >= 0.0 && adam_beta2 < 1.0, "adam_beta2 must lie in [0,1)");
    require(adam_eps > 0.0, "adam_eps must be > 0");
    if (dataset_size > 0) {
        require(dataset_size >= static_cast<std::size_t>(k_folds),
                "dataset has " + std::to_string(dataset_size) + " excerpts, fewer than k_folds=" +
                    std::to_string(k_folds));
    }
}

OptimizerState OptimizerState::for_params(const BackendParams& params) {
    return OptimizerState{zeros_like(params), zeros_like(params), 0};
}

void adamw_step(BackendParams& params, const Gradients& grads, OptimizerState& state,
                const TrainConfig& config) {
    auto tp = tensors(params);
    const auto tg = tensors(grads);
    auto tm = tensors(state.m);
    auto tv = tensors(state.v);
    if (tp.size() != tg.size() || tp.size() != tm.size() || tp.size() != tv.size()) {
        fail(ErrorKind::config, "adamw: parameter/gradient/state trees differ");
    }
    for (std::size_t i = 0; i < tp.size(); ++i) {
        if (tp[i].data.size() != tg[i].data.size() || tp[i].data.size() != tm[i].data.size() ||
            tp[i].data.size() != tv[i].data.size()) {
            fail(ErrorKind::config, "adamw: shape mismatch in " + tp[i].name);
        }
        for (float g : tg[i].data) {
            if (!std::isfinite(g)) fail(ErrorKind::numeric, "adamw: non-finite gradient in " + tg[i].name);
        }
    }

    ++state.step;
    const double b1 = config.adam_beta1;
    const double b2 = config.adam_beta2;
    const double step = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(b1, step);
    const double correction2 = 1.0 - std::pow(b2, step);
    const double lr = config.learning_rate;
    const double wd = config.weight_decay;

    for (std::size_t i = 0; i < tp.size(); ++i) {
        auto theta = tp[i].data;
        auto m = tm[i].data;
        auto v = tv[i].data;
        const auto g = tg[i].data;
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double gj = g[j];
            const double mj = b1 * m[j] + (1.0 - b1) * gj;
            const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
            m[j] = static_cast<float>(mj);
            v[j] = static_cast<float>(vj);
            const double m_hat = mj / correction1;
            const double v_hat = vj / correction2;
            const double update = m_hat / (std::sqrt(v_hat) + config.adam_eps) + wd * theta[j];
            theta[j] = static_cast<float>(theta[j] - lr * update);
        }
    }
}

EarlyStopping::EarlyStopping(int patience, double min_delta)
    : m_patience(patience), m_min_delta(min_delta),
      m_best(std::numeric_limits<double>::infinity()) {
    if (patience < 1) fail(ErrorKind::config, "patience must be >= 1");
}

bool EarlyStopping::observe(double metric) {
    ++m_epochs;
    if (metric < m_best - m_min_delta) {
        m_best = metric;
        m_best_epoch = m_epochs;
        m_bad_epochs = 0;
        return true;
    }
    ++m_bad_epochs;
    return false;
}

std::vector<FoldSplit> split_folds(std::size_t dataset_size, int k, std::uint64_t seed) {
    if (k < 2) fail(ErrorKind::config, "k_folds must be >= 2");
    const auto folds = static_cast<std::size_t>(k);
    if (dataset_size < folds) {
        fail(ErrorKind::config, "cannot split " + std::to_string(dataset_size) +
                                    " excerpts into " + std::to_string(k) + " folds");
    }
    std::vector<std::size_t> order(dataset_size);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(detail::derive_seed(seed, 0x5f01d));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<FoldSplit> splits(folds);
    const std::size_t base = dataset_size / folds;
    const std::size_t extra = dataset_size % folds;
    std::size_t offset = 0;
    for (std::size_t f = 0; f < folds; ++f) {
        const std::size_t size = base + (f < extra ? 1 : 0);
        splits[f].val.assign(order.begin() + static_cast<std::ptrdiff_t>(offset),
                             order.begin() + static_cast<std::ptrdiff_t>(offset + size));
        offset += size;
    }
    for (std::size_t f = 0; f < folds; ++f) {
        for (std::size_t g = 0; g < folds; ++g) {
            if (g == f) continue;
            splits[f].train.insert(splits[f].train.end(), splits[g].val.begin(),
                                   splits[g].val.end());
        }
        std::sort(splits[f].train.begin(), splits[f].train.end());
        std::sort(splits[f].val.begin(), splits[f].val.end());
    }
    return splits;
}

double dataset_rmse(std::span<const ExcerptFeatures* const> data, const BackendParams& params,
                    Mode mode) {
    if (data.empty()) fail(ErrorKind::data, "RMSE over an empty set");
    double sq = 0.0;
    for (const auto* e : data) {
        if (!e->label) fail(ErrorKind::data, "excerpt '" + e->excerpt_id + "' has no label");
        const double err = forward(*e, params, mode) - *e->label;
        sq += err * err;
    }
    return std::sqrt(sq / static_cast<double>(data.size()));
}

FoldResult train_fold(std::span<const ExcerptFeatures* const> train,
                      std::span<const ExcerptFeatures* const> val, const ModelConfig& model,
                      const TrainConfig& config, Mode mode, int fold_index) {
    config.validate();
    if (train.empty() || val.empty()) fail(ErrorKind::data, "fold has an empty split");
    for (const auto* e : train) {
        if (!e->label) fail(ErrorKind::data, "training excerpt '" + e->excerpt_id + "' has no label");
    }

    const auto fold_key = static_cast<std::uint64_t>(fold_index);
    BackendParams params = init_params(model, mode, detail::derive_seed(config.seed, fold_key, 1));
    OptimizerState state = OptimizerState::for_params(params);
    std::mt19937_64 rng(detail::derive_seed(config.seed, fold_key, 2));
    EarlyStopping stopper(config.patience);

    FoldResult result;
    result.fold = fold_index;
    result.best = params;

    std::vector<const ExcerptFeatures*> order(train.begin(), train.end());
    const auto batch = static_cast<std::size_t>(config.batch_size);
    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double sq_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += batch) {
            const std::size_t count = std::min(batch, order.size() - start);
            const std::span<const ExcerptFeatures* const> group(order.data() + start, count);
            BackwardResult<float> step;
            try {
                step = backward(group, params, mode);
                if (!std::isfinite(step.loss)) fail(ErrorKind::numeric, "non-finite loss");
                adamw_step(params, step.grads, state, config);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::numeric) throw;
                fail(ErrorKind::numeric, "fold " + std::to_string(fold_index) + " diverged at epoch " +
                                             std::to_string(epoch) + ", optimizer step " +
                                             std::to_string(state.step) + ": " + e.what());
            }
            for (std::size_t i = 0; i < count; ++i) {
                const double err = step.predictions[i] - *group[i]->label;
                sq_sum += err * err;
            }
        }
        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = std::sqrt(sq_sum / static_cast<double>(order.size()));
        record.val_rmse = dataset_rmse(val, params, mode);
        result.history.push_back(record);
        result.stopped_epoch = epoch;
        spdlog::debug("fold {} epoch {} train_loss={:.6f} val_rmse={:.6f}", fold_index, epoch,
                      record.train_loss, record.val_rmse);

        if (stopper.observe(record.val_rmse)) {
            result.best = params;
            result.best_val_rmse = record.val_rmse;
            result.best_epoch = epoch;
        }
        if (stopper.should_stop()) {
            spdlog::debug("fold {} stopped early at epoch {} (best epoch {})", fold_index, epoch,
                         result.best_epoch);
            break;
        }
    }
    return result;
}

namespace {

std::vector<const ExcerptFeatures*> gather(std::span<const ExcerptFeatures> dataset,
                                           const std::vector<std::size_t>& idx) {
    std::vector<const ExcerptFeatures*> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back(&dataset[i]);
    return out;
}

FoldResult run_split(std::span<const ExcerptFeatures> dataset, const FoldSplit& split, int fold,
                     const ModelConfig& model, const TrainConfig& config, Mode mode) {
    const auto train = gather(dataset, split.train);
    const auto val = gather(dataset, split.val);
    return train_fold(train, val, model, config, mode, fold);
}

} // namespace

FoldResult train_single_fold(std::span<const ExcerptFeatures> dataset, int fold_index,
                             const ModelConfig& model, const TrainConfig& config, Mode mode) {
    config.validate(dataset.size());
    const auto splits = split_folds(dataset.size(), config.k_folds, config.seed);
    if (fold_index < 0 || fold_index >= config.k_folds) {
        fail(ErrorKind::config, "fold index " + std::to_string(fold_index) + " out of range");
    }
    return run_split(dataset, splits[static_cast<std::size_t>(fold_index)], fold_index, model,
                     config, mode);
}

std::vector<FoldResult> kfold_train(std::span<const ExcerptFeatures> dataset,
                                    const ModelConfig& model, const TrainConfig& config,
                                    Mode mode, int parallel_folds) {
    config.validate(dataset.size());
    const auto splits = split_folds(dataset.size(), config.k_folds, config.seed);
    std::vector<FoldResult> results(splits.size());
    std::vector<std::exception_ptr> errors(splits.size());

    auto work = [&](std::size_t f) {
        try {
            results[f] = run_split(dataset, splits[f], static_cast<int>(f), model, config, mode);
        } catch (...) {
            errors[f] = std::current_exception();
        }
    };

    const auto workers = static_cast<std::size_t>(std::max(1, parallel_folds));
    if (workers == 1) {
        for (std::size_t f = 0; f < splits.size(); ++f) work(f);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < std::min(workers, splits.size()); ++w) {
            pool.emplace_back([&] {
                for (std::size_t f = next++; f < splits.size(); f = next++) work(f);
            });
        }
    }
    for (const auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return results;
}

void write_history(const std::vector<FoldResult>& results, std::ostream& out) {
    out << "fold,epoch,train_loss,val_rmse\n";
    out.precision(9);
    for (const auto& r : results) {
        for (const auto& h : r.history) {
            out << r.fold << ',' << h.epoch << ',' << h.train_loss << ',' << h.val_rmse << '\n';
        }
    }
}

void write_run(const std::vector<FoldResult>& results, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) fail(ErrorKind::io, "cannot create run directory '" + dir.string() + "'");
    for (const auto& r : results) {
        char name[32];
        std::snprintf(name, sizeof(name), "fold%02d.lwpz", r.fold);
        save_checkpoint(r.best, dir / name);
    }
    std::ofstream out(dir / "history.csv", std::ios::trunc);
    if (!out) fail(ErrorKind::io, "cannot write history.csv in '" + dir.string() + "'");
    write_history(results, out);
}

} // namespace liwhiz
