#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "liwhiz/model.hpp"

namespace liwhiz {

struct TrainConfig {
    double learning_rate = 1e-3;
    int max_epochs = 30;
    int patience = 10;
    int k_folds = 10;
    int batch_size = 8;
    double weight_decay = 0.01;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;

    /// Throws Error{config}. `dataset_size` of 0 skips the size check.
    void validate(std::size_t dataset_size = 0) const;
};

/// First/second moments shaped like the parameters, plus the step count.
struct OptimizerState {
    BackendParams m;
    BackendParams v;
    std::uint64_t step = 0;

    static OptimizerState for_params(const BackendParams& params);
};

/// Decoupled weight decay Adam:
///   theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)
void adamw_step(BackendParams& params, const Gradients& grads, OptimizerState& state,
                const TrainConfig& config);

/// Epoch-level patience counter. An epoch improves only if it beats the best
/// value by more than `min_delta`.
class EarlyStopping {
public:
    static constexpr double kMinDelta = 1e-6;

    explicit EarlyStopping(int patience, double min_delta = kMinDelta);

    /// Records one epoch's metric; returns true if it is a new best.
    bool observe(double metric);
    bool should_stop() const noexcept { return m_bad_epochs >= m_patience; }
    double best() const noexcept { return m_best; }
    int best_epoch() const noexcept { return m_best_epoch; }
    int epochs_seen() const noexcept { return m_epochs; }

private:
    int m_patience;
    double m_min_delta;
    double m_best;
    int m_best_epoch = 0;
    int m_bad_epochs = 0;
    int m_epochs = 0;
};

struct FoldSplit {
    std::vector<std::size_t> train; // indices into the dataset
    std::vector<std::size_t> val;
};

/// Seeded shuffle, then k contiguous validation blocks whose sizes differ
/// by at most one.
std::vector<FoldSplit> split_folds(std::size_t dataset_size, int k, std::uint64_t seed);

struct EpochRecord {
    int epoch = 0;          // 1-based
    double train_loss = 0.0; // RMSE over the epoch's pre-update predictions
    double val_rmse = 0.0;   // fraction, not percent
};

struct FoldResult {
    int fold = 0;
    BackendParams best;
    double best_val_rmse = 0.0;
    int best_epoch = 0;
    int stopped_epoch = 0;
    std::vector<EpochRecord> history;
};

/// RMSE (fraction) of the model over a labeled set.
double dataset_rmse(std::span<const ExcerptFeatures* const> data, const BackendParams& params,
                    Mode mode);

FoldResult train_fold(std::span<const ExcerptFeatures* const> train,
                      std::span<const ExcerptFeatures* const> val, const ModelConfig& model,
                      const TrainConfig& config, Mode mode, int fold_index = 0);

/// Trains fold `fold_index` of the seeded k-fold split of `dataset`.
FoldResult train_single_fold(std::span<const ExcerptFeatures> dataset, int fold_index,
                             const ModelConfig& model, const TrainConfig& config, Mode mode);

/// Runs every fold; `parallel_folds` > 1 trains folds on worker threads.
/// Results are identical regardless of parallelism.
std::vector<FoldResult> kfold_train(std::span<const ExcerptFeatures> dataset,
                                    const ModelConfig& model, const TrainConfig& config,
                                    Mode mode, int parallel_folds = 1);

/// Writes fold{i:02}.lwpz checkpoints and history.csv into `dir`.
void write_run(const std::vector<FoldResult>& results, const std::filesystem::path& dir);
void write_history(const std::vector<FoldResult>& results, std::ostream& out);

} // namespace liwhiz
