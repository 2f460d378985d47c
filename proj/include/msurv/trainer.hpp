#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "msurv/cohort.hpp"
#include "msurv/fusion.hpp"
#include "msurv/metrics.hpp"

namespace msurv {

struct TrainConfig {
    std::size_t max_epochs = 500;
    std::size_t early_stop_patience = 50;
    std::size_t batch_size = 32;
    double weight_decay = 1e-5;
    double eta_min = 1e-8;
    double eta_max = 1e-5;
    std::size_t warmup_epochs = 50;
    std::size_t plateau_patience = 20;
    std::size_t decay_steps = 12;
    double encoder_lr_factor = 0.1;
    double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;
    std::uint64_t seed = 0;

    void validate() const;
    static TrainConfig from_config(const KvConfig& cfg);
    void to_config(KvConfig& cfg) const;
};

/// Learning-rate schedule bookkeeping: warmup, plateau detection, one-shot
/// geometric decay. Decay, once triggered, never reverts.
struct ScheduleState {
    std::size_t epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t since_improve = 0;
    int decay_step = -1;  // -1 until the plateau detector fires
};

/// Linear warmup from eta_min to eta_max over warmup_epochs, flat at eta_max
/// until the plateau triggers, then eta_max * (eta_min/eta_max)^(k/steps)
/// per decay epoch k, pinned to exactly eta_min from the final step onward.
double lr_at(const ScheduleState& state, const TrainConfig& config);

/// Per-parameter learning-rate multiplier (differential learning rates).
using LrScale = std::function<double(const std::string&)>;

struct AdamState {
    struct Moments {
        Tensor m, v;
    };
    std::map<std::string, Moments> moments;
    std::size_t t = 0;
};

/// Decoupled-weight-decay Adam update over every gradient entry. Frozen
/// parameters never appear in the gradient map and are untouched.
void adamw_step(Params& params, const GradMap& grads, double lr, const TrainConfig& config,
                AdamState& state, const LrScale& lr_scale = nullptr);

/// Builds batch index lists (seeded shuffle) such that every batch contains
/// at least one event; throws ConfigError when the rows carry no events.
std::vector<std::vector<std::size_t>> stratified_batches(const std::vector<std::size_t>& rows,
                                                         const std::vector<bool>& events,
                                                         std::size_t batch_size, Rng& rng);

struct EpochLog {
    std::size_t epoch;
    double train_loss, val_loss, lr;
};

struct TrainResult {
    std::vector<EpochLog> log;
    double best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
};

/// Batch forward: builds the score column (|rows| x 1) for the given cohort
/// rows inside the given graph.
using BatchForward = std::function<NodeId(Graph&, const std::vector<std::size_t>&)>;

/// Generic Cox training loop: seeded shuffling, stratified batches, AdamW,
/// warmup/plateau/decay schedule, early stopping on validation loss. Returns
/// with `params` holding the best-validation parameters.
TrainResult train_fold(const BatchForward& forward, Params& params, const Cohort& cohort,
                       const std::vector<std::size_t>& train_rows,
                       const std::vector<std::size_t>& val_rows, const TrainConfig& config,
                       std::uint64_t seed, const LrScale& lr_scale = nullptr);

void write_epoch_log(const std::vector<EpochLog>& log, const std::string& path);

// ---- cross-validation driver ----

struct RotationResult {
    int rotation = 0;
    MetricsReport metrics;
    std::vector<std::size_t> test_rows;
    std::vector<double> test_scores;             // aligned with test_rows
    Params params;                               // trained parameters
    Params pretrained;                           // after stage 1 (fused modes)
    std::vector<EpochLog> train_log;             // main stage
    std::map<std::string, std::vector<EpochLog>> pretrain_logs;
    // late fusion only: per-modality test metrics over the patients carrying
    // that modality
    std::map<std::string, MetricsReport> unimodal_metrics;
};

struct CvSummary {
    double mean = 0.0, sem = 0.0;
};

struct CvResult {
    std::vector<RotationResult> rotations;
    std::vector<double> pooled_scores;  // by patient index; NaN when never scored
    std::vector<int> pooled_fold;       // -1 when never scored
    CvSummary harrell, uno, td_auc;
};

struct CvOptions {
    int jobs = 1;
    /// When set, fold checkpoints land here as fold<r>.ckpt plus the stage-1
    /// snapshot fold<r>.pre.ckpt.
    std::string save_dir;
    /// When set and fold<r>.pre.ckpt exists there, stage-1 unimodal training
    /// is replaced by loading that checkpoint.
    std::string pretrained_dir;
};

/// Full cross-validation: per rotation, fit preprocessing on the training
/// rows only, train the model (two-stage for early/intermediate fusion:
/// unimodal pre-training then fusion training with the mode's freezing and
/// differential learning rates), and evaluate the held-out test fold.
CvResult run_cv(const Cohort& cohort, const FusionSpec& spec, const TrainConfig& config,
                const FoldPlan& plan, const CvOptions& options = {});

/// Evaluates an already-trained rotation model on arbitrary rows. Late
/// fusion rank-sums the unimodal scores over exactly these rows, completing
/// absent modalities with their median rank.
std::vector<double> score_rows(const FusionModel& model, Params& params, const Cohort& cohort,
                               const std::vector<std::size_t>& rows);

/// Preprocessing used by run_cv, exposed for evaluation paths: standardizes
/// every block on statistics fitted from the given rows.
Cohort preprocess_for_rows(const Cohort& cohort, const std::vector<std::size_t>& fit_rows,
                           bool ordinal_standardize = true);

CvSummary summarize(const std::vector<double>& fold_values);

}  // namespace msurv
