#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "msurv/common.hpp"
#include "msurv/tensor.hpp"

namespace msurv {

enum class FeatureKind { Numerical, Categorical, Ordinal };

struct FeatureSpec {
    FeatureKind kind = FeatureKind::Numerical;
    std::size_t cardinality = 0;  // categorical only
};

/// One modality's feature matrix with its observation structure. Values at
/// unobserved positions are carried but must never influence a computation.
struct ModalityBlock {
    std::string name;
    std::vector<FeatureSpec> features;
    Tensor values;                 // patients x features (level indices for categoricals)
    std::vector<std::uint8_t> observed;  // patients x features, row-major
    std::vector<bool> present;     // per patient; false implies full row unobserved

    std::size_t width() const { return features.size(); }
    std::size_t patients() const { return present.size(); }
    bool cell_observed(std::size_t p, std::size_t f) const {
        return observed[p * width() + f] != 0;
    }
    double missing_fraction() const;
    void validate() const;
};

struct Cohort {
    std::vector<std::string> ids;
    std::vector<double> times;   // days
    std::vector<bool> events;    // true = death observed
    std::vector<ModalityBlock> blocks;

    std::size_t n() const { return ids.size(); }
    const ModalityBlock& block(const std::string& name) const;
    ModalityBlock& block(const std::string& name);
    bool has_block(const std::string& name) const;
    void validate() const;
};

/// Stratified k-fold layout. Fold r's rotation uses fold r as test,
/// fold (r+1) mod k as validation and the rest as training.
struct FoldPlan {
    int k = 0;
    std::vector<int> assignment;  // patient -> fold

    struct Roles {
        std::vector<std::size_t> train, validation, test;
    };
    Roles roles(int rotation) const;
};

// ---- ingestion ----

struct BlockSource {
    std::string name;
    std::string csv_path;
};

/// Loads outcome plus one CSV per modality. The optional sidecar lists
/// feature kinds per block ([block] f_i = numerical | ordinal |
/// categorical <cardinality>); absent sidecar means all numerical. Empty
/// cells are unobserved; a patient id absent from a block file marks the
/// whole modality missing for that patient.
Cohort load_cohort(const std::string& outcome_path, const std::vector<BlockSource>& blocks,
                   const std::optional<std::string>& feature_spec_path = std::nullopt);

/// Writes outcome.csv, <block>.csv per modality and blocks.spec into dir.
void write_cohort(const Cohort& cohort, const std::string& dir);

// ---- synthetic cohorts ----

struct SynthModality {
    std::string name;
    std::size_t width = 4;
    std::size_t latent_lo = 0, latent_hi = 0;  // visible slice of the latent factor
    double modality_missing = 0.0;
    double feature_missing = 0.0;
    double noise_std = 0.5;
};

struct SynthSpec {
    std::size_t n = 0;
    std::size_t latent_dim = 0;
    std::vector<double> risk_weights;  // one per latent coordinate
    double interaction = 0.0;          // adds interaction * z[i] * z[j] to the risk
    std::size_t interaction_i = 0, interaction_j = 1;
    double censor_rate = 0.3;
    double base_hazard = 2e-3;  // events per day at risk 0
    std::vector<SynthModality> modalities;

    void validate() const;
};

struct SynthResult {
    Cohort cohort;
    std::vector<double> true_risk;  // oracle risk per patient
};

/// Proportional-hazards generator: exponential event times with rate
/// base_hazard * exp(risk), independent exponential censoring calibrated to
/// the target censoring rate, per-modality features as noisy linear readouts
/// of a latent factor slice. Byte-reproducible per seed.
SynthResult synth_cohort(const SynthSpec& spec, std::uint64_t seed);

// ---- splitting / preprocessing / masking ----

/// Event-stratified fold assignment; per-fold event counts are within one
/// patient of proportional. Throws ConfigError when a stratum is smaller
/// than k.
FoldPlan stratified_kfold(const Cohort& cohort, int k, std::uint64_t seed);

struct TabularTransform {
    std::vector<double> mean, stdev;       // per column
    std::vector<bool> standardized;        // false for categorical columns
    std::vector<std::string> warnings;     // zero-variance / all-missing notes
};

/// Means and standard deviations over the observed entries of the training
/// rows only. Ordinal columns are standardized unless ordinal_standardize is
/// false; categorical columns are left as level indices. Zero-variance
/// columns clamp the std to 1 with a warning.
TabularTransform fit_tabular_transform(const ModalityBlock& block,
                                       const std::vector<std::size_t>& train_rows,
                                       bool ordinal_standardize = true);

/// Applies a fitted transform to every observed cell (masks unchanged).
ModalityBlock apply_tabular_transform(const ModalityBlock& block, const TabularTransform& t);

/// Returns a copy with additional patients' modality masked until the missing
/// fraction reaches the target. Masking is monotone: a target below the
/// current fraction is a contract violation. When `rows` is given, both the
/// fraction and the candidate patients are scoped to those rows (the rest of
/// the cohort is untouched).
Cohort apply_missingness(const Cohort& cohort, const std::string& modality, double target_fraction,
                         std::uint64_t seed,
                         const std::vector<std::size_t>* rows = nullptr);

}  // namespace msurv
