#pragma once

#include <optional>
#include <string>
#include <vector>

#include "msurv/common.hpp"

namespace msurv {

/// Right-continuous product-limit step function. survival[k] is the value of
/// S at and after times[k] (until the next step); S is 1 before times[0].
struct SurvivalCurve {
    std::vector<double> times;     // ascending, distinct observed times
    std::vector<double> survival;  // nonincreasing, in [0, 1]
    std::vector<std::size_t> at_risk;
    std::vector<std::size_t> events;  // events at each time (censorings for G)

    double at(double t) const;        // S(t)
    double before(double t) const;    // left limit S(t-)
};

struct LogRankResult {
    double chi_square = 0.0;
    double p_value = 1.0;
};

struct TdAucResult {
    double mean = 0.0;
    std::vector<double> horizons;         // evaluated horizons
    std::vector<double> values;           // AUC per evaluated horizon
    std::vector<std::string> warnings;    // skipped horizons
};

/// Discrimination scores for one evaluation split.
struct MetricsReport {
    int fold = -1;
    std::size_t n = 0;
    std::size_t n_events = 0;
    double harrell = 0.0;
    double uno = 0.0;
    TdAucResult td_auc;
};

/// Harrell concordance. Comparable pairs have T_i < T_j with C_i = 1; tied
/// scores count 0.5. Throws MetricError when no pair is comparable.
double harrell_c(const std::vector<double>& scores, const std::vector<double>& times,
                 const std::vector<bool>& events);

/// Kaplan-Meier product-limit estimate of the survival function.
SurvivalCurve km_estimate(const std::vector<double>& times, const std::vector<bool>& events);

/// Censoring survival function G: the same estimator with the roles of event
/// and censoring swapped.
SurvivalCurve km_censoring(const std::vector<double>& times, const std::vector<bool>& events);

/// Uno's IPCW concordance. G is estimated on the same data; weights are
/// 1/G(T_i-)^2. tau defaults to the largest event time when not given.
double uno_c(const std::vector<double>& scores, const std::vector<double>& times,
             const std::vector<bool>& events, std::optional<double> tau = std::nullopt);

/// IPCW cumulative/dynamic AUC at one horizon: cases have T_i <= t with an
/// event, controls have T_j > t; case weight 1/G(T_i-).
double cumulative_dynamic_auc(const std::vector<double>& scores, const std::vector<double>& times,
                              const std::vector<bool>& events, double horizon);

/// Mean cumulative/dynamic AUC over the 25th/50th/75th percentiles of the
/// observed event times. Degenerate horizons are skipped with a warning; all
/// horizons degenerate is an error.
TdAucResult td_auc_mean(const std::vector<double>& scores, const std::vector<double>& times,
                        const std::vector<bool>& events);

/// Two-group log-rank test; p-value from the chi-square distribution with one
/// degree of freedom.
LogRankResult logrank_test(const std::vector<double>& times_a, const std::vector<bool>& events_a,
                           const std::vector<double>& times_b, const std::vector<bool>& events_b);

/// Scans score percentiles 10..90 (1% steps, both sides kept >= 10% of the
/// cohort) and returns the cutoff minimizing the log-rank p between the
/// resulting groups; ties break toward the median score. High risk is
/// score > cutoff.
double optimal_threshold(const std::vector<double>& scores, const std::vector<double>& times,
                         const std::vector<bool>& events);

/// Convenience bundle for one evaluation split.
MetricsReport evaluate_split(const std::vector<double>& scores, const std::vector<double>& times,
                             const std::vector<bool>& events, int fold = -1);

/// Linear-interpolation percentile (p in [0, 100]) of a sample.
double percentile(std::vector<double> sorted_or_not, double p);

/// Upper tail of the chi-square distribution via the regularized incomplete
/// gamma function Q(df/2, x/2).
double chi_square_sf(double x, double df);

}  // namespace msurv
