#include "msurv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace msurv {

namespace {

void check_lengths(const std::vector<double>& scores, const std::vector<double>& times,
                   const std::vector<bool>& events) {
    if (times.size() != scores.size() || events.size() != scores.size() || scores.empty()) {
        throw ContractError("scores/times/events lengths differ or are empty");
    }
}

// Regularized lower incomplete gamma P(a, x) by series expansion.
double gamma_p_series(double a, double x) {
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int i = 0; i < 500; ++i) {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * 1e-15) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x) by continued fraction.
double gamma_q_cf(double a, double x) {
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 500; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-15) break;
    }
    return std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
}

double gamma_q(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw ContractError("gamma_q domain error");
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
    return gamma_q_cf(a, x);
}

}  // namespace

double chi_square_sf(double x, double df) { return gamma_q(df / 2.0, x / 2.0); }

double percentile(std::vector<double> v, double p) {
    if (v.empty()) throw ContractError("percentile of empty sample");
    std::sort(v.begin(), v.end());
    const double idx = (p / 100.0) * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(idx));
    const std::size_t hi = static_cast<std::size_t>(std::ceil(idx));
    const double frac = idx - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

double SurvivalCurve::at(double t) const {
    // survival value at the last stored time <= t
    auto it = std::upper_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 1.0;
    return survival[static_cast<std::size_t>(it - times.begin()) - 1];
}

double SurvivalCurve::before(double t) const {
    auto it = std::lower_bound(times.begin(), times.end(), t);
    if (it == times.begin()) return 1.0;
    return survival[static_cast<std::size_t>(it - times.begin()) - 1];
}

double harrell_c(const std::vector<double>& scores, const std::vector<double>& times,
                 const std::vector<bool>& events) {
    check_lengths(scores, times, events);
    const std::size_t n = scores.size();
    double concordant = 0.0;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!events[i]) continue;
        for (std::size_t j = 0; j < n; ++j) {
            if (times[i] >= times[j]) continue;
            total += 1.0;
            if (scores[i] > scores[j]) {
                concordant += 1.0;
            } else if (scores[i] == scores[j]) {
                concordant += 0.5;
            }
        }
    }
    if (total == 0.0) throw MetricError("undefined concordance: no comparable pairs");
    return concordant / total;
}

SurvivalCurve km_estimate(const std::vector<double>& times, const std::vector<bool>& events) {
    if (times.empty() || times.size() != events.size()) {
        throw ContractError("km_estimate needs matching nonempty times/events");
    }
    std::map<double, std::pair<std::size_t, std::size_t>> by_time;  // time -> (events, total)
    for (std::size_t i = 0; i < times.size(); ++i) {
        auto& [d, m] = by_time[times[i]];
        if (events[i]) ++d;
        ++m;
    }
    SurvivalCurve curve;
    std::size_t at_risk = times.size();
    double s = 1.0;
    for (const auto& [t, dm] : by_time) {
        const auto [d, m] = dm;
        if (d > 0) s *= 1.0 - static_cast<double>(d) / static_cast<double>(at_risk);
        curve.times.push_back(t);
        curve.survival.push_back(s);
        curve.at_risk.push_back(at_risk);
        curve.events.push_back(d);
        at_risk -= m;
    }
    return curve;
}

SurvivalCurve km_censoring(const std::vector<double>& times, const std::vector<bool>& events) {
    std::vector<bool> flipped(events.size());
    for (std::size_t i = 0; i < events.size(); ++i) flipped[i] = !events[i];
    return km_estimate(times, flipped);
}

double uno_c(const std::vector<double>& scores, const std::vector<double>& times,
             const std::vector<bool>& events, std::optional<double> tau) {
    check_lengths(scores, times, events);
    const std::size_t n = scores.size();

    double tau_v;
    if (tau.has_value()) {
        tau_v = *tau;
    } else {
        tau_v = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (events[i]) tau_v = std::max(tau_v, times[i]);
        }
        if (!std::isfinite(tau_v)) throw MetricError("undefined concordance: no events");
    }

    const SurvivalCurve g = km_censoring(times, events);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!events[i] || times[i] > tau_v) continue;
        double weight = 0.0;
        bool have_weight = false;
        for (std::size_t j = 0; j < n; ++j) {
            if (times[i] >= times[j]) continue;
            if (!have_weight) {
                const double gi = g.before(times[i]);
                if (gi <= 0.0) throw MetricError("IPCW undefined: censoring survival hits zero");
                weight = 1.0 / (gi * gi);
                have_weight = true;
            }
            den += weight;
            if (scores[i] > scores[j]) {
                num += weight;
            } else if (scores[i] == scores[j]) {
                num += 0.5 * weight;
            }
        }
    }
    if (den == 0.0) throw MetricError("undefined concordance: no comparable pairs");
    return num / den;
}

double cumulative_dynamic_auc(const std::vector<double>& scores, const std::vector<double>& times,
                              const std::vector<bool>& events, double horizon) {
    check_lengths(scores, times, events);
    const std::size_t n = scores.size();

    bool any_case = false, any_control = false;
    for (std::size_t i = 0; i < n; ++i) {
        if (events[i] && times[i] <= horizon) any_case = true;
        if (times[i] > horizon) any_control = true;
    }
    if (!any_case || !any_control) {
        throw MetricError("AUC undefined at horizon: empty case or control set");
    }

    const SurvivalCurve g = km_censoring(times, events);
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!events[i] || times[i] > horizon) continue;
        const double gi = g.before(times[i]);
        if (gi <= 0.0) throw MetricError("IPCW undefined: censoring survival hits zero");
        const double w = 1.0 / gi;
        for (std::size_t j = 0; j < n; ++j) {
            if (times[j] <= horizon) continue;
            den += w;
            if (scores[i] > scores[j]) {
                num += w;
            } else if (scores[i] == scores[j]) {
                num += 0.5 * w;
            }
        }
    }
    return num / den;
}

TdAucResult td_auc_mean(const std::vector<double>& scores, const std::vector<double>& times,
                        const std::vector<bool>& events) {
    check_lengths(scores, times, events);
    std::vector<double> event_times;
    for (std::size_t i = 0; i < times.size(); ++i) {
        if (events[i]) event_times.push_back(times[i]);
    }
    if (event_times.empty()) throw MetricError("td-AUC undefined: no events");

    TdAucResult result;
    double sum = 0.0;
    for (double p : {25.0, 50.0, 75.0}) {
        const double horizon = percentile(event_times, p);
        try {
            const double auc = cumulative_dynamic_auc(scores, times, events, horizon);
            result.horizons.push_back(horizon);
            result.values.push_back(auc);
            sum += auc;
        } catch (const MetricError& e) {
            result.warnings.push_back("horizon " + std::to_string(horizon) +
                                      " skipped: " + e.what());
        }
    }
    if (result.values.empty()) throw MetricError("td-AUC undefined at every horizon");
    result.mean = sum / static_cast<double>(result.values.size());
    return result;
}

LogRankResult logrank_test(const std::vector<double>& times_a, const std::vector<bool>& events_a,
                           const std::vector<double>& times_b, const std::vector<bool>& events_b) {
    if (times_a.empty() || times_b.empty()) {
        throw ContractError("logrank needs two nonempty groups");
    }
    if (times_a.size() != events_a.size() || times_b.size() != events_b.size()) {
        throw ContractError("logrank times/events lengths differ");
    }

    struct Row {
        std::size_t da = 0, db = 0, ma = 0, mb = 0;  // events and removals per group
    };
    std::map<double, Row> rows;
    for (std::size_t i = 0; i < times_a.size(); ++i) {
        auto& r = rows[times_a[i]];
        if (events_a[i]) ++r.da;
        ++r.ma;
    }
    for (std::size_t i = 0; i < times_b.size(); ++i) {
        auto& r = rows[times_b[i]];
        if (events_b[i]) ++r.db;
        ++r.mb;
    }

    double o_minus_e = 0.0;
    double var = 0.0;
    std::size_t na = times_a.size(), nb = times_b.size();
    bool any_event = false;
    for (const auto& [t, r] : rows) {
        const double d = static_cast<double>(r.da + r.db);
        if (d > 0.0) any_event = true;
        if (d > 0.0 && na > 0 && nb > 0) {
            const double n = static_cast<double>(na + nb);
            const double ea = d * static_cast<double>(na) / n;
            o_minus_e += static_cast<double>(r.da) - ea;
            if (n > 1.0) {
                var += d * (static_cast<double>(na) / n) * (static_cast<double>(nb) / n) *
                       (n - d) / (n - 1.0);
            }
        }
        na -= r.ma;
        nb -= r.mb;
    }
    if (!any_event) throw MetricError("logrank undefined: no events");

    LogRankResult result;
    if (var > 0.0) {
        result.chi_square = o_minus_e * o_minus_e / var;
        result.p_value = chi_square_sf(result.chi_square, 1.0);
    }
    return result;
}

double optimal_threshold(const std::vector<double>& scores, const std::vector<double>& times,
                         const std::vector<bool>& events) {
    check_lengths(scores, times, events);
    const std::size_t n = scores.size();
    if (n < 10) throw ContractError("optimal_threshold needs at least 10 patients");

    const double median = percentile(scores, 50.0);
    const double min_side = 0.10 * static_cast<double>(n);

    double best_cut = 0.0;
    double best_p = std::numeric_limits<double>::infinity();
    double best_dist = std::numeric_limits<double>::infinity();
    bool found = false;
    double last_candidate = std::numeric_limits<double>::quiet_NaN();
    for (int pct = 10; pct <= 90; ++pct) {
        const double cut = percentile(scores, static_cast<double>(pct));
        if (cut == last_candidate) continue;  // duplicate split point
        last_candidate = cut;

        std::vector<double> t_lo, t_hi;
        std::vector<bool> e_lo, e_hi;
        for (std::size_t i = 0; i < n; ++i) {
            if (scores[i] > cut) {
                t_hi.push_back(times[i]);
                e_hi.push_back(events[i]);
            } else {
                t_lo.push_back(times[i]);
                e_lo.push_back(events[i]);
            }
        }
        if (static_cast<double>(t_lo.size()) < min_side ||
            static_cast<double>(t_hi.size()) < min_side) {
            continue;
        }
        double p;
        try {
            p = logrank_test(t_lo, e_lo, t_hi, e_hi).p_value;
        } catch (const MetricError&) {
            continue;
        }
        const double dist = std::abs(cut - median);
        if (p < best_p || (p == best_p && dist < best_dist)) {
            best_p = p;
            best_cut = cut;
            best_dist = dist;
            found = true;
        }
    }
    if (!found) throw MetricError("no valid cutoff: all candidate splits degenerate");
    return best_cut;
}

MetricsReport evaluate_split(const std::vector<double>& scores, const std::vector<double>& times,
                             const std::vector<bool>& events, int fold) {
    MetricsReport report;
    report.fold = fold;
    report.n = scores.size();
    report.n_events = static_cast<std::size_t>(std::count(events.begin(), events.end(), true));
    report.harrell = harrell_c(scores, times, events);
    report.uno = uno_c(scores, times, events);
    report.td_auc = td_auc_mean(scores, times, events);
    return report;
}

}  // namespace msurv
