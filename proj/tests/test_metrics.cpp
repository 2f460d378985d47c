#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "msurv/metrics.hpp"
#include "msurv/rng.hpp"

using namespace msurv;

namespace {

struct Instance {
    std::vector<double> scores, times;
    std::vector<bool> events;
};

Instance random_instance(Rng& rng, std::size_t n, double censor_frac = 0.35,
                         double tie_frac = 0.25) {
    Instance x;
    for (std::size_t i = 0; i < n; ++i) {
        x.scores.push_back(rng.uniform() < 0.1 ? 0.5 : rng.normal());
        x.times.push_back(rng.uniform() < tie_frac ? static_cast<double>(1 + rng.below(5))
                                                   : rng.exponential(0.2));
        x.events.push_back(rng.uniform() > censor_frac);
    }
    if (std::none_of(x.events.begin(), x.events.end(), [](bool e) { return e; })) {
        x.events[0] = true;
    }
    return x;
}

// Independent pair-enumeration oracle for Harrell's C.
double harrell_oracle(const Instance& x) {
    double conc = 0.0, total = 0.0;
    for (std::size_t i = 0; i < x.scores.size(); ++i) {
        for (std::size_t j = 0; j < x.scores.size(); ++j) {
            if (i == j || !x.events[i] || !(x.times[i] < x.times[j])) continue;
            total += 1.0;
            if (x.scores[i] > x.scores[j]) conc += 1.0;
            if (x.scores[i] == x.scores[j]) conc += 0.5;
        }
    }
    return conc / total;
}

// Product-limit of the censoring distribution evaluated at t-, built directly
// from the definition.
double g_before_oracle(const Instance& x, double t) {
    std::vector<double> distinct;
    for (double ti : x.times) {
        if (ti < t) distinct.push_back(ti);
    }
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    double g = 1.0;
    for (double tk : distinct) {
        std::size_t at_risk = 0, censored = 0;
        for (std::size_t j = 0; j < x.times.size(); ++j) {
            if (x.times[j] >= tk) ++at_risk;
            if (x.times[j] == tk && !x.events[j]) ++censored;
        }
        g *= 1.0 - static_cast<double>(censored) / static_cast<double>(at_risk);
    }
    return g;
}

double uno_oracle(const Instance& x, double tau) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.scores.size(); ++i) {
        if (!x.events[i] || x.times[i] > tau) continue;
        const double g = g_before_oracle(x, x.times[i]);
        const double w = 1.0 / (g * g);
        for (std::size_t j = 0; j < x.scores.size(); ++j) {
            if (!(x.times[i] < x.times[j])) continue;
            den += w;
            if (x.scores[i] > x.scores[j]) num += w;
            if (x.scores[i] == x.scores[j]) num += 0.5 * w;
        }
    }
    return num / den;
}

double auc_oracle(const Instance& x, double horizon) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < x.scores.size(); ++i) {
        if (!x.events[i] || x.times[i] > horizon) continue;
        const double w = 1.0 / g_before_oracle(x, x.times[i]);
        for (std::size_t j = 0; j < x.scores.size(); ++j) {
            if (x.times[j] <= horizon) continue;
            den += w;
            if (x.scores[i] > x.scores[j]) num += w;
            if (x.scores[i] == x.scores[j]) num += 0.5 * w;
        }
    }
    return num / den;
}

}  // namespace

TEST_CASE("harrell perfect ranking and tie rule") {
    std::vector<double> times{1, 2, 3, 4};
    std::vector<bool> events{true, true, true, true};
    CHECK(harrell_c({4, 3, 2, 1}, times, events) == 1.0);
    CHECK(harrell_c({1, 2, 3, 4}, times, events) == 0.0);
    CHECK(harrell_c({7, 7, 7, 7}, times, events) == 0.5);
}

TEST_CASE("harrell throws without comparable pairs") {
    CHECK_THROWS_AS(harrell_c({1, 2}, {5, 5}, {true, true}), MetricError);
    CHECK_THROWS_AS(harrell_c({1, 2}, {1, 2}, {false, false}), MetricError);
}

TEST_CASE("harrell matches pair oracle on random censored instances") {
    Rng rng(401);
    for (int trial = 0; trial < 200; ++trial) {
        auto x = random_instance(rng, 5 + rng.below(46));
        double oracle;
        try {
            oracle = harrell_oracle(x);
        } catch (...) {
            continue;
        }
        if (std::isnan(oracle)) continue;
        CHECK(harrell_c(x.scores, x.times, x.events) == oracle);
    }
}

TEST_CASE("km hand-computed product-limit example") {
    auto s = km_estimate({1, 2, 3}, {true, false, true});
    CHECK(s.at(1.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(s.at(2.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(s.at(2.9) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(s.at(3.0) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(s.at(0.5) == 1.0);
    CHECK(s.before(1.0) == 1.0);
    CHECK(s.before(3.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("km degenerate cases") {
    auto all_censored = km_estimate({1, 2, 3}, {false, false, false});
    for (double v : all_censored.survival) CHECK(v == 1.0);

    // no censoring: S(t) equals the empirical fraction strictly beyond t
    Rng rng(402);
    std::vector<double> times;
    for (int i = 0; i < 40; ++i) times.push_back(rng.exponential(0.1));
    auto s = km_estimate(times, std::vector<bool>(40, true));
    for (double t : times) {
        const double frac =
            static_cast<double>(std::count_if(times.begin(), times.end(),
                                              [&](double u) { return u > t; })) /
            40.0;
        CHECK(s.at(t) == doctest::Approx(frac).epsilon(1e-12));
    }
}

TEST_CASE("uno equals harrell exactly without censoring") {
    Rng rng(403);
    for (int trial = 0; trial < 30; ++trial) {
        auto x = random_instance(rng, 4 + rng.below(30), /*censor_frac=*/0.0);
        CHECK(uno_c(x.scores, x.times, x.events) == harrell_c(x.scores, x.times, x.events));
    }
}

TEST_CASE("uno perfect ranking with censoring") {
    std::vector<double> times{1, 2, 3, 4, 5, 6};
    std::vector<bool> events{true, false, true, true, false, true};
    std::vector<double> scores{6, 5, 4, 3, 2, 1};
    CHECK(uno_c(scores, times, events) == 1.0);
}

TEST_CASE("uno matches IPCW double-loop oracle") {
    Rng rng(405);
    for (int trial = 0; trial < 200; ++trial) {
        auto x = random_instance(rng, 5 + rng.below(56));
        double tau = -1;
        for (std::size_t i = 0; i < x.times.size(); ++i) {
            if (x.events[i]) tau = std::max(tau, x.times[i]);
        }
        double oracle;
        try {
            oracle = uno_oracle(x, tau);
        } catch (...) {
            continue;
        }
        if (std::isnan(oracle) || std::isinf(oracle)) continue;
        double got;
        try {
            got = uno_c(x.scores, x.times, x.events);
        } catch (const MetricError&) {
            continue;  // oracle hit a G=0 weight as well; both undefined
        }
        CHECK(got == doctest::Approx(oracle).epsilon(1e-12));
    }
}

TEST_CASE("cumulative dynamic auc basics and oracle") {
    std::vector<double> times{1, 2, 3, 4, 5, 6};
    std::vector<bool> events{true, true, true, false, false, false};
    CHECK(cumulative_dynamic_auc({6, 5, 4, 3, 2, 1}, times, events, 3.0) == 1.0);
    CHECK(cumulative_dynamic_auc({1, 1, 1, 1, 1, 1}, times, events, 3.0) == 0.5);

    Rng rng(407);
    int checked = 0;
    for (int trial = 0; trial < 200; ++trial) {
        auto x = random_instance(rng, 5 + rng.below(56));
        std::vector<double> etimes;
        for (std::size_t i = 0; i < x.times.size(); ++i) {
            if (x.events[i]) etimes.push_back(x.times[i]);
        }
        if (etimes.empty()) continue;
        const double horizon = percentile(etimes, 50.0);
        double oracle;
        try {
            oracle = auc_oracle(x, horizon);
        } catch (...) {
            continue;
        }
        if (std::isnan(oracle) || std::isinf(oracle)) continue;
        double got;
        try {
            got = cumulative_dynamic_auc(x.scores, x.times, x.events, horizon);
        } catch (const MetricError&) {
            continue;
        }
        CHECK(got == doctest::Approx(oracle).epsilon(1e-12));
        ++checked;
    }
    CHECK(checked > 100);
}

TEST_CASE("td auc mean skips degenerate horizons with warnings") {
    // max time is an event: the 75th percentile horizon has no controls only
    // when every later subject is gone; construct exactly that.
    std::vector<double> times{1, 2, 3, 4};
    std::vector<bool> events{true, true, true, true};
    auto r = td_auc_mean({4, 3, 2, 1}, times, events);
    CHECK(r.values.size() + r.warnings.size() >= 3);
    CHECK(r.mean == doctest::Approx(1.0));
}

TEST_CASE("metric invariance under strictly increasing transforms") {
    Rng rng(409);
    auto x = random_instance(rng, 40);
    auto transform = [](double s) { return std::exp(0.7 * s) + 3.0; };
    std::vector<double> warped(x.scores.size());
    std::transform(x.scores.begin(), x.scores.end(), warped.begin(), transform);

    CHECK(harrell_c(warped, x.times, x.events) == harrell_c(x.scores, x.times, x.events));
    CHECK(uno_c(warped, x.times, x.events) ==
          doctest::Approx(uno_c(x.scores, x.times, x.events)).epsilon(1e-12));
    auto a = td_auc_mean(x.scores, x.times, x.events);
    auto b = td_auc_mean(warped, x.times, x.events);
    CHECK(a.mean == doctest::Approx(b.mean).epsilon(1e-12));
}

TEST_CASE("logrank identical groups") {
    std::vector<double> t{1, 2, 3, 4};
    std::vector<bool> e{true, false, true, true};
    auto r = logrank_test(t, e, t, e);
    CHECK(r.chi_square == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.p_value == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("logrank hand-computed O/E/Var table") {
    // A events at 1,2,3; B events at 4,5,6.
    // t=1: O-E = 1-3/6,   V = (3/6)(3/6)(5/5)
    // t=2: O-E = 1-2/5,   V = (2/5)(3/5)(4/4)
    // t=3: O-E = 1-1/4,   V = (1/4)(3/4)(3/3)
    // chi2 = 1.85^2 / 0.6775
    auto r = logrank_test({1, 2, 3}, {true, true, true}, {4, 5, 6}, {true, true, true});
    CHECK(r.chi_square == doctest::Approx(1.85 * 1.85 / 0.6775).epsilon(1e-12));

    auto rsym = logrank_test({4, 5, 6}, {true, true, true}, {1, 2, 3}, {true, true, true});
    CHECK(rsym.chi_square == doctest::Approx(r.chi_square).epsilon(1e-12));
}

TEST_CASE("chi-square tail reference point") {
    CHECK(chi_square_sf(3.841, 1.0) == doctest::Approx(0.05).epsilon(1e-3 / 0.05));
    CHECK(std::abs(chi_square_sf(3.841, 1.0) - 0.05) < 1e-3);
}

TEST_CASE("logrank with no events throws") {
    CHECK_THROWS_AS(logrank_test({1, 2}, {false, false}, {3, 4}, {false, false}), MetricError);
}

TEST_CASE("optimal threshold separates two planted clusters") {
    Rng rng(411);
    std::vector<double> scores, times;
    std::vector<bool> events;
    for (int i = 0; i < 60; ++i) {
        const bool high = i % 2 == 0;
        scores.push_back(high ? rng.normal(3.0, 0.2) : rng.normal(-3.0, 0.2));
        times.push_back(rng.exponential(high ? 1.0 : 0.05));
        events.push_back(rng.uniform() < 0.8);
    }
    const double cut = optimal_threshold(scores, times, events);
    CHECK(cut > -2.0);
    CHECK(cut < 2.0);

    // optimality versus the median candidate
    const double median = percentile(scores, 50.0);
    auto split_p = [&](double c) {
        std::vector<double> tl, th;
        std::vector<bool> el, eh;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] > c) {
                th.push_back(times[i]);
                eh.push_back(events[i]);
            } else {
                tl.push_back(times[i]);
                el.push_back(events[i]);
            }
        }
        return logrank_test(tl, el, th, eh).p_value;
    };
    CHECK(split_p(cut) <= split_p(median) + 1e-15);
}

TEST_CASE("optimal threshold rejects constant scores and small cohorts") {
    std::vector<double> s(20, 1.0), t(20, 5.0);
    std::vector<bool> e(20, true);
    CHECK_THROWS_AS(optimal_threshold(s, t, e), MetricError);
    CHECK_THROWS_AS(optimal_threshold({1, 2, 3}, {1, 2, 3}, {true, true, true}), ContractError);
}
