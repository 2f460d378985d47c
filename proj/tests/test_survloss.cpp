#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "msurv/graph.hpp"
#include "msurv/rng.hpp"
#include "msurv/survloss.hpp"
#include "testutil.hpp"

using namespace msurv;

namespace {

// Direct double-loop transcription of the negative log partial likelihood,
// independent of the streaming implementation under test.
double cox_nll_bruteforce(const BatchOutcome& b) {
    const std::size_t n = b.size();
    double loss = 0.0;
    std::size_t n_events = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!b.events[i]) continue;
        ++n_events;
        double denom = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            if (b.times[j] >= b.times[i]) denom += std::exp(b.scores[j]);
        }
        loss -= b.scores[i] - std::log(denom);
    }
    return loss / static_cast<double>(n_events);
}

BatchOutcome random_batch(Rng& rng, std::size_t n, bool allow_ties = true) {
    BatchOutcome b;
    for (std::size_t i = 0; i < n; ++i) {
        b.scores.push_back(rng.normal(0.0, 1.5));
        double t = allow_ties && rng.uniform() < 0.3 ? static_cast<double>(1 + rng.below(4))
                                                     : rng.exponential(0.1);
        b.times.push_back(t);
        b.events.push_back(rng.uniform() < 0.7);
    }
    if (std::none_of(b.events.begin(), b.events.end(), [](bool e) { return e; })) {
        b.events[0] = true;
    }
    return b;
}

}  // namespace

TEST_CASE("single event batch has zero loss") {
    BatchOutcome b{{1.73}, {12.0}, {true}};
    CHECK(cox_nll(b) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("two-event analytic example") {
    BatchOutcome b{{0.0, 0.0}, {1.0, 2.0}, {true, true}};
    CHECK(cox_nll(b) == doctest::Approx(std::log(2.0) / 2.0).epsilon(1e-12));
    auto g = cox_nll_grad(b);
    CHECK(g[0] == doctest::Approx(-0.25).epsilon(1e-12));
    CHECK(g[1] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("zero-event batches are rejected") {
    BatchOutcome b{{0.1, 0.2}, {1.0, 2.0}, {false, false}};
    CHECK_THROWS_WITH_AS(cox_nll(b), doctest::Contains("no observed events"), ContractError);
    CHECK_THROWS_AS(cox_nll_grad(b), ContractError);
}

TEST_CASE("matches brute-force double loop on 500 random batches with ties") {
    Rng rng(101);
    for (int trial = 0; trial < 500; ++trial) {
        auto b = random_batch(rng, 2 + rng.below(19));
        CHECK(cox_nll(b) == doctest::Approx(cox_nll_bruteforce(b)).epsilon(1e-12));
    }
}

TEST_CASE("shift invariance") {
    Rng rng(103);
    for (int trial = 0; trial < 50; ++trial) {
        auto b = random_batch(rng, 2 + rng.below(15));
        const double base = cox_nll(b);
        auto gbase = cox_nll_grad(b);
        BatchOutcome shifted = b;
        const double c = rng.normal(0.0, 5.0);
        for (double& y : shifted.scores) y += c;
        CHECK(cox_nll(shifted) == doctest::Approx(base).epsilon(1e-12));
        auto gshift = cox_nll_grad(shifted);
        for (std::size_t i = 0; i < gbase.size(); ++i) {
            CHECK(gshift[i] == doctest::Approx(gbase[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("gradient matches finite differences on 50 random batches") {
    Rng rng(107);
    for (int trial = 0; trial < 50; ++trial) {
        auto b = random_batch(rng, 2 + rng.below(12));
        auto grad = cox_nll_grad(b);
        for (std::size_t k = 0; k < b.size(); ++k) {
            auto f = [&]() { return cox_nll(b); };
            const double fd = test::fd_partial(f, b.scores[k]);
            // agreement within 1e-6 at unit scale
            CHECK(std::abs(fd - grad[k]) <=
                  1e-6 * std::max({1.0, std::abs(fd), std::abs(grad[k])}));
        }
    }
}

TEST_CASE("permutation equivariance") {
    Rng rng(109);
    auto b = random_batch(rng, 10);
    auto g = cox_nll_grad(b);
    auto perm = rng.permutation(10);
    BatchOutcome p;
    for (auto i : perm) {
        p.scores.push_back(b.scores[i]);
        p.times.push_back(b.times[i]);
        p.events.push_back(b.events[i]);
    }
    auto gp = cox_nll_grad(p);
    for (std::size_t k = 0; k < perm.size(); ++k) {
        CHECK(gp[k] == doctest::Approx(g[perm[k]]).epsilon(1e-12));
    }
}

TEST_CASE("full-batch gradient descent decreases the loss monotonically") {
    Rng rng(113);
    auto b = random_batch(rng, 16);
    double prev = cox_nll(b);
    for (int step = 0; step < 50; ++step) {
        auto g = cox_nll_grad(b);
        for (std::size_t i = 0; i < b.size(); ++i) b.scores[i] -= 0.5 * g[i];
        const double cur = cox_nll(b);
        CHECK(cur <= prev + 1e-12);
        prev = cur;
    }
}

TEST_CASE("graph cox_loss node agrees with the standalone functions") {
    Rng rng(127);
    auto b = random_batch(rng, 12);
    Params params;
    params.add("y", Tensor(12, 1, b.scores));
    Graph g;
    NodeId loss = g.cox_loss(g.param(params, "y"), b.times, b.events);
    CHECK(g.value(loss)[0] == doctest::Approx(cox_nll(b)).epsilon(1e-14));
    GradMap grads = g.backward(loss);
    auto analytic = cox_nll_grad(b);
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        CHECK(grads.at("y")[i] == doctest::Approx(analytic[i]).epsilon(1e-14));
    }

    auto build = [&](Graph& gr) {
        return gr.cox_loss(gr.param(params, "y"), b.times, b.events);
    };
    auto report = check_gradients(build, params, 1e-6);
    CHECK(report.all_pass);
}
