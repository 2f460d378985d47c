#include "msurv/survloss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace msurv {

void BatchOutcome::validate() const {
    if (scores.empty()) throw ContractError("empty batch");
    if (times.size() != scores.size() || events.size() != scores.size()) {
        throw ContractError("batch field lengths differ");
    }
    for (double t : times) {
        if (!(t >= 0.0)) throw ContractError("negative or NaN survival time in batch");
    }
}

namespace {

std::size_t count_events(const BatchOutcome& b) {
    return static_cast<std::size_t>(std::count(b.events.begin(), b.events.end(), true));
}

struct TieBlock {
    std::size_t begin, end;  // range in the descending-time index order
    std::size_t d;           // events at this time
    double risk_sum;         // sum of exp(y - max_y) over {j : T_j >= t}
};

// Indices sorted by descending time plus per-tie-block risk sums.
void build_blocks(const BatchOutcome& batch, double max_y, std::vector<std::size_t>& idx,
                  std::vector<TieBlock>& blocks) {
    const std::size_t n = batch.size();
    idx.resize(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        if (batch.times[a] != batch.times[b]) return batch.times[a] > batch.times[b];
        return a < b;
    });
    double risk_sum = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        const double t = batch.times[idx[i]];
        std::size_t d = 0;
        while (j < n && batch.times[idx[j]] == t) {
            risk_sum += std::exp(batch.scores[idx[j]] - max_y);
            if (batch.events[idx[j]]) ++d;
            ++j;
        }
        blocks.push_back({i, j, d, risk_sum});
        i = j;
    }
}

}  // namespace

double cox_nll(const BatchOutcome& batch) {
    batch.validate();
    const std::size_t n_events = count_events(batch);
    if (n_events == 0) throw ContractError("no observed events in batch");

    const double max_y = *std::max_element(batch.scores.begin(), batch.scores.end());
    std::vector<std::size_t> idx;
    std::vector<TieBlock> blocks;
    build_blocks(batch, max_y, idx, blocks);

    // Breslow ties: every event in a tie block shares the block's risk set.
    double loss = 0.0;
    for (const TieBlock& b : blocks) {
        if (b.d == 0) continue;
        const double lse = max_y + std::log(b.risk_sum);
        for (std::size_t k = b.begin; k < b.end; ++k) {
            if (batch.events[idx[k]]) loss -= batch.scores[idx[k]] - lse;
        }
    }
    return loss / static_cast<double>(n_events);
}

std::vector<double> cox_nll_grad(const BatchOutcome& batch) {
    batch.validate();
    const std::size_t n = batch.size();
    const std::size_t n_events = count_events(batch);
    if (n_events == 0) throw ContractError("no observed events in batch");

    const double max_y = *std::max_element(batch.scores.begin(), batch.scores.end());
    std::vector<std::size_t> idx;
    std::vector<TieBlock> blocks;
    build_blocks(batch, max_y, idx, blocks);

    // dL/dy_k = -(1/N_ob) * (C_k - exp(y_k) * W(T_k)) where
    // W(T_k) = sum over event times T_i <= T_k of d_i / risk_sum(T_i).
    // Blocks are in descending time order, so accumulate W back to front.
    std::vector<double> grad(n, 0.0);
    double w = 0.0;
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
        if (it->d > 0) w += static_cast<double>(it->d) / it->risk_sum;
        for (std::size_t k = it->begin; k < it->end; ++k) grad[idx[k]] = w;
    }
    for (std::size_t k = 0; k < n; ++k) {
        const double pi_k = std::exp(batch.scores[k] - max_y) * grad[k];
        const double c_k = batch.events[k] ? 1.0 : 0.0;
        grad[k] = -(c_k - pi_k) / static_cast<double>(n_events);
    }
    return grad;
}

}  // namespace msurv
