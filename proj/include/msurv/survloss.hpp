#pragma once

#include <vector>

#include "msurv/common.hpp"

namespace msurv {

/// One batch of model outputs paired with outcomes. times are in days,
/// events true where death was observed.
struct BatchOutcome {
    std::vector<double> scores;
    std::vector<double> times;
    std::vector<bool> events;

    std::size_t size() const { return scores.size(); }
    void validate() const;
};

/// Cox negative log partial likelihood, Breslow ties, risk sets inclusive
/// (T_j >= T_i). Log-sum-exp uses max subtraction. Throws ContractError when
/// the batch contains no observed events.
double cox_nll(const BatchOutcome& batch);

/// Analytic gradient of cox_nll with respect to the scores.
std::vector<double> cox_nll_grad(const BatchOutcome& batch);

}  // namespace msurv
