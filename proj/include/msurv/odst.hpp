#pragma once

#include <string>

#include "msurv/graph.hpp"
#include "msurv/rng.hpp"

namespace msurv {

struct OdstConfig {
    std::size_t n_trees = 8;
    std::size_t depth = 4;
    std::size_t out_dim = 1;

    void validate() const;
    std::size_t n_leaves() const { return std::size_t{1} << depth; }
};

/// Oblivious differentiable decision tree ensemble with a final fully
/// connected projection to a scalar risk. One soft split rule per depth:
/// the selected feature is a softmax-weighted combination of the input, the
/// gate a sigmoid at a learnable threshold and temperature.
class OdstHead {
public:
    static OdstHead create(Params& params, const std::string& prefix, std::size_t in_dim,
                           const OdstConfig& config, Rng& rng);
    static OdstHead attach(const std::string& prefix, std::size_t in_dim,
                           const OdstConfig& config);

    struct Bound {
        NodeId sel, tau, logt, leaf, fcw, fcb;
    };
    Bound bind(Graph& g, Params& params) const;

    /// Ensemble output: batch x (n_trees * out_dim).
    NodeId forward(Graph& g, const Bound& b, NodeId h) const;

    /// Scalar risk per row: FC(forward(h)), batch x 1.
    NodeId risk(Graph& g, const Bound& b, NodeId h) const;

    /// Sets each split threshold to a seeded random quantile of the selected
    /// feature over a data batch (rows x in_dim); selection logits are still
    /// uniform at this point. Called once before the first optimizer step.
    void init_thresholds(Params& params, const Tensor& h_batch, Rng& rng) const;

    const OdstConfig& config() const { return config_; }
    std::size_t in_dim() const { return in_dim_; }
    const std::string& prefix() const { return prefix_; }

private:
    OdstConfig config_;
    std::string prefix_;
    std::size_t in_dim_ = 0;
};

}  // namespace msurv
