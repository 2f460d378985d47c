#include "msurv/odst.hpp"

#include <cmath>

#include "msurv/metrics.hpp"

namespace msurv {

void OdstConfig::validate() const {
    if (n_trees == 0 || depth == 0 || out_dim == 0) {
        throw ConfigError("odst: trees, depth and out_dim must be positive");
    }
    if (depth > 10) throw ConfigError("odst: depth > 10 is not supported");
}

OdstHead OdstHead::create(Params& params, const std::string& prefix, std::size_t in_dim,
                          const OdstConfig& config, Rng& rng) {
    OdstHead head = attach(prefix, in_dim, config);
    const std::size_t td = config.n_trees * config.depth;
    // uniform selection at init; thresholds land on data quantiles later
    params.add(prefix + "sel", Tensor(td, in_dim));
    params.add(prefix + "tau", Tensor(1, td));
    params.add(prefix + "logt", Tensor(1, td));
    Tensor leaf(config.n_trees * config.n_leaves(), config.out_dim);
    for (double& v : leaf.values()) v = rng.normal(0.0, 0.1);
    params.add(prefix + "leaf", std::move(leaf));
    Tensor fcw(config.n_trees * config.out_dim, 1);
    const double std = 1.0 / std::sqrt(static_cast<double>(config.n_trees * config.out_dim));
    for (double& v : fcw.values()) v = rng.normal(0.0, std);
    params.add(prefix + "fc.w", std::move(fcw));
    params.add(prefix + "fc.b", Tensor(1, 1));
    return head;
}

OdstHead OdstHead::attach(const std::string& prefix, std::size_t in_dim,
                          const OdstConfig& config) {
    config.validate();
    if (in_dim == 0) throw ConfigError("odst: zero input dimension");
    OdstHead head;
    head.config_ = config;
    head.prefix_ = prefix;
    head.in_dim_ = in_dim;
    return head;
}

OdstHead::Bound OdstHead::bind(Graph& g, Params& params) const {
    return Bound{g.param(params, prefix_ + "sel"),  g.param(params, prefix_ + "tau"),
                 g.param(params, prefix_ + "logt"), g.param(params, prefix_ + "leaf"),
                 g.param(params, prefix_ + "fc.w"), g.param(params, prefix_ + "fc.b")};
}

NodeId OdstHead::forward(Graph& g, const Bound& b, NodeId h) const {
    const std::size_t td = config_.n_trees * config_.depth;
    const std::size_t tl = config_.n_trees * config_.n_leaves();
    if (g.value(h).cols() != in_dim_) {
        throw ContractError("odst input width " + g.value(h).shape_str() + " does not match " +
                            std::to_string(in_dim_));
    }

    // soft feature selection per (tree, depth)
    NodeId selection = g.masked_softmax(b.sel, Tensor(td, in_dim_));
    NodeId picked = g.matmul(h, g.transpose(selection));  // batch x td

    // sigmoid gate at threshold tau with temperature exp(logt)
    NodeId centered = g.add_rowvec(picked, g.scale(b.tau, -1.0));
    NodeId inv_t = g.exp(g.scale(b.logt, -1.0));
    NodeId gates = g.sigmoid(g.mul_rowvec(centered, inv_t));

    NodeId probs = g.leaf_probs(gates, config_.n_trees, config_.depth);  // batch x tl

    // per-tree response: sum over leaves of prob * leaf response
    Tensor block_sum(tl, config_.n_trees);
    for (std::size_t t = 0; t < config_.n_trees; ++t) {
        for (std::size_t l = 0; l < config_.n_leaves(); ++l) {
            block_sum(t * config_.n_leaves() + l, t) = 1.0;
        }
    }
    const NodeId block = g.input(std::move(block_sum));

    std::vector<NodeId> per_out;
    per_out.reserve(config_.out_dim);
    for (std::size_t d = 0; d < config_.out_dim; ++d) {
        NodeId leaf_col = config_.out_dim == 1 ? b.leaf : g.slice_cols(b.leaf, d, 1);
        NodeId weighted = g.mul_rowvec(probs, g.reshape(leaf_col, 1, tl));
        per_out.push_back(g.matmul(weighted, block));  // batch x n_trees
    }
    if (per_out.size() == 1) return per_out[0];
    // reorder the concatenated (out-major) columns into the tree-major layout
    // the FC projection expects
    NodeId stacked = g.concat_cols(per_out);
    Tensor perm(config_.n_trees * config_.out_dim, config_.n_trees * config_.out_dim);
    for (std::size_t d = 0; d < config_.out_dim; ++d) {
        for (std::size_t t = 0; t < config_.n_trees; ++t) {
            perm(d * config_.n_trees + t, t * config_.out_dim + d) = 1.0;
        }
    }
    return g.matmul(stacked, g.input(std::move(perm)));
}

NodeId OdstHead::risk(Graph& g, const Bound& b, NodeId h) const {
    return g.add_rowvec(g.matmul(forward(g, b, h), b.fcw), b.fcb);
}

void OdstHead::init_thresholds(Params& params, const Tensor& h_batch, Rng& rng) const {
    if (h_batch.cols() != in_dim_ || h_batch.rows() == 0) {
        throw ContractError("odst threshold init needs a nonempty batch of width " +
                            std::to_string(in_dim_));
    }
    const Tensor& sel = params.at(prefix_ + "sel");
    Tensor& tau = params.at(prefix_ + "tau");
    const std::size_t td = config_.n_trees * config_.depth;
    for (std::size_t c = 0; c < td; ++c) {
        // selected feature under the current (softmax) selection weights
        double max_logit = sel(c, 0);
        for (std::size_t f = 1; f < in_dim_; ++f) max_logit = std::max(max_logit, sel(c, f));
        double denom = 0.0;
        std::vector<double> w(in_dim_);
        for (std::size_t f = 0; f < in_dim_; ++f) {
            w[f] = std::exp(sel(c, f) - max_logit);
            denom += w[f];
        }
        std::vector<double> picked(h_batch.rows());
        for (std::size_t r = 0; r < h_batch.rows(); ++r) {
            double acc = 0.0;
            for (std::size_t f = 0; f < in_dim_; ++f) acc += h_batch(r, f) * w[f];
            picked[r] = acc / denom;
        }
        tau[c] = percentile(picked, rng.uniform(5.0, 95.0));
    }
}

}  // namespace msurv
