#pragma once

#include <array>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "msurv/survloss.hpp"
#include "msurv/tensor.hpp"

namespace msurv {

/// Named store of learnable tensors. Frozen entries take part in forward
/// passes but never accumulate gradient and are never updated.
class Params {
public:
    struct Entry {
        Tensor value;
        bool trainable = true;
    };

    Tensor& add(const std::string& name, Tensor value, bool trainable = true);
    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    Entry& entry(const std::string& name);
    const Entry& entry(const std::string& name) const;
    Tensor& at(const std::string& name) { return entry(name).value; }
    const Tensor& at(const std::string& name) const { return entry(name).value; }
    void set_trainable(const std::string& name, bool trainable) { entry(name).trainable = trainable; }

    /// Freeze/unfreeze every entry whose name starts with the prefix.
    void set_trainable_prefix(const std::string& prefix, bool trainable);

    // Ordered iteration keeps every consumer deterministic.
    std::map<std::string, Entry>& entries() { return entries_; }
    const std::map<std::string, Entry>& entries() const { return entries_; }

private:
    std::map<std::string, Entry> entries_;
};

using GradMap = std::map<std::string, Tensor>;

using NodeId = int;

/// Reverse-mode differentiation tape. Nodes are evaluated eagerly as they are
/// built; node order is therefore a topological order and backward() walks it
/// once in reverse. A graph instance is single-threaded; independent graphs
/// may run concurrently.
class Graph {
public:
    // ---- leaves ----
    NodeId input(Tensor t);                                  // data, no gradient
    NodeId param(Params& store, const std::string& name);    // named learnable leaf

    // ---- primitives ----
    NodeId matmul(NodeId a, NodeId b);
    NodeId add(NodeId a, NodeId b);            // same shape
    NodeId mul(NodeId a, NodeId b);            // elementwise, same shape
    NodeId relu(NodeId x);                     // subgradient 0 at 0
    NodeId sigmoid(NodeId x);
    NodeId exp(NodeId x);
    NodeId scale(NodeId x, double c);
    NodeId add_rowvec(NodeId x, NodeId v);     // v is 1 x cols, added to each row
    NodeId mul_rowvec(NodeId x, NodeId v);     // v is 1 x cols
    NodeId mul_colvec(NodeId x, NodeId v);     // v is rows x 1
    NodeId transpose(NodeId x);
    NodeId reshape(NodeId x, std::size_t rows, std::size_t cols);
    NodeId concat_rows(const std::vector<NodeId>& xs);
    NodeId concat_cols(const std::vector<NodeId>& xs);
    NodeId slice_rows(NodeId x, std::size_t r0, std::size_t n);
    NodeId slice_cols(NodeId x, std::size_t c0, std::size_t n);
    NodeId row_select(NodeId x, std::size_t r);  // single-row lookup
    NodeId sum(NodeId x);                        // scalar

    /// Row-wise softmax of (scores + mask) with max subtraction. Mask entries
    /// must be exactly 0 or -inf; masked outputs are exactly 0 and an
    /// all-masked row yields an all-zero row. The mask is a constant.
    NodeId masked_softmax(NodeId scores, Tensor mask);

    /// Per-row layer normalization followed by the affine (gamma, beta),
    /// both 1 x cols.
    NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta);

    /// Oblivious-tree leaf probabilities. gates is batch x (n_trees*depth),
    /// tree-major; output is batch x (n_trees*2^depth) where bit d of the
    /// leaf index selects gate (1) versus one-minus-gate (0) at depth d.
    NodeId leaf_probs(NodeId gates, std::size_t n_trees, std::size_t depth);

    /// Cox negative log partial likelihood over a column of scores; times and
    /// events are constants of the node.
    NodeId cox_loss(NodeId scores, std::vector<double> times, std::vector<bool> events);

    const Tensor& value(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].out; }
    std::size_t size() const { return nodes_.size(); }

    /// Gradients of a scalar loss with respect to every trainable parameter
    /// leaf. Frozen leaves are absent from the map. Deterministic.
    GradMap backward(NodeId loss);

private:
    enum class Op {
        Input, Param, Matmul, Add, Mul, Relu, Sigmoid, Exp, Scale, AddRowVec,
        MulRowVec, MulColVec, Transpose, Reshape, ConcatRows, ConcatCols,
        SliceRows, SliceCols, RowSelect, Sum, MaskedSoftmax, LayerNorm,
        LeafProbs, CoxLoss
    };

    struct Node {
        Op op;
        std::vector<NodeId> in;
        Tensor out;
        Tensor aux;           // op-specific constant (softmax mask)
        double c = 0.0;       // scale factor
        std::size_t i0 = 0, i1 = 0;  // slice offsets / tree counts / lookup row
        std::string name;     // param leaf name
        bool trainable = false;
        std::vector<double> times;   // cox loss
        std::vector<bool> events;
    };

    NodeId push(Node n);
    const Tensor& out(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].out; }

    std::vector<Node> nodes_;
};

/// Per-parameter result of a finite-difference audit of backward().
struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = true;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;
    bool all_pass = true;
};

/// Compares backward() against central finite differences for every
/// trainable parameter of `params`. `build` must construct the graph and
/// return the scalar loss node; it is re-invoked per perturbed coordinate.
/// Relative errors use denominators clamped at 1e-8.
GradCheckReport check_gradients(const std::function<NodeId(Graph&)>& build, Params& params,
                                double tolerance, double h = 1e-5);

}  // namespace msurv
