#include "msurv/graph.hpp"

#include <cmath>
#include <limits>

namespace msurv {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
    throw ContractError(std::string(op) + " dimension mismatch: " + a.shape_str() + " vs " +
                        b.shape_str());
}
}  // namespace

Tensor& Params::add(const std::string& name, Tensor value, bool trainable) {
    auto [it, inserted] = entries_.emplace(name, Entry{std::move(value), trainable});
    if (!inserted) throw ContractError("duplicate parameter name: " + name);
    return it->second.value;
}

Params::Entry& Params::entry(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

const Params::Entry& Params::entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
}

void Params::set_trainable_prefix(const std::string& prefix, bool trainable) {
    for (auto& [name, e] : entries_) {
        if (name.rfind(prefix, 0) == 0) e.trainable = trainable;
    }
}

NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::input(Tensor t) {
    Node n;
    n.op = Op::Input;
    n.out = std::move(t);
    return push(std::move(n));
}

NodeId Graph::param(Params& store, const std::string& name) {
    const auto& e = store.entry(name);
    Node n;
    n.op = Op::Param;
    n.out = e.value;  // copy; the optimizer may mutate the store between graphs
    n.name = name;
    n.trainable = e.trainable;
    return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
    Node n;
    n.op = Op::Matmul;
    n.in = {a, b};
    n.out = msurv::matmul(out(a), out(b));
    return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& ta = out(a);
    const Tensor& tb = out(b);
    if (!ta.same_shape(tb)) shape_error("add", ta, tb);
    Node n;
    n.op = Op::Add;
    n.in = {a, b};
    n.out = ta;
    for (std::size_t i = 0; i < tb.size(); ++i) n.out[i] += tb[i];
    return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
    const Tensor& ta = out(a);
    const Tensor& tb = out(b);
    if (!ta.same_shape(tb)) shape_error("mul", ta, tb);
    Node n;
    n.op = Op::Mul;
    n.in = {a, b};
    n.out = ta;
    for (std::size_t i = 0; i < tb.size(); ++i) n.out[i] *= tb[i];
    return push(std::move(n));
}

NodeId Graph::relu(NodeId x) {
    Node n;
    n.op = Op::Relu;
    n.in = {x};
    n.out = out(x);
    for (double& v : n.out.values()) v = v > 0.0 ? v : 0.0;
    return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId x) {
    Node n;
    n.op = Op::Sigmoid;
    n.in = {x};
    n.out = out(x);
    for (double& v : n.out.values()) v = 1.0 / (1.0 + std::exp(-v));
    return push(std::move(n));
}

NodeId Graph::exp(NodeId x) {
    Node n;
    n.op = Op::Exp;
    n.in = {x};
    n.out = out(x);
    for (double& v : n.out.values()) v = std::exp(v);
    return push(std::move(n));
}

NodeId Graph::scale(NodeId x, double c) {
    Node n;
    n.op = Op::Scale;
    n.in = {x};
    n.c = c;
    n.out = out(x);
    for (double& v : n.out.values()) v *= c;
    return push(std::move(n));
}

NodeId Graph::add_rowvec(NodeId x, NodeId v) {
    const Tensor& tx = out(x);
    const Tensor& tv = out(v);
    if (tv.rows() != 1 || tv.cols() != tx.cols()) shape_error("add_rowvec", tx, tv);
    Node n;
    n.op = Op::AddRowVec;
    n.in = {x, v};
    n.out = tx;
    for (std::size_t r = 0; r < tx.rows(); ++r)
        for (std::size_t c = 0; c < tx.cols(); ++c) n.out(r, c) += tv[c];
    return push(std::move(n));
}

NodeId Graph::mul_rowvec(NodeId x, NodeId v) {
    const Tensor& tx = out(x);
    const Tensor& tv = out(v);
    if (tv.rows() != 1 || tv.cols() != tx.cols()) shape_error("mul_rowvec", tx, tv);
    Node n;
    n.op = Op::MulRowVec;
    n.in = {x, v};
    n.out = tx;
    for (std::size_t r = 0; r < tx.rows(); ++r)
        for (std::size_t c = 0; c < tx.cols(); ++c) n.out(r, c) *= tv[c];
    return push(std::move(n));
}

NodeId Graph::mul_colvec(NodeId x, NodeId v) {
    const Tensor& tx = out(x);
    const Tensor& tv = out(v);
    if (tv.cols() != 1 || tv.rows() != tx.rows()) shape_error("mul_colvec", tx, tv);
    Node n;
    n.op = Op::MulColVec;
    n.in = {x, v};
    n.out = tx;
    for (std::size_t r = 0; r < tx.rows(); ++r)
        for (std::size_t c = 0; c < tx.cols(); ++c) n.out(r, c) *= tv[r];
    return push(std::move(n));
}

NodeId Graph::transpose(NodeId x) {
    Node n;
    n.op = Op::Transpose;
    n.in = {x};
    n.out = transposed(out(x));
    return push(std::move(n));
}

NodeId Graph::reshape(NodeId x, std::size_t rows, std::size_t cols) {
    const Tensor& tx = out(x);
    if (rows * cols != tx.size()) {
        throw ContractError("reshape to " + std::to_string(rows) + "x" + std::to_string(cols) +
                            " from " + tx.shape_str());
    }
    Node n;
    n.op = Op::Reshape;
    n.in = {x};
    n.out = Tensor(rows, cols, tx.values());
    return push(std::move(n));
}

NodeId Graph::concat_rows(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw ContractError("concat_rows of nothing");
    const std::size_t cols = out(xs[0]).cols();
    std::size_t rows = 0;
    for (NodeId id : xs) {
        if (out(id).cols() != cols) shape_error("concat_rows", out(xs[0]), out(id));
        rows += out(id).rows();
    }
    Node n;
    n.op = Op::ConcatRows;
    n.in = xs;
    n.out = Tensor(rows, cols);
    std::size_t r = 0;
    for (NodeId id : xs) {
        const Tensor& t = out(id);
        std::copy(t.data(), t.data() + t.size(), n.out.data() + r * cols);
        r += t.rows();
    }
    return push(std::move(n));
}

NodeId Graph::concat_cols(const std::vector<NodeId>& xs) {
    if (xs.empty()) throw ContractError("concat_cols of nothing");
    const std::size_t rows = out(xs[0]).rows();
    std::size_t cols = 0;
    for (NodeId id : xs) {
        if (out(id).rows() != rows) shape_error("concat_cols", out(xs[0]), out(id));
        cols += out(id).cols();
    }
    Node n;
    n.op = Op::ConcatCols;
    n.in = xs;
    n.out = Tensor(rows, cols);
    std::size_t c0 = 0;
    for (NodeId id : xs) {
        const Tensor& t = out(id);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < t.cols(); ++c) n.out(r, c0 + c) = t(r, c);
        c0 += t.cols();
    }
    return push(std::move(n));
}

NodeId Graph::slice_rows(NodeId x, std::size_t r0, std::size_t nr) {
    const Tensor& tx = out(x);
    if (r0 + nr > tx.rows()) throw ContractError("slice_rows out of range on " + tx.shape_str());
    Node n;
    n.op = Op::SliceRows;
    n.in = {x};
    n.i0 = r0;
    n.i1 = nr;
    n.out = Tensor(nr, tx.cols());
    std::copy(tx.data() + r0 * tx.cols(), tx.data() + (r0 + nr) * tx.cols(), n.out.data());
    return push(std::move(n));
}

NodeId Graph::slice_cols(NodeId x, std::size_t c0, std::size_t nc) {
    const Tensor& tx = out(x);
    if (c0 + nc > tx.cols()) throw ContractError("slice_cols out of range on " + tx.shape_str());
    Node n;
    n.op = Op::SliceCols;
    n.in = {x};
    n.i0 = c0;
    n.i1 = nc;
    n.out = Tensor(tx.rows(), nc);
    for (std::size_t r = 0; r < tx.rows(); ++r)
        for (std::size_t c = 0; c < nc; ++c) n.out(r, c) = tx(r, c0 + c);
    return push(std::move(n));
}

NodeId Graph::row_select(NodeId x, std::size_t r) {
    const Tensor& tx = out(x);
    if (r >= tx.rows()) {
        throw ContractError("row_select index " + std::to_string(r) + " out of range on " +
                            tx.shape_str());
    }
    Node n;
    n.op = Op::RowSelect;
    n.in = {x};
    n.i0 = r;
    n.out = Tensor(1, tx.cols());
    std::copy(tx.data() + r * tx.cols(), tx.data() + (r + 1) * tx.cols(), n.out.data());
    return push(std::move(n));
}

NodeId Graph::sum(NodeId x) {
    Node n;
    n.op = Op::Sum;
    n.in = {x};
    double s = 0.0;
    for (double v : out(x).values()) s += v;
    n.out = Tensor::scalar(s);
    return push(std::move(n));
}

NodeId Graph::masked_softmax(NodeId scores, Tensor mask) {
    const Tensor& ts = out(scores);
    if (!ts.same_shape(mask)) shape_error("masked_softmax", ts, mask);
    for (double m : mask.values()) {
        if (!(m == 0.0 || m == kNegInf)) {
            throw ContractError("masked_softmax mask entries must be exactly 0 or -inf");
        }
    }
    Node n;
    n.op = Op::MaskedSoftmax;
    n.in = {scores};
    n.out = Tensor(ts.rows(), ts.cols());
    const std::size_t cols = ts.cols();
    for (std::size_t r = 0; r < ts.rows(); ++r) {
        double mx = kNegInf;
        for (std::size_t c = 0; c < cols; ++c) {
            const double z = ts(r, c) + mask(r, c);
            if (z > mx) mx = z;
        }
        if (mx == kNegInf) continue;  // fully masked row stays all-zero
        double denom = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double z = ts(r, c) + mask(r, c);
            const double e = z == kNegInf ? 0.0 : std::exp(z - mx);
            n.out(r, c) = e;
            denom += e;
        }
        for (std::size_t c = 0; c < cols; ++c) n.out(r, c) /= denom;
    }
    n.aux = std::move(mask);
    return push(std::move(n));
}

NodeId Graph::layer_norm(NodeId x, NodeId gamma, NodeId beta) {
    const Tensor& tx = out(x);
    const Tensor& tg = out(gamma);
    const Tensor& tb = out(beta);
    if (tg.rows() != 1 || tg.cols() != tx.cols()) shape_error("layer_norm gamma", tx, tg);
    if (tb.rows() != 1 || tb.cols() != tx.cols()) shape_error("layer_norm beta", tx, tb);
    Node n;
    n.op = Op::LayerNorm;
    n.in = {x, gamma, beta};
    n.out = Tensor(tx.rows(), tx.cols());
    n.aux = Tensor(tx.rows(), tx.cols());  // keeps xhat for backward
    const double d = static_cast<double>(tx.cols());
    for (std::size_t r = 0; r < tx.rows(); ++r) {
        double mean = 0.0;
        for (std::size_t c = 0; c < tx.cols(); ++c) mean += tx(r, c);
        mean /= d;
        double var = 0.0;
        for (std::size_t c = 0; c < tx.cols(); ++c) {
            const double dv = tx(r, c) - mean;
            var += dv * dv;
        }
        var /= d;
        const double inv = 1.0 / std::sqrt(var + 1e-5);
        for (std::size_t c = 0; c < tx.cols(); ++c) {
            const double xh = (tx(r, c) - mean) * inv;
            n.aux(r, c) = xh;
            n.out(r, c) = tg[c] * xh + tb[c];
        }
    }
    return push(std::move(n));
}

NodeId Graph::leaf_probs(NodeId gates, std::size_t n_trees, std::size_t depth) {
    const Tensor& tg = out(gates);
    if (tg.cols() != n_trees * depth) {
        throw ContractError("leaf_probs expects " + std::to_string(n_trees * depth) +
                            " gate columns, got " + tg.shape_str());
    }
    const std::size_t n_leaves = std::size_t{1} << depth;
    Node n;
    n.op = Op::LeafProbs;
    n.in = {gates};
    n.i0 = n_trees;
    n.i1 = depth;
    n.out = Tensor(tg.rows(), n_trees * n_leaves);
    for (std::size_t b = 0; b < tg.rows(); ++b) {
        for (std::size_t t = 0; t < n_trees; ++t) {
            for (std::size_t leaf = 0; leaf < n_leaves; ++leaf) {
                double p = 1.0;
                for (std::size_t d = 0; d < depth; ++d) {
                    const double g = tg(b, t * depth + d);
                    p *= ((leaf >> d) & 1u) ? g : 1.0 - g;
                }
                n.out(b, t * n_leaves + leaf) = p;
            }
        }
    }
    return push(std::move(n));
}

NodeId Graph::cox_loss(NodeId scores, std::vector<double> times, std::vector<bool> events) {
    const Tensor& ty = out(scores);
    if (ty.cols() != 1 || ty.rows() != times.size() || times.size() != events.size()) {
        throw ContractError("cox_loss expects a score column matching outcome lengths, got " +
                            ty.shape_str());
    }
    Node n;
    n.op = Op::CoxLoss;
    n.in = {scores};
    n.times = std::move(times);
    n.events = std::move(events);
    n.out = Tensor::scalar(cox_nll(BatchOutcome{ty.values(), n.times, n.events}));
    return push(std::move(n));
}

GradMap Graph::backward(NodeId loss) {
    const Node& ln = nodes_[static_cast<std::size_t>(loss)];
    if (ln.out.rows() != 1 || ln.out.cols() != 1) {
        throw ContractError("backward requires a scalar loss, got " + ln.out.shape_str());
    }

    std::vector<Tensor> grads(nodes_.size());
    auto g = [&](NodeId id) -> Tensor& {
        Tensor& t = grads[static_cast<std::size_t>(id)];
        if (t.empty()) {
            const Tensor& o = nodes_[static_cast<std::size_t>(id)].out;
            t = Tensor(o.rows(), o.cols());
        }
        return t;
    };
    g(loss)[0] = 1.0;

    GradMap result;
    for (NodeId id = loss; id >= 0; --id) {
        const Tensor& dy = grads[static_cast<std::size_t>(id)];
        if (dy.empty()) continue;
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        switch (n.op) {
            case Op::Input:
                break;
            case Op::Param:
                if (n.trainable) {
                    auto it = result.find(n.name);
                    if (it == result.end()) {
                        result.emplace(n.name, dy);
                    } else {
                        for (std::size_t i = 0; i < dy.size(); ++i) it->second[i] += dy[i];
                    }
                }
                break;
            case Op::Matmul: {
                matmul_nt_acc(dy, out(n.in[1]), g(n.in[0]));  // dA += dC * B^T
                matmul_tn_acc(out(n.in[0]), dy, g(n.in[1]));  // dB += A^T * dC
                break;
            }
            case Op::Add: {
                Tensor& da = g(n.in[0]);
                Tensor& db = g(n.in[1]);
                for (std::size_t i = 0; i < dy.size(); ++i) {
                    da[i] += dy[i];
                    db[i] += dy[i];
                }
                break;
            }
            case Op::Mul: {
                const Tensor& a = out(n.in[0]);
                const Tensor& b = out(n.in[1]);
                Tensor& da = g(n.in[0]);
                Tensor& db = g(n.in[1]);
                for (std::size_t i = 0; i < dy.size(); ++i) {
                    da[i] += dy[i] * b[i];
                    db[i] += dy[i] * a[i];
                }
                break;
            }
            case Op::Relu: {
                const Tensor& x = out(n.in[0]);
                Tensor& dx = g(n.in[0]);
                for (std::size_t i = 0; i < dy.size(); ++i) {
                    if (x[i] > 0.0) dx[i] += dy[i];
                }
                break;
            }
            case Op::Sigmoid: {
                Tensor& dx = g(n.in[0]);
                for (std::size_t i = 0; i < dy.size(); ++i) {
                    const double s = n.out[i];
                    dx[i] += dy[i] * s * (1.0 - s);
                }
                break;
            }
            case Op::Exp: {
                Tensor& dx = g(n.in[0]);
                for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * n.out[i];
                break;
            }
            case Op::Scale: {
                Tensor& dx = g(n.in[0]);
                for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i] * n.c;
                break;
            }
            case Op::AddRowVec: {
                Tensor& dx = g(n.in[0]);
                Tensor& dv = g(n.in[1]);
                for (std::size_t r = 0; r < dy.rows(); ++r)
                    for (std::size_t c = 0; c < dy.cols(); ++c) {
                        dx(r, c) += dy(r, c);
                        dv[c] += dy(r, c);
                    }
                break;
            }
            case Op::MulRowVec: {
                const Tensor& x = out(n.in[0]);
                const Tensor& v = out(n.in[1]);
                Tensor& dx = g(n.in[0]);
                Tensor& dv = g(n.in[1]);
                for (std::size_t r = 0; r < dy.rows(); ++r)
                    for (std::size_t c = 0; c < dy.cols(); ++c) {
                        dx(r, c) += dy(r, c) * v[c];
                        dv[c] += dy(r, c) * x(r, c);
                    }
                break;
            }
            case Op::MulColVec: {
                const Tensor& x = out(n.in[0]);
                const Tensor& v = out(n.in[1]);
                Tensor& dx = g(n.in[0]);
                Tensor& dv = g(n.in[1]);
                for (std::size_t r = 0; r < dy.rows(); ++r)
                    for (std::size_t c = 0; c < dy.cols(); ++c) {
                        dx(r, c) += dy(r, c) * v[r];
                        dv[r] += dy(r, c) * x(r, c);
                    }
                break;
            }
            case Op::Transpose: {
                Tensor& dx = g(n.in[0]);
                for (std::size_t r = 0; r < dy.rows(); ++r)
                    for (std::size_t c = 0; c < dy.cols(); ++c) dx(c, r) += dy(r, c);
                break;
            }
            case Op::Reshape: {
                Tensor& dx = g(n.in[0]);
                for (std::size_t i = 0; i < dy.size(); ++i) dx[i] += dy[i];
                break;
            }
            case Op::ConcatRows: {
                std::size_t r0 = 0;
                for (NodeId in : n.in) {
                    Tensor& dx = g(in);
                    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[r0 * dy.cols() + i];
                    r0 += dx.rows();
                }
                break;
            }
            case Op::ConcatCols: {
                std::size_t c0 = 0;
                for (NodeId in : n.in) {
                    Tensor& dx = g(in);
                    for (std::size_t r = 0; r < dx.rows(); ++r)
                        for (std::size_t c = 0; c < dx.cols(); ++c) dx(r, c) += dy(r, c0 + c);
                    c0 += dx.cols();
                }
                break;
            }
            case Op::SliceRows: {
                Tensor& dx = g(n.in[0]);
                for (std::size_t r = 0; r < dy.rows(); ++r)
                    for (std::size_t c = 0; c < dy.cols(); ++c) dx(n.i0 + r, c) += dy(r, c);
                break;
            }
            case Op::SliceCols: {
                Tensor& dx = g(n.in[0]);
                for (std::size_t r = 0; r < dy.rows(); ++r)
                    for (std::size_t c = 0; c < dy.cols(); ++c) dx(r, n.i0 + c) += dy(r, c);
                break;
            }
            case Op::RowSelect: {
                Tensor& dx = g(n.in[0]);
                for (std::size_t c = 0; c < dy.cols(); ++c) dx(n.i0, c) += dy[c];
                break;
            }
            case Op::Sum: {
                Tensor& dx = g(n.in[0]);
                const double s = dy[0];
                for (double& v : dx.values()) v += s;
                break;
            }
            case Op::MaskedSoftmax: {
                // dS_rc = P_rc * (dP_rc - sum_k dP_rk P_rk); masked entries have
                // P == 0, so their score gradient is exactly zero.
                Tensor& dx = g(n.in[0]);
                for (std::size_t r = 0; r < dy.rows(); ++r) {
                    double dot = 0.0;
                    for (std::size_t c = 0; c < dy.cols(); ++c) dot += dy(r, c) * n.out(r, c);
                    for (std::size_t c = 0; c < dy.cols(); ++c) {
                        dx(r, c) += n.out(r, c) * (dy(r, c) - dot);
                    }
                }
                break;
            }
            case Op::LayerNorm: {
                const Tensor& gam = out(n.in[1]);
                const Tensor& x = out(n.in[0]);
                Tensor& dx = g(n.in[0]);
                Tensor& dg = g(n.in[1]);
                Tensor& db = g(n.in[2]);
                const double d = static_cast<double>(x.cols());
                for (std::size_t r = 0; r < x.rows(); ++r) {
                    // recover 1/std from xhat: xhat = (x - mean) * inv
                    double mean = 0.0;
                    for (std::size_t c = 0; c < x.cols(); ++c) mean += x(r, c);
                    mean /= d;
                    double var = 0.0;
                    for (std::size_t c = 0; c < x.cols(); ++c) {
                        const double dv = x(r, c) - mean;
                        var += dv * dv;
                    }
                    var /= d;
                    const double inv = 1.0 / std::sqrt(var + 1e-5);
                    double m1 = 0.0, m2 = 0.0;
                    for (std::size_t c = 0; c < x.cols(); ++c) {
                        const double dxh = dy(r, c) * gam[c];
                        m1 += dxh;
                        m2 += dxh * n.aux(r, c);
                    }
                    m1 /= d;
                    m2 /= d;
                    for (std::size_t c = 0; c < x.cols(); ++c) {
                        const double dxh = dy(r, c) * gam[c];
                        dx(r, c) += inv * (dxh - m1 - n.aux(r, c) * m2);
                        dg[c] += dy(r, c) * n.aux(r, c);
                        db[c] += dy(r, c);
                    }
                }
                break;
            }
            case Op::LeafProbs: {
                const Tensor& gt = out(n.in[0]);
                Tensor& dgate = g(n.in[0]);
                const std::size_t n_trees = n.i0, depth = n.i1;
                const std::size_t n_leaves = std::size_t{1} << depth;
                std::vector<double> fl(depth), pre(depth + 1), suf(depth + 1);
                for (std::size_t b = 0; b < gt.rows(); ++b) {
                    for (std::size_t t = 0; t < n_trees; ++t) {
                        for (std::size_t leaf = 0; leaf < n_leaves; ++leaf) {
                            const double dp = dy(b, t * n_leaves + leaf);
                            if (dp == 0.0) continue;
                            for (std::size_t d = 0; d < depth; ++d) {
                                const double gv = gt(b, t * depth + d);
                                fl[d] = ((leaf >> d) & 1u) ? gv : 1.0 - gv;
                            }
                            pre[0] = 1.0;
                            for (std::size_t d = 0; d < depth; ++d) pre[d + 1] = pre[d] * fl[d];
                            suf[depth] = 1.0;
                            for (std::size_t d = depth; d-- > 0;) suf[d] = suf[d + 1] * fl[d];
                            for (std::size_t d = 0; d < depth; ++d) {
                                const double except = pre[d] * suf[d + 1];
                                const double sgn = ((leaf >> d) & 1u) ? 1.0 : -1.0;
                                dgate(b, t * depth + d) += dp * sgn * except;
                            }
                        }
                    }
                }
                break;
            }
            case Op::CoxLoss: {
                const Tensor& y = out(n.in[0]);
                Tensor& dx = g(n.in[0]);
                const std::vector<double> gy =
                    cox_nll_grad(BatchOutcome{y.values(), n.times, n.events});
                for (std::size_t i = 0; i < gy.size(); ++i) dx[i] += gy[i] * dy[0];
                break;
            }
        }
    }
    return result;
}

GradCheckReport check_gradients(const std::function<NodeId(Graph&)>& build, Params& params,
                                double tolerance, double h) {
    GradCheckReport report;
    report.tolerance = tolerance;

    Graph graph;
    const NodeId loss = build(graph);
    const GradMap analytic = graph.backward(loss);

    auto eval = [&]() {
        Graph g2;
        return g2.value(build(g2))[0];
    };

    for (auto& [name, e] : params.entries()) {
        if (!e.trainable) continue;  // frozen parameters stay out of the report
        GradCheckEntry entry;
        entry.name = name;
        auto ait = analytic.find(name);
        for (std::size_t i = 0; i < e.value.size(); ++i) {
            const double saved = e.value[i];
            e.value[i] = saved + h;
            const double lp = eval();
            e.value[i] = saved - h;
            const double lm = eval();
            e.value[i] = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = ait == analytic.end() ? 0.0 : ait->second[i];
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
            entry.max_rel_err = std::max(entry.max_rel_err, std::abs(fd - an) / denom);
        }
        entry.pass = entry.max_rel_err <= tolerance;
        report.all_pass = report.all_pass && entry.pass;
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace msurv
