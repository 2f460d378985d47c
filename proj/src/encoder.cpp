#include "msurv/encoder.hpp"

#include <cmath>
#include <limits>

namespace msurv {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Tensor init_weight(Rng& rng, std::size_t rows, std::size_t cols) {
    Tensor t(rows, cols);
    const double std = 1.0 / std::sqrt(static_cast<double>(rows));
    for (double& v : t.values()) v = rng.normal(0.0, std);
    return t;
}
}  // namespace

void EncoderConfig::validate() const {
    if (d_model == 0 || n_heads == 0 || ff_dim == 0) {
        throw ConfigError("encoder dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
        throw ConfigError("d_model must be divisible by n_heads");
    }
    if (group_size == 0) throw ConfigError("group_size must be >= 1");
}

TokenLayout TokenLayout::build(const std::vector<FeatureSpec>& specs, std::size_t group_size) {
    TokenLayout layout;
    std::size_t f = 0;
    while (f < specs.size()) {
        if (specs[f].kind == FeatureKind::Categorical) {
            layout.tokens.push_back({Token::Kind::Categorical, f, 1, specs[f].cardinality});
            ++f;
            continue;
        }
        if (group_size <= 1) {
            layout.tokens.push_back({Token::Kind::Numerical, f, 1, 0});
            ++f;
            continue;
        }
        // group consecutive numerical/ordinal features
        std::size_t count = 0;
        while (f + count < specs.size() && count < group_size &&
               specs[f + count].kind != FeatureKind::Categorical) {
            ++count;
        }
        layout.tokens.push_back(
            {count == 1 ? Token::Kind::Numerical : Token::Kind::Group, f, count, 0});
        f += count;
    }
    return layout;
}

Encoder Encoder::create(Params& params, const std::string& prefix,
                        const std::vector<FeatureSpec>& specs, const EncoderConfig& config,
                        Rng& rng) {
    config.validate();
    Encoder enc = attach(prefix, specs, config);
    const std::size_t n = enc.layout_.size();
    const std::size_t d = config.d_model;

    Tensor bias(n, d);
    for (double& v : bias.values()) v = rng.normal(0.0, 0.1);
    params.add(prefix + "embed.bias", std::move(bias));

    // per-token value direction; rows of non-numerical tokens stay zero
    Tensor dir(n, d);
    for (std::size_t t = 0; t < n; ++t) {
        if (enc.layout_.tokens[t].kind != TokenLayout::Token::Kind::Numerical) continue;
        const double std = 1.0 / std::sqrt(static_cast<double>(d));
        for (std::size_t c = 0; c < d; ++c) dir(t, c) = rng.normal(0.0, std);
    }
    params.add(prefix + "embed.dir", std::move(dir));
    // frozen all-zero directions used by missing numerical features
    params.add(prefix + "embed.dir_missing", Tensor(n, d), /*trainable=*/false);
    // frozen all-zero padding row used by missing categorical features
    params.add(prefix + "embed.pad", Tensor(1, d), /*trainable=*/false);

    for (std::size_t t = 0; t < n; ++t) {
        const auto& token = enc.layout_.tokens[t];
        if (token.kind == TokenLayout::Token::Kind::Categorical) {
            params.add(prefix + "embed.cat" + std::to_string(t),
                       init_weight(rng, token.cardinality, d));
        } else if (token.kind == TokenLayout::Token::Kind::Group) {
            params.add(prefix + "embed.group" + std::to_string(t),
                       init_weight(rng, token.count, d));
        }
    }

    for (std::size_t l = 0; l < config.n_layers; ++l) {
        const std::string lp = prefix + "l" + std::to_string(l) + ".";
        params.add(lp + "ln1.g", Tensor(1, d, 1.0));
        params.add(lp + "ln1.b", Tensor(1, d));
        params.add(lp + "wq", init_weight(rng, d, d));
        params.add(lp + "wk", init_weight(rng, d, d));
        params.add(lp + "wv", init_weight(rng, d, d));
        params.add(lp + "wo", init_weight(rng, d, d));
        params.add(lp + "ln2.g", Tensor(1, d, 1.0));
        params.add(lp + "ln2.b", Tensor(1, d));
        params.add(lp + "ff.w1", init_weight(rng, d, config.ff_dim));
        params.add(lp + "ff.b1", Tensor(1, config.ff_dim));
        params.add(lp + "ff.w2", init_weight(rng, config.ff_dim, d));
        params.add(lp + "ff.b2", Tensor(1, d));
    }
    return enc;
}

Encoder Encoder::attach(const std::string& prefix, const std::vector<FeatureSpec>& specs,
                        const EncoderConfig& config) {
    config.validate();
    Encoder enc;
    enc.config_ = config;
    enc.layout_ = TokenLayout::build(specs, config.group_size);
    enc.prefix_ = prefix;
    enc.n_features_ = specs.size();
    if (enc.layout_.size() == 0) throw ConfigError("encoder needs at least one feature");
    return enc;
}

Encoder::Bound Encoder::bind(Graph& g, Params& params) const {
    Bound b;
    b.bias = g.param(params, prefix_ + "embed.bias");
    b.dir = g.param(params, prefix_ + "embed.dir");
    b.dir_missing = g.param(params, prefix_ + "embed.dir_missing");
    b.pad = g.param(params, prefix_ + "embed.pad");
    b.cat.assign(layout_.size(), -1);
    b.group.assign(layout_.size(), -1);
    for (std::size_t t = 0; t < layout_.size(); ++t) {
        if (layout_.tokens[t].kind == TokenLayout::Token::Kind::Categorical) {
            b.cat[t] = g.param(params, prefix_ + "embed.cat" + std::to_string(t));
        } else if (layout_.tokens[t].kind == TokenLayout::Token::Kind::Group) {
            b.group[t] = g.param(params, prefix_ + "embed.group" + std::to_string(t));
        }
    }
    for (std::size_t l = 0; l < config_.n_layers; ++l) {
        const std::string lp = prefix_ + "l" + std::to_string(l) + ".";
        Bound::Layer layer;
        layer.ln1g = g.param(params, lp + "ln1.g");
        layer.ln1b = g.param(params, lp + "ln1.b");
        layer.wq = g.param(params, lp + "wq");
        layer.wk = g.param(params, lp + "wk");
        layer.wv = g.param(params, lp + "wv");
        layer.wo = g.param(params, lp + "wo");
        layer.ln2g = g.param(params, lp + "ln2.g");
        layer.ln2b = g.param(params, lp + "ln2.b");
        layer.w1 = g.param(params, lp + "ff.w1");
        layer.b1 = g.param(params, lp + "ff.b1");
        layer.w2 = g.param(params, lp + "ff.w2");
        layer.b2 = g.param(params, lp + "ff.b2");
        b.layers.push_back(layer);
    }
    return b;
}

std::vector<bool> Encoder::token_missing(const double* values, const std::uint8_t* observed,
                                         bool present) const {
    (void)values;
    std::vector<bool> missing(layout_.size());
    for (std::size_t t = 0; t < layout_.size(); ++t) {
        const auto& token = layout_.tokens[t];
        if (!present) {
            missing[t] = true;
            continue;
        }
        bool any = false;
        for (std::size_t k = 0; k < token.count; ++k) {
            if (observed[token.first + k]) any = true;
        }
        missing[t] = !any;
    }
    return missing;
}

Tensor Encoder::attention_mask(const std::vector<bool>& missing) const {
    const std::size_t n = missing.size();
    Tensor mask(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (missing[i] || missing[j]) mask(i, j) = kNegInf;
        }
    }
    return mask;
}

NodeId Encoder::embed(Graph& g, const Bound& b, const double* values,
                      const std::uint8_t* observed, bool present) const {
    const std::size_t n = layout_.size();

    // numerical stream: bias + x * v_present, with x forced to zero wherever
    // the value is unobserved so stored values cannot leak
    Tensor x_eff(n, 1);
    Tensor m_eff(n, 1);
    for (std::size_t t = 0; t < n; ++t) {
        const auto& token = layout_.tokens[t];
        if (token.kind != TokenLayout::Token::Kind::Numerical) continue;
        const bool obs = present && observed[token.first];
        if (obs) {
            x_eff[t] = values[token.first];
        } else {
            m_eff[t] = 1.0;  // routes the frozen zero direction
        }
    }
    NodeId tokens = g.add(b.bias, g.add(g.mul_colvec(b.dir, g.input(std::move(x_eff))),
                                        g.mul_colvec(b.dir_missing, g.input(std::move(m_eff)))));

    // categorical and grouped tokens contribute an extra row each
    bool any_special = false;
    for (const auto& token : layout_.tokens) {
        if (token.kind != TokenLayout::Token::Kind::Numerical) any_special = true;
    }
    if (!any_special) return tokens;

    std::vector<NodeId> extra_rows;
    extra_rows.reserve(n);
    NodeId zero_row = -1;
    for (std::size_t t = 0; t < n; ++t) {
        const auto& token = layout_.tokens[t];
        if (token.kind == TokenLayout::Token::Kind::Numerical) {
            if (zero_row < 0) zero_row = g.input(Tensor(1, config_.d_model));
            extra_rows.push_back(zero_row);
        } else if (token.kind == TokenLayout::Token::Kind::Categorical) {
            const bool obs = present && observed[token.first];
            if (obs) {
                const double raw = values[token.first];
                if (raw < 0 || raw != std::floor(raw) ||
                    raw >= static_cast<double>(token.cardinality)) {
                    throw ContractError("categorical level out of range in " + prefix_);
                }
                extra_rows.push_back(g.row_select(b.cat[t], static_cast<std::size_t>(raw)));
            } else {
                extra_rows.push_back(b.pad);
            }
        } else {
            // grouped numerical dimensions: x_slice (with unobserved dims
            // zeroed) through the token's linear map
            Tensor slice(1, token.count);
            if (present) {
                for (std::size_t k = 0; k < token.count; ++k) {
                    if (observed[token.first + k]) slice[k] = values[token.first + k];
                }
            }
            extra_rows.push_back(g.matmul(g.input(std::move(slice)), b.group[t]));
        }
    }
    return g.add(tokens, g.concat_rows(extra_rows));
}

NodeId masked_attention(Graph& g, NodeId q, NodeId k, NodeId v, const Tensor& mask) {
    const std::size_t d_h = g.value(q).cols();
    NodeId scores = g.scale(g.matmul(q, g.transpose(k)), 1.0 / std::sqrt(static_cast<double>(d_h)));
    NodeId probs = g.masked_softmax(scores, mask);
    NodeId gated = g.relu(g.add(probs, g.input(transposed(mask))));
    return g.matmul(gated, v);
}

NodeId Encoder::encode(Graph& g, const Bound& b, const double* values,
                       const std::uint8_t* observed, bool present) const {
    const std::size_t n = layout_.size();
    const std::size_t d = config_.d_model;
    const std::size_t d_h = d / config_.n_heads;

    const Tensor mask = attention_mask(token_missing(values, observed, present));

    NodeId x = embed(g, b, values, observed, present);
    for (const auto& layer : b.layers) {
        NodeId normed = g.layer_norm(x, layer.ln1g, layer.ln1b);
        NodeId q = g.matmul(normed, layer.wq);
        NodeId k = g.matmul(normed, layer.wk);
        NodeId v = g.matmul(normed, layer.wv);
        std::vector<NodeId> heads;
        heads.reserve(config_.n_heads);
        for (std::size_t h = 0; h < config_.n_heads; ++h) {
            heads.push_back(masked_attention(g, g.slice_cols(q, h * d_h, d_h),
                                             g.slice_cols(k, h * d_h, d_h),
                                             g.slice_cols(v, h * d_h, d_h), mask));
        }
        NodeId merged = g.matmul(config_.n_heads == 1 ? heads[0] : g.concat_cols(heads),
                                 layer.wo);
        x = g.add(x, merged);

        NodeId normed2 = g.layer_norm(x, layer.ln2g, layer.ln2b);
        NodeId hidden = g.relu(g.add_rowvec(g.matmul(normed2, layer.w1), layer.b1));
        NodeId ff = g.add_rowvec(g.matmul(hidden, layer.w2), layer.b2);
        x = g.add(x, ff);
    }
    return g.reshape(x, 1, n * d);
}

NodeId Encoder::encode_rows(Graph& g, const Bound& b, const ModalityBlock& block,
                            const std::vector<std::size_t>& rows) const {
    if (block.width() != n_features_) {
        throw ContractError("block " + block.name + " width does not match encoder " + prefix_);
    }
    std::vector<NodeId> encoded;
    encoded.reserve(rows.size());
    for (std::size_t row : rows) {
        encoded.push_back(encode(g, b, block.values.data() + row * block.width(),
                                 block.observed.data() + row * block.width(),
                                 block.present[row]));
    }
    return encoded.size() == 1 ? encoded[0] : g.concat_rows(encoded);
}

}  // namespace msurv
