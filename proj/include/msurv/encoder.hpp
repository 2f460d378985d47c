#pragma once

#include <string>
#include <vector>

#include "msurv/cohort.hpp"
#include "msurv/graph.hpp"
#include "msurv/rng.hpp"

namespace msurv {

struct EncoderConfig {
    std::size_t d_model = 32;
    std::size_t n_heads = 4;
    std::size_t n_layers = 2;
    std::size_t ff_dim = 64;
    /// Numerical features are tokenized one per dimension by default; a value
    /// g > 1 groups up to g consecutive numerical dimensions per token behind
    /// a trainable linear map, bounding the quadratic attention cost for wide
    /// embedding blocks.
    std::size_t group_size = 1;

    void validate() const;
};

/// How a feature vector maps onto encoder tokens.
struct TokenLayout {
    struct Token {
        enum class Kind { Numerical, Categorical, Group };
        Kind kind;
        std::size_t first = 0, count = 1;  // feature range covered
        std::size_t cardinality = 0;       // categorical only
    };
    std::vector<Token> tokens;

    static TokenLayout build(const std::vector<FeatureSpec>& specs, std::size_t group_size);
    std::size_t size() const { return tokens.size(); }
};

/// Missing-aware unimodal encoder: dual-stream feature embedding plus
/// double-sided masked self-attention. Parameters live in an external store
/// under this encoder's name prefix; all compute goes through a Graph.
class Encoder {
public:
    /// Registers freshly initialized parameters under `prefix` and returns
    /// the encoder bound to them.
    static Encoder create(Params& params, const std::string& prefix,
                          const std::vector<FeatureSpec>& specs, const EncoderConfig& config,
                          Rng& rng);

    /// Binds to already-registered parameters (e.g. from a checkpoint).
    static Encoder attach(const std::string& prefix, const std::vector<FeatureSpec>& specs,
                          const EncoderConfig& config);

    /// Parameter leaves bound into one graph, shared across a batch.
    struct Bound {
        NodeId bias, dir, dir_missing, pad;
        std::vector<NodeId> cat;    // per categorical token
        std::vector<NodeId> group;  // per group token
        struct Layer {
            NodeId ln1g, ln1b, wq, wk, wv, wo, ln2g, ln2b, w1, b1, w2, b2;
        };
        std::vector<Layer> layers;
    };
    Bound bind(Graph& g, Params& params) const;

    /// Per-token missing flags for one patient (modality absent masks all).
    std::vector<bool> token_missing(const double* values, const std::uint8_t* observed,
                                    bool present) const;

    /// Additive attention mask: entry (i, j) is -inf iff token i or j is
    /// missing.
    Tensor attention_mask(const std::vector<bool>& missing) const;

    /// Token matrix (n_tokens x d_model) for one patient. Missing tokens
    /// equal their bias row exactly.
    NodeId embed(Graph& g, const Bound& b, const double* values, const std::uint8_t* observed,
                 bool present) const;

    /// Full encoder: embed, n_layers of pre-norm masked attention and
    /// feed-forward blocks, flattened to 1 x (n_tokens * d_model).
    NodeId encode(Graph& g, const Bound& b, const double* values, const std::uint8_t* observed,
                  bool present) const;

    /// Stacks encode() over selected cohort rows: |rows| x width(). Values
    /// and masks come straight from a modality block.
    NodeId encode_rows(Graph& g, const Bound& b, const ModalityBlock& block,
                       const std::vector<std::size_t>& rows) const;

    std::size_t out_dim() const { return layout_.size() * config_.d_model; }
    std::size_t n_features() const { return n_features_; }
    const EncoderConfig& config() const { return config_; }
    const TokenLayout& layout() const { return layout_; }
    const std::string& prefix() const { return prefix_; }

private:
    EncoderConfig config_;
    TokenLayout layout_;
    std::string prefix_;
    std::size_t n_features_ = 0;
};

/// The attention core: ReLU(masked_softmax(Q K^T / sqrt(d_h), M) + M^T) V.
/// Output rows of missing tokens are exactly zero.
NodeId masked_attention(Graph& g, NodeId q, NodeId k, NodeId v, const Tensor& mask);

}  // namespace msurv
