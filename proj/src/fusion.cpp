#include "msurv/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace msurv {

FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "unimodal") return FusionMode::Unimodal;
    if (s == "early") return FusionMode::Early;
    if (s == "intermediate") return FusionMode::Intermediate;
    if (s == "late") return FusionMode::Late;
    if (s == "linear-cph") return FusionMode::LinearCph;
    throw ConfigError("unknown fusion mode: " + s);
}

std::string to_string(FusionMode mode) {
    switch (mode) {
        case FusionMode::Unimodal: return "unimodal";
        case FusionMode::Early: return "early";
        case FusionMode::Intermediate: return "intermediate";
        case FusionMode::Late: return "late";
        case FusionMode::LinearCph: return "linear-cph";
    }
    return "?";
}

void FusionSpec::validate() const {
    if (modalities.empty()) throw ConfigError("model has no modalities");
    if (!std::is_sorted(modalities.begin(), modalities.end())) {
        throw ConfigError("modalities must be in lexical order");
    }
    if (std::adjacent_find(modalities.begin(), modalities.end()) != modalities.end()) {
        throw ConfigError("duplicate modality in model");
    }
    if ((mode == FusionMode::Unimodal || mode == FusionMode::LinearCph) &&
        modalities.size() != 1) {
        throw ConfigError(to_string(mode) + " model takes exactly one modality");
    }
    // early/intermediate degenerate gracefully to a single branch; late
    // fusion genuinely needs two score vectors to rank-sum
    if (mode == FusionMode::Late && modalities.size() < 2) {
        throw ConfigError("late fusion needs at least two modalities");
    }
    for (const auto& m : modalities) {
        if (mode != FusionMode::LinearCph) {
            encoders.at(m).validate();
            heads.at(m).validate();
        }
    }
    if (mode == FusionMode::Early || mode == FusionMode::Intermediate) fusion_head.validate();
}

namespace {

EncoderConfig encoder_from_manifest(const KvConfig& m, const std::string& modality) {
    EncoderConfig cfg;
    auto key = [&](const std::string& field) {
        const std::string specific = "encoder." + modality + "." + field;
        return m.has(specific) ? specific : "encoder." + field;
    };
    cfg.d_model = static_cast<std::size_t>(m.get_int_or(key("d_model"), 32));
    cfg.n_heads = static_cast<std::size_t>(m.get_int_or(key("n_heads"), 4));
    cfg.n_layers = static_cast<std::size_t>(m.get_int_or(key("layers"), 2));
    cfg.ff_dim = static_cast<std::size_t>(m.get_int_or(key("ff_dim"), 64));
    cfg.group_size = static_cast<std::size_t>(m.get_int_or(key("group_size"), 1));
    return cfg;
}

OdstConfig head_from_manifest(const KvConfig& m, const std::string& section,
                              std::size_t default_trees) {
    OdstConfig cfg;
    cfg.n_trees = static_cast<std::size_t>(m.get_int_or(section + ".trees",
                                                        static_cast<long>(default_trees)));
    cfg.depth = static_cast<std::size_t>(m.get_int_or(section + ".depth", 4));
    cfg.out_dim = static_cast<std::size_t>(m.get_int_or(section + ".out_dim", 1));
    return cfg;
}

}  // namespace

FusionSpec FusionSpec::from_manifest(const KvConfig& manifest) {
    FusionSpec spec;
    spec.mode = fusion_mode_from_string(manifest.get("model.mode"));
    spec.modalities = manifest.get_list("model.modalities");
    std::sort(spec.modalities.begin(), spec.modalities.end());
    for (const auto& m : spec.modalities) {
        spec.encoders[m] = encoder_from_manifest(manifest, m);
        spec.heads[m] = head_from_manifest(manifest, "head", 8);
    }
    spec.fusion_head = head_from_manifest(manifest, "fusion_head", 16);
    spec.validate();
    return spec;
}

KvConfig FusionSpec::to_manifest() const {
    KvConfig m;
    m.set("model.mode", to_string(mode));
    std::string joined;
    for (const auto& name : modalities) {
        if (!joined.empty()) joined += ",";
        joined += name;
    }
    m.set("model.modalities", joined);
    for (const auto& name : modalities) {
        if (mode == FusionMode::LinearCph) continue;
        const auto& e = encoders.at(name);
        const std::string p = "encoder." + name + ".";
        m.set_int(p + "d_model", static_cast<long>(e.d_model));
        m.set_int(p + "n_heads", static_cast<long>(e.n_heads));
        m.set_int(p + "layers", static_cast<long>(e.n_layers));
        m.set_int(p + "ff_dim", static_cast<long>(e.ff_dim));
        m.set_int(p + "group_size", static_cast<long>(e.group_size));
    }
    if (!modalities.empty() && mode != FusionMode::LinearCph) {
        const auto& h = heads.at(modalities.front());
        m.set_int("head.trees", static_cast<long>(h.n_trees));
        m.set_int("head.depth", static_cast<long>(h.depth));
        m.set_int("head.out_dim", static_cast<long>(h.out_dim));
    }
    if (mode == FusionMode::Early || mode == FusionMode::Intermediate) {
        m.set_int("fusion_head.trees", static_cast<long>(fusion_head.n_trees));
        m.set_int("fusion_head.depth", static_cast<long>(fusion_head.depth));
        m.set_int("fusion_head.out_dim", static_cast<long>(fusion_head.out_dim));
    }
    return m;
}

FusionModel FusionModel::create(Params& params, const FusionSpec& spec,
                                const std::map<std::string, std::vector<FeatureSpec>>& features,
                                std::uint64_t seed) {
    spec.validate();
    FusionModel model;
    model.spec_ = spec;
    Rng root(seed);
    if (spec.mode == FusionMode::LinearCph) {
        const auto& f = features.at(spec.modalities.front());
        model.linear_dim_ = f.size();
        params.add("cph.w", Tensor(f.size(), 1));
        params.add("cph.b", Tensor(1, 1));
        return model;
    }
    std::uint64_t stream = 0;
    for (const auto& name : spec.modalities) {
        Rng enc_rng = root.fork(stream++);
        Rng head_rng = root.fork(stream++);
        const auto& f = features.at(name);
        model.encoders_.push_back(
            Encoder::create(params, "enc." + name + ".", f, spec.encoders.at(name), enc_rng));
        model.heads_.push_back(OdstHead::create(params, "head." + name + ".",
                                                model.encoders_.back().out_dim(),
                                                spec.heads.at(name), head_rng));
    }
    if (spec.mode == FusionMode::Early || spec.mode == FusionMode::Intermediate) {
        Rng fusion_rng = root.fork(stream++);
        model.fusion_head_ = OdstHead::create(params, "fusion.head.", model.fused_dim(),
                                              spec.fusion_head, fusion_rng);
    }
    return model;
}

FusionModel FusionModel::attach(const FusionSpec& spec,
                                const std::map<std::string, std::vector<FeatureSpec>>& features) {
    spec.validate();
    FusionModel model;
    model.spec_ = spec;
    if (spec.mode == FusionMode::LinearCph) {
        model.linear_dim_ = features.at(spec.modalities.front()).size();
        return model;
    }
    for (const auto& name : spec.modalities) {
        model.encoders_.push_back(
            Encoder::attach("enc." + name + ".", features.at(name), spec.encoders.at(name)));
        model.heads_.push_back(OdstHead::attach("head." + name + ".",
                                                model.encoders_.back().out_dim(),
                                                spec.heads.at(name)));
    }
    if (spec.mode == FusionMode::Early || spec.mode == FusionMode::Intermediate) {
        model.fusion_head_ = OdstHead::attach("fusion.head.", model.fused_dim(),
                                              spec.fusion_head);
    }
    return model;
}

void FusionModel::apply_freezing(Params& params) const {
    if (spec_.mode == FusionMode::Early) {
        // "kept frozen throughout training": unimodal encoders and heads
        for (const auto& name : spec_.modalities) {
            params.set_trainable_prefix("enc." + name + ".", false);
            params.set_trainable_prefix("head." + name + ".", false);
        }
        // frozen embedding rows must stay frozen regardless of mode
    } else if (spec_.mode == FusionMode::Intermediate) {
        for (const auto& name : spec_.modalities) {
            params.set_trainable_prefix("enc." + name + ".", true);
            params.set_trainable_prefix("head." + name + ".", true);
        }
    }
    // structural zeros never train
    for (auto& [name, e] : params.entries()) {
        if (name.find("embed.dir_missing") != std::string::npos ||
            name.find("embed.pad") != std::string::npos) {
            e.trainable = false;
        }
    }
}

std::size_t FusionModel::fused_dim() const {
    std::size_t d = 0;
    for (const auto& enc : encoders_) d += enc.out_dim();
    return d;
}

const Encoder& FusionModel::encoder(const std::string& modality) const {
    for (std::size_t i = 0; i < spec_.modalities.size(); ++i) {
        if (spec_.modalities[i] == modality) return encoders_[i];
    }
    throw ContractError("model has no modality " + modality);
}

const OdstHead& FusionModel::head(const std::string& modality) const {
    for (std::size_t i = 0; i < spec_.modalities.size(); ++i) {
        if (spec_.modalities[i] == modality) return heads_[i];
    }
    throw ContractError("model has no modality " + modality);
}

NodeId FusionModel::fused_representation(Graph& g, Params& params, const Cohort& cohort,
                                         const std::vector<std::size_t>& rows) const {
    if (spec_.mode != FusionMode::Early && spec_.mode != FusionMode::Intermediate) {
        throw ContractError("fused forward requires an early or intermediate model");
    }
    std::vector<NodeId> parts;
    parts.reserve(encoders_.size());
    for (std::size_t i = 0; i < encoders_.size(); ++i) {
        const auto& name = spec_.modalities[i];
        if (!cohort.has_block(name)) {
            throw ContractError("modality " + name +
                                " is configured in the model but absent from the cohort; "
                                "absence must be expressed via masks");
        }
        auto bound = encoders_[i].bind(g, params);
        parts.push_back(encoders_[i].encode_rows(g, bound, cohort.block(name), rows));
    }
    return parts.size() == 1 ? parts[0] : g.concat_cols(parts);
}

NodeId FusionModel::forward_fused(Graph& g, Params& params, const Cohort& cohort,
                                  const std::vector<std::size_t>& rows) const {
    NodeId h_m = fused_representation(g, params, cohort, rows);
    auto bound = fusion_head_->bind(g, params);
    return fusion_head_->risk(g, bound, h_m);
}

NodeId FusionModel::forward_unimodal(Graph& g, Params& params, const Cohort& cohort,
                                     const std::string& modality,
                                     const std::vector<std::size_t>& rows) const {
    for (std::size_t i = 0; i < spec_.modalities.size(); ++i) {
        if (spec_.modalities[i] != modality) continue;
        auto enc_bound = encoders_[i].bind(g, params);
        NodeId h = encoders_[i].encode_rows(g, enc_bound, cohort.block(modality), rows);
        auto head_bound = heads_[i].bind(g, params);
        return heads_[i].risk(g, head_bound, h);
    }
    throw ContractError("model has no modality " + modality);
}

NodeId FusionModel::forward_linear(Graph& g, Params& params, const Cohort& cohort,
                                   const std::vector<std::size_t>& rows) const {
    if (spec_.mode != FusionMode::LinearCph) {
        throw ContractError("forward_linear requires a linear-cph model");
    }
    const ModalityBlock& block = cohort.block(spec_.modalities.front());
    if (block.width() != linear_dim_) {
        throw ContractError("block width does not match linear model dimension");
    }
    Tensor x(rows.size(), linear_dim_);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        for (std::size_t f = 0; f < linear_dim_; ++f) {
            // unobserved cells contribute zero (mean-imputed upstream)
            x(r, f) = block.cell_observed(rows[r], f) ? block.values(rows[r], f) : 0.0;
        }
    }
    return g.add_rowvec(g.matmul(g.input(std::move(x)), g.param(params, "cph.w")),
                        g.param(params, "cph.b"));
}

std::vector<double> average_ranks(const std::vector<double>& values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && values[order[j]] == values[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t k = i; k < j; ++k) ranks[order[k]] = avg;
        i = j;
    }
    return ranks;
}

std::vector<double> late_fuse(const std::vector<std::vector<double>>& modality_scores,
                              const std::vector<std::vector<bool>>* available) {
    if (modality_scores.size() < 2) throw ContractError("late fusion needs at least two score vectors");
    const std::size_t n = modality_scores.front().size();
    for (const auto& v : modality_scores) {
        if (v.size() != n) throw ContractError("late fusion score vectors differ in length");
    }
    if (available) {
        if (available->size() != modality_scores.size()) {
            throw ContractError("late fusion availability shape mismatch");
        }
        for (const auto& a : *available) {
            if (a.size() != n) throw ContractError("late fusion availability shape mismatch");
        }
    }

    std::vector<double> fused(n, 0.0);
    for (std::size_t m = 0; m < modality_scores.size(); ++m) {
        std::vector<std::size_t> with;
        for (std::size_t i = 0; i < n; ++i) {
            if (!available || (*available)[m][i]) with.push_back(i);
        }
        if (with.empty()) throw ContractError("late fusion: a modality has no scored patients");
        std::vector<double> sub;
        sub.reserve(with.size());
        for (std::size_t i : with) sub.push_back(modality_scores[m][i]);
        const std::vector<double> ranks = average_ranks(sub);
        // patients lacking the modality contribute its median rank
        const double median_rank = 0.5 * static_cast<double>(with.size() + 1);
        std::vector<double> full(n, median_rank);
        for (std::size_t k = 0; k < with.size(); ++k) full[with[k]] = ranks[k];
        for (std::size_t i = 0; i < n; ++i) fused[i] += full[i];
    }
    return fused;
}

}  // namespace msurv
