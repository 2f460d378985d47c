#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "msurv/cohort.hpp"
#include "msurv/config.hpp"
#include "msurv/encoder.hpp"
#include "msurv/odst.hpp"

namespace msurv {

enum class FusionMode { Unimodal, Early, Intermediate, Late, LinearCph };

FusionMode fusion_mode_from_string(const std::string& s);
std::string to_string(FusionMode mode);

/// Model layout: which modalities participate and with which hyperparameters.
/// Modalities are kept in lexical name order; concatenation follows it.
struct FusionSpec {
    FusionMode mode = FusionMode::Intermediate;
    std::vector<std::string> modalities;              // sorted lexically
    std::map<std::string, EncoderConfig> encoders;    // per modality
    std::map<std::string, OdstConfig> heads;          // per modality (unimodal)
    OdstConfig fusion_head;                           // early / intermediate

    static FusionSpec from_manifest(const KvConfig& manifest);
    KvConfig to_manifest() const;
    void validate() const;
};

/// Assembled multimodal model. Parameter naming:
///   enc.<modality>.*   unimodal encoder
///   head.<modality>.*  unimodal ODST head
///   fusion.head.*      multimodal ODST head and FC
/// LinearCph uses cph.w / cph.b over the first configured modality.
class FusionModel {
public:
    static FusionModel create(Params& params, const FusionSpec& spec,
                              const std::map<std::string, std::vector<FeatureSpec>>& features,
                              std::uint64_t seed);
    static FusionModel attach(const FusionSpec& spec,
                              const std::map<std::string, std::vector<FeatureSpec>>& features);

    /// Applies the mode's trainability contract to the store: early freezes
    /// every unimodal encoder; linear-cph and late have no shared trainables
    /// beyond their own parameters.
    void apply_freezing(Params& params) const;

    /// Fused risk scores (batch x 1) for early/intermediate models. Every
    /// configured modality must exist as a cohort block; absence for a
    /// patient is expressed through its masks.
    NodeId forward_fused(Graph& g, Params& params, const Cohort& cohort,
                         const std::vector<std::size_t>& rows) const;

    /// Concatenated encoder outputs h_m (batch x sum of h widths).
    NodeId fused_representation(Graph& g, Params& params, const Cohort& cohort,
                                const std::vector<std::size_t>& rows) const;

    /// Unimodal risk scores through one modality's encoder + head.
    NodeId forward_unimodal(Graph& g, Params& params, const Cohort& cohort,
                            const std::string& modality,
                            const std::vector<std::size_t>& rows) const;

    /// Linear risk w . x + b over a preprocessed block; unobserved cells
    /// contribute zero.
    NodeId forward_linear(Graph& g, Params& params, const Cohort& cohort,
                          const std::vector<std::size_t>& rows) const;

    const FusionSpec& spec() const { return spec_; }
    const Encoder& encoder(const std::string& modality) const;
    const OdstHead& head(const std::string& modality) const;
    const OdstHead& fusion_head() const { return fusion_head_.value(); }
    std::size_t fused_dim() const;

private:
    FusionSpec spec_;
    std::vector<Encoder> encoders_;
    std::vector<OdstHead> heads_;
    std::optional<OdstHead> fusion_head_;
    std::size_t linear_dim_ = 0;
};

/// Decision-level fusion: converts each modality's cohort-level scores to
/// ascending-risk ranks (average ranks on ties) and sums them. A patient
/// lacking a modality receives that modality's median rank. available ==
/// nullptr means every patient has every modality.
std::vector<double> late_fuse(const std::vector<std::vector<double>>& modality_scores,
                              const std::vector<std::vector<bool>>* available = nullptr);

/// Average ascending ranks (1-based) with ties sharing their mean rank.
std::vector<double> average_ranks(const std::vector<double>& values);

}  // namespace msurv
