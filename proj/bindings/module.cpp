#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "msurv/checkpoint.hpp"
#include "msurv/config.hpp"
#include "msurv/cohort.hpp"
#include "msurv/fusion.hpp"
#include "msurv/metrics.hpp"
#include "msurv/survloss.hpp"
#include "msurv/trainer.hpp"

namespace py = pybind11;
using namespace msurv;

namespace {

SynthSpec spec_from_dict(const py::dict& d) {
    SynthSpec spec;
    spec.n = d["n"].cast<std::size_t>();
    spec.latent_dim = d["latent_dim"].cast<std::size_t>();
    spec.risk_weights = d["risk_weights"].cast<std::vector<double>>();
    if (d.contains("interaction")) spec.interaction = d["interaction"].cast<double>();
    if (d.contains("interaction_i")) spec.interaction_i = d["interaction_i"].cast<std::size_t>();
    if (d.contains("interaction_j")) spec.interaction_j = d["interaction_j"].cast<std::size_t>();
    if (d.contains("censor_rate")) spec.censor_rate = d["censor_rate"].cast<double>();
    if (d.contains("base_hazard")) spec.base_hazard = d["base_hazard"].cast<double>();
    for (const auto& item : d["modalities"].cast<py::list>()) {
        const py::dict m = item.cast<py::dict>();
        SynthModality mod;
        mod.name = m["name"].cast<std::string>();
        mod.width = m["width"].cast<std::size_t>();
        mod.latent_lo = m["latent_lo"].cast<std::size_t>();
        mod.latent_hi = m["latent_hi"].cast<std::size_t>();
        if (m.contains("modality_missing")) {
            mod.modality_missing = m["modality_missing"].cast<double>();
        }
        if (m.contains("feature_missing")) {
            mod.feature_missing = m["feature_missing"].cast<double>();
        }
        if (m.contains("noise_std")) mod.noise_std = m["noise_std"].cast<double>();
        spec.modalities.push_back(mod);
    }
    return spec;
}

py::dict cv_to_dict(const Cohort& cohort, const CvResult& cv) {
    py::dict out;
    py::list folds;
    for (const auto& rot : cv.rotations) {
        py::dict f;
        f["fold"] = rot.rotation;
        f["n"] = rot.metrics.n;
        f["n_events"] = rot.metrics.n_events;
        f["harrell_c"] = rot.metrics.harrell;
        f["uno_c"] = rot.metrics.uno;
        f["td_auc_mean"] = rot.metrics.td_auc.mean;
        folds.append(f);
    }
    out["folds"] = folds;
    out["harrell_mean"] = cv.harrell.mean;
    out["harrell_sem"] = cv.harrell.sem;
    out["uno_mean"] = cv.uno.mean;
    out["uno_sem"] = cv.uno.sem;
    out["td_auc_mean"] = cv.td_auc.mean;
    out["td_auc_sem"] = cv.td_auc.sem;
    py::dict pooled;
    for (std::size_t i = 0; i < cohort.n(); ++i) {
        if (cv.pooled_fold[i] >= 0) pooled[py::str(cohort.ids[i])] = cv.pooled_scores[i];
    }
    out["pooled_scores"] = pooled;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "missing-aware multimodal survival toolkit (C++ core)";

    py::register_exception<Error>(m, "MsurvError");

    py::class_<ModalityBlock>(m, "ModalityBlock")
        .def_readonly("name", &ModalityBlock::name)
        .def_property_readonly("present", [](const ModalityBlock& b) { return b.present; })
        .def("width", &ModalityBlock::width)
        .def("missing_fraction", &ModalityBlock::missing_fraction)
        .def("value", [](const ModalityBlock& b, std::size_t p, std::size_t f) {
            return b.values(p, f);
        })
        .def("observed", &ModalityBlock::cell_observed);

    py::class_<Cohort>(m, "Cohort")
        .def_property_readonly("ids", [](const Cohort& c) { return c.ids; })
        .def_property_readonly("times", [](const Cohort& c) { return c.times; })
        .def_property_readonly("events", [](const Cohort& c) { return c.events; })
        .def("n", &Cohort::n)
        .def("block", py::overload_cast<const std::string&>(&Cohort::block, py::const_),
             py::return_value_policy::reference_internal)
        .def_property_readonly("modalities", [](const Cohort& c) {
            std::vector<std::string> names;
            for (const auto& b : c.blocks) names.push_back(b.name);
            return names;
        });

    m.def(
        "synth_cohort",
        [](const py::dict& spec, std::uint64_t seed) {
            const SynthResult r = synth_cohort(spec_from_dict(spec), seed);
            return py::make_tuple(r.cohort, r.true_risk);
        },
        py::arg("spec"), py::arg("seed"),
        "Generate a synthetic proportional-hazards cohort; returns (cohort, true_risk).");

    m.def(
        "load_cohort",
        [](const std::string& outcome, const std::map<std::string, std::string>& blocks,
           std::optional<std::string> features) {
            std::vector<BlockSource> sources;
            for (const auto& [name, path] : blocks) sources.push_back({name, path});
            return load_cohort(outcome, sources, features);
        },
        py::arg("outcome"), py::arg("blocks"), py::arg("features") = std::nullopt);

    m.def("write_cohort", &write_cohort, py::arg("cohort"), py::arg("directory"));

    m.def(
        "apply_missingness",
        [](const Cohort& c, const std::string& modality, double fraction, std::uint64_t seed) {
            return apply_missingness(c, modality, fraction, seed);
        },
        py::arg("cohort"), py::arg("modality"), py::arg("fraction"), py::arg("seed"));

    m.def(
        "stratified_kfold",
        [](const Cohort& c, int k, std::uint64_t seed) {
            return stratified_kfold(c, k, seed).assignment;
        },
        py::arg("cohort"), py::arg("k"), py::arg("seed"),
        "Event-stratified fold assignment per patient.");

    // ---- survival loss ----
    m.def(
        "cox_nll",
        [](std::vector<double> scores, std::vector<double> times, std::vector<bool> events) {
            return cox_nll(BatchOutcome{std::move(scores), std::move(times), std::move(events)});
        },
        py::arg("scores"), py::arg("times"), py::arg("events"));
    m.def(
        "cox_nll_grad",
        [](std::vector<double> scores, std::vector<double> times, std::vector<bool> events) {
            return cox_nll_grad(
                BatchOutcome{std::move(scores), std::move(times), std::move(events)});
        },
        py::arg("scores"), py::arg("times"), py::arg("events"));

    // ---- metrics ----
    m.def("harrell_c", &harrell_c, py::arg("scores"), py::arg("times"), py::arg("events"));
    m.def("uno_c", &uno_c, py::arg("scores"), py::arg("times"), py::arg("events"),
          py::arg("tau") = std::nullopt);
    m.def("cumulative_dynamic_auc", &cumulative_dynamic_auc, py::arg("scores"), py::arg("times"),
          py::arg("events"), py::arg("horizon"));
    m.def(
        "td_auc",
        [](const std::vector<double>& s, const std::vector<double>& t,
           const std::vector<bool>& e) {
            const TdAucResult r = td_auc_mean(s, t, e);
            return py::make_tuple(r.mean, r.horizons, r.values);
        },
        py::arg("scores"), py::arg("times"), py::arg("events"),
        "Mean cumulative/dynamic AUC at the 25/50/75th observed-event-time percentiles.");
    m.def(
        "km_estimate",
        [](const std::vector<double>& t, const std::vector<bool>& e) {
            const SurvivalCurve c = km_estimate(t, e);
            return py::make_tuple(c.times, c.survival, c.at_risk, c.events);
        },
        py::arg("times"), py::arg("events"));
    m.def(
        "logrank_test",
        [](const std::vector<double>& ta, const std::vector<bool>& ea,
           const std::vector<double>& tb, const std::vector<bool>& eb) {
            const LogRankResult r = logrank_test(ta, ea, tb, eb);
            return py::make_tuple(r.chi_square, r.p_value);
        },
        py::arg("times_a"), py::arg("events_a"), py::arg("times_b"), py::arg("events_b"));
    m.def("optimal_threshold", &optimal_threshold, py::arg("scores"), py::arg("times"),
          py::arg("events"));
    m.def(
        "late_fuse",
        [](const std::vector<std::vector<double>>& scores,
           std::optional<std::vector<std::vector<bool>>> available) {
            return late_fuse(scores, available ? &*available : nullptr);
        },
        py::arg("scores"), py::arg("available") = std::nullopt);

    // ---- training ----
    m.def(
        "run_cv",
        [](const Cohort& cohort, const std::string& manifest_text,
           const std::string& train_config_text, int k, int jobs) {
            const KvConfig manifest = KvConfig::parse_string(manifest_text, "<manifest>");
            const KvConfig train_cfg = KvConfig::parse_string(train_config_text, "<train>");
            const FusionSpec spec = FusionSpec::from_manifest(manifest);
            const TrainConfig config = TrainConfig::from_config(train_cfg);
            const FoldPlan plan = stratified_kfold(cohort, k, config.seed);
            CvOptions options;
            options.jobs = jobs;
            const CvResult cv = run_cv(cohort, spec, config, plan, options);
            return cv_to_dict(cohort, cv);
        },
        py::arg("cohort"), py::arg("manifest"), py::arg("train_config"), py::arg("k") = 5,
        py::arg("jobs") = 1,
        "Cross-validated training; manifest and train_config use the key = value grammar.");
}
