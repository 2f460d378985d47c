#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "msurv/checkpoint.hpp"
#include "msurv/config.hpp"
#include "msurv/cohort.hpp"
#include "msurv/fusion.hpp"
#include "msurv/metrics.hpp"
#include "msurv/trainer.hpp"

namespace fs = std::filesystem;
using namespace msurv;

namespace {

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

// ---- synth spec <-> config ----

SynthSpec synth_spec_from_config(const KvConfig& cfg) {
    SynthSpec spec;
    spec.n = static_cast<std::size_t>(cfg.get_int("cohort.n"));
    spec.latent_dim = static_cast<std::size_t>(cfg.get_int("cohort.latent_dim"));
    for (const auto& w : cfg.get_list("cohort.risk_weights")) {
        spec.risk_weights.push_back(std::stod(w));
    }
    spec.interaction = cfg.get_double_or("cohort.interaction", 0.0);
    spec.interaction_i = static_cast<std::size_t>(cfg.get_int_or("cohort.interaction_i", 0));
    spec.interaction_j = static_cast<std::size_t>(cfg.get_int_or("cohort.interaction_j", 1));
    spec.censor_rate = cfg.get_double_or("cohort.censor_rate", 0.3);
    spec.base_hazard = cfg.get_double_or("cohort.base_hazard", 2e-3);

    // modality sections: [modality.<name>]
    std::vector<std::string> names;
    const std::string prefix = "modality.";
    for (const auto& [key, value] : cfg.values()) {
        if (key.rfind(prefix, 0) != 0) continue;
        const auto rest = key.substr(prefix.size());
        const auto dot = rest.find('.');
        if (dot == std::string::npos) continue;
        const std::string name = rest.substr(0, dot);
        if (names.empty() || names.back() != name) names.push_back(name);
    }
    for (const auto& name : names) {
        SynthModality m;
        m.name = name;
        const std::string p = prefix + name + ".";
        m.width = static_cast<std::size_t>(cfg.get_int(p + "width"));
        m.latent_lo = static_cast<std::size_t>(cfg.get_int(p + "latent_lo"));
        m.latent_hi = static_cast<std::size_t>(cfg.get_int(p + "latent_hi"));
        m.modality_missing = cfg.get_double_or(p + "modality_missing", 0.0);
        m.feature_missing = cfg.get_double_or(p + "feature_missing", 0.0);
        m.noise_std = cfg.get_double_or(p + "noise_std", 0.5);
        spec.modalities.push_back(m);
    }
    return spec;
}

void synth_spec_to_config(const SynthSpec& spec, KvConfig& cfg) {
    cfg.set_int("cohort.n", static_cast<long>(spec.n));
    cfg.set_int("cohort.latent_dim", static_cast<long>(spec.latent_dim));
    std::string w;
    for (double v : spec.risk_weights) {
        if (!w.empty()) w += ",";
        w += fmt(v);
    }
    cfg.set("cohort.risk_weights", w);
    cfg.set_double("cohort.interaction", spec.interaction);
    cfg.set_int("cohort.interaction_i", static_cast<long>(spec.interaction_i));
    cfg.set_int("cohort.interaction_j", static_cast<long>(spec.interaction_j));
    cfg.set_double("cohort.censor_rate", spec.censor_rate);
    cfg.set_double("cohort.base_hazard", spec.base_hazard);
    for (const auto& m : spec.modalities) {
        const std::string p = "modality." + m.name + ".";
        cfg.set_int(p + "width", static_cast<long>(m.width));
        cfg.set_int(p + "latent_lo", static_cast<long>(m.latent_lo));
        cfg.set_int(p + "latent_hi", static_cast<long>(m.latent_hi));
        cfg.set_double(p + "modality_missing", m.modality_missing);
        cfg.set_double(p + "feature_missing", m.feature_missing);
        cfg.set_double(p + "noise_std", m.noise_std);
    }
}

// ---- cohort loading shared by train/eval/sweep ----

struct CohortPaths {
    std::string outcome;
    std::vector<BlockSource> blocks;
    std::optional<std::string> features;
};

CohortPaths cohort_paths_from_config(const KvConfig& cfg) {
    CohortPaths paths;
    paths.outcome = cfg.get("paths.outcome");
    for (const auto& key : cfg.keys_in("paths.block")) {
        paths.blocks.push_back({key, cfg.get("paths.block." + key)});
    }
    if (cfg.has("paths.features")) paths.features = cfg.get("paths.features");
    if (paths.blocks.empty()) throw ConfigError("no modality blocks configured");
    return paths;
}

void cohort_paths_to_config(const CohortPaths& paths, KvConfig& cfg) {
    cfg.set("paths.outcome", paths.outcome);
    for (const auto& b : paths.blocks) cfg.set("paths.block." + b.name, b.csv_path);
    if (paths.features) cfg.set("paths.features", *paths.features);
}

/// --cohort DIR shorthand: outcome.csv + every block listed in blocks.spec.
CohortPaths cohort_paths_from_dir(const std::string& dir) {
    CohortPaths paths;
    paths.outcome = (fs::path(dir) / "outcome.csv").string();
    const std::string spec_path = (fs::path(dir) / "blocks.spec").string();
    if (fs::exists(spec_path)) {
        paths.features = spec_path;
        const KvConfig spec = KvConfig::parse_file(spec_path);
        std::vector<std::string> names;
        for (const auto& [key, value] : spec.values()) {
            const auto dot = key.find('.');
            if (dot == std::string::npos) continue;
            const std::string name = key.substr(0, dot);
            if (names.empty() || names.back() != name) names.push_back(name);
        }
        for (const auto& name : names) {
            paths.blocks.push_back({name, (fs::path(dir) / (name + ".csv")).string()});
        }
    }
    if (paths.blocks.empty()) {
        throw ConfigError("cohort directory " + dir + " has no blocks.spec");
    }
    return paths;
}

// ---- fold plan persistence ----

void write_folds(const Cohort& cohort, const FoldPlan& plan, const std::string& path) {
    std::ofstream out(path);
    out << "patient_id,fold\n";
    for (std::size_t i = 0; i < cohort.n(); ++i) {
        out << cohort.ids[i] << "," << plan.assignment[i] << "\n";
    }
}

FoldPlan read_folds(const Cohort& cohort, const std::string& path, int k) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open fold file: " + path);
    std::map<std::string, int> by_id;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto comma = line.find(',');
        by_id[trim(line.substr(0, comma))] = std::stoi(line.substr(comma + 1));
    }
    FoldPlan plan;
    plan.k = k;
    for (const auto& id : cohort.ids) {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw ParseError("fold file lacks patient " + id);
        plan.assignment.push_back(it->second);
    }
    return plan;
}

// ---- report writers ----

void write_cv_report(const CvResult& cv, const std::string& path) {
    std::ofstream out(path);
    out << "fold,n,n_events,harrell_c,uno_c,td_auc_mean,td_auc_p25,td_auc_p50,td_auc_p75\n";
    auto horizon_cell = [](const MetricsReport& m, std::size_t idx) -> std::string {
        return idx < m.td_auc.values.size() ? fmt6(m.td_auc.values[idx]) : std::string();
    };
    for (const auto& rot : cv.rotations) {
        out << rot.rotation << "," << rot.metrics.n << "," << rot.metrics.n_events << ","
            << fmt6(rot.metrics.harrell) << "," << fmt6(rot.metrics.uno) << ","
            << fmt6(rot.metrics.td_auc.mean) << "," << horizon_cell(rot.metrics, 0) << ","
            << horizon_cell(rot.metrics, 1) << "," << horizon_cell(rot.metrics, 2) << "\n";
    }
    out << "mean,,," << fmt6(cv.harrell.mean) << "," << fmt6(cv.uno.mean) << ","
        << fmt6(cv.td_auc.mean) << ",,,\n";
    out << "sem,,," << fmt6(cv.harrell.sem) << "," << fmt6(cv.uno.sem) << ","
        << fmt6(cv.td_auc.sem) << ",,,\n";
}

void write_pooled_scores(const Cohort& cohort, const CvResult& cv, const std::string& path) {
    std::ofstream out(path);
    out << "patient_id,fold,score\n";
    for (std::size_t i = 0; i < cohort.n(); ++i) {
        if (cv.pooled_fold[i] < 0) continue;
        out << cohort.ids[i] << "," << cv.pooled_fold[i] << "," << fmt(cv.pooled_scores[i])
            << "\n";
    }
}

struct PooledScores {
    std::vector<std::string> ids;
    std::vector<double> scores;
};

PooledScores read_pooled_scores(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open scores file: " + path);
    std::string line;
    std::getline(in, line);
    PooledScores p;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        if (c1 == std::string::npos || c2 == std::string::npos) {
            throw ParseError(path + ": malformed row '" + line + "'");
        }
        p.ids.push_back(trim(line.substr(0, c1)));
        p.scores.push_back(std::stod(line.substr(c2 + 1)));
    }
    if (p.ids.empty()) throw ParseError(path + ": no scores");
    return p;
}

// ---- train command core (shared with rerun-from-config) ----

struct TrainInvocation {
    KvConfig resolved;
    std::string outdir;
    int jobs = 1;
};

int run_train(const TrainInvocation& inv) {
    const CohortPaths paths = cohort_paths_from_config(inv.resolved);
    const Cohort cohort = load_cohort(paths.outcome, paths.blocks, paths.features);

    const FusionSpec spec = FusionSpec::from_manifest(inv.resolved);
    const TrainConfig config = TrainConfig::from_config(inv.resolved);
    const int k = static_cast<int>(inv.resolved.get_int_or("folds.k", 5));

    fs::create_directories(inv.outdir);
    fs::create_directories(fs::path(inv.outdir) / "checkpoints");
    fs::create_directories(fs::path(inv.outdir) / "logs");

    const FoldPlan plan = stratified_kfold(cohort, k, config.seed);
    write_folds(cohort, plan, (fs::path(inv.outdir) / "folds.csv").string());

    CvOptions options;
    options.jobs = inv.jobs;
    options.save_dir = (fs::path(inv.outdir) / "checkpoints").string();
    if (inv.resolved.has("paths.pretrained")) {
        options.pretrained_dir = inv.resolved.get("paths.pretrained");
    }

    const CvResult cv = run_cv(cohort, spec, config, plan, options);

    write_cv_report(cv, (fs::path(inv.outdir) / "cv_report.csv").string());
    write_pooled_scores(cohort, cv, (fs::path(inv.outdir) / "pooled_scores.csv").string());
    for (const auto& rot : cv.rotations) {
        const std::string stem =
            (fs::path(inv.outdir) / "logs" / ("fold" + std::to_string(rot.rotation))).string();
        if (!rot.train_log.empty()) write_epoch_log(rot.train_log, stem + ".csv");
        for (const auto& [name, log] : rot.pretrain_logs) {
            write_epoch_log(log, stem + ".pre." + name + ".csv");
        }
    }
    inv.resolved.write_file((fs::path(inv.outdir) / "config.resolved").string());

    std::printf("cv harrell %s +/- %s | uno %s +/- %s | td-auc %s +/- %s\n",
                fmt6(cv.harrell.mean).c_str(), fmt6(cv.harrell.sem).c_str(),
                fmt6(cv.uno.mean).c_str(), fmt6(cv.uno.sem).c_str(),
                fmt6(cv.td_auc.mean).c_str(), fmt6(cv.td_auc.sem).c_str());
    return 0;
}

// Rebuild the per-rotation evaluation context of a finished run.
struct RunContext {
    KvConfig resolved;
    Cohort cohort;
    FusionSpec spec;
    TrainConfig config;
    FoldPlan plan;
    std::string run_dir;
};

RunContext load_run(const std::string& run_dir) {
    RunContext ctx;
    ctx.run_dir = run_dir;
    ctx.resolved = KvConfig::parse_file((fs::path(run_dir) / "config.resolved").string());
    const CohortPaths paths = cohort_paths_from_config(ctx.resolved);
    ctx.cohort = load_cohort(paths.outcome, paths.blocks, paths.features);
    ctx.spec = FusionSpec::from_manifest(ctx.resolved);
    ctx.config = TrainConfig::from_config(ctx.resolved);
    const int k = static_cast<int>(ctx.resolved.get_int_or("folds.k", 5));
    ctx.plan = read_folds(ctx.cohort, (fs::path(run_dir) / "folds.csv").string(), k);
    return ctx;
}

/// Test-fold metrics of one stored rotation under an optionally masked cohort.
MetricsReport evaluate_rotation(const RunContext& ctx, int rotation, const Cohort& cohort) {
    const auto roles = ctx.plan.roles(rotation);
    Cohort prepped = preprocess_for_rows(cohort, roles.train);
    Params params = load_checkpoint(
        (fs::path(ctx.run_dir) / "checkpoints" / ("fold" + std::to_string(rotation) + ".ckpt"))
            .string());
    std::map<std::string, std::vector<FeatureSpec>> features;
    for (const auto& name : ctx.spec.modalities) {
        features[name] = prepped.block(name).features;
    }
    FusionModel model = FusionModel::attach(ctx.spec, features);

    std::vector<std::size_t> rows = roles.test;
    if (ctx.spec.mode == FusionMode::Unimodal) {
        std::vector<std::size_t> present_rows;
        const auto& present = prepped.block(ctx.spec.modalities.front()).present;
        for (std::size_t r : rows) {
            if (present[r]) present_rows.push_back(r);
        }
        rows = present_rows;
    }
    const std::vector<double> scores = score_rows(model, params, prepped, rows);
    std::vector<double> t;
    std::vector<bool> e;
    for (std::size_t r : rows) {
        t.push_back(prepped.times[r]);
        e.push_back(prepped.events[r]);
    }
    return evaluate_split(scores, t, e, rotation);
}

int run_eval(const std::string& run_dir, const std::string& outdir) {
    const RunContext ctx = load_run(run_dir);
    std::vector<double> h, u, a;
    fs::create_directories(outdir);
    std::ofstream out(fs::path(outdir) / "eval_report.csv");
    out << "fold,n,n_events,harrell_c,uno_c,td_auc_mean\n";
    for (int r = 0; r < ctx.plan.k; ++r) {
        const MetricsReport m = evaluate_rotation(ctx, r, ctx.cohort);
        out << r << "," << m.n << "," << m.n_events << "," << fmt6(m.harrell) << ","
            << fmt6(m.uno) << "," << fmt6(m.td_auc.mean) << "\n";
        h.push_back(m.harrell);
        u.push_back(m.uno);
        a.push_back(m.td_auc.mean);
    }
    const auto hs = summarize(h), us = summarize(u), as = summarize(a);
    out << "mean,,," << fmt6(hs.mean) << "," << fmt6(us.mean) << "," << fmt6(as.mean) << "\n";
    out << "sem,,," << fmt6(hs.sem) << "," << fmt6(us.sem) << "," << fmt6(as.sem) << "\n";
    std::printf("eval harrell %s +/- %s over %d folds\n", fmt6(hs.mean).c_str(),
                fmt6(hs.sem).c_str(), ctx.plan.k);
    return 0;
}

int run_sweep(const std::string& run_dir, const std::string& modality,
              const std::vector<double>& fractions, std::uint64_t seed,
              const std::string& outdir) {
    const RunContext ctx = load_run(run_dir);
    if (!ctx.cohort.has_block(modality)) throw ConfigError("no modality named " + modality);
    const double baseline = ctx.cohort.block(modality).missing_fraction();
    double prev = -1.0;
    for (double f : fractions) {
        if (f < baseline) {
            throw ConfigError("sweep fraction " + fmt6(f) + " below the natural baseline " +
                              fmt6(baseline));
        }
        if (f < prev) throw ConfigError("sweep fractions must be ascending");
        prev = f;
    }

    fs::create_directories(outdir);
    std::ofstream out(fs::path(outdir) / "sweep.csv");
    out << "fraction,harrell_mean,harrell_sem\n";
    for (double f : fractions) {
        // the cohort-level fraction maps to masking the same share of each
        // fold's still-present patients, so the baseline grid point is an
        // exact no-op on every fold
        const double extra = baseline >= 1.0 ? 0.0 : (f - baseline) / (1.0 - baseline);
        std::vector<double> h;
        for (int r = 0; r < ctx.plan.k; ++r) {
            const auto roles = ctx.plan.roles(r);
            const auto& present = ctx.cohort.block(modality).present;
            std::size_t absent = 0;
            for (std::size_t i : roles.test) {
                if (!present[i]) ++absent;
            }
            const double fold_base =
                static_cast<double>(absent) / static_cast<double>(roles.test.size());
            const double fold_target = fold_base + (1.0 - fold_base) * extra;
            const Cohort masked = apply_missingness(
                ctx.cohort, modality, fold_target,
                seed + static_cast<std::uint64_t>(r) * 7919ULL, &roles.test);
            h.push_back(evaluate_rotation(ctx, r, masked).harrell);
        }
        const auto s = summarize(h);
        out << fmt6(f) << "," << fmt6(s.mean) << "," << fmt6(s.sem) << "\n";
        std::printf("fraction %s -> harrell %s +/- %s\n", fmt6(f).c_str(), fmt6(s.mean).c_str(),
                    fmt6(s.sem).c_str());
    }
    return 0;
}

int run_stratify(const std::string& scores_path, const std::string& outcome_path,
                 const std::vector<std::string>& endpoint_args, const std::string& outdir) {
    const PooledScores pooled = read_pooled_scores(scores_path);
    const Cohort primary = load_cohort(outcome_path, {});

    // align scores to the outcome cohort
    std::map<std::string, double> by_id;
    for (std::size_t i = 0; i < pooled.ids.size(); ++i) by_id[pooled.ids[i]] = pooled.scores[i];
    std::vector<double> scores, times;
    std::vector<bool> events;
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < primary.n(); ++i) {
        auto it = by_id.find(primary.ids[i]);
        if (it == by_id.end()) continue;
        ids.push_back(primary.ids[i]);
        scores.push_back(it->second);
        times.push_back(primary.times[i]);
        events.push_back(primary.events[i]);
    }
    if (ids.empty()) throw ConfigError("pooled scores do not cover the outcome cohort");

    const double cutoff = optimal_threshold(scores, times, events);

    fs::create_directories(outdir);
    {
        std::ofstream out(fs::path(outdir) / "risk_groups.csv");
        out << "patient_id,pooled_score,risk_group\n";
        for (std::size_t i = 0; i < ids.size(); ++i) {
            out << ids[i] << "," << fmt(scores[i]) << ","
                << (scores[i] > cutoff ? "high" : "low") << "\n";
        }
    }

    struct Endpoint {
        std::string name;
        std::string path;
    };
    std::vector<Endpoint> endpoints{{"os", outcome_path}};
    for (const auto& arg : endpoint_args) {
        const auto eq = arg.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("endpoint must be name=path, got '" + arg + "'");
        }
        endpoints.push_back({arg.substr(0, eq), arg.substr(eq + 1)});
    }

    std::ofstream curves(fs::path(outdir) / "km_curves.csv");
    curves << "endpoint,risk_group,time,survival,at_risk,events\n";
    std::ofstream report(fs::path(outdir) / "logrank_report.csv");
    report << "endpoint,cutoff,n_low,n_high,chi_square,p_value\n";

    for (const auto& ep : endpoints) {
        const Cohort outcome = load_cohort(ep.path, {});
        std::vector<double> t_lo, t_hi;
        std::vector<bool> e_lo, e_hi;
        std::map<std::string, std::size_t> outcome_index;
        for (std::size_t i = 0; i < outcome.n(); ++i) outcome_index[outcome.ids[i]] = i;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            auto it = outcome_index.find(ids[i]);
            if (it == outcome_index.end()) continue;
            if (scores[i] > cutoff) {
                t_hi.push_back(outcome.times[it->second]);
                e_hi.push_back(outcome.events[it->second]);
            } else {
                t_lo.push_back(outcome.times[it->second]);
                e_lo.push_back(outcome.events[it->second]);
            }
        }
        if (t_lo.empty() || t_hi.empty()) {
            throw ConfigError("endpoint " + ep.name + " leaves an empty risk group");
        }
        const LogRankResult lr = logrank_test(t_lo, e_lo, t_hi, e_hi);
        report << ep.name << "," << fmt(cutoff) << "," << t_lo.size() << "," << t_hi.size()
               << "," << fmt6(lr.chi_square) << "," << fmt(lr.p_value) << "\n";

        const SurvivalCurve low = km_estimate(t_lo, e_lo);
        for (std::size_t k = 0; k < low.times.size(); ++k) {
            curves << ep.name << ",low," << fmt(low.times[k]) << "," << fmt(low.survival[k])
                   << "," << low.at_risk[k] << "," << low.events[k] << "\n";
        }
        const SurvivalCurve high = km_estimate(t_hi, e_hi);
        for (std::size_t k = 0; k < high.times.size(); ++k) {
            curves << ep.name << ",high," << fmt(high.times[k]) << "," << fmt(high.survival[k])
                   << "," << high.at_risk[k] << "," << high.events[k] << "\n";
        }
        std::printf("%s: logrank p = %s (cutoff %s, %zu low / %zu high)\n", ep.name.c_str(),
                    fmt(lr.p_value).c_str(), fmt6(cutoff).c_str(), t_lo.size(), t_hi.size());
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"missing-aware multimodal survival toolkit"};
    app.require_subcommand(1);

    // ---- synth ----
    auto* synth = app.add_subcommand("synth", "generate a synthetic cohort");
    std::string synth_config, synth_out;
    long synth_seed = -1;
    synth->add_option("--config", synth_config, "generator config file")->required();
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--seed", synth_seed, "seed override");

    // ---- train ----
    auto* train = app.add_subcommand("train", "cross-validated training");
    std::string train_config, train_manifest, train_cohort_dir, train_outcome, train_features,
        train_out, train_pretrained;
    std::vector<std::string> train_blocks;
    long train_seed = -1, train_folds = -1, train_jobs = 1;
    train->add_option("--config", train_config, "base config file (train.*, paths.*, model.*)");
    train->add_option("--manifest", train_manifest, "model manifest file");
    train->add_option("--cohort", train_cohort_dir,
                      "cohort directory (outcome.csv + blocks.spec)");
    train->add_option("--outcome", train_outcome, "outcome CSV");
    train->add_option("--block", train_blocks, "modality block as name=path (repeatable)");
    train->add_option("--features", train_features, "feature-spec sidecar");
    train->add_option("--pretrained", train_pretrained,
                      "checkpoint directory with fold<r>.pre.ckpt to reuse");
    train->add_option("--seed", train_seed, "seed override");
    train->add_option("--folds", train_folds, "fold count (default 5)");
    train->add_option("--jobs", train_jobs, "parallel fold workers");
    train->add_option("--out", train_out, "output directory")->required();

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "re-evaluate a finished training run");
    std::string eval_run, eval_out;
    eval->add_option("--run", eval_run, "training run directory")->required();
    eval->add_option("--out", eval_out, "output directory (default: the run directory)");

    // ---- sweep-missing ----
    auto* sweep = app.add_subcommand("sweep-missing",
                                     "re-evaluate under increasing modality missingness");
    std::string sweep_run, sweep_modality, sweep_out;
    std::vector<double> sweep_fractions;
    long sweep_seed = 0;
    sweep->add_option("--run", sweep_run, "training run directory")->required();
    sweep->add_option("--modality", sweep_modality, "modality to mask")->required();
    sweep->add_option("--fractions", sweep_fractions, "ascending missing fractions")
        ->required()
        ->delimiter(',');
    sweep->add_option("--seed", sweep_seed, "masking seed");
    sweep->add_option("--out", sweep_out, "output directory (default: the run directory)");

    // ---- stratify ----
    auto* strat = app.add_subcommand("stratify", "risk groups, KM curves and log-rank tests");
    std::string strat_scores, strat_outcome, strat_out;
    std::vector<std::string> strat_endpoints;
    strat->add_option("--scores", strat_scores, "pooled scores CSV")->required();
    strat->add_option("--outcome", strat_outcome, "primary outcome CSV")->required();
    strat->add_option("--endpoint", strat_endpoints,
                      "secondary endpoint as name=path (repeatable)");
    strat->add_option("--out", strat_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) {
            KvConfig cfg = KvConfig::parse_file(synth_config);
            if (synth_seed >= 0) cfg.set_int("seed", synth_seed);
            const auto seed = static_cast<std::uint64_t>(cfg.get_int_or("seed", 0));
            cfg.set_int("seed", static_cast<long>(seed));
            const SynthSpec spec = synth_spec_from_config(cfg);
            const SynthResult result = synth_cohort(spec, seed);
            fs::create_directories(synth_out);
            write_cohort(result.cohort, synth_out);
            {
                std::ofstream oracle(fs::path(synth_out) / "oracle.csv");
                oracle << "patient_id,true_risk\n";
                for (std::size_t i = 0; i < result.cohort.n(); ++i) {
                    oracle << result.cohort.ids[i] << "," << fmt(result.true_risk[i]) << "\n";
                }
            }
            KvConfig resolved;
            resolved.set("command", "synth");
            resolved.set_int("seed", static_cast<long>(seed));
            synth_spec_to_config(spec, resolved);
            resolved.write_file((fs::path(synth_out) / "config.resolved").string());
            std::printf("wrote cohort of %zu patients to %s\n", result.cohort.n(),
                        synth_out.c_str());
            return 0;
        }

        if (train->parsed()) {
            TrainInvocation inv;
            if (!train_config.empty()) inv.resolved = KvConfig::parse_file(train_config);
            if (!train_manifest.empty()) {
                const KvConfig manifest = KvConfig::parse_file(train_manifest);
                for (const auto& [k, v] : manifest.values()) inv.resolved.set(k, v);
            }
            if (!train_cohort_dir.empty()) {
                cohort_paths_to_config(cohort_paths_from_dir(train_cohort_dir), inv.resolved);
            }
            if (!train_outcome.empty()) inv.resolved.set("paths.outcome", train_outcome);
            for (const auto& b : train_blocks) {
                const auto eq = b.find('=');
                if (eq == std::string::npos) throw ConfigError("--block expects name=path");
                inv.resolved.set("paths.block." + b.substr(0, eq), b.substr(eq + 1));
            }
            if (!train_features.empty()) inv.resolved.set("paths.features", train_features);
            if (!train_pretrained.empty()) {
                inv.resolved.set("paths.pretrained", train_pretrained);
            }
            if (train_seed >= 0) inv.resolved.set_int("seed", train_seed);
            if (train_folds > 0) inv.resolved.set_int("folds.k", train_folds);
            if (!inv.resolved.has("seed")) inv.resolved.set_int("seed", 0);
            if (!inv.resolved.has("folds.k")) inv.resolved.set_int("folds.k", 5);
            inv.resolved.set("command", "train");
            // normalize every setting into the resolved config
            const TrainConfig tc = TrainConfig::from_config(inv.resolved);
            tc.to_config(inv.resolved);
            const FusionSpec fspec = FusionSpec::from_manifest(inv.resolved);
            const KvConfig normalized_manifest = fspec.to_manifest();
            for (const auto& [k, v] : normalized_manifest.values()) inv.resolved.set(k, v);
            inv.outdir = train_out;
            inv.jobs = static_cast<int>(train_jobs);
            return run_train(inv);
        }

        if (eval->parsed()) {
            return run_eval(eval_run, eval_out.empty() ? eval_run : eval_out);
        }

        if (sweep->parsed()) {
            return run_sweep(sweep_run, sweep_modality, sweep_fractions,
                             static_cast<std::uint64_t>(sweep_seed),
                             sweep_out.empty() ? sweep_run : sweep_out);
        }

        if (strat->parsed()) {
            return run_stratify(strat_scores, strat_outcome, strat_endpoints, strat_out);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
