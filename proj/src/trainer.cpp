#include "msurv/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <atomic>
#include <thread>

#include "msurv/checkpoint.hpp"
#include "msurv/survloss.hpp"

namespace msurv {

void TrainConfig::validate() const {
    if (eta_min >= eta_max) throw ConfigError("eta_min must be below eta_max");
    if (max_epochs == 0 || batch_size == 0 || decay_steps == 0) {
        throw ConfigError("epoch, batch and decay counts must be positive");
    }
    if (early_stop_patience == 0 || plateau_patience == 0) {
        throw ConfigError("patience values must be positive");
    }
    if (encoder_lr_factor <= 0.0) throw ConfigError("encoder_lr_factor must be positive");
}

TrainConfig TrainConfig::from_config(const KvConfig& cfg) {
    TrainConfig t;
    t.max_epochs = static_cast<std::size_t>(cfg.get_int_or("train.max_epochs", 500));
    t.early_stop_patience =
        static_cast<std::size_t>(cfg.get_int_or("train.early_stop_patience", 50));
    t.batch_size = static_cast<std::size_t>(cfg.get_int_or("train.batch_size", 32));
    t.weight_decay = cfg.get_double_or("train.weight_decay", 1e-5);
    t.eta_min = cfg.get_double_or("train.eta_min", 1e-8);
    t.eta_max = cfg.get_double_or("train.eta_max", 1e-5);
    t.warmup_epochs = static_cast<std::size_t>(cfg.get_int_or("train.warmup_epochs", 50));
    t.plateau_patience = static_cast<std::size_t>(cfg.get_int_or("train.plateau_patience", 20));
    t.decay_steps = static_cast<std::size_t>(cfg.get_int_or("train.decay_steps", 12));
    t.encoder_lr_factor = cfg.get_double_or("train.encoder_lr_factor", 0.1);
    t.beta1 = cfg.get_double_or("train.beta1", 0.9);
    t.beta2 = cfg.get_double_or("train.beta2", 0.999);
    t.epsilon = cfg.get_double_or("train.epsilon", 1e-8);
    t.seed = static_cast<std::uint64_t>(cfg.get_int_or("seed", 0));
    t.validate();
    return t;
}

void TrainConfig::to_config(KvConfig& cfg) const {
    cfg.set_int("train.max_epochs", static_cast<long>(max_epochs));
    cfg.set_int("train.early_stop_patience", static_cast<long>(early_stop_patience));
    cfg.set_int("train.batch_size", static_cast<long>(batch_size));
    cfg.set_double("train.weight_decay", weight_decay);
    cfg.set_double("train.eta_min", eta_min);
    cfg.set_double("train.eta_max", eta_max);
    cfg.set_int("train.warmup_epochs", static_cast<long>(warmup_epochs));
    cfg.set_int("train.plateau_patience", static_cast<long>(plateau_patience));
    cfg.set_int("train.decay_steps", static_cast<long>(decay_steps));
    cfg.set_double("train.encoder_lr_factor", encoder_lr_factor);
    cfg.set_double("train.beta1", beta1);
    cfg.set_double("train.beta2", beta2);
    cfg.set_double("train.epsilon", epsilon);
    cfg.set_int("seed", static_cast<long>(seed));
}

double lr_at(const ScheduleState& state, const TrainConfig& config) {
    if (state.epoch < config.warmup_epochs) {
        return config.eta_min + (config.eta_max - config.eta_min) *
                                    static_cast<double>(state.epoch) /
                                    static_cast<double>(config.warmup_epochs);
    }
    if (state.decay_step < 0) return config.eta_max;
    const auto k = static_cast<std::size_t>(state.decay_step);
    if (k >= config.decay_steps) return config.eta_min;
    return config.eta_max * std::pow(config.eta_min / config.eta_max,
                                     static_cast<double>(k) /
                                         static_cast<double>(config.decay_steps));
}

void adamw_step(Params& params, const GradMap& grads, double lr, const TrainConfig& config,
                AdamState& state, const LrScale& lr_scale) {
    ++state.t;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
    for (const auto& [name, grad] : grads) {
        auto& entry = params.entry(name);
        if (!entry.trainable) continue;
        auto [it, fresh] = state.moments.try_emplace(name);
        auto& mom = it->second;
        if (fresh) {
            mom.m = Tensor(grad.rows(), grad.cols());
            mom.v = Tensor(grad.rows(), grad.cols());
        }
        const double scale = lr * (lr_scale ? lr_scale(name) : 1.0);
        for (std::size_t i = 0; i < grad.size(); ++i) {
            mom.m[i] = config.beta1 * mom.m[i] + (1.0 - config.beta1) * grad[i];
            mom.v[i] = config.beta2 * mom.v[i] + (1.0 - config.beta2) * grad[i] * grad[i];
            const double m_hat = mom.m[i] / bc1;
            const double v_hat = mom.v[i] / bc2;
            entry.value[i] -= scale * (m_hat / (std::sqrt(v_hat) + config.epsilon)) +
                              scale * config.weight_decay * entry.value[i];
        }
    }
}

std::vector<std::vector<std::size_t>> stratified_batches(const std::vector<std::size_t>& rows,
                                                         const std::vector<bool>& events,
                                                         std::size_t batch_size, Rng& rng) {
    std::vector<std::size_t> with_event, without;
    for (std::size_t r : rows) {
        (events[r] ? with_event : without).push_back(r);
    }
    if (with_event.empty()) throw ConfigError("no events among training rows");
    rng.shuffle(with_event);
    rng.shuffle(without);

    // every batch needs an event, so never more batches than events
    const std::size_t wanted = (rows.size() + batch_size - 1) / batch_size;
    const std::size_t n_batches = std::max<std::size_t>(1, std::min(wanted, with_event.size()));
    std::vector<std::vector<std::size_t>> batches(n_batches);
    std::size_t cursor = 0;
    for (std::size_t i = 0; i < with_event.size(); ++i) {
        batches[cursor++ % n_batches].push_back(with_event[i]);
    }
    for (std::size_t i = 0; i < without.size(); ++i) {
        batches[cursor++ % n_batches].push_back(without[i]);
    }
    return batches;
}

namespace {

std::pair<std::vector<double>, std::vector<bool>> gather_outcomes(
    const Cohort& cohort, const std::vector<std::size_t>& rows) {
    std::vector<double> t;
    std::vector<bool> e;
    t.reserve(rows.size());
    e.reserve(rows.size());
    for (std::size_t r : rows) {
        t.push_back(cohort.times[r]);
        e.push_back(cohort.events[r]);
    }
    return {std::move(t), std::move(e)};
}

}  // namespace

TrainResult train_fold(const BatchForward& forward, Params& params, const Cohort& cohort,
                       const std::vector<std::size_t>& train_rows,
                       const std::vector<std::size_t>& val_rows, const TrainConfig& config,
                       std::uint64_t seed, const LrScale& lr_scale) {
    config.validate();
    if (train_rows.empty() || val_rows.empty()) {
        throw ConfigError("train_fold needs nonempty train and validation splits");
    }
    if (std::none_of(train_rows.begin(), train_rows.end(),
                     [&](std::size_t r) { return cohort.events[r]; })) {
        throw ConfigError("no events in train split");
    }
    if (std::none_of(val_rows.begin(), val_rows.end(),
                     [&](std::size_t r) { return cohort.events[r]; })) {
        throw ConfigError("no events in validation split");
    }

    auto [val_times, val_events] = gather_outcomes(cohort, val_rows);

    Rng rng(seed);
    AdamState adam;
    ScheduleState schedule;
    TrainResult result;
    Params best = params;

    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
        schedule.epoch = epoch;
        const double lr = lr_at(schedule, config);

        double train_loss_sum = 0.0;
        const auto batches = stratified_batches(train_rows, cohort.events, config.batch_size, rng);
        for (const auto& batch : batches) {
            Graph g;
            NodeId scores = forward(g, batch);
            auto [bt, be] = gather_outcomes(cohort, batch);
            NodeId loss = g.cox_loss(scores, std::move(bt), std::move(be));
            train_loss_sum += g.value(loss)[0];
            GradMap grads = g.backward(loss);
            adamw_step(params, grads, lr, config, adam, lr_scale);
        }

        Graph vg;
        NodeId vscores = forward(vg, val_rows);
        const double val_loss =
            cox_nll(BatchOutcome{vg.value(vscores).values(), val_times, val_events});

        result.log.push_back(
            {epoch, train_loss_sum / static_cast<double>(batches.size()), val_loss, lr});

        // strict improvement beyond float noise
        if (val_loss < schedule.best_val - 1e-6) {
            schedule.best_val = val_loss;
            schedule.since_improve = 0;
            best = params;
            result.best_val_loss = val_loss;
            result.best_epoch = epoch;
        } else {
            ++schedule.since_improve;
        }
        if (schedule.decay_step >= 0) {
            ++schedule.decay_step;  // one-shot decay marches on once triggered
        } else if (epoch >= config.warmup_epochs &&
                   schedule.since_improve >= config.plateau_patience) {
            schedule.decay_step = 0;
        }
        if (schedule.since_improve >= config.early_stop_patience) break;
    }

    params = std::move(best);
    return result;
}

void write_epoch_log(const std::vector<EpochLog>& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write epoch log: " + path);
    out << "epoch,train_loss,val_loss,lr\n";
    char buf[160];
    for (const auto& row : log) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", row.epoch, row.train_loss,
                      row.val_loss, row.lr);
        out << buf;
    }
}

// ---------------------------------------------------------------------------
// cross-validation driver
// ---------------------------------------------------------------------------

namespace {

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
    std::uint64_t z = base + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::vector<std::size_t> rows_with_modality(const Cohort& cohort, const std::string& name,
                                            const std::vector<std::size_t>& rows) {
    const auto& present = cohort.block(name).present;
    std::vector<std::size_t> out;
    for (std::size_t r : rows) {
        if (present[r]) out.push_back(r);
    }
    return out;
}

std::map<std::string, std::vector<FeatureSpec>> feature_map(const Cohort& cohort,
                                                            const FusionSpec& spec) {
    std::map<std::string, std::vector<FeatureSpec>> f;
    for (const auto& name : spec.modalities) f[name] = cohort.block(name).features;
    return f;
}

void init_head_thresholds(const OdstHead& head, Params& params, const FusionModel& model,
                          const Cohort& cohort, const std::vector<std::size_t>& sample_rows,
                          const std::string& modality, std::uint64_t seed) {
    Graph g;
    NodeId h;
    if (modality.empty()) {
        h = model.fused_representation(g, params, cohort, sample_rows);
    } else {
        auto bound = model.encoder(modality).bind(g, params);
        h = model.encoder(modality).encode_rows(g, bound, cohort.block(modality), sample_rows);
    }
    Rng rng(seed);
    head.init_thresholds(params, g.value(h), rng);
}

std::vector<double> late_scores_for_rows(const FusionModel& model, Params& params,
                                         const Cohort& cohort,
                                         const std::vector<std::size_t>& rows,
                                         std::vector<std::vector<double>>* per_modality = nullptr,
                                         std::vector<std::vector<bool>>* availability = nullptr) {
    std::vector<std::vector<double>> per_mod;
    std::vector<std::vector<bool>> avail;
    for (const auto& name : model.spec().modalities) {
        const auto& present = cohort.block(name).present;
        std::vector<bool> a;
        std::vector<std::size_t> scored_rows;
        for (std::size_t r : rows) {
            a.push_back(present[r]);
            if (present[r]) scored_rows.push_back(r);
        }
        std::vector<double> scores(rows.size(), 0.0);
        if (!scored_rows.empty()) {
            Graph g;
            NodeId y = model.forward_unimodal(g, params, cohort, name, scored_rows);
            std::size_t k = 0;
            for (std::size_t i = 0; i < rows.size(); ++i) {
                if (a[i]) scores[i] = g.value(y)(k++, 0);
            }
        }
        per_mod.push_back(std::move(scores));
        avail.push_back(std::move(a));
    }
    auto fused = late_fuse(per_mod, &avail);
    if (per_modality) *per_modality = std::move(per_mod);
    if (availability) *availability = std::move(avail);
    return fused;
}

RotationResult run_rotation(const Cohort& cohort, const FusionSpec& spec,
                            const TrainConfig& config, const FoldPlan& plan, int rotation,
                            const CvOptions& options) {
    RotationResult result;
    result.rotation = rotation;
    const auto roles = plan.roles(rotation);

    // fit preprocessing on training rows only; the provenance check below
    // guards against accidental leakage into the held-out fold
    for (std::size_t r : roles.test) {
        if (std::find(roles.train.begin(), roles.train.end(), r) != roles.train.end()) {
            throw ContractError("fold roles overlap: leakage");
        }
    }
    const Cohort prepped = preprocess_for_rows(cohort, roles.train);

    const auto features = feature_map(prepped, spec);
    Params params;
    FusionModel model =
        FusionModel::create(params, spec, features, derive_seed(config.seed, 1000 + rotation));

    auto sample_rows = [&](const std::vector<std::size_t>& rows) {
        std::vector<std::size_t> s(rows.begin(),
                                   rows.begin() + std::min(rows.size(),
                                                           std::max<std::size_t>(config.batch_size, 8)));
        return s;
    };

    const std::uint64_t fold_seed = derive_seed(config.seed, 2000 + rotation);

    if (spec.mode == FusionMode::LinearCph) {
        auto forward = [&](Graph& g, const std::vector<std::size_t>& rows) {
            return model.forward_linear(g, params, prepped, rows);
        };
        result.train_log = train_fold(forward, params, prepped, roles.train, roles.validation,
                                      config, fold_seed)
                               .log;
        result.test_rows = roles.test;
    } else if (spec.mode == FusionMode::Unimodal || spec.mode == FusionMode::Late ||
               spec.mode == FusionMode::Early || spec.mode == FusionMode::Intermediate) {
        // stage 1: unimodal models on the patients carrying each modality,
        // or a pretrained checkpoint when the caller provides one
        const std::string pre_path =
            options.pretrained_dir.empty()
                ? ""
                : options.pretrained_dir + "/fold" + std::to_string(rotation) + ".pre.ckpt";
        if (!pre_path.empty() && std::ifstream(pre_path).good()) {
            load_checkpoint_into(params, pre_path);
        } else {
            std::uint64_t salt = 0;
            for (const auto& name : spec.modalities) {
                const auto train_m = rows_with_modality(prepped, name, roles.train);
                const auto val_m = rows_with_modality(prepped, name, roles.validation);
                if (train_m.empty() || val_m.empty()) {
                    throw ConfigError("modality " + name + " has no patients in a split");
                }
                init_head_thresholds(model.head(name), params, model, prepped,
                                     sample_rows(train_m), name,
                                     derive_seed(fold_seed, 100 + salt));
                auto forward = [&](Graph& g, const std::vector<std::size_t>& rows) {
                    return model.forward_unimodal(g, params, prepped, name, rows);
                };
                result.pretrain_logs[name] =
                    train_fold(forward, params, prepped, train_m, val_m, config,
                               derive_seed(fold_seed, 200 + salt))
                        .log;
                ++salt;
            }
        }
        result.pretrained = params;

        if (spec.mode == FusionMode::Early || spec.mode == FusionMode::Intermediate) {
            model.apply_freezing(params);
            init_head_thresholds(model.fusion_head(), params, model, prepped,
                                 sample_rows(roles.train), "", derive_seed(fold_seed, 300));
            LrScale lr_scale = nullptr;
            if (spec.mode == FusionMode::Intermediate) {
                const double factor = config.encoder_lr_factor;
                lr_scale = [factor](const std::string& name) {
                    return name.rfind("enc.", 0) == 0 ? factor : 1.0;
                };
            }
            auto forward = [&](Graph& g, const std::vector<std::size_t>& rows) {
                return model.forward_fused(g, params, prepped, rows);
            };
            result.train_log = train_fold(forward, params, prepped, roles.train, roles.validation,
                                          config, derive_seed(fold_seed, 400), lr_scale)
                                   .log;
            result.test_rows = roles.test;
        } else if (spec.mode == FusionMode::Unimodal) {
            result.test_rows = rows_with_modality(prepped, spec.modalities.front(), roles.test);
        } else {
            result.test_rows = roles.test;  // late fusion covers everyone
        }
    }

    // test-fold scores
    if (spec.mode == FusionMode::Late) {
        std::vector<std::vector<double>> per_mod;
        std::vector<std::vector<bool>> avail;
        result.test_scores =
            late_scores_for_rows(model, params, prepped, result.test_rows, &per_mod, &avail);
        // per-modality discrimination over the patients carrying the modality
        for (std::size_t m = 0; m < spec.modalities.size(); ++m) {
            std::vector<double> s, t;
            std::vector<bool> e;
            for (std::size_t i = 0; i < result.test_rows.size(); ++i) {
                if (!avail[m][i]) continue;
                s.push_back(per_mod[m][i]);
                t.push_back(prepped.times[result.test_rows[i]]);
                e.push_back(prepped.events[result.test_rows[i]]);
            }
            if (!s.empty()) {
                try {
                    result.unimodal_metrics[spec.modalities[m]] =
                        evaluate_split(s, t, e, rotation);
                } catch (const MetricError&) {
                    // degenerate split; leave the entry out
                }
            }
        }
    } else if (!result.test_rows.empty()) {
        Graph g;
        NodeId y = -1;
        if (spec.mode == FusionMode::LinearCph) {
            y = model.forward_linear(g, params, prepped, result.test_rows);
        } else if (spec.mode == FusionMode::Unimodal) {
            y = model.forward_unimodal(g, params, prepped, spec.modalities.front(),
                                       result.test_rows);
        } else {
            y = model.forward_fused(g, params, prepped, result.test_rows);
        }
        result.test_scores = g.value(y).values();
    }

    if (!result.test_rows.empty()) {
        auto [tt, te] = gather_outcomes(prepped, result.test_rows);
        result.metrics = evaluate_split(result.test_scores, tt, te, rotation);
    }
    result.params = std::move(params);

    if (!options.save_dir.empty()) {
        const std::string stem = options.save_dir + "/fold" + std::to_string(rotation);
        save_checkpoint(result.pretrained, stem + ".pre.ckpt");
        save_checkpoint(result.params, stem + ".ckpt");
    }
    return result;
}

}  // namespace

Cohort preprocess_for_rows(const Cohort& cohort, const std::vector<std::size_t>& fit_rows,
                           bool ordinal_standardize) {
    Cohort out = cohort;
    for (auto& block : out.blocks) {
        const auto t = fit_tabular_transform(block, fit_rows, ordinal_standardize);
        block = apply_tabular_transform(block, t);
    }
    return out;
}

std::vector<double> score_rows(const FusionModel& model, Params& params, const Cohort& cohort,
                               const std::vector<std::size_t>& rows) {
    if (rows.empty()) return {};
    Graph g;
    NodeId y = -1;
    switch (model.spec().mode) {
        case FusionMode::LinearCph:
            y = model.forward_linear(g, params, cohort, rows);
            break;
        case FusionMode::Unimodal:
            y = model.forward_unimodal(g, params, cohort, model.spec().modalities.front(), rows);
            break;
        case FusionMode::Early:
        case FusionMode::Intermediate:
            y = model.forward_fused(g, params, cohort, rows);
            break;
        case FusionMode::Late:
            return late_scores_for_rows(model, params, cohort, rows);
    }
    return g.value(y).values();
}

CvSummary summarize(const std::vector<double>& fold_values) {
    CvSummary s;
    if (fold_values.empty()) return s;
    const double n = static_cast<double>(fold_values.size());
    for (double v : fold_values) s.mean += v;
    s.mean /= n;
    if (fold_values.size() > 1) {
        double ss = 0.0;
        for (double v : fold_values) ss += (v - s.mean) * (v - s.mean);
        s.sem = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
    }
    return s;
}

CvResult run_cv(const Cohort& cohort, const FusionSpec& spec, const TrainConfig& config,
                const FoldPlan& plan, const CvOptions& options) {
    spec.validate();
    config.validate();
    CvResult result;
    result.rotations.resize(static_cast<std::size_t>(plan.k));

    const int jobs = std::max(1, options.jobs);
    if (jobs == 1) {
        for (int r = 0; r < plan.k; ++r) {
            result.rotations[static_cast<std::size_t>(r)] =
                run_rotation(cohort, spec, config, plan, r, options);
        }
    } else {
        std::vector<std::thread> pool;
        std::atomic<int> next{0};
        for (int w = 0; w < std::min(jobs, plan.k); ++w) {
            pool.emplace_back([&]() {
                for (int r = next.fetch_add(1); r < plan.k; r = next.fetch_add(1)) {
                    result.rotations[static_cast<std::size_t>(r)] =
                        run_rotation(cohort, spec, config, plan, r, options);
                }
            });
        }
        for (auto& t : pool) t.join();
    }

    result.pooled_scores.assign(cohort.n(), std::numeric_limits<double>::quiet_NaN());
    result.pooled_fold.assign(cohort.n(), -1);
    std::vector<double> h, u, a;
    for (const auto& rot : result.rotations) {
        for (std::size_t i = 0; i < rot.test_rows.size(); ++i) {
            result.pooled_scores[rot.test_rows[i]] = rot.test_scores[i];
            result.pooled_fold[rot.test_rows[i]] = rot.rotation;
        }
        h.push_back(rot.metrics.harrell);
        u.push_back(rot.metrics.uno);
        a.push_back(rot.metrics.td_auc.mean);
    }
    result.harrell = summarize(h);
    result.uno = summarize(u);
    result.td_auc = summarize(a);
    return result;
}

}  // namespace msurv
