#include "msurv/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "msurv/config.hpp"
#include "msurv/rng.hpp"

namespace msurv {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

double parse_double_cell(const std::string& s, const std::string& where) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(where + ": not a number: '" + s + "'");
    }
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

double ModalityBlock::missing_fraction() const {
    if (present.empty()) return 0.0;
    const auto absent = std::count(present.begin(), present.end(), false);
    return static_cast<double>(absent) / static_cast<double>(present.size());
}

void ModalityBlock::validate() const {
    const std::size_t p = patients(), w = width();
    if (values.rows() != p || values.cols() != w || observed.size() != p * w) {
        throw ContractError("block " + name + " has inconsistent extents");
    }
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t f = 0; f < w; ++f) {
            const bool obs = cell_observed(i, f);
            if (!present[i] && obs) {
                throw ContractError("block " + name + ": absent patient with observed cells");
            }
            if (obs && features[f].kind == FeatureKind::Categorical) {
                const double v = values(i, f);
                if (v < 0 || v >= static_cast<double>(features[f].cardinality) ||
                    v != std::floor(v)) {
                    throw ContractError("block " + name + ": categorical level out of range");
                }
            }
        }
    }
}

const ModalityBlock& Cohort::block(const std::string& name) const {
    for (const auto& b : blocks) {
        if (b.name == name) return b;
    }
    throw ContractError("no modality named " + name);
}

ModalityBlock& Cohort::block(const std::string& name) {
    for (auto& b : blocks) {
        if (b.name == name) return b;
    }
    throw ContractError("no modality named " + name);
}

bool Cohort::has_block(const std::string& name) const {
    for (const auto& b : blocks) {
        if (b.name == name) return true;
    }
    return false;
}

void Cohort::validate() const {
    if (ids.empty()) throw ContractError("cohort has no patients");
    if (times.size() != n() || events.size() != n()) {
        throw ContractError("cohort field lengths differ");
    }
    for (double t : times) {
        if (!(t >= 0.0)) throw ContractError("negative survival time");
    }
    for (const auto& b : blocks) {
        if (b.patients() != n()) throw ContractError("block " + b.name + " patient count differs");
        b.validate();
    }
}

FoldPlan::Roles FoldPlan::roles(int rotation) const {
    if (rotation < 0 || rotation >= k) throw ContractError("fold rotation out of range");
    Roles r;
    const int val_fold = (rotation + 1) % k;
    for (std::size_t i = 0; i < assignment.size(); ++i) {
        if (assignment[i] == rotation) {
            r.test.push_back(i);
        } else if (assignment[i] == val_fold) {
            r.validation.push_back(i);
        } else {
            r.train.push_back(i);
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// ingestion
// ---------------------------------------------------------------------------

namespace {

struct OutcomeTable {
    std::vector<std::string> ids;
    std::vector<double> times;
    std::vector<bool> events;
    std::map<std::string, std::size_t> index;
};

OutcomeTable load_outcome(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open outcome file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");
    {
        auto header = split_csv_line(line);
        if (header != std::vector<std::string>{"patient_id", "time_days", "event"}) {
            throw ParseError(path + ":1: malformed header, expected patient_id,time_days,event");
        }
    }
    OutcomeTable t;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const auto cells = split_csv_line(line);
        const std::string at = path + ":" + std::to_string(lineno);
        if (cells.size() != 3) throw ParseError(at + ": expected 3 columns");
        if (cells[0].empty()) throw ParseError(at + ": empty patient id");
        if (t.index.count(cells[0])) throw ParseError(at + ": duplicate patient id " + cells[0]);
        const double time = parse_double_cell(cells[1], at + " time_days");
        if (time < 0) throw ParseError(at + ": negative time_days");
        bool event;
        if (cells[2] == "0") {
            event = false;
        } else if (cells[2] == "1") {
            event = true;
        } else {
            throw ParseError(at + ": event must be 0 or 1, got '" + cells[2] + "'");
        }
        t.index[cells[0]] = t.ids.size();
        t.ids.push_back(cells[0]);
        t.times.push_back(time);
        t.events.push_back(event);
    }
    if (t.ids.empty()) throw ParseError(path + ": no patients");
    return t;
}

std::vector<FeatureSpec> specs_from_config(const KvConfig& cfg, const std::string& block,
                                           std::size_t width, const std::string& origin) {
    std::vector<FeatureSpec> specs(width);
    for (std::size_t f = 0; f < width; ++f) {
        const std::string key = block + ".f_" + std::to_string(f);
        if (!cfg.has(key)) continue;
        const std::string v = cfg.get(key);
        if (v == "numerical") {
            specs[f].kind = FeatureKind::Numerical;
        } else if (v == "ordinal") {
            specs[f].kind = FeatureKind::Ordinal;
        } else if (v.rfind("categorical", 0) == 0) {
            specs[f].kind = FeatureKind::Categorical;
            const std::string card = trim(v.substr(std::string("categorical").size()));
            if (card.empty()) {
                throw ParseError(origin + ": categorical " + key + " needs a cardinality");
            }
            specs[f].cardinality = static_cast<std::size_t>(
                parse_double_cell(card, origin + " " + key));
        } else {
            throw ParseError(origin + ": unknown feature kind '" + v + "' for " + key);
        }
    }
    return specs;
}

}  // namespace

Cohort load_cohort(const std::string& outcome_path, const std::vector<BlockSource>& blocks,
                   const std::optional<std::string>& feature_spec_path) {
    OutcomeTable outcome = load_outcome(outcome_path);
    KvConfig specs_cfg;
    if (feature_spec_path) specs_cfg = KvConfig::parse_file(*feature_spec_path);

    Cohort cohort;
    cohort.ids = outcome.ids;
    cohort.times = outcome.times;
    cohort.events = outcome.events;
    const std::size_t n = cohort.n();

    for (const auto& src : blocks) {
        std::ifstream in(src.csv_path);
        if (!in) throw ParseError("cannot open block file: " + src.csv_path);
        std::string line;
        if (!std::getline(in, line)) throw ParseError(src.csv_path + ": empty file");
        const auto header = split_csv_line(line);
        if (header.size() < 2 || header[0] != "patient_id") {
            throw ParseError(src.csv_path + ":1: malformed header");
        }
        const std::size_t width = header.size() - 1;
        for (std::size_t f = 0; f < width; ++f) {
            if (header[f + 1] != "f_" + std::to_string(f)) {
                throw ParseError(src.csv_path + ":1: column " + std::to_string(f + 1) +
                                 " must be named f_" + std::to_string(f));
            }
        }

        ModalityBlock block;
        block.name = src.name;
        block.features = specs_from_config(specs_cfg, src.name,
                                           width, feature_spec_path.value_or("<none>"));
        block.values = Tensor(n, width);
        block.observed.assign(n * width, 0);
        block.present.assign(n, false);

        std::set<std::string> seen;
        int lineno = 1;
        while (std::getline(in, line)) {
            ++lineno;
            if (trim(line).empty()) continue;
            const auto cells = split_csv_line(line);
            const std::string at = src.csv_path + ":" + std::to_string(lineno);
            if (cells.size() != width + 1) {
                throw ParseError(at + ": expected " + std::to_string(width + 1) + " columns, got " +
                                 std::to_string(cells.size()));
            }
            auto it = outcome.index.find(cells[0]);
            if (it == outcome.index.end()) {
                throw ParseError(at + ": unknown patient id " + cells[0]);
            }
            if (!seen.insert(cells[0]).second) {
                throw ParseError(at + ": duplicate patient id " + cells[0]);
            }
            const std::size_t row = it->second;
            block.present[row] = true;
            for (std::size_t f = 0; f < width; ++f) {
                const std::string& cell = cells[f + 1];
                if (cell.empty()) continue;  // unobserved
                const std::string where = at + " column f_" + std::to_string(f);
                const double v = parse_double_cell(cell, where);
                if (block.features[f].kind == FeatureKind::Categorical) {
                    if (v != std::floor(v) || v < 0 ||
                        v >= static_cast<double>(block.features[f].cardinality)) {
                        throw ParseError(where + ": unknown categorical level '" + cell + "'");
                    }
                }
                block.values(row, f) = v;
                block.observed[row * width + f] = 1;
            }
        }
        cohort.blocks.push_back(std::move(block));
    }
    cohort.validate();
    return cohort;
}

void write_cohort(const Cohort& cohort, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    {
        std::ofstream out(fs::path(dir) / "outcome.csv");
        out << "patient_id,time_days,event\n";
        for (std::size_t i = 0; i < cohort.n(); ++i) {
            out << cohort.ids[i] << "," << fmt_double(cohort.times[i]) << ","
                << (cohort.events[i] ? 1 : 0) << "\n";
        }
    }

    KvConfig specs;
    for (const auto& block : cohort.blocks) {
        std::ofstream out(fs::path(dir) / (block.name + ".csv"));
        out << "patient_id";
        for (std::size_t f = 0; f < block.width(); ++f) out << ",f_" << f;
        out << "\n";
        for (std::size_t i = 0; i < cohort.n(); ++i) {
            if (!block.present[i]) continue;
            out << cohort.ids[i];
            for (std::size_t f = 0; f < block.width(); ++f) {
                out << ",";
                if (block.cell_observed(i, f)) out << fmt_double(block.values(i, f));
            }
            out << "\n";
        }
        for (std::size_t f = 0; f < block.width(); ++f) {
            const auto& spec = block.features[f];
            std::string v = "numerical";
            if (spec.kind == FeatureKind::Ordinal) v = "ordinal";
            if (spec.kind == FeatureKind::Categorical) {
                v = "categorical " + std::to_string(spec.cardinality);
            }
            specs.set(block.name + ".f_" + std::to_string(f), v);
        }
    }
    specs.write_file((fs::path(dir) / "blocks.spec").string());
}

// ---------------------------------------------------------------------------
// synthetic cohorts
// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
    if (n == 0) throw ConfigError("generator: zero patients");
    if (latent_dim == 0) throw ConfigError("generator: zero latent dimension");
    if (risk_weights.size() != latent_dim) {
        throw ConfigError("generator: risk_weights length must equal latent_dim");
    }
    if (censor_rate < 0.0 || censor_rate >= 1.0) {
        throw ConfigError("generator: censor_rate must be in [0, 1)");
    }
    if (base_hazard <= 0.0) throw ConfigError("generator: base_hazard must be positive");
    if (modalities.empty()) throw ConfigError("generator: no modalities");
    if (interaction != 0.0 &&
        (interaction_i >= latent_dim || interaction_j >= latent_dim)) {
        throw ConfigError("generator: interaction indices out of range");
    }
    std::set<std::string> names;
    for (const auto& m : modalities) {
        if (m.width == 0) throw ConfigError("generator: zero-width modality " + m.name);
        if (m.latent_hi <= m.latent_lo || m.latent_hi > latent_dim) {
            throw ConfigError("generator: bad latent slice for modality " + m.name);
        }
        if (m.modality_missing < 0.0 || m.modality_missing > 1.0 || m.feature_missing < 0.0 ||
            m.feature_missing > 1.0) {
            throw ConfigError("generator: missing fractions must be within [0, 1]");
        }
        if (!names.insert(m.name).second) {
            throw ConfigError("generator: duplicate modality name " + m.name);
        }
    }
}

SynthResult synth_cohort(const SynthSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng root(seed);
    Rng z_rng = root.fork(1);
    Rng time_rng = root.fork(2);
    Rng censor_rng = root.fork(3);

    const std::size_t n = spec.n;
    std::vector<std::vector<double>> z(n, std::vector<double>(spec.latent_dim));
    for (auto& zi : z) {
        for (double& v : zi) v = z_rng.normal();
    }

    SynthResult result;
    result.true_risk.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double r = 0.0;
        for (std::size_t d = 0; d < spec.latent_dim; ++d) r += spec.risk_weights[d] * z[i][d];
        if (spec.interaction != 0.0) {
            r += spec.interaction * z[i][spec.interaction_i] * z[i][spec.interaction_j];
        }
        result.true_risk[i] = r;
    }

    // exponential proportional hazards event times
    std::vector<double> event_time(n);
    for (std::size_t i = 0; i < n; ++i) {
        event_time[i] = time_rng.exponential(spec.base_hazard * std::exp(result.true_risk[i]));
    }

    Cohort& cohort = result.cohort;
    cohort.ids.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "P%05zu", i + 1);
        cohort.ids[i] = buf;
    }
    cohort.times.resize(n);
    cohort.events.resize(n);

    if (spec.censor_rate <= 0.0) {
        cohort.times = event_time;
        cohort.events.assign(n, true);
    } else {
        // Calibrate the censoring rate lambda so that the expected fraction of
        // patients with C < T matches the target, given the realized event
        // times: E[censored] = mean(1 - exp(-lambda * T_i)).
        auto expected = [&](double lambda) {
            double s = 0.0;
            for (double t : event_time) s += 1.0 - std::exp(-lambda * t);
            return s / static_cast<double>(n);
        };
        double lo = 1e-12, hi = 1e-12;
        while (expected(hi) < spec.censor_rate && hi < 1e12) hi *= 2.0;
        for (int iter = 0; iter < 200; ++iter) {
            const double mid = 0.5 * (lo + hi);
            (expected(mid) < spec.censor_rate ? lo : hi) = mid;
        }
        const double lambda = 0.5 * (lo + hi);
        for (std::size_t i = 0; i < n; ++i) {
            const double c = censor_rng.exponential(lambda);
            cohort.events[i] = event_time[i] <= c;
            cohort.times[i] = std::min(event_time[i], c);
        }
    }

    std::uint64_t stream = 10;
    for (const auto& m : spec.modalities) {
        Rng map_rng = root.fork(stream++);
        Rng noise_rng = root.fork(stream++);
        Rng mask_rng = root.fork(stream++);

        const std::size_t slice = m.latent_hi - m.latent_lo;
        Tensor loading(slice, m.width);
        const double scale = 1.0 / std::sqrt(static_cast<double>(slice));
        for (double& v : loading.values()) v = map_rng.normal(0.0, scale);

        ModalityBlock block;
        block.name = m.name;
        block.features.assign(m.width, FeatureSpec{FeatureKind::Numerical, 0});
        block.values = Tensor(n, m.width);
        block.observed.assign(n * m.width, 0);
        block.present.assign(n, true);

        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t f = 0; f < m.width; ++f) {
                double v = 0.0;
                for (std::size_t d = 0; d < slice; ++d) {
                    v += z[i][m.latent_lo + d] * loading(d, f);
                }
                block.values(i, f) = v + noise_rng.normal(0.0, m.noise_std);
            }
        }

        // whole-modality absences: ceil(fraction * n) patients
        const auto n_absent =
            static_cast<std::size_t>(std::ceil(m.modality_missing * static_cast<double>(n)));
        auto order = mask_rng.permutation(n);
        for (std::size_t k = 0; k < std::min(n_absent, n); ++k) block.present[order[k]] = false;

        for (std::size_t i = 0; i < n; ++i) {
            if (!block.present[i]) continue;
            for (std::size_t f = 0; f < m.width; ++f) {
                const bool drop = m.feature_missing > 0.0 && mask_rng.uniform() < m.feature_missing;
                block.observed[i * m.width + f] = drop ? 0 : 1;
            }
        }
        cohort.blocks.push_back(std::move(block));
    }

    cohort.validate();
    return result;
}

// ---------------------------------------------------------------------------
// folds / preprocessing / masking
// ---------------------------------------------------------------------------

FoldPlan stratified_kfold(const Cohort& cohort, int k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("stratified_kfold needs k >= 2");
    std::vector<std::size_t> event_idx, censor_idx;
    for (std::size_t i = 0; i < cohort.n(); ++i) {
        (cohort.events[i] ? event_idx : censor_idx).push_back(i);
    }
    if (event_idx.size() < static_cast<std::size_t>(k) ||
        censor_idx.size() < static_cast<std::size_t>(k)) {
        throw ConfigError("stratified_kfold: a stratum has fewer members than k");
    }
    Rng rng(seed);
    rng.shuffle(event_idx);
    rng.shuffle(censor_idx);

    FoldPlan plan;
    plan.k = k;
    plan.assignment.assign(cohort.n(), -1);
    // one continuous round-robin across both strata keeps fold sizes within one
    std::size_t next = 0;
    for (std::size_t i : event_idx) plan.assignment[i] = static_cast<int>(next++ % k);
    for (std::size_t i : censor_idx) plan.assignment[i] = static_cast<int>(next++ % k);
    return plan;
}

TabularTransform fit_tabular_transform(const ModalityBlock& block,
                                       const std::vector<std::size_t>& train_rows,
                                       bool ordinal_standardize) {
    if (train_rows.empty()) throw ContractError("fit_tabular_transform: empty training rows");
    TabularTransform t;
    const std::size_t w = block.width();
    t.mean.assign(w, 0.0);
    t.stdev.assign(w, 1.0);
    t.standardized.assign(w, false);
    for (std::size_t f = 0; f < w; ++f) {
        const auto kind = block.features[f].kind;
        const bool standardize = kind == FeatureKind::Numerical ||
                                 (kind == FeatureKind::Ordinal && ordinal_standardize);
        if (!standardize) continue;
        t.standardized[f] = true;
        double sum = 0.0, sum2 = 0.0;
        std::size_t count = 0;
        for (std::size_t row : train_rows) {
            if (!block.cell_observed(row, f)) continue;
            const double v = block.values(row, f);
            sum += v;
            sum2 += v * v;
            ++count;
        }
        if (count == 0) {
            t.warnings.push_back("column f_" + std::to_string(f) + " of " + block.name +
                                 " has no observed training values; using identity transform");
            continue;
        }
        const double mean = sum / static_cast<double>(count);
        const double var = std::max(0.0, sum2 / static_cast<double>(count) - mean * mean);
        t.mean[f] = mean;
        if (var <= 0.0) {
            t.warnings.push_back("column f_" + std::to_string(f) + " of " + block.name +
                                 " has zero variance; std clamped to 1");
            t.stdev[f] = 1.0;
        } else {
            t.stdev[f] = std::sqrt(var);
        }
    }
    return t;
}

ModalityBlock apply_tabular_transform(const ModalityBlock& block, const TabularTransform& t) {
    if (t.mean.size() != block.width()) {
        throw ContractError("transform width does not match block " + block.name);
    }
    ModalityBlock out = block;
    for (std::size_t i = 0; i < block.patients(); ++i) {
        for (std::size_t f = 0; f < block.width(); ++f) {
            if (!t.standardized[f] || !block.cell_observed(i, f)) continue;
            out.values(i, f) = (block.values(i, f) - t.mean[f]) / t.stdev[f];
        }
    }
    return out;
}

Cohort apply_missingness(const Cohort& cohort, const std::string& modality, double target_fraction,
                         std::uint64_t seed, const std::vector<std::size_t>* rows) {
    if (target_fraction < 0.0 || target_fraction > 1.0) {
        throw ContractError("target fraction must be within [0, 1]");
    }
    const ModalityBlock& block = cohort.block(modality);
    std::vector<std::size_t> scope;
    if (rows) {
        scope = *rows;
    } else {
        scope.resize(cohort.n());
        std::iota(scope.begin(), scope.end(), std::size_t{0});
    }
    const std::size_t n = scope.size();
    if (n == 0) throw ContractError("apply_missingness over an empty row set");
    std::size_t absent_now = 0;
    for (std::size_t i : scope) {
        if (!block.present[i]) ++absent_now;
    }
    // epsilon guards the exact-baseline case against float round-up
    const auto target_absent =
        static_cast<std::size_t>(std::ceil(target_fraction * static_cast<double>(n) - 1e-9));
    if (target_absent < absent_now) {
        throw ContractError("cannot unmask: target below the modality's current missing fraction");
    }

    Cohort out = cohort;
    if (target_absent == absent_now) return out;

    std::vector<std::size_t> candidates;
    for (std::size_t i : scope) {
        if (block.present[i]) candidates.push_back(i);
    }
    Rng rng(seed);
    rng.shuffle(candidates);
    ModalityBlock& target = out.block(modality);
    for (std::size_t k = 0; k < target_absent - absent_now && k < candidates.size(); ++k) {
        const std::size_t row = candidates[k];
        target.present[row] = false;
        for (std::size_t f = 0; f < target.width(); ++f) {
            target.observed[row * target.width() + f] = 0;
        }
    }
    return out;
}

}  // namespace msurv
