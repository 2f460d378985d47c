#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "msurv/checkpoint.hpp"
#include "msurv/config.hpp"

using namespace msurv;
namespace fs = std::filesystem;

namespace {

// the msurv binary lands next to the test binaries' parent directory
std::string cli_path() {
    const char* env = std::getenv("MSURV_CLI");
    if (env) return env;
    return (fs::path(MSURV_CLI_DIR) / "msurv").string();
}

struct Sandbox {
    fs::path dir;
    Sandbox() {
        dir = fs::temp_directory_path() / ("msurv_cli_" + std::to_string(::getpid()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    ~Sandbox() { fs::remove_all(dir); }
    std::string operator/(const std::string& p) const { return (dir / p).string(); }
};

int run(const std::string& args) {
    const std::string cmd = cli_path() + " " + args + " >/dev/null 2>&1";
    return std::system(cmd.c_str());
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

const char* kGenConfig = R"(seed = 5

[cohort]
n = 100
latent_dim = 4
risk_weights = 1.3, 1.0, 1.3, 1.0
censor_rate = 0.25

[modality.clin]
width = 4
latent_lo = 0
latent_hi = 2
noise_std = 0.2

[modality.img]
width = 4
latent_lo = 2
latent_hi = 4
noise_std = 0.2
modality_missing = 0.3
)";

const char* kManifest = R"([model]
mode = intermediate
modalities = clin, img

[encoder]
d_model = 8
n_heads = 2
layers = 1
ff_dim = 12

[head]
trees = 2
depth = 2

[fusion_head]
trees = 4
depth = 2
)";

const char* kTrainCfg = R"([train]
max_epochs = 8
early_stop_patience = 8
warmup_epochs = 2
plateau_patience = 4
eta_min = 1e-5
eta_max = 1e-2
batch_size = 32
)";

}  // namespace

TEST_CASE("synth is reproducible and validates its spec") {
    Sandbox sb;
    write_text(sb / "gen.cfg", kGenConfig);
    REQUIRE(run("synth --config " + (sb / "gen.cfg") + " --out " + (sb / "c1")) == 0);
    REQUIRE(run("synth --config " + (sb / "gen.cfg") + " --out " + (sb / "c2")) == 0);
    CHECK(slurp(sb / "c1/outcome.csv") == slurp(sb / "c2/outcome.csv"));
    CHECK(slurp(sb / "c1/clin.csv") == slurp(sb / "c2/clin.csv"));
    CHECK(slurp(sb / "c1/img.csv") == slurp(sb / "c2/img.csv"));
    CHECK(slurp(sb / "c1/oracle.csv") == slurp(sb / "c2/oracle.csv"));

    // realized modality missingness close to the target: count absent rows
    std::istringstream img(slurp(sb / "c1/img.csv"));
    std::string line;
    int rows = -1;  // header
    while (std::getline(img, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 70);  // ceil(0.3*100)=30 absent

    write_text(sb / "bad.cfg", "[cohort]\nn = 0\nlatent_dim = 2\nrisk_weights = 1,1\n");
    CHECK(run("synth --config " + (sb / "bad.cfg") + " --out " + (sb / "c3")) != 0);
}

TEST_CASE("train emits the documented layout and is rerun-reproducible") {
    Sandbox sb;
    write_text(sb / "gen.cfg", kGenConfig);
    REQUIRE(run("synth --config " + (sb / "gen.cfg") + " --out " + (sb / "cohort")) == 0);
    write_text(sb / "model.cfg", kManifest);
    write_text(sb / "train.cfg", kTrainCfg);

    REQUIRE(run("train --cohort " + (sb / "cohort") + " --manifest " + (sb / "model.cfg") +
                " --config " + (sb / "train.cfg") + " --seed 3 --folds 3 --out " +
                (sb / "run")) == 0);
    CHECK(fs::exists(sb / "run/config.resolved"));
    CHECK(fs::exists(sb / "run/cv_report.csv"));
    CHECK(fs::exists(sb / "run/pooled_scores.csv"));
    CHECK(fs::exists(sb / "run/folds.csv"));
    CHECK(fs::exists(sb / "run/checkpoints/fold0.ckpt"));
    CHECK(fs::exists(sb / "run/checkpoints/fold2.pre.ckpt"));
    CHECK(fs::exists(sb / "run/logs/fold0.csv"));

    // cv_report has one row per fold plus mean and sem
    std::istringstream report(slurp(sb / "run/cv_report.csv"));
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(report, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    REQUIRE(lines.size() == 1 + 3 + 2);
    CHECK(lines[4].rfind("mean,", 0) == 0);
    CHECK(lines[5].rfind("sem,", 0) == 0);

    // resolved-config rerun is byte-identical
    REQUIRE(run("train --config " + (sb / "run/config.resolved") + " --out " + (sb / "rerun")) ==
            0);
    CHECK(slurp(sb / "run/cv_report.csv") == slurp(sb / "rerun/cv_report.csv"));
    CHECK(slurp(sb / "run/pooled_scores.csv") == slurp(sb / "rerun/pooled_scores.csv"));
    CHECK(slurp(sb / "run/checkpoints/fold1.ckpt") == slurp(sb / "rerun/checkpoints/fold1.ckpt"));
    CHECK(slurp(sb / "run/config.resolved") == slurp(sb / "rerun/config.resolved"));
}

TEST_CASE("early mode leaves unimodal checkpoint bytes identical") {
    Sandbox sb;
    write_text(sb / "gen.cfg", kGenConfig);
    REQUIRE(run("synth --config " + (sb / "gen.cfg") + " --out " + (sb / "cohort")) == 0);
    std::string manifest(kManifest);
    const auto pos = manifest.find("intermediate");
    manifest.replace(pos, std::string("intermediate").size(), "early");
    write_text(sb / "model.cfg", manifest);
    write_text(sb / "train.cfg", kTrainCfg);
    REQUIRE(run("train --cohort " + (sb / "cohort") + " --manifest " + (sb / "model.cfg") +
                " --config " + (sb / "train.cfg") + " --seed 4 --folds 3 --out " +
                (sb / "run")) == 0);

    const Params pre = load_checkpoint(sb / "run/checkpoints/fold0.pre.ckpt");
    const Params post = load_checkpoint(sb / "run/checkpoints/fold0.ckpt");
    for (const auto& [name, e] : pre.entries()) {
        if (name.rfind("enc.", 0) == 0 || name.rfind("head.", 0) == 0) {
            CHECK(post.at(name).values() == e.value.values());
        }
    }
}

TEST_CASE("unimodal manifests are accepted") {
    Sandbox sb;
    write_text(sb / "gen.cfg", kGenConfig);
    REQUIRE(run("synth --config " + (sb / "gen.cfg") + " --out " + (sb / "cohort")) == 0);
    write_text(sb / "model.cfg", R"([model]
mode = unimodal
modalities = clin

[encoder]
d_model = 8
n_heads = 2
layers = 1
ff_dim = 12

[head]
trees = 2
depth = 2
)");
    write_text(sb / "train.cfg", kTrainCfg);
    CHECK(run("train --cohort " + (sb / "cohort") + " --manifest " + (sb / "model.cfg") +
              " --config " + (sb / "train.cfg") + " --seed 5 --folds 3 --out " +
              (sb / "run")) == 0);
}

TEST_CASE("sweep-missing validates the grid and degrades to the absent encoding") {
    Sandbox sb;
    write_text(sb / "gen.cfg", kGenConfig);
    REQUIRE(run("synth --config " + (sb / "gen.cfg") + " --out " + (sb / "cohort")) == 0);
    write_text(sb / "model.cfg", kManifest);
    write_text(sb / "train.cfg", kTrainCfg);
    REQUIRE(run("train --cohort " + (sb / "cohort") + " --manifest " + (sb / "model.cfg") +
                " --config " + (sb / "train.cfg") + " --seed 3 --folds 3 --out " +
                (sb / "run")) == 0);

    // fraction below the natural baseline is rejected
    CHECK(run("sweep-missing --run " + (sb / "run") + " --modality img --fractions 0.1") != 0);

    REQUIRE(run("sweep-missing --run " + (sb / "run") +
                " --modality img --fractions 0.3,0.6,1.0 --out " + (sb / "sweep")) == 0);
    std::istringstream sweep(slurp(sb / "sweep/sweep.csv"));
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(sweep, line)) {
        if (!line.empty()) lines.push_back(line);
    }
    REQUIRE(lines.size() == 4);  // header + 3 fractions

    // the baseline fraction reproduces the training-run test metric exactly
    const std::string cv = slurp(sb / "run/cv_report.csv");
    const auto mean_pos = cv.find("mean,,,");
    const std::string mean_c = cv.substr(mean_pos + 7, 8);
    CHECK(lines[1].find(mean_c) != std::string::npos);
}

TEST_CASE("stratify splits risk groups and handles degenerate scores") {
    Sandbox sb;
    write_text(sb / "gen.cfg", kGenConfig);
    REQUIRE(run("synth --config " + (sb / "gen.cfg") + " --out " + (sb / "cohort")) == 0);

    // synthetic two-cluster scores keyed to the oracle risk
    std::istringstream oracle(slurp(sb / "cohort/oracle.csv"));
    std::string line;
    std::getline(oracle, line);
    std::ostringstream scores;
    scores << "patient_id,fold,score\n";
    while (std::getline(oracle, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        const double risk = std::stod(line.substr(comma + 1));
        scores << line.substr(0, comma) << ",0," << (risk > 0 ? 5.0 + risk : -5.0 + risk)
               << "\n";
    }
    write_text(sb / "scores.csv", scores.str());
    REQUIRE(run("stratify --scores " + (sb / "scores.csv") + " --outcome " +
                (sb / "cohort/outcome.csv") + " --endpoint pfs=" + (sb / "cohort/outcome.csv") +
                " --out " + (sb / "strat")) == 0);
    CHECK(fs::exists(sb / "strat/risk_groups.csv"));
    CHECK(fs::exists(sb / "strat/km_curves.csv"));
    const std::string report = slurp(sb / "strat/logrank_report.csv");
    CHECK(report.find("os,") != std::string::npos);
    CHECK(report.find("pfs,") != std::string::npos);

    // constant scores cannot be split
    std::ostringstream flat;
    flat << "patient_id,fold,score\n";
    std::istringstream oracle2(slurp(sb / "cohort/oracle.csv"));
    std::getline(oracle2, line);
    while (std::getline(oracle2, line)) {
        if (line.empty()) continue;
        flat << line.substr(0, line.find(',')) << ",0,1.0\n";
    }
    write_text(sb / "flat.csv", flat.str());
    CHECK(run("stratify --scores " + (sb / "flat.csv") + " --outcome " +
              (sb / "cohort/outcome.csv") + " --out " + (sb / "strat2")) != 0);
}
