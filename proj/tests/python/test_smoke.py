"""Smoke tests for the python bindings; the heavy verification lives in the
C++ suites."""

import math

import pytest

import msurv


def two_block_spec(n=120, censor=0.25):
    return {
        "n": n,
        "latent_dim": 4,
        "risk_weights": [1.3, 1.0, 1.3, 1.0],
        "censor_rate": censor,
        "modalities": [
            {"name": "clin", "width": 4, "latent_lo": 0, "latent_hi": 2, "noise_std": 0.2},
            {
                "name": "img",
                "width": 5,
                "latent_lo": 2,
                "latent_hi": 4,
                "noise_std": 0.2,
                "modality_missing": 0.3,
            },
        ],
    }


def test_cox_nll_matches_hand_example():
    assert msurv.cox_nll([0.0, 0.0], [1.0, 2.0], [True, True]) == pytest.approx(
        math.log(2.0) / 2.0
    )
    grad = msurv.cox_nll_grad([0.0, 0.0], [1.0, 2.0], [True, True])
    assert grad[0] == pytest.approx(-0.25)
    assert grad[1] == pytest.approx(0.25)


def test_metrics_basics():
    times = [1.0, 2.0, 3.0, 4.0]
    events = [True, True, True, True]
    assert msurv.harrell_c([4, 3, 2, 1], times, events) == 1.0
    assert msurv.uno_c([4, 3, 2, 1], times, events) == 1.0

    km_times, surv, at_risk, d = msurv.km_estimate([1.0, 2.0, 3.0], [True, False, True])
    assert surv[0] == pytest.approx(2.0 / 3.0)
    assert surv[-1] == pytest.approx(0.0)
    assert at_risk[0] == 3

    chi2, p = msurv.logrank_test([1, 2, 3], [True] * 3, [4, 5, 6], [True] * 3)
    assert chi2 == pytest.approx(1.85 * 1.85 / 0.6775)
    assert 0.0 < p < 0.05


def test_synth_cohort_is_deterministic_and_missing_aware():
    cohort1, risk1 = msurv.synth_cohort(two_block_spec(), seed=9)
    cohort2, risk2 = msurv.synth_cohort(two_block_spec(), seed=9)
    assert cohort1.times == cohort2.times
    assert risk1 == risk2
    assert cohort1.n() == 120
    assert cohort1.modalities == ["clin", "img"]
    img = cohort1.block("img")
    assert img.missing_fraction() == pytest.approx(0.3, abs=0.01)

    masked = msurv.apply_missingness(cohort1, "img", 1.0, seed=1)
    assert masked.block("img").missing_fraction() == 1.0

    oracle = msurv.harrell_c(risk1, cohort1.times, cohort1.events)
    assert oracle > 0.8


def test_late_fuse_rank_sum():
    assert msurv.late_fuse([[0.1, 0.9], [0.2, 0.8]]) == [2.0, 4.0]
    assert msurv.late_fuse([[0.1, 0.9], [0.8, 0.2]]) == [3.0, 3.0]
    with pytest.raises(msurv.MsurvError):
        msurv.late_fuse([[0.1, 0.9]])


def test_stratified_kfold_partitions():
    cohort, _ = msurv.synth_cohort(two_block_spec(), seed=3)
    folds = msurv.stratified_kfold(cohort, 5, seed=1)
    assert len(folds) == cohort.n()
    assert sorted(set(folds)) == [0, 1, 2, 3, 4]


MANIFEST = """
[model]
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
"""

TRAIN = """
seed = 3

[train]
max_epochs = 6
early_stop_patience = 6
warmup_epochs = 2
plateau_patience = 3
eta_min = 1e-5
eta_max = 1e-2
batch_size = 32
"""


def test_run_cv_smoke():
    cohort, _ = msurv.synth_cohort(two_block_spec(), seed=5)
    report = msurv.run_cv(cohort, MANIFEST, TRAIN, k=3, jobs=2)
    assert len(report["folds"]) == 3
    assert 0.0 <= report["harrell_mean"] <= 1.0
    assert len(report["pooled_scores"]) == cohort.n()

    repeat = msurv.run_cv(cohort, MANIFEST, TRAIN, k=3, jobs=1)
    assert repeat["harrell_mean"] == report["harrell_mean"]
    assert repeat["pooled_scores"] == report["pooled_scores"]
