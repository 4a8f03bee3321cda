"""One test per acceptance criterion; each prints a PASS/FAIL line.

Criteria 1, 2 and 8 run the whole pipeline at the default configuration on
the bundled sample photographs (two runs, several minutes each). Run with
``pytest tests/test_acceptance.py -s`` to see the lines as they are produced;
they are also repeated in the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from biq import samples
from biq.distortions import FAMILIES, PRISTINE, Manifest, distort, generate_benchmark
from biq.experiment import run_pipeline
from biq.metrics import kendall, kendall_bruteforce, pearson, ranks, spearman
from biq.natural_model import ChannelKDE, discrete_kl, epanechnikov_kernel, fit_kde, kde_evaluate, kl_divergence

from tests.helpers import GRADIENT_OPS, gradient_trial, naive_density, random_kde, trapezoid_integral

needs_samples = pytest.mark.skipif(not samples.available(), reason="sample photographs not installed")


@pytest.fixture(scope="module")
def scaled_runs(tmp_path_factory):
    """Two identical default-configuration pipeline runs."""
    runs = []
    for name in ("run_a", "run_b"):
        runs.append(run_pipeline(tmp_path_factory.mktemp(name), seed=0))
    return runs


@needs_samples
def test_criterion_1_scaled_experiment(scaled_runs, record):
    run = scaled_runs[0]
    report = run.evaluation()
    ckpt = run.training()
    n_files = len(Manifest.read(run.manifest))
    sp, pe = report.means.get("spearman", math.nan), report.means.get("pearson", math.nan)
    minutes = run.total_seconds / 60
    setup_ok = (
        ckpt.config.channels == 32 and ckpt.config.patch_size == 64 and ckpt.config.seed == 0
        and len(samples.TRAIN) >= 10 and len(samples.NATURAL) >= 5 and len(samples.HELD_OUT) >= 5
        and n_files >= 80 and not report.incomplete
    )  # fmt: skip
    ok = record(
        1,
        setup_ok and sp >= 0.8 and pe >= 0.7 and minutes < 30,
        f"scaled experiment: spearman {sp:.4f} (need >= 0.8), pearson {pe:.4f} (need >= 0.7), "
        f"{minutes:.1f} min (need < 30), {n_files} files, "
        f"loss {ckpt.loss_history[0]:.5f} -> {ckpt.loss_history[-1]:.5f}",
    )
    assert ok


@needs_samples
def test_criterion_2_monotonic_means(scaled_runs, record):
    report = scaled_runs[0].evaluation()
    parts, ok = [], True
    for fam in FAMILIES:
        means = report.mean_scores_by_level(fam)
        strict = len(means) == 6 and all(a < b for a, b in zip(means, means[1:]))
        ok &= strict
        parts.append(f"{fam} {'increasing' if strict else 'NOT increasing'} [{' '.join(f'{m:.4f}' for m in means)}]")
    assert record(2, ok, "mean score by level: " + "; ".join(parts))


def test_criterion_3_gradient_suite(record):
    trials = 20
    worst = {op: max(gradient_trial(op, 5000 + t) for t in range(trials)) for op in GRADIENT_OPS}
    ok = all(v < 1e-4 for v in worst.values())
    detail = ", ".join(f"{op} {v:.1e}" for op, v in worst.items())
    assert record(3, ok, f"gradient checks, {trials} trials each, worst relative error: {detail}")


def test_criterion_4_kde_suite(record):
    rng = np.random.default_rng(4)
    oracle_err = 0.0
    for _ in range(200):
        obs = rng.normal(rng.uniform(-2, 2), rng.uniform(0.1, 3), int(rng.integers(2, 50)))
        kde = fit_kde(obs)
        xs = rng.uniform(obs.min() - 2 * kde.bandwidth, obs.max() + 2 * kde.bandwidth, 20)
        want = np.array([naive_density(obs, kde.bandwidth, x) for x in xs])
        oracle_err = max(oracle_err, float(np.max(np.abs(kde_evaluate(kde, xs) - want))))
    integral_err = max(abs(trapezoid_integral(random_kde(s), points=8192) - 1.0) for s in range(100))
    u = np.array([0.0, 0.5, -0.5, 1.0, -1.0])
    kernel_err = float(np.max(np.abs(epanechnikov_kernel(u) - [0.75, 0.5625, 0.5625, 0.0, 0.0])))
    ok = oracle_err <= 1e-12 and integral_err <= 1e-3 and kernel_err <= 1e-15
    assert record(
        4, ok,
        f"KDE: direct-sum oracle error {oracle_err:.1e} (<= 1e-12), integral error {integral_err:.1e} "
        f"over 100 sets (<= 1e-3), kernel error {kernel_err:.1e} (<= 1e-15)",
    )  # fmt: skip


def test_criterion_5_divergence_suite(record):
    self_kl = max(abs(kl_divergence(k, ChannelKDE(k.observations.copy(), k.bandwidth))) for k in map(random_kde, range(50)))
    two_point = discrete_kl(np.array([0.75, 0.25]), np.array([0.5, 0.5]), floor=0.0)
    p = random_kde(5)
    shifted = kl_divergence(fit_kde(p.observations + 3 * np.ptp(p.observations)), p)
    same = kl_divergence(fit_kde(p.observations), p)
    ok = self_kl <= 1e-9 and abs(two_point - 0.13081) <= 1e-5 and shifted > same
    assert record(
        5, ok,
        f"divergence: max KL(p||p) {self_kl:.1e} over 50 KDEs (<= 1e-9), two-point {two_point:.6f} "
        f"(0.13081 +- 1e-5), shifted {shifted:.3f} > unshifted {same:.1e}",
    )  # fmt: skip


def test_criterion_6_correlation_suite(record):
    rng = np.random.default_rng(6)
    kendall_ok, spearman_err = True, 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 9))
        x = rng.permutation(n) + rng.uniform(0, 0.5, n)
        y = rng.standard_normal(n)
        kendall_ok &= kendall(x, y) == kendall_bruteforce(x, y)
        spearman_err = max(spearman_err, abs(spearman(x, y) - pearson(ranks(x), ranks(y))))
    tau = kendall([1, 2, 3], [1, 3, 2])
    rho_s = spearman([1, 2, 3], [1, 3, 2])
    rho_p = pearson([1, 2, 3], [1, 2, 4])
    examples_ok = abs(tau - 1 / 3) < 1e-15 and rho_s == 0.5 and abs(rho_p - math.sqrt(27 / 28)) < 1e-15
    ok = kendall_ok and spearman_err <= 1e-12 and examples_ok
    assert record(
        6, ok,
        f"correlation: kendall == enumeration in 1000 trials: {kendall_ok}; spearman vs pearson-of-ranks "
        f"{spearman_err:.1e}; tau {tau:.6f}, rho_s {rho_s}, rho_p {rho_p:.5f}",
    )  # fmt: skip


def test_criterion_7_protocol_suite(tmp_path, record):
    rng = np.random.default_rng(7)
    images = [(f"synth{i:02d}", rng.uniform(size=(40, 48))) for i in range(20)]
    manifest = generate_benchmark(images, tmp_path, seed=11)
    files = sorted(p.name for p in tmp_path.glob("*.png"))
    rows_ok = len(manifest) == 320 and len(files) == 320
    paths_ok = sorted(r.path for r in manifest.rows) == files
    identity_ok = all(
        distort(img, fam, 0, seed=3).tobytes() == img.tobytes() for _, img in images for fam in FAMILIES + (PRISTINE,)
    )
    ok = rows_ok and paths_ok and identity_ok
    assert record(
        7, ok,
        f"protocol: 20 images -> {len(manifest)} rows, {len(files)} files; level-0 identity bit-exact: {identity_ok}",
    )  # fmt: skip


@needs_samples
def test_criterion_8_determinism(scaled_runs, record):
    a, b = scaled_runs
    same = {name: path.read_bytes() == b.artifacts()[name].read_bytes() for name, path in a.artifacts().items()}
    images = sorted(p.name for p in a.manifest.parent.glob("*.png"))
    same["corpus images"] = all(
        (a.manifest.parent / n).read_bytes() == (b.manifest.parent / n).read_bytes() for n in images
    )
    ok = all(same.values())
    assert record(8, ok, "two default pipeline runs byte-identical: " + ", ".join(f"{k} {v}" for k, v in same.items()))
