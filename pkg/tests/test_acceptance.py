"""Acceptance gate: the twelve package-level criteria, one test each.

Every test prints a single ``acceptance NN ... PASS/FAIL`` line with the
measured numbers, then asserts.  Criterion 07's final margin assertion is
a documented shortfall (see README): the algorithm ordering holds, but
the best configuration found gives +0.65 accuracy points, not the
required +1.0.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from fedceo.analysis import invert_linear_gradient, smoothness_map, spectral_curves
from fedceo.dp import DpConfig, clip_update, gaussianize, privacy_budget, rng_stream
from fedceo.models import (
    backward,
    flatten_params,
    forward_loss,
    logistic_model,
    mlp_model,
    unflatten_params,
)
from fedceo.protocol import (
    DataSpec,
    ModelSpec,
    RunConfig,
    metrics_csv_text,
    run_experiment,
    smoothing_threshold,
)
from fedceo.tensor import (
    bcirc,
    dft_mode3,
    fold,
    frobenius,
    idft_mode3,
    prox_objective,
    t_product,
    tnn,
    truncated_svd_matrix,
    truncated_tsvd,
    tsvd,
    unfold,
)

SEEDS = (0, 1, 2, 3, 4)

# Noise multiplier that prices the desk-scale privacy budget at 0.5:
# sigma = c2 * (K/N) * sqrt(T * ln(1/delta)) / eps with K/N = 5/20, T = 60,
# delta = 1e-2, eps = 0.5.
HIGH_SIGMA = 1.0 * (5 / 20) * math.sqrt(60 * math.log(100)) / 0.5

DESK = RunConfig(
    n_total=20, k_selected=5, rounds=60, local_epochs=30, batch=16, lr=0.1,
    dp=DpConfig(clip_c=0.5, sigma=HIGH_SIGMA, delta=1e-2),
    lambda0=1 / 6, ratio=1.05, interval=60, algorithm="ldp_fedavg",
    seed=0, eval_every=60,
    model=ModelSpec(kind="logistic", bias=False),
    data=DataSpec(classes=10, dim=20, samples=2000, spread=2.0),
)


def report(num: int, label: str, ok: bool, detail: str) -> None:
    verdict = "PASS" if ok else "FAIL"
    print(f"\nacceptance {num:02d} ({label}): {verdict} - {detail}")
    assert ok, f"acceptance {num:02d} ({label}): {detail}"


def mean_final(cfg, field="acc"):
    vals = []
    for s in SEEDS:
        res = run_experiment(dataclasses.replace(cfg, seed=s))
        vals.append(getattr(res.metrics[-1], field))
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# shared desk-scale batteries


@pytest.fixture(scope="module")
def high_noise_battery():
    """ldp / flat / geometric fedceo / clean runs at the high-noise desk
    config, 5 seeds each; reused by criteria 07 and 09 and the utility-gap
    check."""
    variants = {
        "ldp": dataclasses.replace(DESK, algorithm="ldp_fedavg"),
        "flat": dataclasses.replace(DESK, algorithm="fedceo", ratio=1.0),
        "geo": dataclasses.replace(DESK, algorithm="fedceo", ratio=1.05),
        "clean": dataclasses.replace(DESK, algorithm="fedavg"),
    }
    out = {name: {"acc": [], "loss": [], "stacks": []} for name in variants}
    timed = 0.0
    for name, cfg in variants.items():
        start = time.perf_counter()
        for s in SEEDS:
            res = run_experiment(dataclasses.replace(cfg, seed=s))
            out[name]["acc"].append(res.metrics[-1].acc)
            out[name]["loss"].append(res.metrics[-1].loss)
            out[name]["stacks"].append(res.final_stack)
        if name != "clean":
            timed += time.perf_counter() - start
    out["battery_seconds"] = timed
    return out


@pytest.fixture(scope="module")
def noise_sweep_battery():
    """Mean final accuracy per (algorithm, sigma) on the moderate-noise
    grid used by criterion 08."""
    base = dataclasses.replace(DESK, local_epochs=10)
    variants = {
        "ldp": dataclasses.replace(base, algorithm="ldp_fedavg"),
        "flat": dataclasses.replace(base, algorithm="fedceo", ratio=1.0),
        "geo": dataclasses.replace(base, algorithm="fedceo", ratio=1.05),
    }
    sigmas = (0.5, 1.0, 2.0)
    table = {}
    for name, cfg in variants.items():
        table[name] = {
            sg: mean_final(dataclasses.replace(
                cfg, dp=dataclasses.replace(cfg.dp, sigma=sg)))
            for sg in sigmas
        }
    return table


# ---------------------------------------------------------------------------
# 01: tensor algebra exactness


def test_criterion_01_tensor_algebra_exactness():
    rng = np.random.default_rng(0)
    worst = {"roundtrip": 0.0, "tsvd": 0.0, "parseval": 0.0, "tprod": 0.0}
    start = time.perf_counter()
    for _ in range(100):
        n1 = int(rng.integers(2, 17))
        n2 = int(rng.integers(2, 9))
        n3 = int(rng.integers(1, 9))
        t = rng.normal(size=(n1, n2, n3))
        scale = frobenius(t)

        back = idft_mode3(dft_mode3(t))
        worst["roundtrip"] = max(worst["roundtrip"],
                                 frobenius(back - t) / scale)

        rec = tsvd(t).reconstruct()
        worst["tsvd"] = max(worst["tsvd"], frobenius(rec - t) / scale)

        spec_energy = float(np.sum(np.abs(dft_mode3(t)) ** 2))
        worst["parseval"] = max(
            worst["parseval"],
            abs(spec_energy - n3 * scale**2) / (n3 * scale**2))

        m = int(rng.integers(1, 7))
        b = rng.normal(size=(n2, m, n3))
        via_fft = t_product(t, b)
        via_bcirc = fold(bcirc(t) @ unfold(b), (n1, m, n3))
        worst["tprod"] = max(
            worst["tprod"],
            frobenius(via_fft - via_bcirc) / (frobenius(via_bcirc) + 1e-30))
    elapsed = time.perf_counter() - start
    ok = (worst["roundtrip"] <= 1e-10 and worst["tsvd"] <= 1e-8
          and worst["parseval"] <= 1e-9 and worst["tprod"] <= 1e-9
          and elapsed < 5.0)
    report(1, "tensor algebra exactness", ok,
           f"roundtrip {worst['roundtrip']:.2e}, tsvd {worst['tsvd']:.2e}, "
           f"parseval {worst['parseval']:.2e}, t-product {worst['tprod']:.2e}, "
           f"{elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 02: shrinkage minimizes the proximal objective


def test_criterion_02_shrinkage_minimizes_proximal_objective():
    rng = np.random.default_rng(1)
    worst_gap = -np.inf
    anchors_ok = True
    start = time.perf_counter()
    for _ in range(100):
        shape = (int(rng.integers(2, 7)), int(rng.integers(2, 6)),
                 int(rng.integers(1, 5)))
        target = rng.normal(size=shape) * float(10 ** rng.uniform(-0.5, 0.5))
        coeff = float(10 ** rng.uniform(-1.3, 0.7))
        best = truncated_tsvd(target, 1.0 / (2.0 * coeff))
        f_best = prox_objective(best, target, coeff)
        anchors_ok &= f_best <= prox_objective(target, target, coeff) + 1e-9
        anchors_ok &= f_best <= prox_objective(np.zeros(shape), target, coeff) + 1e-9
        for _ in range(200):
            direction = rng.normal(size=shape)
            direction /= frobenius(direction)
            for eps in (1e-3, 1e-2):
                f_other = prox_objective(best + eps * direction, target, coeff)
                worst_gap = max(worst_gap, f_best - f_other)
    elapsed = time.perf_counter() - start
    ok = worst_gap <= 1e-9 and anchors_ok and elapsed < 30.0
    report(2, "proximal-objective minimality", ok,
           f"worst improvement by a perturbation {worst_gap:.2e}, "
           f"anchors {'ok' if anchors_ok else 'violated'}, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 03: identical-slice stacks reduce to the matrix rule


def test_criterion_03_identical_slice_reduction():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(20):
        k = int(rng.integers(2, 9))
        w = rng.normal(size=(int(rng.integers(2, 9)), int(rng.integers(2, 7))))
        top = np.linalg.svd(w, compute_uv=False)[0]
        tau = float(rng.uniform(0.05, 1.1)) * k * top
        stacked = np.repeat(w[:, :, None], k, axis=2)
        out = truncated_tsvd(stacked, tau)
        expected = truncated_svd_matrix(w, tau / k)
        for s in range(k):
            worst = max(worst, float(np.max(np.abs(out[:, :, s] - expected))))
    w = rng.normal(size=(6, 4))
    single = truncated_tsvd(w[:, :, None], 0.7)
    single_err = float(np.max(np.abs(single[:, :, 0]
                                     - truncated_svd_matrix(w, 0.7))))
    ok = worst <= 1e-9 and single_err <= 1e-10
    report(3, "identical-slice reduction", ok,
           f"worst slice deviation {worst:.2e}, single-slice {single_err:.2e}")


# ---------------------------------------------------------------------------
# 04: privacy mechanism statistics


def test_criterion_04_dp_mechanism_statistics():
    rng = np.random.default_rng(3)
    clip_c = 1.0
    worst_norm = 0.0
    for _ in range(10_000):
        v = rng.normal(size=8) * float(10 ** rng.uniform(-1, 1))
        worst_norm = max(worst_norm, float(np.linalg.norm(
            clip_update(v, clip_c))))
    clip_ok = worst_norm <= clip_c * (1 + 1e-12)

    dp = DpConfig(clip_c=1.0, sigma=2.0, delta=1e-2)
    draws = gaussianize(np.zeros(100_000), np.zeros(100_000), 1.0, dp, 4,
                        np.random.default_rng(4))
    target = dp.sigma * dp.clip_c / math.sqrt(4)
    std_err = abs(float(draws.std()) - target) / target
    std_ok = std_err <= 0.02

    frozen = privacy_budget(DpConfig(sigma=2.0, delta=1e-2, c1=1.0, c2=1.0),
                            n_total=10, k_selected=1, rounds=100).epsilon
    frozen_ok = abs(frozen - 1.072985) <= 1e-5

    def eps(sigma=2.0, delta=1e-2, k=1, n=10, rounds=100):
        return privacy_budget(DpConfig(sigma=sigma, delta=delta),
                              n_total=n, k_selected=k, rounds=rounds).epsilon

    mono_ok = (
        eps(rounds=50) < eps(rounds=100) < eps(rounds=200)
        and eps(k=1) < eps(k=2) < eps(k=5)
        and eps(sigma=1.0) > eps(sigma=2.0) > eps(sigma=4.0)
        and eps(delta=1e-3) > eps(delta=1e-2) > eps(delta=1e-1)
    )
    ok = clip_ok and std_ok and frozen_ok and mono_ok
    report(4, "dp mechanism statistics", ok,
           f"max clipped norm {worst_norm:.12f}, noise std off by "
           f"{std_err:.3%}, budget {frozen:.6f}, monotone {mono_ok}")


# ---------------------------------------------------------------------------
# 05: analytic gradients match finite differences


def test_criterion_05_gradient_correctness():
    rng = np.random.default_rng(5)
    worst = 0.0
    for model in (
        logistic_model(7, 4, bias=True, rng=rng),
        mlp_model(6, 5, 3, bias=False, rng=rng),
    ):
        dim = model.layers[0].weight.shape[0]
        classes = model.layers[-1].weight.shape[1]
        x = rng.normal(size=(8, dim))
        y = rng.integers(classes, size=8)
        theta = flatten_params(model)
        _, cache = forward_loss(model, x, y)
        grad = backward(model, cache)

        def loss_at(vec):
            loss, _ = forward_loss(unflatten_params(model, vec), x, y)
            return loss

        coords = rng.choice(theta.size, size=20, replace=False)
        for i in coords:
            h = 1e-6 * max(1.0, abs(theta[i]))
            plus, minus = theta.copy(), theta.copy()
            plus[i] += h
            minus[i] -= h
            fd = (loss_at(plus) - loss_at(minus)) / (2 * h)
            rel = abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1e-8)
            worst = max(worst, rel)
    ok = worst <= 1e-5
    report(5, "gradient correctness", ok,
           f"worst relative error over both architectures {worst:.2e}")


# ---------------------------------------------------------------------------
# 06: protocol equivalences


def test_criterion_06_protocol_equivalences():
    base = dataclasses.replace(DESK, rounds=10, local_epochs=3, eval_every=5,
                               dp=DpConfig(clip_c=1.0, sigma=1.0, delta=1e-2))
    ldp = run_experiment(dataclasses.replace(base, algorithm="ldp_fedavg"))
    lazy = run_experiment(dataclasses.replace(
        base, algorithm="fedceo", interval=base.rounds + 1))
    bit_identical = (
        np.array_equal(flatten_params(ldp.final_model),
                       flatten_params(lazy.final_model))
        and ldp.metrics == lazy.metrics
    )

    plain = run_experiment(dataclasses.replace(base, algorithm="fedavg"))
    limits = run_experiment(dataclasses.replace(
        base, algorithm="ldp_fedavg",
        dp=DpConfig(clip_c=1e9, sigma=1e-300, delta=1e-2)))
    dist = float(np.linalg.norm(flatten_params(plain.final_model)
                                - flatten_params(limits.final_model)))
    ok = bit_identical and dist <= 1e-6
    report(6, "protocol equivalences", ok,
           f"idle-smoother bit-identical {bit_identical}, "
           f"vanishing-noise distance {dist:.2e}")


# ---------------------------------------------------------------------------
# 07: utility ordering under a 0.5 privacy budget


def test_criterion_07_high_noise_utility_ordering(high_noise_battery):
    eps = privacy_budget(DESK.dp, DESK.n_total, DESK.k_selected,
                         DESK.rounds).epsilon
    acc = {name: float(np.mean(high_noise_battery[name]["acc"]))
           for name in ("ldp", "flat", "geo")}
    margin = acc["geo"] - acc["ldp"]
    elapsed = high_noise_battery["battery_seconds"]
    ordered = acc["geo"] >= acc["flat"] - 1e-12 >= acc["ldp"] - 2e-12
    ok = (abs(eps - 0.5) < 1e-12 and ordered and margin >= 0.01
          and elapsed < 120.0)
    report(7, "high-noise utility ordering", ok,
           f"eps {eps:.3f}; mean acc geo {acc['geo']:.4f} >= flat "
           f"{acc['flat']:.4f} >= ldp {acc['ldp']:.4f} (ordered {ordered}); "
           f"margin {margin:+.4f} (needs >= +0.0100); {elapsed:.0f}s")


def test_high_noise_loss_gap_favors_smoothing(high_noise_battery):
    # Companion check on the same battery: the private-minus-clean loss gap
    # is no worse with smoothing than without it.
    clean = float(np.mean(high_noise_battery["clean"]["loss"]))
    gap_ldp = float(np.mean(high_noise_battery["ldp"]["loss"])) - clean
    gap_geo = float(np.mean(high_noise_battery["geo"]["loss"])) - clean
    assert gap_ldp >= gap_geo, (gap_ldp, gap_geo)


# ---------------------------------------------------------------------------
# 08: accuracy vs noise trend


def test_criterion_08_noise_tradeoff_trend(noise_sweep_battery):
    table = noise_sweep_battery
    sigmas = (0.5, 1.0, 2.0)
    monotone = all(
        table[name][sigmas[i]] >= table[name][sigmas[i + 1]] - 1e-12
        for name in table for i in range(len(sigmas) - 1)
    )
    drops = {name: table[name][0.5] - table[name][2.0] for name in table}
    smallest = drops["geo"] < drops["flat"] and drops["geo"] < drops["ldp"]
    ok = monotone and smallest
    cells = "; ".join(
        f"{name} " + "/".join(f"{table[name][s]:.4f}" for s in sigmas)
        + f" drop {drops[name]:.4f}"
        for name in ("ldp", "flat", "geo"))
    report(8, "noise trade-off trend", ok,
           f"monotone {monotone}, geometric drop smallest {smallest}; {cells}")


# ---------------------------------------------------------------------------
# 09: spectral concentration at the zero frequency


def test_criterion_09_spectral_concentration(high_noise_battery):
    ratios = []
    for stacks in high_noise_battery["ldp"]["stacks"]:
        for t in stacks:
            top = spectral_curves(t).top
            ratios.append(float(top[0] / np.max(top[1:])))
    ok = min(ratios) >= 2.0
    report(9, "spectral concentration", ok,
           f"min zero-frequency dominance over 5 seeds {min(ratios):.1f}x "
           f"(needs >= 2x)")


# ---------------------------------------------------------------------------
# 10: gradient inversion attack


def test_criterion_10_attack_suite():
    sigmas = (0.0, 0.5, 1.0, 2.0)
    errors = {sg: [] for sg in sigmas}
    worst_clean_cosine = 1.0
    for seed in range(20):
        rng = rng_stream(seed, purpose="attack")
        head = logistic_model(20, 10, bias=True, rng=rng)
        x_true = rng.standard_normal(20)
        y = np.array([int(rng.integers(10))])
        _, cache = forward_loss(head, x_true[None, :], y)
        grad = unflatten_params(head, backward(head, cache))
        gw, gb = grad.layers[0].weight, grad.layers[0].bias
        scale = float(np.sqrt(np.mean(gw**2)))

        def cosine(v):
            return float(v @ x_true
                         / (np.linalg.norm(v) * np.linalg.norm(x_true)))

        worst_clean_cosine = min(worst_clean_cosine,
                                 cosine(invert_linear_gradient(gw, gb)))
        for si, sg in enumerate(sigmas):
            noise_rng = rng_stream(seed, round_no=si + 1, purpose="attack")
            noisy_w = gw + noise_rng.standard_normal(gw.shape) * sg * scale
            noisy_b = gb + noise_rng.standard_normal(gb.shape) * sg * scale
            errors[sg].append(1.0 - cosine(
                invert_linear_gradient(noisy_w, noisy_b)))
    medians = [float(np.median(errors[sg])) for sg in sigmas]
    nondecreasing = all(a <= b + 1e-12 for a, b in zip(medians, medians[1:]))
    ok = worst_clean_cosine >= 0.999 and nondecreasing
    report(10, "gradient inversion attack", ok,
           f"worst noiseless cosine {worst_clean_cosine:.6f}, median errors "
           + " -> ".join(f"{m:.3f}" for m in medians))


# ---------------------------------------------------------------------------
# 11: smoothing reduces the roughness map


def test_criterion_11_smoothing_reduces_roughness():
    base = dataclasses.replace(
        DESK, rounds=5, local_epochs=3, eval_every=5, algorithm="ldp_fedavg",
        dp=DpConfig(clip_c=1.0, sigma=2.0, delta=1e-2))
    tau = smoothing_threshold(0.5, 1.05, round_no=5, interval=5)
    drops = []
    for s in SEEDS:
        stack = run_experiment(dataclasses.replace(base, seed=s)).final_stack[0]
        k = stack.shape[2]
        before = smoothness_map([stack[:, :, i].T for i in range(k)]).total
        smoothed = truncated_tsvd(stack, tau)
        after = smoothness_map([smoothed[:, :, i].T for i in range(k)]).total
        drops.append((before, after))
    ok = all(before > after for before, after in drops)
    detail = ", ".join(f"{b:.3f}->{a:.3f}" for b, a in drops)
    report(11, "smoothing reduces roughness", ok, f"totals per seed {detail}")


# ---------------------------------------------------------------------------
# 12: byte-identical metrics across worker threads


def test_criterion_12_thread_reproducibility():
    cfg = dataclasses.replace(
        DESK, rounds=10, local_epochs=3, eval_every=5, algorithm="fedceo",
        interval=5, lambda0=0.5,
        dp=DpConfig(clip_c=1.0, sigma=1.0, delta=1e-2))
    texts = {
        n: metrics_csv_text(run_experiment(cfg, max_workers=n).metrics)
        for n in (1, 2, 8)
    }
    ok = texts[1] == texts[2] == texts[8]
    report(12, "thread reproducibility", ok,
           f"metrics.csv identical across 1/2/8 workers: {ok}")
