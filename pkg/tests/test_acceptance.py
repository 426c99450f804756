"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is printed at the end.

Run alone with ``pytest tests/test_acceptance.py`` or ``python3 tests/test_acceptance.py``.
"""
from __future__ import annotations

import functools
import sys
import time

import numpy as np
import pytest
from oracles import (
    finite_difference_grad,
    max_relative_error,
    random_instance,
    surrogate_fd_grad,
)

from fedapa import config as cfgmod
from fedapa import fl_core as fc
from fedapa import model as mdl
from fedapa.cli import main
from fedapa.numerics import ParamMatrix, ParamVector, weighted_sum
from fedapa.orchestrator import ExperimentConfig, ExperimentResult, comm_count, run_experiment

SEEDS = (0, 1, 2)
BENCH_ROUNDS = 30
RESULTS: list[str] = []


def report(number: int, ok: bool, detail: str) -> None:
    RESULTS.append(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def benchmark_config(seed: int, rounds: int = BENCH_ROUNDS, **strategy) -> ExperimentConfig:
    """The standard synthetic benchmark: built-in defaults, 3 clusters of 4 clients."""
    cfg = cfgmod.to_experiment(cfgmod.resolve({"seed": seed, "rounds": rounds}))
    return cfgmod.with_strategy(cfg, **strategy) if strategy else cfg


@functools.lru_cache(maxsize=None)
def bench(variant: str, seed: int) -> tuple[ExperimentResult, float]:
    strategy = {
        "fedapa": dict(),
        "fedavg": dict(strategy="fedavg", pms=False),
        "local_only": dict(strategy="local_only"),
        "wo_all": dict(ablate_clip=True, ablate_self_weight=True, ablate_normalize=True),
    }[variant]
    started = time.perf_counter()
    result = run_experiment(benchmark_config(seed, **strategy))
    return result, time.perf_counter() - started


def test_criterion_01_gradient_matches_finite_differences():
    started = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        _, params, X, y = random_instance(seed)
        _, grad = mdl.loss_and_grad(params, X, y)
        worst = max(worst, max_relative_error(grad.values, finite_difference_grad(params, X, y)))
    elapsed = time.perf_counter() - started
    report(1, worst < 1e-4 and elapsed < 5, f"max rel err {worst:.2e} (< 1e-4), {elapsed:.2f}s (< 5s)")


def test_criterion_02_weight_update_is_surrogate_gradient_step():
    started = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        m, n = int(rng.integers(2, 9)), int(rng.integers(2, 20))
        theta = rng.normal(size=(m, n))
        a = rng.dirichlet(np.ones(m))
        target = rng.normal(size=n)
        eta = float(rng.uniform(1e-3, 0.5))
        P = ParamMatrix(theta, ((n,),))
        d = ParamVector(target - weighted_sum(P, a).values, P.layout)
        step = fc.update_weights(a, P, d, eta, "surrogate_descent") - a
        expected = -eta * surrogate_fd_grad(theta, a, target)
        worst = max(worst, float(np.max(np.abs(step - expected) / np.maximum(np.abs(expected), 1e-8))))
    elapsed = time.perf_counter() - started
    report(2, worst < 1e-6 and elapsed < 2, f"max rel err {worst:.2e} (< 1e-6), {elapsed:.2f}s (< 2s)")


@functools.lru_cache(maxsize=None)
def long_run() -> ExperimentResult:
    return run_experiment(benchmark_config(0, rounds=50), snapshot_weights=True)


def test_criterion_03_postprocessed_rows_are_distributions():
    result = long_run()
    worst_sum = max(float(np.abs(W.sum(axis=1) - 1).max()) for W in result.weight_snapshots)
    in_box = all(((W >= 0) & (W <= 1)).all() for W in result.weight_snapshots)
    ex1 = fc.postprocess(np.array([1.0, 0.08]), 0, 0.5).a
    ex2 = fc.postprocess(np.array([-0.3, 1.4, 0.2]), 1, 0.5).a
    examples = (
        np.round(ex1, 6).tolist() == [0.862069, 0.137931]
        and np.round(ex2, 6).tolist() == [0.0, 0.714286, 0.285714]
        and ex2[1] == 0.5 / 0.7
    )
    ok = len(result.weight_snapshots) == 50 and in_box and worst_sum <= 1e-9 and examples
    report(3, ok, f"50 rounds, rows in [0,1]={in_box}, max |sum-1|={worst_sum:.1e}, examples={examples}")


def test_criterion_04_step_drift_bound_every_round():
    runs = [long_run()] + [bench(v, s)[0] for v in ("fedapa", "wo_all") for s in SEEDS]
    checks = [c for r in runs for rnd in r.drift_checks for c in rnd]
    violations = [c for c in checks if not c.step_ok]
    worst = max(c.step_drift / c.step_bound for c in checks if c.step_bound > 0)
    report(4, not violations and bool(checks), f"{len(checks)} client-round checks, {len(violations)} violations, max ratio {worst:.3f}")


def _cluster_gap(result: ExperimentResult) -> float:
    W = result.weight_matrix
    a = result.cluster_assignment
    M = len(a)
    intra = [W[i, j] for i in range(M) for j in range(M) if i != j and a[i] == a[j]]
    inter = [W[i, j] for i in range(M) for j in range(M) if a[i] != a[j]]
    return float(np.mean(intra) - np.mean(inter))


def test_criterion_05_weights_recover_clusters():
    gaps = [_cluster_gap(bench("fedapa", s)[0]) for s in SEEDS]
    elapsed = sum(bench("fedapa", s)[1] for s in SEEDS)
    hits = sum(g > 0 for g in gaps)
    report(5, hits >= 2 and elapsed < 90, f"intra-inter gap per seed {np.round(gaps, 4).tolist()}, {hits}/3 seeds, {elapsed:.1f}s (< 90s)")


def _final_mean(variant: str) -> float:
    return float(np.mean([bench(variant, s)[0].final.mean_acc for s in SEEDS]))


def test_criterion_06_personalization_advantage():
    apa, avg, local = (_final_mean(v) for v in ("fedapa", "fedavg", "local_only"))
    elapsed = sum(bench(v, s)[1] for v in ("fedapa", "fedavg", "local_only") for s in SEEDS)
    ok = apa - avg >= 0.05 and apa >= local and elapsed < 180
    report(6, ok, f"FedAPA {apa:.4f} vs FedAvg {avg:.4f} (+{100 * (apa - avg):.1f}pp) vs local {local:.4f}, {elapsed:.1f}s (< 180s)")


def test_criterion_07_ablation_direction():
    apa = _final_mean("fedapa")
    per_seed = [bench("wo_all", s)[0].final.mean_acc for s in SEEDS]
    wo = float(np.mean(per_seed))
    report(7, apa - wo >= 0.03, f"FedAPA {apa:.4f} vs w/o-All {wo:.4f} (+{100 * (apa - wo):.1f}pp); w/o-All per seed {np.round(per_seed, 3).tolist()}")


def test_criterion_08_communication_accounting():
    spec = mdl.ModelSpec(4, 3, (8,))
    example = comm_count(spec, True) == 80 and comm_count(spec, False) == 134
    result = bench("fedapa", 0)[0]
    s = result.spec
    exact = all(r.transmitted_params == 2 * s.extractor_size * len(r.sampled) for r in result.records)
    fewer = comm_count(s, True) < comm_count(s, False)
    report(8, example and exact and fewer, f"4-8-3 gives {comm_count(spec, True)} vs {comm_count(spec, False)}; per-round counts exact={exact}; pms fewer={fewer}")


def test_criterion_09_cmd_run_is_byte_identical(tmp_path):
    blobs = []
    for k, workers in enumerate((1, 1, 4)):
        out = tmp_path / f"run{k}"
        code = main(["run", "--set", "rounds=5", "--seed", "3", "--workers", str(workers), "--out", str(out)])
        assert code == 0
        blobs.append((out / "metrics.jsonl").read_bytes())
    same = blobs[0] == blobs[1] == blobs[2]
    report(9, same, f"3 runs (1, 1, 4 threads), metrics.jsonl identical={same}, {len(blobs[0])} bytes")


def test_criterion_10_fast_convergence():
    limit = int(0.4 * BENCH_ROUNDS)
    reached = []
    for s in SEEDS:
        curve = [r.mean_acc for r in bench("fedapa", s)[0].records]
        reached.append(next(t for t, v in enumerate(curve, 1) if v >= 0.95 * curve[-1]))
    report(10, all(t <= limit for t in reached), f"round reaching 95% of final per seed {reached} (<= {limit})")


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)
