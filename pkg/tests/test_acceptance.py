"""Acceptance gate: one test per headline criterion, each at its stated tolerance.

Trained actors are cached under ``$CELLFREE_HO_CACHE`` (default
``.acceptance_cache`` in the repository root), keyed by a hash of the
scenario, hyperparameters, mode, episode budget and seed, so a rerun only
retrains when one of those changes. A one-line verdict per criterion is
printed in the terminal summary (see ``conftest.py``).
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import subprocess
import sys
import time
from pathlib import Path

import pytest

from cellfree_ho import harness, sac
from cellfree_ho.config import ScenarioConfig
from cellfree_ho.oracle import validation_report

ROOT = Path(__file__).resolve().parents[1]
CACHE = Path(os.environ.get("CELLFREE_HO_CACHE", ROOT / ".acceptance_cache"))

TRAIN_SEED = 1
EVAL_SEED = 777
NO_PENALTY_EPISODES = 3000
PENALTY_EPISODES = 10000
PO_EPISODES = 3000


def trained_actor(cfg: ScenarioConfig, mode: str, episodes: int, seed: int = TRAIN_SEED,
                  hyper: sac.SacHyper | None = None):
    """Best-window actor for this setup, trained once and then read from the cache."""
    hyper = hyper or sac.SacHyper()
    key = json.dumps({"cfg": dataclasses.asdict(cfg), "hyper": dataclasses.asdict(hyper), "mode": mode,
                      "episodes": episodes, "seed": seed}, sort_keys=True, default=str)
    path = CACHE / f"actor_{hashlib.sha256(key.encode()).hexdigest()[:16]}.npz"
    if path.exists():
        return sac.load_actor(path)[0]
    CACHE.mkdir(parents=True, exist_ok=True)
    res = sac.train(cfg, hyper, mode, episodes, seed)
    tmp = path.with_suffix(".tmp.npz")
    sac.save_actor(tmp, res.best_actor, cfg, mode, {"episodes": episodes, "best_rolling": res.best_rolling})
    tmp.replace(path)
    return res.best_actor


def verdict(record_property, criterion: str, ok: bool, detail: str) -> None:
    record_property("criterion", criterion)
    record_property("detail", detail)
    assert ok, f"{criterion}: {detail}"


def test_closed_form_matches_monte_carlo(record_property):
    cfg = ScenarioConfig()
    assert cfg.M == 8
    t0 = time.perf_counter()
    rows = validation_report(cfg, instances=10, samples=200_000, seed=0)
    elapsed = time.perf_counter() - t0
    bad = [r for r in rows if not r.passes(rel_tol=0.02, n_se=3)]
    worst = max(r.rel_error for r in rows)
    verdict(record_property, "closed-form vs Monte Carlo",
            not bad and elapsed < 120 and len({r.instance for r in rows}) == 10,
            f"{len(rows) - len(bad)}/{len(rows)} terms within 2% or 3 SE, worst rel err {worst:.4f}, "
            f"{elapsed:.1f} s")


@pytest.mark.slow
def test_no_penalty_policy_reaches_lsf_rate(record_property):
    cfg = ScenarioConfig(B=9, B_con=5, equal_loads=True, tau_0=0.0, tau_ho=0.0)
    actor = trained_actor(cfg, "da", NO_PENALTY_EPISODES)
    rep = harness.evaluate(cfg, "da", ("drl", "lsf"), 200, seed=EVAL_SEED, actor=actor)
    ratio = rep.mean_rate("drl") / rep.mean_rate("lsf")
    verdict(record_property, "no-penalty rate >= 95% of LSF", ratio >= 0.95,
            f"DRL/LSF mean rate {ratio:.4f} after {NO_PENALTY_EPISODES} episodes")


@pytest.mark.slow
def test_penalty_policy_beats_lsf_and_gathers_handoffs(record_property):
    cfg = ScenarioConfig(B=27, tau_0=4000.0)
    actor = trained_actor(cfg, "da", PENALTY_EPISODES)
    rep = harness.evaluate(cfg, "da", ("drl", "lsf"), 500, seed=EVAL_SEED, actor=actor)
    r_drl, r_lsf = rep.mean_reward("drl"), rep.mean_reward("lsf")
    h_drl, h_lsf = rep.ho_steps("drl"), rep.ho_steps("lsf")
    verdict(record_property, "penalized reward >= LSF with fewer HO steps", r_drl >= r_lsf and h_drl < h_lsf,
            f"reward DRL {r_drl:.4f} vs LSF {r_lsf:.4f}; HO steps/episode DRL {h_drl:.3f} vs LSF {h_lsf:.3f} "
            f"after {PENALTY_EPISODES} episodes")


@pytest.mark.slow
@pytest.mark.parametrize("tau0", [1000.0, 2000.0])
def test_partial_observation_rate_close_to_full(record_property, tau0):
    cfg = ScenarioConfig(B=27, tau_0=tau0)
    full = harness.evaluate(cfg, "da", ("drl",), 200, EVAL_SEED, trained_actor(cfg, "da", PO_EPISODES))
    part = harness.evaluate(cfg, "po-da", ("drl",), 200, EVAL_SEED, trained_actor(cfg, "po-da", PO_EPISODES))
    gap = 1.0 - part.mean_rate("drl") / full.mean_rate("drl")
    verdict(record_property, f"po-DA rate within 10% of DA (tau0={tau0:g})", gap <= 0.10,
            f"po-DA {part.mean_rate('drl'):.4f} vs DA {full.mean_rate('drl'):.4f}, relative loss {gap:+.4f}")


def test_action_space_sizes(record_property):
    out = subprocess.run([sys.executable, "-m", "cellfree_ho", "action-space", "--B", "27", "--B-con", "5"],
                         capture_output=True, text=True, check=True).stdout
    small, big = harness.action_space_size(9, 5)[1], harness.action_space_size(27, 5)[1]
    verdict(record_property, "action-space cardinality", small == 126 and big == 80730 and "80730" in out,
            f"(9,5) -> {small}, (27,5) -> {big}")


@pytest.mark.slow
def test_inference_latency(record_property):
    cfg = ScenarioConfig(B=27, tau_0=4000.0)
    actor = trained_actor(cfg, "da", PENALTY_EPISODES)
    stats = harness.bench_latency(actor, cfg, calls=5000)
    verdict(record_property, "B=27 inference latency", stats["median_ms"] < 0.4,
            f"median {stats['median_ms']:.4f} ms, p95 {stats['p95_ms']:.4f} ms ({stats['backend']})")


PROPERTY_TESTS = [
    "tests/test_config.py",
    "tests/test_propagation.py",
    "tests/test_rates.py",
    "tests/test_env.py",
    "tests/test_nn.py",
    "tests/test_sac.py",
]


def test_property_suites(record_property):
    t0 = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", *PROPERTY_TESTS],
                          cwd=ROOT, capture_output=True, text=True)
    elapsed = time.perf_counter() - t0
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    verdict(record_property, "property suites", proc.returncode == 0 and elapsed < 60,
            f"{tail} in {elapsed:.1f} s")
