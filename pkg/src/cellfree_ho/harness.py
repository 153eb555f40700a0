"""Evaluation, reporting and latency measurement behind the command-line tool."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import RngStream, ScenarioConfig
from .env import ModeError, baseline_lsf, baseline_random, map_action, reset, step, write_trace
from .propagation import rho_table
from .sac import deterministic_action

POLICIES = ("drl", "lsf", "random")


def action_space_size(B: int, B_con: int) -> tuple[int, int]:
    """Continuous action width and the number of distinct serving sets."""
    if not 0 < B_con <= B:
        raise ValueError("need 0 < B_con <= B")
    return B, math.comb(B, B_con)


@dataclass
class EvalReport:
    """Per-policy step matrices over matched episodes (``episodes x steps``)."""

    rates: dict = field(default_factory=dict)
    rewards: dict = field(default_factory=dict)
    handoffs: dict = field(default_factory=dict)
    betas: dict = field(default_factory=dict)  # first-step LSF per episode, for pairing checks

    @property
    def policies(self) -> list:
        return list(self.rates)

    def mean_rate(self, policy: str) -> float:
        return float(np.mean(self.rates[policy]))

    def mean_reward(self, policy: str) -> float:
        return float(np.mean(self.rewards[policy]))

    def mean_episode_reward(self, policy: str) -> float:
        return float(np.mean(self.rewards[policy].sum(axis=1)))

    def ho_steps(self, policy: str) -> float:
        """Mean number of decision steps per episode containing at least one handoff."""
        return float(np.mean((self.handoffs[policy] > 0).sum(axis=1)))

    def mean_cumulative_hos(self, policy: str) -> np.ndarray:
        return np.cumsum(self.handoffs[policy], axis=1).mean(axis=0)

    def summary(self) -> dict:
        return {
            p: {
                "mean_rate": self.mean_rate(p),
                "mean_reward": self.mean_reward(p),
                "mean_episode_reward": self.mean_episode_reward(p),
                "mean_ho_steps": self.ho_steps(p),
                "mean_handoffs": float(np.mean(self.handoffs[p].sum(axis=1))),
            }
            for p in self.policies
        }


def empirical_cdf(samples, grid=None) -> tuple[np.ndarray, np.ndarray]:
    """Right-continuous empirical CDF, evaluated at ``grid`` (default: the sorted samples)."""
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if grid is None:
        return x, np.arange(1, x.size + 1) / x.size
    grid = np.asarray(grid, dtype=float)
    return grid, np.searchsorted(x, grid, side="right") / x.size


def run_policy_episode(cfg: ScenarioConfig, mode: str, policy: str, episode: int, seed: int,
                       actor=None, table=None, trace: list | None = None):
    """One matched episode; returns per-step (rate, reward, n_handoffs) arrays and the first LSF."""
    state, obs = reset(cfg, episode, mode, seed, table)
    if policy == "lsf" and state.partial:
        raise ModeError("the LSF policy needs full observability")
    rng = RngStream.for_purpose(seed, "eval", episode).gen
    beta0 = state.beta.copy()
    T = cfg.steps_per_episode
    rates, rewards, hos = np.empty(T), np.empty(T), np.empty(T, dtype=int)
    for t in range(T):
        if policy == "drl":
            out = step(state, a_binary=map_action(deterministic_action(actor, obs), cfg.B_con))
        elif policy == "lsf":
            out = step(state, a_binary=baseline_lsf(state))
        elif policy == "random":
            out = step(state, a_binary=baseline_random(rng, cfg.B, cfg.B_con))
        else:
            raise ValueError(f"unknown policy {policy!r}")
        obs = out.observation
        rates[t], rewards[t], hos[t] = out.rate, out.reward, out.n_handoffs
        if trace is not None:
            trace.append(out)
    return rates, rewards, hos, beta0


def evaluate(cfg: ScenarioConfig, mode: str = "da", policies=("drl", "lsf"), episodes: int = 200,
             seed: int = 12345, actor=None) -> EvalReport:
    """Run each policy on the same ``(seed, episode)`` streams."""
    policies = tuple(policies)
    for p in policies:
        if p not in POLICIES:
            raise ValueError(f"unknown policy {p!r}; expected a subset of {POLICIES}")
    if "drl" in policies and actor is None:
        raise ValueError("the drl policy needs an actor network")
    if "lsf" in policies and mode.startswith("po"):
        raise ModeError("the LSF policy needs full observability; unavailable in po modes")
    table = rho_table(cfg)
    rep = EvalReport()
    for p in policies:
        rows = [run_policy_episode(cfg, mode, p, ep, seed, actor, table) for ep in range(episodes)]
        rep.rates[p] = np.array([r[0] for r in rows])
        rep.rewards[p] = np.array([r[1] for r in rows])
        rep.handoffs[p] = np.array([r[2] for r in rows])
        rep.betas[p] = np.array([r[3] for r in rows])
    return rep


def write_rate_cdf(path, report: EvalReport, grid=None) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["policy", "rate", "F"])
        for p in report.policies:
            x, F = empirical_cdf(report.rates[p], grid)
            for xi, Fi in zip(x, F):
                w.writerow([p, repr(float(xi)), repr(float(Fi))])


def write_ho_accum(path, report: EvalReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "policy", "mean_cumulative_hos"])
        for p in report.policies:
            for t, v in enumerate(report.mean_cumulative_hos(p)):
                w.writerow([t, p, repr(float(v))])


def write_policy_trace(path, cfg: ScenarioConfig, mode: str, policy: str, episode: int, seed: int,
                       actor=None) -> None:
    rows = []
    run_policy_episode(cfg, mode, policy, episode, seed, actor, trace=rows)
    write_trace(path, rows)


# -- latency -------------------------------------------------------------------

def bench_latency(actor, cfg: ScenarioConfig, calls: int = 2000, warmup: int = 200, seed: int = 0) -> dict:
    """Wall time of actor forward + serving-set mapping on prebuilt observations."""
    if calls < 1000:
        raise ValueError("at least 1000 timed calls are required")
    rng = np.random.default_rng(seed)
    obs = rng.uniform(-1.0, 1.0, size=(256, actor.sizes[0]))
    for i in range(warmup):
        map_action(deterministic_action(actor, obs[i % 256]), cfg.B_con)
    times = np.empty(calls)
    clock = time.perf_counter
    for i in range(calls):
        o = obs[i % 256]
        t0 = clock()
        map_action(deterministic_action(actor, o), cfg.B_con)
        times[i] = clock() - t0
    ms = times * 1e3
    return {
        "B": cfg.B, "B_con": cfg.B_con, "calls": calls, "backend": kernels.BACKEND,
        "median_ms": float(np.median(ms)), "p95_ms": float(np.percentile(ms, 95)),
        "mean_ms": float(np.mean(ms)),
    }


def write_json(path, data: dict) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
