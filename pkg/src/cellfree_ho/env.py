"""Handoff MDP/POMDP for one mobile user in a user-centric cell-free network.

An episode draws a network (AP layout, shadowing, per-AP loads) and a user
track, then runs ``steps_per_episode`` decision steps. At each step the agent
emits a continuous score per AP; the ``B_con`` highest scores form the
serving set. The reward is the SNR-based rate of that set scaled by the
fraction of the decision step left after handoff signalling.

Observation modes: ``da`` and ``ha`` (full observability with direction- or
history-assisted hints) and their partially observable twins ``po-da`` and
``po-ha``, where non-serving APs are reported through path loss only and the
mean load.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import RngStream, ScenarioConfig, minmax_scale
from .geometry import (
    NetworkLayout,
    UserTrack,
    angles_to_aps,
    detect_forced_handoffs,
    min_images,
    new_track,
    place_aps,
    step_user,
)
from .propagation import (
    ShadowField,
    data_rho2,
    init_shadowing,
    path_loss,
    psi_snr,
    rho_table,
    step_shadowing,
)
from .rates import eta_power_norm

MODES = ("da", "ha", "po-da", "po-ha")


class ModeError(RuntimeError):
    """Raised when an operation is unavailable in the current observation mode."""


class EpisodeDone(RuntimeError):
    pass


def map_action(a_cont, B_con: int) -> np.ndarray:
    """Binary serving vector marking the ``B_con`` largest scores (ties to the lowest index)."""
    return kernels.topk_mask(a_cont, B_con)


def penalty_factor(n_handoffs: int, tau_0: float, tau_ho: float, budget: float) -> float:
    """Fraction of the decision step left for data after ``n_handoffs`` handoffs."""
    overhead = (tau_0 if n_handoffs > 0 else 0.0) + n_handoffs * tau_ho
    return (budget - min(overhead, budget)) / budget


def count_handoffs(a, a_prev, forced=None) -> int:
    """APs added to the serving set; forced APs still serving count as removed-then-added."""
    a = np.asarray(a) > 0
    added = a & ~(np.asarray(a_prev) > 0)
    n = int(added.sum())
    if forced is not None:
        n += int((np.asarray(forced, dtype=bool) & a & ~added).sum())
    return n


def ho_penalty(a, a_prev, forced_flags, cfg: ScenarioConfig) -> tuple[float, int]:
    n = count_handoffs(a, a_prev, forced_flags)
    return penalty_factor(n, cfg.tau_0, cfg.tau_ho, cfg.cycle_budget), n


def zeta_da(track: UserTrack, images: np.ndarray) -> np.ndarray:
    """``(cos(theta) + 1) / 2`` per AP, theta measured to the AP's minimum image."""
    return 0.5 * (np.cos(angles_to_aps(track, images)) + 1.0)


@dataclass
class HistoryAccumulator:
    """Discounted fraction of past steps in which each AP's LSF exceeded the threshold."""

    gamma: float
    num: np.ndarray
    den: float = 0.0

    @classmethod
    def zeros(cls, B: int, gamma: float) -> "HistoryAccumulator":
        return cls(gamma, np.zeros(B))

    def update(self, good) -> None:
        self.num = self.gamma * self.num + np.asarray(good, dtype=float)
        self.den = self.gamma * self.den + 1.0

    def value(self) -> np.ndarray:
        if self.den == 0.0:
            return np.zeros_like(self.num)
        return self.num / self.den


def zeta_ha(hist: HistoryAccumulator) -> np.ndarray:
    return hist.value()


@dataclass
class EnvState:
    cfg: ScenarioConfig
    mode: str
    layout: NetworkLayout
    track: UserTrack
    shadow: ShadowField
    loads: np.ndarray
    a_prev: np.ndarray
    history: HistoryAccumulator
    rng: RngStream
    images: np.ndarray
    distances: np.ndarray
    beta: np.ndarray
    forced: np.ndarray
    t: int = 0
    done: bool = False
    rho2: np.ndarray = field(default=None, repr=False)
    rho_est: float = 1.0

    @property
    def partial(self) -> bool:
        return self.mode.startswith("po")

    def observed_lsf(self, partial: bool | None = None) -> tuple[np.ndarray, np.ndarray]:
        """LSF and loads as the agent sees them (current mode unless ``partial`` is given)."""
        partial = self.partial if partial is None else partial
        if not partial:
            return self.beta, self.loads.astype(float)
        serving = self.a_prev > 0
        beta = np.where(serving, self.beta, path_loss(self.distances, self.cfg))
        loads = np.where(serving, self.loads.astype(float), self.cfg.mu_E)
        return beta, loads


@dataclass
class StepOutcome:
    observation: np.ndarray
    reward: float
    rate: float
    alpha: float
    n_handoffs: int
    done: bool
    action: np.ndarray = None
    beta: np.ndarray = None


def _check_mode(mode: str) -> str:
    mode = mode.lower()
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    return mode


def draw_loads(cfg: ScenarioConfig, rng) -> np.ndarray:
    if cfg.equal_loads:
        return np.ones(cfg.B, dtype=int)
    return rng.integers(0, cfg.load_max + 1, size=cfg.B)


def reset(cfg: ScenarioConfig, episode: int = 0, mode: str = "da", seed: int | None = None,
          table: np.ndarray | None = None) -> tuple[EnvState, np.ndarray]:
    """Start episode ``episode``; every random draw is keyed by ``(seed, purpose, episode)``."""
    mode = _check_mode(mode)
    seed = cfg.seed if seed is None else seed
    layout = place_aps(cfg, RngStream.for_purpose(seed, "layout", episode))
    shadow = init_shadowing(layout, cfg, RngStream.for_purpose(seed, "shadow", episode))
    track = new_track(cfg, RngStream.for_purpose(seed, "track", episode))
    loads = draw_loads(cfg, RngStream.for_purpose(seed, "loads", episode))
    table = rho_table(cfg) if table is None else table
    dist, images = min_images(track.position, layout.ap_positions, layout.area_side)
    beta = path_loss(dist, cfg) * 10.0 ** (cfg.sigma_sh_db * shadow.kappa_bar(cfg.iota) / 10.0)
    state = EnvState(
        cfg=cfg, mode=mode, layout=layout, track=track, shadow=shadow, loads=loads,
        a_prev=map_action(beta, cfg.B_con),
        history=HistoryAccumulator.zeros(cfg.B, cfg.gamma_o),
        rng=RngStream.for_purpose(seed, "env", episode),
        images=images, distances=dist, beta=beta, forced=np.zeros(cfg.B, dtype=bool),
        rho2=data_rho2(cfg, table), rho_est=float(table[cfg.lag_est]),
    )
    return state, build_observation(state)


def build_observation(state: EnvState, mode: str | None = None) -> np.ndarray:
    mode = state.mode if mode is None else _check_mode(mode)
    beta_obs, loads_obs = state.observed_lsf(mode.startswith("po"))
    if mode.endswith("da"):
        zeta = zeta_da(state.track, state.images)
    else:
        zeta = zeta_ha(state.history)
    return np.concatenate([
        minmax_scale(np.log(beta_obs)),
        minmax_scale(loads_obs),
        minmax_scale(state.a_prev.astype(float)),
        minmax_scale(zeta),
    ])


def step_rate(state: EnvState, a) -> float:
    cfg = state.cfg
    ps = psi_snr(state.beta, cfg.lag_est, cfg, rho_est=state.rho_est)
    eta = eta_power_norm(ps, state.loads, cfg)
    return kernels.reward_rate(
        np.asarray(a, dtype=float), state.beta, ps, eta, state.rho2,
        cfg.M, cfg.p_d, cfg.sigma_z2, cfg.tau_c, cfg.log_base,
    )


def step(state: EnvState, a_cont=None, a_binary=None) -> StepOutcome:
    """Apply one decision; mutates ``state`` in place and returns the outcome.

    Pass either the continuous scores ``a_cont`` or an explicit binary
    serving vector ``a_binary`` (used by the baselines).
    """
    if state.done:
        raise EpisodeDone("episode already finished; call reset()")
    cfg = state.cfg
    a = map_action(a_cont, cfg.B_con) if a_binary is None else np.asarray(a_binary, dtype=np.int8)
    if int(a.sum()) != cfg.B_con:
        raise ValueError("serving set must contain exactly B_con APs")
    alpha, n_ho = ho_penalty(a, state.a_prev, state.forced, cfg)
    rate = step_rate(state, a)
    beta_now = state.beta

    # history hint uses the LSF as observed at this step
    beta_obs, _ = state.observed_lsf()
    state.history.update(beta_obs > cfg.beta_threshold)

    prev_images = state.images
    track, shift = step_user(state.track, state.layout, state.rng)
    shadow = step_shadowing(state.shadow, cfg, state.rng)
    dist, images = min_images(track.position, state.layout.ap_positions, state.layout.area_side)
    # compare AP images in the unwrapped frame of the user's motion
    state.forced = detect_forced_handoffs(prev_images - shift * cfg.area_side, images, a)
    state.track, state.shadow = track, shadow
    state.images, state.distances = images, dist
    state.beta = path_loss(dist, cfg) * 10.0 ** (cfg.sigma_sh_db * shadow.kappa_bar(cfg.iota) / 10.0)
    state.a_prev = a
    state.t += 1
    state.done = state.t >= cfg.steps_per_episode
    return StepOutcome(
        observation=build_observation(state), reward=alpha * rate, rate=rate, alpha=alpha,
        n_handoffs=n_ho, done=state.done, action=a, beta=beta_now,
    )


def baseline_lsf(state: EnvState) -> np.ndarray:
    """Serve the ``B_con`` APs with the largest LSF (needs full observability)."""
    if state.partial:
        raise ModeError("the LSF baseline needs the LSF of every AP; unavailable in po modes")
    return map_action(state.beta, state.cfg.B_con)


def baseline_random(rng, B: int, B_con: int) -> np.ndarray:
    a = np.zeros(B, dtype=np.int8)
    a[rng.choice(B, size=B_con, replace=False)] = 1
    return a


class HandoffEnv:
    """Gym-style wrapper over :func:`reset` / :func:`step` with episode bookkeeping."""

    def __init__(self, cfg: ScenarioConfig, mode: str = "da", seed: int | None = None):
        self.cfg = cfg
        self.mode = _check_mode(mode)
        self.seed = cfg.seed if seed is None else seed
        self.state: EnvState | None = None
        self.episode = -1
        self._table = rho_table(cfg)

    @property
    def obs_dim(self) -> int:
        return 4 * self.cfg.B

    @property
    def act_dim(self) -> int:
        return self.cfg.B

    def reset(self, episode: int | None = None) -> np.ndarray:
        self.episode = self.episode + 1 if episode is None else episode
        self.state, obs = reset(self.cfg, self.episode, self.mode, self.seed, self._table)
        return obs

    def step(self, a_cont=None, a_binary=None) -> StepOutcome:
        return step(self.state, a_cont, a_binary)


def write_trace(path, rows) -> None:
    """Episode trace CSV: step, chosen AP ids, rate, alpha, N, reward."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "ap_ids", "rate", "alpha", "n_handoffs", "reward"])
        for t, out in enumerate(rows):
            ids = " ".join(str(i) for i in np.flatnonzero(out.action))
            w.writerow([t, ids, repr(out.rate), repr(out.alpha), out.n_handoffs, repr(out.reward)])
