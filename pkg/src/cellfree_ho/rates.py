"""Closed-form achievable rates under channel aging with conjugate beamforming.

Two families live here:

* the reward-side single-user rate, which replaces the multiuser interference
  by an emulated term from the non-serving APs and uses the SNR-based
  estimate variance;
* the multiuser lower bound with pilot contamination, built from the desired
  signal power ``xi1``, the beamforming-uncertainty plus aging power ``xi23``
  and one interference power ``xi4`` per other user.

``xi_terms_full`` accepts ``form="exact"`` (default) or ``form="paper"``. The
two differ in the antenna scaling of the non-coherent powers: the exact
moments of the conjugate beamformer are ``M * sum(eta * beta * psi)``, while
the printed closed forms carry ``M**2`` there. ``monte_carlo_moments`` in
:mod:`cellfree_ho.oracle` reproduces the exact form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .config import ScenarioConfig
from .propagation import psi_full, rho_table


def eta_power_norm(psi_snr_b, load_b, cfg: ScenarioConfig):
    """Statistical power normalization ``p_d / (M (load + 1) psi)``; zero where ``psi == 0``."""
    psi = np.asarray(psi_snr_b, dtype=float)
    load = np.asarray(load_b, dtype=float)
    denom = cfg.M * (load + 1.0) * psi
    with np.errstate(divide="ignore"):
        out = np.where(psi > 0.0, cfg.p_d / np.where(psi > 0.0, denom, 1.0), 0.0)
    return float(out) if out.ndim == 0 else out


def emulated_interference(a, beta, cfg: ScenarioConfig) -> float:
    """Interference estimate ``p_d * sum((1 - a) * beta)`` from the non-serving APs."""
    return cfg.p_d * float(np.sum((1.0 - np.asarray(a, dtype=float)) * np.asarray(beta, dtype=float)))


@dataclass
class RewardRateInputs:
    a: np.ndarray
    beta: np.ndarray
    psi_snr: np.ndarray
    eta: np.ndarray
    loads: np.ndarray
    rho_data: np.ndarray  # rho[n - n_est] for n = n_est .. tau_c
    lag_est: int
    cfg: ScenarioConfig


def reward_rate(inp: RewardRateInputs) -> float:
    """SNR-based per-user rate (bits per channel use when ``log_base == 2``)."""
    cfg = inp.cfg
    rho2 = np.asarray(inp.rho_data, dtype=float) ** 2
    return kernels.reward_rate(
        np.asarray(inp.a, dtype=float), inp.beta, inp.psi_snr, inp.eta, rho2,
        cfg.M, cfg.p_d, cfg.sigma_z2, cfg.tau_c, cfg.log_base,
    )


@dataclass
class FullRateInputs:
    """Multiuser instance.

    ``serving`` is (U, B) binary, ``betas`` is (B, U), ``pilot_index[u]`` in
    ``1..tau_p`` is the instant of user ``u``'s delta pilot (users sharing an
    index form a pilot group). ``eta`` (B, U) defaults to an even split of
    each AP's budget over the users it serves.
    """

    serving: np.ndarray
    betas: np.ndarray
    pilot_index: np.ndarray
    cfg: ScenarioConfig
    eta: np.ndarray | None = None
    rho: np.ndarray = field(init=False, repr=False)
    psi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cfg = self.cfg
        self.serving = np.asarray(self.serving, dtype=float)
        self.betas = np.asarray(self.betas, dtype=float)
        self.pilot_index = np.asarray(self.pilot_index, dtype=int)
        U = self.serving.shape[0]
        if self.betas.shape != (self.serving.shape[1], U) or self.pilot_index.shape != (U,):
            raise ValueError("inconsistent instance dimensions")
        if np.any(self.pilot_index < 1) or np.any(self.pilot_index > cfg.tau_p):
            raise ValueError("pilot index outside 1..tau_p")
        self.rho = rho_table(cfg)
        self.psi = self.estimate_variances()
        if self.eta is None:
            n_served = np.maximum(self.serving.sum(axis=0), 1.0)  # per AP
            with np.errstate(divide="ignore"):
                eta = self.cfg.p_d / (cfg.M * n_served[:, None] * self.psi)
            self.eta = np.where(self.serving.T > 0, eta, 0.0)
        self.eta = np.asarray(self.eta, dtype=float)

    @property
    def U(self) -> int:
        return self.serving.shape[0]

    @property
    def B(self) -> int:
        return self.serving.shape[1]

    def copilots(self, u: int) -> np.ndarray:
        return np.flatnonzero(self.pilot_index == self.pilot_index[u])

    def pilot_lag(self, u: int) -> int:
        return self.cfg.n_est - int(self.pilot_index[u])

    def estimate_variances(self) -> np.ndarray:
        psi = np.empty_like(self.betas)
        for u in range(self.U):
            group = self.copilots(u)
            psi[:, u] = psi_full(
                self.betas[:, u], self.betas[:, group].T, self.pilot_lag(u), self.cfg,
                rho_est=float(self.rho[self.pilot_lag(u)]),
            )
        return psi


def xi_terms_full(inp: FullRateInputs, target_user: int, n, form: str = "exact"):
    """Closed-form powers at data instant(s) ``n`` (``n >= n_est``).

    Returns ``(xi1, xi23, xi4)`` where ``xi4`` has one row per user (the
    target's own row is zero). With array ``n`` every output gains a
    trailing instant axis.
    """
    if form not in ("exact", "paper"):
        raise ValueError("form must be 'exact' or 'paper'")
    cfg = inp.cfg
    M = cfg.M
    scale = M if form == "exact" else M * M
    u = target_user
    lag = np.asarray(n) - cfg.n_est
    if np.any(lag < 0):
        raise ValueError("data instant precedes channel estimation")
    r2 = inp.rho[lag] ** 2
    s_u = inp.serving[u]
    eta_u, psi_u, beta_u = inp.eta[:, u], inp.psi[:, u], inp.betas[:, u]

    coh = float(np.sum(s_u * np.sqrt(eta_u) * psi_u))
    xi1 = M * M * r2 * coh * coh
    xi23 = scale * float(np.sum(s_u * eta_u * beta_u * psi_u)) * np.ones_like(r2)

    xi4 = np.zeros((inp.U,) + np.shape(r2))
    group = set(inp.copilots(u).tolist())
    for v in range(inp.U):
        if v == u:
            continue
        s_v = inp.serving[v]
        eta_v, psi_v = inp.eta[:, v], inp.psi[:, v]
        base = scale * float(np.sum(s_v * eta_v * beta_u * psi_v))
        xi4[v] = base
        if v in group:
            c = float(np.sum(s_v * np.sqrt(eta_v) * np.sqrt(psi_u * psi_v)))
            xi4[v] = base + M * M * r2 * c * c
    return xi1, xi23, xi4


def rate_lower_bound_full(inp: FullRateInputs, target_user: int, form: str = "exact") -> float:
    """Lower bound on the target user's rate, summed over ``n = n_est .. tau_c``."""
    cfg = inp.cfg
    n = np.arange(cfg.n_est, cfg.tau_c + 1)
    xi1, xi23, xi4 = xi_terms_full(inp, target_user, n, form=form)
    sinr = xi1 / (xi23 + xi4.sum(axis=0) + cfg.sigma_z2)
    return float(np.sum(np.log1p(sinr))) / (cfg.tau_c * math.log(cfg.log_base))
