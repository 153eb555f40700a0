"""Large-scale fading, Jakes temporal correlation, channel aging and estimate variances."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .config import ScenarioConfig
from .geometry import NetworkLayout, UserTrack, min_images

CHOL_JITTER = 1e-10


def path_loss(d_xy, cfg: ScenarioConfig):
    """COST231 Walfisch-Ikegami gain ``(sqrt(d^2 + d_h^2) / d_0) ** -alpha``."""
    d = np.asarray(d_xy, dtype=float)
    out = (np.sqrt(d * d + cfg.d_h ** 2) / cfg.d_0) ** (-cfg.alpha_pl)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ShadowField:
    """Two-component shadowing: static AP-side ``kappa1`` plus a user-side AR(1) ``kappa2``."""

    kappa1: np.ndarray
    kappa2: float
    chol: np.ndarray

    def kappa_bar(self, iota: float) -> np.ndarray:
        return math.sqrt(iota) * self.kappa1 + math.sqrt(1.0 - iota) * self.kappa2


def ap_covariance(layout: NetworkLayout, cfg: ScenarioConfig) -> np.ndarray:
    """``C[b, b'] = 2 ** (-d_bb' / d_decorr)`` with planar inter-AP distances."""
    p = layout.ap_positions
    d = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
    return 2.0 ** (-d / cfg.d_decorr)


def shadow_cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    try:
        return np.linalg.cholesky(cov + CHOL_JITTER * np.eye(cov.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("AP shadowing covariance is not positive definite") from exc


def init_shadowing(layout: NetworkLayout, cfg: ScenarioConfig, rng) -> ShadowField:
    chol = shadow_cholesky(ap_covariance(layout, cfg))
    kappa1 = chol @ rng.standard_normal(layout.B)
    kappa2 = float(rng.standard_normal())
    return ShadowField(kappa1, kappa2, chol)


def shadow_step_correlation(cfg: ScenarioConfig) -> float:
    return 2.0 ** (-cfg.step_length / cfg.d_decorr)


def step_shadowing(field: ShadowField, cfg: ScenarioConfig, rng=None, eps: float | None = None) -> ShadowField:
    """Evolve the user-side component by one decision step; ``kappa1`` is static."""
    c = shadow_step_correlation(cfg)
    if eps is None:
        eps = float(rng.standard_normal())
    return replace(field, kappa2=c * field.kappa2 + math.sqrt(1.0 - c * c) * eps)


def large_scale_fading(layout: NetworkLayout, track: UserTrack, field: ShadowField, cfg: ScenarioConfig):
    """Per-AP LSF ``PL(d) * 10 ** (sigma_sh * kappa_bar / 10)`` over minimum-image distances."""
    d, _ = min_images(track.position, layout.ap_positions, layout.area_side)
    return path_loss(d, cfg) * 10.0 ** (cfg.sigma_sh_db * field.kappa_bar(cfg.iota) / 10.0)


def rho(lag, cfg: ScenarioConfig):
    """Jakes temporal correlation ``J0(2 pi lag f_D T_s)``."""
    x = 2.0 * math.pi * cfg.doppler * cfg.T_s
    if np.ndim(lag) == 0:
        return kernels.j0(x * float(lag))
    return kernels.j0_array(x * np.asarray(lag, dtype=float))


def rho_table(cfg: ScenarioConfig) -> np.ndarray:
    """``rho[0..tau_c]`` (the data sum reaches lag ``tau_c - n_est``)."""
    return rho(np.arange(cfg.tau_c + 1), cfg)


def data_rho2(cfg: ScenarioConfig, table: np.ndarray | None = None) -> np.ndarray:
    """``rho^2[n - n_est]`` for the data instants ``n = n_est .. tau_c``."""
    table = rho_table(cfg) if table is None else table
    lags = np.arange(cfg.tau_c - cfg.n_est + 1)
    return table[lags] ** 2


def psi_full(beta_u, copilot_betas, lag_est: int, cfg: ScenarioConfig, rho_est: float | None = None):
    """MMSE estimate variance; ``copilot_betas`` must include the user's own ``beta_u``."""
    r = rho(lag_est, cfg) if rho_est is None else rho_est
    denom = cfg.p_u * np.sum(copilot_betas, axis=0) + cfg.sigma_z2
    return r * r * cfg.p_u * np.asarray(beta_u) ** 2 / denom


def psi_snr(beta, lag_est: int, cfg: ScenarioConfig, rho_est: float | None = None):
    """SNR-based estimate variance ``rho^2 p_u beta^2 / sigma_z2`` (no clamp to beta)."""
    r = rho(lag_est, cfg) if rho_est is None else rho_est
    return r * r * cfg.p_u * np.asarray(beta, dtype=float) ** 2 / cfg.sigma_z2


def complex_normal(rng, shape) -> np.ndarray:
    """i.i.d. CN(0, 1) draws."""
    z = rng.standard_normal(shape + (2,) if isinstance(shape, tuple) else (shape, 2))
    return (z[..., 0] + 1j * z[..., 1]) * math.sqrt(0.5)


def sample_aged_channel(M: int, rho_lag: float, rng, size: int | None = None):
    """Draw ``(g[0], g[n])`` with ``g[n] = rho g[0] + sqrt(1 - rho^2) v``."""
    if not abs(rho_lag) <= 1.0:
        raise ValueError("|rho| must not exceed 1")
    shape = (M,) if size is None else (size, M)
    g0 = complex_normal(rng, shape)
    v = complex_normal(rng, shape)
    return g0, rho_lag * g0 + math.sqrt(1.0 - rho_lag * rho_lag) * v


@dataclass(frozen=True)
class LinkStats:
    beta: np.ndarray
    psi_full: np.ndarray
    psi_snr: np.ndarray
    eta: np.ndarray
    rho_table: np.ndarray


def link_stats(beta, loads, cfg: ScenarioConfig, table: np.ndarray | None = None) -> LinkStats:
    """Single-user link statistics (the user is alone on its pilot)."""
    from .rates import eta_power_norm

    table = rho_table(cfg) if table is None else table
    r = float(table[cfg.lag_est])
    beta = np.asarray(beta, dtype=float)
    ps = psi_snr(beta, cfg.lag_est, cfg, rho_est=r)
    return LinkStats(
        beta=beta,
        psi_full=psi_full(beta, beta[None, :], cfg.lag_est, cfg, rho_est=r),
        psi_snr=ps,
        eta=eta_power_norm(ps, loads, cfg),
        rho_table=table,
    )
