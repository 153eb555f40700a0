"""Signal-level Monte Carlo for the downlink rate terms.

Each sample draws the small-scale fading at the estimation instant, ages it
back to the pilot instants and forward to the data instant, forms the
received pilots, the linear MMSE estimates and the conjugate beamformers,
then splits the received signal into desired signal (DS), beamformer
uncertainty (BU), channel aging (CA) and per-user multiuser interference
(MI). Nothing here uses the closed-form powers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .propagation import complex_normal
from .rates import FullRateInputs, xi_terms_full


@dataclass
class MomentEstimate:
    value: float
    stderr: float


@dataclass
class OracleMoments:
    ds: MomentEstimate  # |E{DS}|^2
    bu: MomentEstimate  # E{|BU|^2}
    ca: MomentEstimate  # E{|CA|^2}
    bu_ca: MomentEstimate  # E{|BU + CA|^2}
    ds_bu: MomentEstimate  # E{|DS + BU|^2}
    mi: list  # E{|MI_uv|^2} per user (target's own entry is None)
    est_corr: float  # |corr(e, h_hat)| for the target's first serving AP
    samples: int


class _Acc:
    """Running first/second moments of a complex or real sample stream."""

    def __init__(self):
        self.n = 0
        self.s = 0.0
        self.s2 = 0.0

    def add(self, x):
        self.n += x.size
        self.s += x.sum()
        self.s2 += np.sum(np.abs(x) ** 2)

    def mean(self):
        return self.s / self.n

    def var(self):
        m = self.mean()
        return max(self.s2 / self.n - abs(m) ** 2, 0.0)


def _power(acc: _Acc) -> MomentEstimate:
    # mean of |x|^2 from a stream of |x|^2 values stored in acc
    return MomentEstimate(float(acc.mean().real), math.sqrt(acc.var() / acc.n))


def monte_carlo_moments(inp: FullRateInputs, target_user: int, n: int, samples: int, rng,
                        block: int = 20000) -> OracleMoments:
    if samples < 10_000:
        raise ValueError("at least 1e4 samples are required")
    cfg = inp.cfg
    B, U, M = inp.B, inp.U, cfg.M
    u = target_user
    lag_data = n - cfg.n_est
    if lag_data < 0:
        raise ValueError("data instant precedes channel estimation")
    r_d = float(inp.rho[lag_data])
    rb_d = math.sqrt(max(0.0, 1.0 - r_d * r_d))
    sq_b = np.sqrt(inp.betas)  # (B, U)
    sq_eta = np.sqrt(inp.eta)
    sp = math.sqrt(cfg.p_u)
    sz = math.sqrt(cfg.sigma_z2)
    groups = sorted(set(inp.pilot_index.tolist()))
    serve_u = np.flatnonzero(inp.serving[u] > 0)

    acc_t, acc_t2 = _Acc(), _Acc()  # T = DS + BU (aging-free part)
    acc_ca2 = _Acc()
    kept = []  # (T, CA) per block; BU needs E{T} first
    acc_mi = [_Acc() for _ in range(U)]
    e_h_cross = 0.0 + 0.0j
    e_e2 = 0.0
    h_h2 = 0.0
    done = 0
    while done < samples:
        S = min(block, samples - done)
        g_est = complex_normal(rng, (S, B, U, M))
        h_est = sq_b[None, :, :, None] * g_est
        # received pilots per pilot index, then MMSE estimates
        h_hat = np.empty_like(h_est)
        for i in groups:
            members = np.flatnonzero(inp.pilot_index == i)
            lag_p = cfg.n_est - i
            r_p = float(inp.rho[lag_p])
            rb_p = math.sqrt(max(0.0, 1.0 - r_p * r_p))
            y = sz * complex_normal(rng, (S, B, M))
            for v in members:
                h_pilot = sq_b[None, :, v, None] * (r_p * g_est[:, :, v] + rb_p * complex_normal(rng, (S, B, M)))
                y = y + sp * h_pilot
            denom = cfg.p_u * inp.betas[:, members].sum(axis=1) + cfg.sigma_z2  # (B,)
            for v in members:
                coef = r_p * sp * inp.betas[:, v] / denom
                h_hat[:, :, v] = coef[None, :, None] * y
        # target's channel at the data instant, from every AP
        v_data = complex_normal(rng, (S, B, M))
        h_data = r_d * h_est[:, :, u] + rb_d * sq_b[None, :, u, None] * v_data
        # x^T y* summed over antennas
        bf_own = np.sum(h_est[:, :, u] * np.conj(h_hat[:, :, u]), axis=-1)  # (S, B)
        t = r_d * np.sum(sq_eta[None, serve_u, u] * bf_own[:, serve_u], axis=1)
        ca = rb_d * np.sum(
            (sq_eta[serve_u, u] * sq_b[serve_u, u])[None, :]
            * np.sum(v_data[:, serve_u] * np.conj(h_hat[:, serve_u, u]), axis=-1),
            axis=1,
        )
        acc_t.add(t)
        acc_t2.add(np.abs(t) ** 2)
        acc_ca2.add(np.abs(ca) ** 2)
        for v in range(U):
            if v == u:
                continue
            sv = np.flatnonzero(inp.serving[v] > 0)
            mi = np.sum(sq_eta[None, sv, v] * np.sum(h_data[:, sv] * np.conj(h_hat[:, sv, v]), axis=-1), axis=1)
            acc_mi[v].add(np.abs(mi) ** 2)
        # estimation error vs estimate at the first serving AP (per antenna entry)
        b0 = serve_u[0] if serve_u.size else 0
        err = h_est[:, b0, u] - h_hat[:, b0, u]
        e_h_cross += np.sum(err * np.conj(h_hat[:, b0, u]))
        e_e2 += np.sum(np.abs(err) ** 2)
        h_h2 += np.sum(np.abs(h_hat[:, b0, u]) ** 2)
        kept.append((t, ca))
        done += S

    mean_t = acc_t.mean()
    n_tot = acc_t.n
    se_mean_t = math.sqrt(acc_t.var() / n_tot)
    ds_val = abs(mean_t) ** 2
    ds = MomentEstimate(float(ds_val), float(2.0 * abs(mean_t) * se_mean_t))
    bu_acc, bc_acc = _Acc(), _Acc()
    for t, ca in kept:
        bu_acc.add(np.abs(t - mean_t) ** 2)
        bc_acc.add(np.abs(t - mean_t + ca) ** 2)
    mi = [None if v == u else _power(acc_mi[v]) for v in range(U)]
    corr = abs(e_h_cross) / math.sqrt(e_e2 * h_h2) if e_e2 > 0 and h_h2 > 0 else 0.0
    return OracleMoments(
        ds=ds, bu=_power(bu_acc), ca=_power(acc_ca2), bu_ca=_power(bc_acc),
        ds_bu=_power(acc_t2), mi=mi, est_corr=float(corr), samples=n_tot,
    )


# -- validation report ---------------------------------------------------------

VALIDATION_FIELDS = ("instance", "term", "closed_form", "empirical", "stderr", "rel_error")


@dataclass
class ValidationRow:
    instance: int
    term: str
    closed_form: float
    empirical: float
    stderr: float

    @property
    def rel_error(self) -> float:
        if self.closed_form == 0.0:
            return 0.0 if self.empirical == 0.0 else math.inf
        return abs(self.empirical - self.closed_form) / abs(self.closed_form)

    def passes(self, rel_tol: float = 0.02, n_se: float = 3.0) -> bool:
        return self.rel_error <= rel_tol or abs(self.empirical - self.closed_form) <= n_se * self.stderr


def random_instance(cfg, rng, max_aps: int = 5, max_users: int = 3, area: float = 200.0):
    """Small multiuser instance with at least two users, one pilot group of two or more
    users when possible, and each user served by a non-empty AP subset.

    Returns ``(inputs, target_user, n)``.
    """
    from .propagation import path_loss

    B = int(rng.integers(2, max_aps + 1))
    U = int(rng.integers(2, max_users + 1))
    aps = rng.uniform(0.0, area, size=(B, 2))
    users = rng.uniform(0.0, area, size=(U, 2))
    d = np.linalg.norm(aps[:, None, :] - users[None, :, :], axis=-1)
    shadow = 10.0 ** (cfg.sigma_sh_db * rng.standard_normal((B, U)) / 10.0)
    betas = path_loss(d, cfg) * shadow
    serving = (rng.random((U, B)) < 0.6).astype(float)
    for u in range(U):
        if serving[u].sum() == 0:
            serving[u, rng.integers(B)] = 1.0
    # two pilot indices among U users forces at least one shared pilot when U = 3
    pilots = rng.choice(np.arange(1, cfg.tau_p + 1), size=2, replace=False)
    pilot_index = pilots[rng.integers(0, 2, size=U)]
    inp = FullRateInputs(serving, betas, pilot_index, cfg)
    target = int(rng.integers(U))
    n = int(rng.integers(cfg.n_est, cfg.tau_c + 1))
    return inp, target, n


def compare_instance(inp: FullRateInputs, target_user: int, n: int, samples: int, rng,
                     instance: int = 0) -> list[ValidationRow]:
    """Closed-form powers against Monte Carlo moments for one instance."""
    mc = monte_carlo_moments(inp, target_user, n, samples, rng)
    xi1, xi23, xi4 = xi_terms_full(inp, target_user, n)
    rows = [
        ValidationRow(instance, "ds", float(xi1), mc.ds.value, mc.ds.stderr),
        ValidationRow(instance, "bu+ca", float(xi23), mc.bu.value + mc.ca.value,
                      math.hypot(mc.bu.stderr, mc.ca.stderr)),
    ]
    for v, est in enumerate(mc.mi):
        if est is not None:
            rows.append(ValidationRow(instance, f"mi[{v}]", float(xi4[v]), est.value, est.stderr))
    return rows


def validation_report(cfg, instances: int = 10, samples: int = 200_000, seed: int = 0,
                      max_aps: int = 5, max_users: int = 3) -> list[ValidationRow]:
    from .config import RngStream

    rows = []
    for k in range(instances):
        rng = RngStream.for_purpose(seed, "oracle", k).gen
        inp, u, n = random_instance(cfg, rng, max_aps, max_users)
        rows += compare_instance(inp, u, n, samples, rng, instance=k)
    return rows


def write_validation_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(VALIDATION_FIELDS)
        for r in rows:
            w.writerow([r.instance, r.term, repr(r.closed_form), repr(r.empirical), repr(r.stderr), repr(r.rel_error)])
