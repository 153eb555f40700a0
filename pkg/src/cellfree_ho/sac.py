"""Soft actor-critic for the handoff environment.

Twin critics with Polyak-averaged targets, a tanh-squashed Gaussian actor and
automatic temperature tuning on ``log(alpha_T)``. Gradients are computed by
hand through :mod:`cellfree_ho.nn`; the actor loss backpropagates through
both ``log pi`` and the critics' action input.
"""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .config import RngStream, ScenarioConfig
from .env import HandoffEnv

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
SQUASH_EPS = 1e-6
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
TRAIN_LOG_FIELDS = ("episode", "sum_reward", "rolling_reward", "alpha_t", "critic_loss", "actor_loss")


@dataclass
class SacHyper:
    gamma: float = 0.99
    tau: float = 0.005  # target smoothing T_sm
    batch: int = 256
    buffer: int = 1_000_000
    lr: float = 1e-4
    warmup: int = 400
    clip: float = 5.0
    target_entropy: float | None = None  # None -> -act_dim
    grad_steps: int = 1
    hidden: tuple = (64, 64)
    window: int = 100
    init_log_alpha: float = 0.0
    reward_scale: float = 0.1  # critic targets only; logged rewards are unscaled
    dtype: str = "float32"  # network arithmetic during training
    bootstrap_time_limit: bool = True  # episode ends are time limits, not terminal states

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if self.batch < 1 or self.buffer < self.batch:
            raise ValueError("buffer must hold at least one batch")
        if self.grad_steps < 0 or self.warmup < 0 or self.window < 1:
            raise ValueError("grad_steps, warmup and window must be non-negative (window >= 1)")


class ReplayBuffer:
    """FIFO ring of transitions; storage grows on demand up to ``capacity``."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = int(capacity)
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self._alloc = 0
        self.obs = self.next_obs = self.act = None
        self.rew = self.done = None
        self.size = 0
        self.ptr = 0
        self._grow(min(self.capacity, 4096))

    def _grow(self, n: int) -> None:
        def resize(arr, shape, dtype):
            new = np.zeros(shape, dtype=dtype)
            if arr is not None:
                new[: self._alloc] = arr[: self._alloc]
            return new

        self.obs = resize(self.obs, (n, self.obs_dim), np.float32)
        self.next_obs = resize(self.next_obs, (n, self.obs_dim), np.float32)
        self.act = resize(self.act, (n, self.act_dim), np.float32)
        self.rew = resize(self.rew, n, np.float64)
        self.done = resize(self.done, n, np.float64)
        self._alloc = n

    def __len__(self) -> int:
        return self.size

    def add(self, o, a, r, o2, d) -> None:
        if self.ptr >= self._alloc:
            self._grow(min(self.capacity, 2 * self._alloc))
        i = self.ptr
        self.obs[i], self.act[i], self.rew[i], self.next_obs[i], self.done[i] = o, a, r, o2, float(d)
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng) -> np.ndarray:
        if n > self.size:
            raise ValueError(f"cannot draw {n} distinct transitions from {self.size}")
        return rng.choice(self.size, size=n, replace=False)

    def sample(self, n: int, rng) -> dict:
        idx = self.sample_indices(n, rng)
        return {
            "obs": self.obs[idx], "act": self.act[idx], "rew": self.rew[idx],
            "next_obs": self.next_obs[idx], "done": self.done[idx], "idx": idx,
        }


@dataclass
class PolicyParams:
    actor: nn.Mlp
    q1: nn.Mlp
    q2: nn.Mlp
    q1_targ: nn.Mlp
    q2_targ: nn.Mlp
    log_alpha: float
    opt_actor: nn.AdamState
    opt_q1: nn.AdamState
    opt_q2: nn.AdamState
    opt_alpha: nn.AdamState
    window: deque = field(default_factory=lambda: deque(maxlen=100))
    best: float = -math.inf

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    @property
    def act_dim(self) -> int:
        return self.actor.sizes[-1] // 2


def init_params(obs_dim: int, act_dim: int, hyper: SacHyper, rng) -> PolicyParams:
    hidden = tuple(hyper.hidden)
    dt = np.dtype(hyper.dtype)
    actor = nn.init_xavier((obs_dim,) + hidden + (2 * act_dim,), rng, dtype=dt)
    q1 = nn.init_xavier((obs_dim + act_dim,) + hidden + (1,), rng, dtype=dt)
    q2 = nn.init_xavier((obs_dim + act_dim,) + hidden + (1,), rng, dtype=dt)
    log_alpha = np.array([hyper.init_log_alpha])
    return PolicyParams(
        actor=actor, q1=q1, q2=q2, q1_targ=q1.copy(), q2_targ=q2.copy(), log_alpha=float(log_alpha[0]),
        opt_actor=nn.AdamState.for_params(actor.params, lr=hyper.lr),
        opt_q1=nn.AdamState.for_params(q1.params, lr=hyper.lr),
        opt_q2=nn.AdamState.for_params(q2.params, lr=hyper.lr),
        opt_alpha=nn.AdamState.for_params([log_alpha], lr=hyper.lr),
        window=deque(maxlen=hyper.window),
    )


# -- actor -----------------------------------------------------------------

@dataclass
class ActorSample:
    action: np.ndarray
    log_prob: np.ndarray
    mu: np.ndarray
    log_std: np.ndarray
    eps: np.ndarray
    clamped: np.ndarray  # True where log-std hit the clamp (zero gradient)
    cache: nn.Cache


def split_head(out: np.ndarray, act_dim: int):
    mu = out[..., :act_dim]
    raw = out[..., act_dim:]
    log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
    return mu, log_std, (raw < LOG_STD_MIN) | (raw > LOG_STD_MAX)


def squashed_log_prob(eps, log_std, action) -> np.ndarray:
    """Gaussian log-density of the pre-squash sample minus the tanh Jacobian term."""
    gauss = -0.5 * eps ** 2 - log_std - HALF_LOG_2PI
    return np.sum(gauss, axis=-1) - np.sum(np.log(1.0 - action ** 2 + SQUASH_EPS), axis=-1)


def actor_forward_sample(actor: nn.Mlp, o, rng=None, eps=None) -> ActorSample:
    out, cache = nn.forward(actor, o)
    B = actor.sizes[-1] // 2
    mu, log_std, clamped = split_head(out, B)
    if eps is None:
        eps = rng.standard_normal(mu.shape, dtype=mu.dtype)
    u = mu + np.exp(log_std) * eps
    a = np.tanh(u)
    return ActorSample(a, squashed_log_prob(eps, log_std, a), mu, log_std, eps, clamped, cache)


def actor_sample(actor: nn.Mlp, o, rng=None, deterministic: bool = False):
    """Return ``(action, log_prob)``; the deterministic path gives ``tanh(mu)``."""
    if deterministic:
        out = nn.forward(actor, o)[0]
        mu, log_std, _ = split_head(out, actor.sizes[-1] // 2)
        a = np.tanh(mu)
        return a, squashed_log_prob(np.zeros_like(mu), log_std, a)
    s = actor_forward_sample(actor, o, rng)
    return s.action, s.log_prob


def deterministic_action(actor: nn.Mlp, o) -> np.ndarray:
    """Single-observation ``tanh(mu)`` through the inference kernel."""
    out = actor.act(np.asarray(o, dtype=float))
    return np.tanh(out[: actor.sizes[-1] // 2])


# -- losses and updates ------------------------------------------------------

def q_value(q: nn.Mlp, o, a):
    x = np.concatenate([o, a], axis=-1)
    y, cache = nn.forward(q, x)
    return y[..., 0], cache


def critic_target(batch: dict, params: PolicyParams, hyper: SacHyper, rng, eps=None) -> np.ndarray:
    s = actor_forward_sample(params.actor, batch["next_obs"], rng, eps=eps)
    q1, _ = q_value(params.q1_targ, batch["next_obs"], s.action)
    q2, _ = q_value(params.q2_targ, batch["next_obs"], s.action)
    v = np.minimum(q1, q2) - params.alpha * s.log_prob
    r = hyper.reward_scale * np.asarray(batch["rew"], dtype=float)
    return r + (1.0 - np.asarray(batch["done"], dtype=float)) * hyper.gamma * v


def critic_loss_grads(q: nn.Mlp, batch: dict, y: np.ndarray):
    pred, cache = q_value(q, batch["obs"], batch["act"])
    diff = pred - y
    loss = float(np.mean(diff ** 2))
    dy = (2.0 / diff.size) * diff[:, None]
    return loss, nn.backward(q, cache, dy).params


def critic_update(batch: dict, params: PolicyParams, hyper: SacHyper, rng, y=None) -> float:
    """One clipped Adam step per critic toward the shared target; returns the mean loss."""
    if y is None:
        y = critic_target(batch, params, hyper, rng)
    losses = []
    for q, opt in ((params.q1, params.opt_q1), (params.q2, params.opt_q2)):
        loss, grads = critic_loss_grads(q, batch, y)
        grads, _ = nn.clip_global_norm(grads, hyper.clip)
        nn.adam_step(opt, q.params, grads)
        losses.append(loss)
    return 0.5 * (losses[0] + losses[1])


def actor_loss_grads(actor: nn.Mlp, q1: nn.Mlp, q2: nn.Mlp, obs, alpha: float, rng=None, eps=None):
    """Loss ``mean(alpha * log pi - min(Q1, Q2))`` and its gradients w.r.t. the actor.

    Returns ``(loss, grads, sample)``.
    """
    s = actor_forward_sample(actor, obs, rng, eps=eps)
    n, B = s.mu.shape
    obs_dim = actor.sizes[0]
    v1, c1 = q_value(q1, obs, s.action)
    v2, c2 = q_value(q2, obs, s.action)
    use1 = v1 <= v2
    qmin = np.where(use1, v1, v2)
    loss = float(np.mean(alpha * s.log_prob - qmin))

    # dL/da through the selected critic's action input
    dq1 = nn.backward(q1, c1, np.where(use1, 1.0, 0.0)[:, None], param_grads=False).dx[:, obs_dim:]
    dq2 = nn.backward(q2, c2, np.where(use1, 0.0, 1.0)[:, None], param_grads=False).dx[:, obs_dim:]
    dqda = dq1 + dq2
    a = s.action
    one_m = 1.0 - a ** 2
    dlogp_du = 2.0 * a * one_m / (one_m + SQUASH_EPS)
    g_u = (alpha * dlogp_du - dqda * one_m) / n
    sigma = np.exp(s.log_std)
    g_mu = g_u
    g_ls = (-alpha / n + g_u * sigma * s.eps) * (~s.clamped)
    grads = nn.backward(actor, s.cache, np.concatenate([g_mu, g_ls], axis=-1)).params
    return loss, grads, s


def actor_update(batch: dict, params: PolicyParams, hyper: SacHyper, rng):
    """One clipped Adam step on the actor; returns ``(loss, log_probs)``."""
    loss, grads, s = actor_loss_grads(params.actor, params.q1, params.q2, batch["obs"], params.alpha, rng)
    grads, _ = nn.clip_global_norm(grads, hyper.clip)
    nn.adam_step(params.opt_actor, params.actor.params, grads)
    return loss, s.log_prob


def target_entropy(params: PolicyParams, hyper: SacHyper) -> float:
    return -float(params.act_dim) if hyper.target_entropy is None else float(hyper.target_entropy)


def temperature_update(log_probs, params: PolicyParams, hyper: SacHyper) -> float:
    """Adam step on ``J = mean(-alpha * (log pi + H*))`` w.r.t. ``log(alpha)``."""
    h = target_entropy(params, hyper)
    grad = -params.alpha * float(np.mean(np.asarray(log_probs) + h))
    la = np.array([params.log_alpha])
    nn.adam_step(params.opt_alpha, [la], [np.array([grad])])
    params.log_alpha = float(la[0])
    return params.alpha


def polyak_update(params: PolicyParams, hyper: SacHyper) -> None:
    """``target <- tau * online + (1 - tau) * target`` in place."""
    t = hyper.tau
    for online, targ in ((params.q1, params.q1_targ), (params.q2, params.q2_targ)):
        for p, pt in zip(online.params, targ.params):
            pt *= 1.0 - t
            pt += t * p


def gradient_cycle(buffer: ReplayBuffer, params: PolicyParams, hyper: SacHyper, rng) -> tuple[float, float]:
    batch = buffer.sample(hyper.batch, rng)
    c_loss = critic_update(batch, params, hyper, rng)
    a_loss, logp = actor_update(batch, params, hyper, rng)
    temperature_update(logp, params, hyper)
    polyak_update(params, hyper)
    return c_loss, a_loss


# -- training loop -------------------------------------------------------------

@dataclass
class TrainResult:
    params: PolicyParams
    log: list
    best_actor: nn.Mlp
    best_rolling: float
    steps: int


def save_actor(path, actor: nn.Mlp, cfg: ScenarioConfig, mode: str, extra: dict | None = None) -> None:
    meta = {"mode": mode, "B": cfg.B, "B_con": cfg.B_con}
    meta.update(extra or {})
    nn.save_checkpoint(path, {"actor": actor}, extra=meta)


def load_actor(path) -> tuple[nn.Mlp, dict]:
    nets, _, extra = nn.load_checkpoint(path)
    if "actor" not in nets:
        raise ValueError(f"{path} holds no actor network")
    return nets["actor"], extra


def write_train_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAIN_LOG_FIELDS)
        for r in rows:
            w.writerow([r["episode"]] + [repr(float(r[k])) for k in TRAIN_LOG_FIELDS[1:]])


def train(cfg: ScenarioConfig, hyper: SacHyper | None = None, mode: str = "da", episodes: int = 1000,
          seed: int | None = None, checkpoint_path=None, log_path=None, progress=None) -> TrainResult:
    """Run SAC for ``episodes`` episodes.

    The actor is checkpointed (to ``checkpoint_path`` if given) whenever the
    rolling mean of the last ``hyper.window`` episode rewards reaches a new
    maximum; only full windows are considered.
    """
    hyper = hyper or SacHyper()
    seed = cfg.seed if seed is None else seed
    env = HandoffEnv(cfg, mode, seed)
    init_rng = RngStream.for_purpose(seed, "init").gen
    policy_rng = RngStream.for_purpose(seed, "policy").gen
    replay_rng = RngStream.for_purpose(seed, "replay").gen
    params = init_params(env.obs_dim, env.act_dim, hyper, init_rng)
    buffer = ReplayBuffer(hyper.buffer, env.obs_dim, env.act_dim)
    best_actor = params.actor.copy()
    log = []
    steps = 0
    for ep in range(episodes):
        obs = env.reset(ep)
        total = 0.0
        c_losses, a_losses = [], []
        done = False
        while not done:
            if steps < hyper.warmup:
                a = policy_rng.uniform(-1.0, 1.0, size=env.act_dim)
            else:
                a = actor_sample(params.actor, obs, policy_rng)[0]
            out = env.step(a_cont=a)
            terminal = out.done and not hyper.bootstrap_time_limit
            buffer.add(obs, a, out.reward, out.observation, terminal)
            obs, done = out.observation, out.done
            total += out.reward
            steps += 1
            if steps > hyper.warmup and len(buffer) >= hyper.batch:
                for _ in range(hyper.grad_steps):
                    c, al = gradient_cycle(buffer, params, hyper, replay_rng)
                    c_losses.append(c)
                    a_losses.append(al)
        params.window.append(total)
        rolling = float(np.mean(params.window))
        if len(params.window) == params.window.maxlen and rolling > params.best:
            params.best = rolling
            best_actor = params.actor.copy()
            if checkpoint_path is not None:
                save_actor(checkpoint_path, best_actor, cfg, mode, {"episode": ep, "rolling": rolling})
        row = {
            "episode": ep, "sum_reward": total, "rolling_reward": rolling, "alpha_t": params.alpha,
            "critic_loss": float(np.mean(c_losses)) if c_losses else math.nan,
            "actor_loss": float(np.mean(a_losses)) if a_losses else math.nan,
        }
        log.append(row)
        if progress is not None:
            progress(row)
    if params.best == -math.inf:
        # fewer episodes than the window: keep the final actor
        best_actor = params.actor.copy()
        if checkpoint_path is not None:
            save_actor(checkpoint_path, best_actor, cfg, mode, {"episode": episodes - 1, "rolling": None})
    if log_path is not None:
        write_train_log(log_path, log)
    return TrainResult(params, log, best_actor, params.best, steps)
