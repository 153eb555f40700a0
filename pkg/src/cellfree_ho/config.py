"""Scenario configuration, unit helpers and seeded random streams.

The config file is a plain ``key = value`` text file with a single
``[scenario]`` section, one key per :class:`ScenarioConfig` field. Values are
SI units; power keys may instead be given in dBm with an ``_dbm`` suffix
(``p_d_dbm``, ``p_u_dbm``). The noise power may be given directly
(``sigma_z2``) or through ``noise_psd_dbm_hz``, ``bandwidth`` and
``noise_figure_db``.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

SPEED_OF_LIGHT = 3e8
SECTION = "scenario"


class ConfigError(ValueError):
    """Raised for unparsable config files and violated config invariants."""

    def __init__(self, message: str, field_name: str | None = None):
        super().__init__(message)
        self.field_name = field_name


def dbm_to_watts(x):
    """Convert a power in dBm to watts."""
    out = 10.0 ** ((np.asarray(x, dtype=float) - 30.0) / 10.0)
    return float(out) if out.ndim == 0 else out


def watts_to_dbm(p):
    return 10.0 * math.log10(p) + 30.0


def noise_power(psd_dbm_hz: float = -174.0, bandwidth: float = 2e6, noise_figure_db: float = 8.0) -> float:
    """Thermal noise power in watts over ``bandwidth`` Hz."""
    return dbm_to_watts(psd_dbm_hz + 10.0 * math.log10(bandwidth) + noise_figure_db)


def minmax_scale(x) -> np.ndarray:
    """Map ``x`` affinely onto [-1, 1]; a constant vector maps to zeros."""
    x = np.asarray(x, dtype=float)
    lo = x.min()
    span = x.max() - lo
    if not span > 0.0:
        return np.zeros_like(x)
    out = 2.0 * ((x - lo) / span - 0.5)
    return np.clip(out, -1.0, 1.0)


def _cost231_path_loss(d_xy: float, d_0: float, d_h: float, alpha_pl: float) -> float:
    return (math.sqrt(d_xy * d_xy + d_h * d_h) / d_0) ** (-alpha_pl)


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical, protocol and penalty parameters of one simulated network.

    Defaults reproduce the reference network: 27 APs with 8 antennas, a
    serving set of 5, 1.8 GHz carrier, a user at 10 m/s and 5 s decision
    steps. ``N_c``, ``sigma_z2``, ``beta_threshold`` and ``lag_est`` are
    derived from the other fields when left as ``None``.
    """

    B: int = 27
    M: int = 8
    B_con: int = 5
    p_d: float = 1.0
    p_u: float = 0.1
    tau_c: int = 200
    tau_p: int = 16
    T_s: float = 66.7e-6
    f_c: float = 1.8e9
    v_u: float = 10.0
    delta_bar: float = 5.0
    N_c: int | None = None
    sigma_z2: float | None = None
    alpha_pl: float = 3.8
    d_0: float = 1.1
    d_h: float = 13.5
    sigma_sh_db: float = 6.0
    iota: float = 0.5
    d_decorr: float = 100.0
    gamma_o: float = 0.8
    beta_threshold: float | None = None
    tau_0: float = 2000.0
    tau_ho: float = 100.0
    mu_E: float = 3.0
    load_max: int = 5
    area_side: float = 1000.0
    episode_distance: float = 1000.0
    seed: int = 0
    # layout / episode knobs
    ap_jitter: float = 0.25
    equal_loads: bool = False
    mobility: str = "straight"
    lag_est: int | None = None
    log_base: float = 2.0

    def __post_init__(self):
        if self.N_c is None:
            object.__setattr__(self, "N_c", int(round(self.delta_bar / (self.tau_c * self.T_s))))
        if self.sigma_z2 is None:
            object.__setattr__(self, "sigma_z2", noise_power())
        if self.beta_threshold is None:
            object.__setattr__(
                self, "beta_threshold", _cost231_path_loss(300.0, self.d_0, self.d_h, self.alpha_pl)
            )
        if self.lag_est is None:
            object.__setattr__(self, "lag_est", max(1, self.tau_p // 2))
        self.validate()

    def validate(self) -> None:
        def fail(name, msg):
            raise ConfigError(f"{name}: {msg}", name)

        for name in ("B", "M", "B_con", "tau_c", "tau_p", "N_c"):
            if int(getattr(self, name)) < 1:
                fail(name, "must be a positive integer")
        if self.B_con > self.B:
            fail("B_con", "B_con exceeds B")
        if self.tau_p >= self.tau_c:
            fail("tau_p", "pilot phase must be shorter than the communication cycle")
        if not 0.0 <= self.iota <= 1.0:
            fail("iota", "must lie in [0, 1]")
        if not 0.0 < self.gamma_o <= 1.0:
            fail("gamma_o", "must lie in (0, 1]")
        for name in ("p_d", "p_u", "T_s", "f_c", "v_u", "delta_bar", "sigma_z2", "alpha_pl",
                     "d_0", "d_h", "d_decorr", "area_side", "episode_distance", "beta_threshold"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                fail(name, "must be strictly positive")
        if self.sigma_sh_db < 0.0:
            fail("sigma_sh_db", "must be non-negative")
        if self.tau_0 < 0.0 or self.tau_ho < 0.0:
            fail("tau_0" if self.tau_0 < 0.0 else "tau_ho", "must be non-negative")
        if self.load_max < 0 or self.mu_E < 0:
            fail("load_max", "must be non-negative")
        if not 1 <= self.lag_est <= self.tau_p:
            fail("lag_est", "pilot lag must lie in [1, tau_p]")
        if not 0.0 <= self.ap_jitter < 0.5:
            fail("ap_jitter", "must lie in [0, 0.5)")
        if self.mobility not in ("straight", "waypoint"):
            fail("mobility", "must be 'straight' or 'waypoint'")
        if self.N_c * self.tau_c < self.tau_0 + self.B_con * self.tau_ho:
            fail("tau_0", "a full serving-set swap saturates the handoff overhead cap")

    # derived quantities
    @property
    def cycle_budget(self) -> int:
        """Channel uses in one decision step, ``N_c * tau_c``."""
        return self.N_c * self.tau_c

    @property
    def n_est(self) -> int:
        return self.tau_p + 1

    @property
    def doppler(self) -> float:
        return self.f_c * self.v_u / SPEED_OF_LIGHT

    @property
    def step_length(self) -> float:
        return self.v_u * self.delta_bar

    @property
    def steps_per_episode(self) -> int:
        return int(round(self.episode_distance / self.step_length))

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_FIELD_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    try:
        if "bool" in kind:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "str" in kind:
            return raw.strip()
        if kind.startswith("int"):
            value = float(raw)
            if value != int(value):
                raise ValueError(raw)
            return int(value)
        return float(raw)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {raw!r}", name) from None


def config_from_mapping(values: dict[str, str]) -> ScenarioConfig:
    values = {k.strip(): v for k, v in values.items()}
    kwargs: dict[str, Any] = {}
    noise_keys = {"noise_psd_dbm_hz": -174.0, "bandwidth": 2e6, "noise_figure_db": 8.0}
    noise_given = {}
    for key, raw in values.items():
        if key in ("p_d_dbm", "p_u_dbm"):
            try:
                kwargs[key[:-4]] = dbm_to_watts(float(raw))
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {raw!r}", key) from None
        elif key in noise_keys:
            try:
                noise_given[key] = float(raw)
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {raw!r}", key) from None
        elif key in _FIELD_TYPES:
            kwargs[key] = _coerce(key, raw)
        else:
            raise ConfigError(f"{key}: unknown config key", key)
    if noise_given and "sigma_z2" not in kwargs:
        args = {**noise_keys, **noise_given}
        kwargs["sigma_z2"] = noise_power(args["noise_psd_dbm_hz"], args["bandwidth"], args["noise_figure_db"])
    return ScenarioConfig(**kwargs)


def load_config(path: str | Path) -> ScenarioConfig:
    """Read a scenario file; unspecified keys take the reference defaults."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case-sensitive (B vs b)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if not parser.has_section(SECTION):
        raise ConfigError(f"cannot parse {path}: missing [{SECTION}] section")
    return config_from_mapping(dict(parser.items(SECTION)))


def dump_config(cfg: ScenarioConfig, path: str | Path) -> None:
    """Write every field (derived ones included) so a reload is exact."""
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser[SECTION] = {k: repr(v) if isinstance(v, float) else str(v) for k, v in cfg.to_dict().items()}
    with open(path, "w") as fh:
        parser.write(fh)


# Purposes get fixed ids so that a given (seed, purpose, episode) always maps
# to the same stream regardless of call order.
PURPOSES = ("layout", "shadow", "track", "loads", "env", "policy", "replay", "init", "oracle", "eval")


@dataclass(frozen=True)
class RngStream:
    """Counter-keyed random stream: ``(seed, stream_id)`` fully determines the draws."""

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1), spawn_key=(int(self.stream_id) & (2**64 - 1),))
        object.__setattr__(self, "_gen", np.random.Generator(np.random.Philox(ss)))

    @classmethod
    def for_purpose(cls, seed: int, purpose: str, episode: int = 0) -> "RngStream":
        pid = PURPOSES.index(purpose) if purpose in PURPOSES else zlib.crc32(purpose.encode())
        return cls(seed, (pid << 40) | (int(episode) & ((1 << 40) - 1)))

    @property
    def gen(self) -> np.random.Generator:
        return self._gen

    def __getattr__(self, name):
        # delegate draws (normal, uniform, integers, ...) to the generator
        if name.startswith("_"):
            raise AttributeError(name)
        return getattr(self._gen, name)
