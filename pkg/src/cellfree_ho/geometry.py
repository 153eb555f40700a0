"""AP layout, user mobility on a wraparound torus and minimum-image geometry."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from .config import ScenarioConfig


@dataclass(frozen=True)
class NetworkLayout:
    ap_positions: np.ndarray  # (B, 2)
    area_side: float

    @property
    def B(self) -> int:
        return self.ap_positions.shape[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ap_id", "x", "y"])
            for i, (x, y) in enumerate(self.ap_positions):
                w.writerow([i, repr(float(x)), repr(float(y))])


@dataclass(frozen=True)
class UserTrack:
    position: np.ndarray  # (2,)
    heading: np.ndarray  # unit (2,)
    speed: float
    step_length: float
    waypoint: np.ndarray | None = None


def place_aps(cfg: ScenarioConfig, rng, jitter: float | None = None) -> NetworkLayout:
    """Jittered near-square grid of ``cfg.B`` APs.

    ``cols = ceil(sqrt(B))`` columns and ``ceil(B / cols)`` rows; each AP sits
    at its cell centre displaced uniformly by up to ``jitter`` of the cell
    pitch per axis. When the grid has more cells than APs the first ``B``
    cells in row-major order are used.
    """
    jitter = cfg.ap_jitter if jitter is None else jitter
    B, side = cfg.B, cfg.area_side
    cols = math.ceil(math.sqrt(B))
    rows = math.ceil(B / cols)
    px, py = side / cols, side / rows
    idx = np.arange(B)
    cx = (idx % cols + 0.5) * px
    cy = (idx // cols + 0.5) * py
    offs = rng.uniform(-jitter, jitter, size=(B, 2)) if jitter > 0 else np.zeros((B, 2))
    pos = np.column_stack([cx + offs[:, 0] * px, cy + offs[:, 1] * py])
    return NetworkLayout(np.mod(pos, side), side)


def random_heading(rng) -> np.ndarray:
    phi = rng.uniform(0.0, 2.0 * math.pi)
    return np.array([math.cos(phi), math.sin(phi)])


def new_track(cfg: ScenarioConfig, rng) -> UserTrack:
    pos = rng.uniform(0.0, cfg.area_side, size=2)
    waypoint = rng.uniform(0.0, cfg.area_side, size=2) if cfg.mobility == "waypoint" else None
    heading = random_heading(rng)
    if waypoint is not None:
        heading = _towards(pos, waypoint, cfg.area_side, heading)
    return UserTrack(pos, heading, cfg.v_u, cfg.step_length, waypoint)


def _towards(pos, target, side, fallback):
    _, img = toroidal_distance(pos, target, side)
    v = img - pos
    n = math.hypot(v[0], v[1])
    return v / n if n > 0 else fallback


def step_user(track: UserTrack, layout: NetworkLayout, rng=None) -> tuple[UserTrack, np.ndarray]:
    """Advance one decision step; returns the new track and the per-axis wrap count.

    In waypoint mode the heading is re-aimed at the current waypoint and a new
    waypoint is drawn from ``rng`` once the old one is reached.
    """
    side = layout.area_side
    heading, waypoint = track.heading, track.waypoint
    if waypoint is not None:
        dist, _ = toroidal_distance(track.position, waypoint, side)
        if dist <= track.step_length and rng is not None:
            waypoint = rng.uniform(0.0, side, size=2)
        heading = _towards(track.position, waypoint, side, heading)
    raw = track.position + track.step_length * heading
    shift = np.floor(raw / side).astype(int)
    pos = raw - shift * side
    # floating residue can leave pos == side
    pos[pos >= side] -= side
    return replace(track, position=pos, heading=heading, waypoint=waypoint), shift


def toroidal_distance(p, q, area_side: float) -> tuple[float, np.ndarray]:
    """Minimum-image distance from ``p`` to ``q`` and the image of ``q`` realizing it."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    d = q - p
    d = d - area_side * np.round(d / area_side)
    return float(math.hypot(d[0], d[1])), p + d


def min_images(p, aps: np.ndarray, area_side: float) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`toroidal_distance` over all APs: (distances, image points)."""
    d = aps - np.asarray(p, dtype=float)
    d = d - area_side * np.round(d / area_side)
    return np.hypot(d[:, 0], d[:, 1]), p + d


def angle_to_ap(track: UserTrack, ap_image) -> float:
    """Angle in [0, pi] between the heading and the user-to-AP direction."""
    v = np.asarray(ap_image, dtype=float) - track.position
    n = math.hypot(v[0], v[1])
    if n == 0.0:
        return 0.0
    c = float(np.dot(track.heading, v) / n)
    return math.acos(min(1.0, max(-1.0, c)))


def angles_to_aps(track: UserTrack, images: np.ndarray) -> np.ndarray:
    v = images - track.position
    n = np.hypot(v[:, 0], v[:, 1])
    c = np.where(n > 0, (v @ track.heading) / np.where(n > 0, n, 1.0), 1.0)
    return np.arccos(np.clip(c, -1.0, 1.0))


def detect_forced_handoffs(prev_images, new_images, serving, tol: float = 1e-6) -> np.ndarray:
    """Flag serving APs whose minimum-image location jumped between steps."""
    moved = np.any(np.abs(np.asarray(new_images) - np.asarray(prev_images)) > tol, axis=1)
    return moved & (np.asarray(serving) > 0)
