"""Synthetic out-of-focus particle scenes and detection scoring."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class RingSpec:
    cx: float
    cy: float
    r: float
    amplitude: float = 0.5
    ring_width: float = 1.5
    inner_rings: int = 2
    inner_amplitude: float = 0.3  # fraction of amplitude
    spot_amplitude: float = 0.6  # fraction of amplitude; below 1 so the outer ring is the brightest feature


@dataclass(frozen=True)
class SceneSpec:
    width: int
    height: int
    rings: tuple[RingSpec, ...] = ()
    noise_sd: float = 0.0
    seed: int = 0
    background: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "rings", tuple(
            ring if isinstance(ring, RingSpec) else RingSpec(**ring) for ring in self.rings))
        if self.width < 5 or self.height < 5:
            raise SpecError("frame must be at least 5x5")
        if self.noise_sd < 0:
            raise SpecError("noise_sd must be >= 0")
        for ring in self.rings:
            m = ring.r + 3
            if not (ring.cx - m >= 0 and ring.cy - m >= 0
                    and ring.cx + m <= self.width - 1 and ring.cy + m <= self.height - 1):
                raise SpecError(f"ring {ring} does not fit the frame with margin r+3")
            if ring.r <= 0 or ring.ring_width <= 0:
                raise SpecError("radius and ring width must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rings"] = [asdict(r) for r in self.rings]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        d["rings"] = tuple(RingSpec(**r) for r in d.get("rings", ()))
        return cls(**d)

    def truth(self) -> np.ndarray:
        return np.array([(r.cx, r.cy, r.r) for r in self.rings], np.float64).reshape(-1, 3)


def _add_ring_profile(img, cx, cy, radius, width, amp, xs, ys):
    ext = 4.0 * width
    x0 = max(int(math.floor(cx - radius - ext)), 0)
    x1 = min(int(math.ceil(cx + radius + ext)) + 1, img.shape[1])
    y0 = max(int(math.floor(cy - radius - ext)), 0)
    y1 = min(int(math.ceil(cy + radius + ext)) + 1, img.shape[0])
    d = np.hypot(xs[x0:x1][None, :] - cx, ys[y0:y1][:, None] - cy)
    img[y0:y1, x0:x1] += amp * np.exp(-((d - radius) ** 2) / (2.0 * width * width))


def render_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Render a float image in [0, 1] and return it with the (cx, cy, r) truth.

    Each particle is an outer Gaussian-profile ring, ``inner_rings`` thinner
    and dimmer rings at r*k/(n+1), and a central spot.
    """
    h, w = spec.height, spec.width
    img = np.full((h, w), spec.background, np.float64)
    xs = np.arange(w, dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)
    for ring in spec.rings:
        _add_ring_profile(img, ring.cx, ring.cy, ring.r, ring.ring_width, ring.amplitude, xs, ys)
        n = ring.inner_rings
        for k in range(1, n + 1):
            _add_ring_profile(img, ring.cx, ring.cy, ring.r * k / (n + 1), ring.ring_width / 2,
                              ring.amplitude * ring.inner_amplitude, xs, ys)
        if ring.spot_amplitude > 0:
            _add_ring_profile(img, ring.cx, ring.cy, 0.0, ring.ring_width,
                              ring.amplitude * ring.spot_amplitude, xs, ys)
    if spec.noise_sd > 0:
        rng = np.random.default_rng(spec.seed)
        img += rng.normal(0.0, spec.noise_sd, img.shape)
    np.clip(img, 0.0, 1.0, out=img)
    return img, spec.truth()


# ---------------------------------------------------------------------------
# scene generation


@dataclass(frozen=True)
class CorpusParams:
    width: int = 340
    height: int = 370
    mean_rings: float = 14.3
    min_rings: int = 5
    max_rings: int = 25
    cluster_fraction: float = 0.677
    r_range: tuple[float, float] = (10.0, 40.0)
    amplitude: float = 0.5
    ring_width: float = 1.5
    inner_rings: int = 2
    noise_sd: float = 0.05
    min_separation: float = 8.0  # center distance or |dr| needed to tell rings apart
    isolation_gap: float = 6.0


def clustered(truth: np.ndarray) -> np.ndarray:
    """Rings whose disc overlaps or contains another ring's disc."""
    truth = np.asarray(truth, np.float64).reshape(-1, 3)
    n = len(truth)
    out = np.zeros(n, bool)
    for i in range(n):
        for j in range(i + 1, n):
            d = math.hypot(truth[i, 0] - truth[j, 0], truth[i, 1] - truth[j, 1])
            if d < truth[i, 2] + truth[j, 2]:
                out[i] = out[j] = True
    return out


def _resolvable(c, placed, min_sep):
    for q in placed:
        d = math.hypot(c[0] - q[0], c[1] - q[1])
        if d < min_sep and abs(c[2] - q[2]) < min_sep:
            return False
        # near-tangent circles share a long arc and smear each other's votes
        if abs(d - abs(c[2] - q[2])) < 3.0:
            return False
    return True


def generate_scene(rng: np.random.Generator, params: CorpusParams = CorpusParams(),
                   n_rings: int | None = None, seed: int = 0) -> SceneSpec:
    """Random scene with about ``cluster_fraction`` of the rings in clusters.

    Clusters are groups of 2-3 rings attached to a seed ring by overlap or
    inclusion; groups and isolated rings keep ``isolation_gap`` between
    their discs. Rings that cannot be placed after a bounded number of
    attempts are dropped, so the realized count can fall short.
    """
    p = params
    if n_rings is None:
        n_rings = int(np.clip(rng.poisson(p.mean_rings), p.min_rings, p.max_rings))
    radii = list(rng.uniform(p.r_range[0], p.r_range[1], n_rings))
    n_cluster = int(round(p.cluster_fraction * n_rings))
    if n_cluster == 1:
        n_cluster = 2 if n_rings >= 2 else 0
    sizes = []
    left = n_cluster
    while left > 0:
        k = 2 if left in (2, 4) else 3
        k = min(k, left)
        sizes.append(k)
        left -= k

    placed: list[tuple[float, float, float]] = []
    group_of: list[int] = []

    def inside(cx, cy, r):
        m = r + 3
        return m <= cx <= p.width - 1 - m and m <= cy <= p.height - 1 - m

    def apart(cx, cy, r, group):
        return all(math.hypot(cx - q[0], cy - q[1]) >= r + q[2] + p.isolation_gap
                   for q, g in zip(placed, group_of) if g != group or g < 0)

    def free_spot(r):
        for _ in range(400):
            cx = rng.uniform(r + 3, p.width - 1 - r - 3)
            cy = rng.uniform(r + 3, p.height - 1 - r - 3)
            if apart(cx, cy, r, -1):
                return cx, cy
        return None

    for gi, size in enumerate(sizes):
        r0 = radii.pop()
        spot = free_spot(r0)
        if spot is None:
            continue
        placed.append((spot[0], spot[1], r0))
        group_of.append(gi)
        seed_ring = placed[-1]
        for _ in range(size - 1):
            r = radii.pop()
            for _ in range(400):
                d = rng.uniform(0.0, 0.95 * (seed_ring[2] + r))
                phi = rng.uniform(0.0, 2 * math.pi)
                cx = seed_ring[0] + d * math.cos(phi)
                cy = seed_ring[1] + d * math.sin(phi)
                members = [q for q, g in zip(placed, group_of) if g == gi]
                if (inside(cx, cy, r) and apart(cx, cy, r, gi)
                        and _resolvable((cx, cy, r), members, p.min_separation)):
                    placed.append((cx, cy, r))
                    group_of.append(gi)
                    break
    for r in radii:
        spot = free_spot(r)
        if spot is not None:
            placed.append((spot[0], spot[1], r))
            group_of.append(-1)

    rings = tuple(RingSpec(cx, cy, r, p.amplitude, p.ring_width, p.inner_rings)
                  for cx, cy, r in placed)
    return SceneSpec(p.width, p.height, rings, p.noise_sd, seed)


# ---------------------------------------------------------------------------
# scoring


@dataclass
class MatchReport:
    true_positives: int
    false_negatives: int
    false_positives: int
    cluster_total: int = 0
    cluster_detected: int = 0
    matches: list[tuple[int, int]] = field(default_factory=list, repr=False)

    @property
    def detection_rate(self) -> float:
        n = self.true_positives + self.false_negatives
        return self.true_positives / n if n else 1.0

    @property
    def false_rate(self) -> float:
        n = self.true_positives + self.false_positives
        return self.false_positives / n if n else 0.0

    @property
    def cluster_detection_rate(self) -> float:
        return self.cluster_detected / self.cluster_total if self.cluster_total else 1.0

    def __add__(self, other: "MatchReport") -> "MatchReport":
        return MatchReport(
            self.true_positives + other.true_positives,
            self.false_negatives + other.false_negatives,
            self.false_positives + other.false_positives,
            self.cluster_total + other.cluster_total,
            self.cluster_detected + other.cluster_detected,
        )

    def as_dict(self) -> dict:
        return {
            "true_positives": self.true_positives,
            "false_negatives": self.false_negatives,
            "false_positives": self.false_positives,
            "detection_rate": self.detection_rate,
            "false_rate": self.false_rate,
            "cluster_total": self.cluster_total,
            "cluster_detected": self.cluster_detected,
            "cluster_detection_rate": self.cluster_detection_rate,
        }


def _as_triples(items) -> np.ndarray:
    rows = [(d.cx, d.cy, d.r) if hasattr(d, "cx") else tuple(d)[:3] for d in items]
    return np.asarray(rows, np.float64).reshape(-1, 3)


def score_detections(truth, detections, tol_center: float = 3.0,
                     tol_radius: float = 3.0) -> MatchReport:
    """Greedy one-to-one matching by ascending center distance."""
    if not (tol_center > 0 and tol_radius > 0):
        raise ValueError("tolerances must be positive")
    t = _as_triples(truth)
    d = _as_triples(detections)
    pairs = []
    for i in range(len(t)):
        for j in range(len(d)):
            dist = math.hypot(t[i, 0] - d[j, 0], t[i, 1] - d[j, 1])
            if dist <= tol_center and abs(t[i, 2] - d[j, 2]) <= tol_radius:
                pairs.append((dist, abs(t[i, 2] - d[j, 2]), i, j))
    pairs.sort()
    used_t, used_d = set(), set()
    matches = []
    for _, _, i, j in pairs:
        if i in used_t or j in used_d:
            continue
        used_t.add(i)
        used_d.add(j)
        matches.append((i, j))
    cl = clustered(t)
    return MatchReport(
        true_positives=len(matches),
        false_negatives=len(t) - len(matches),
        false_positives=len(d) - len(matches),
        cluster_total=int(cl.sum()),
        cluster_detected=int(sum(cl[i] for i in used_t)),
        matches=sorted(matches),
    )


def generate_corpus(params: CorpusParams, frames: int, seed: int) -> list[SceneSpec]:
    """Deterministic corpus: frame i draws from child seed i of ``seed``."""
    out = []
    for ss in np.random.SeedSequence(seed).spawn(frames):
        rng = np.random.default_rng(ss)
        out.append(generate_scene(rng, params, seed=int(ss.generate_state(1)[0])))
    return out


# ---------------------------------------------------------------------------
# particle kinematics


def particle_paths(rng: np.random.Generator, n_particles: int, n_frames: int,
                   box=(100.0, 100.0, 50.0), speed: float = 2.0, accel_sd: float = 0.02,
                   wobble: float = 0.5, period: float = 40.0) -> np.ndarray:
    """Smooth 3D paths, shape (n_frames, n_particles, 3).

    Each particle moves with constant acceleration plus a sinusoidal wobble,
    so the motion is smooth but not exactly quadratic.
    """
    t = np.arange(n_frames, dtype=np.float64)[:, None, None]
    p0 = rng.uniform(0.0, 1.0, (1, n_particles, 3)) * np.asarray(box, np.float64)
    direction = rng.normal(size=(1, n_particles, 3))
    direction /= np.linalg.norm(direction, axis=2, keepdims=True)
    v = direction * speed * rng.uniform(0.5, 1.5, (1, n_particles, 1))
    a = rng.normal(0.0, accel_sd, (1, n_particles, 3))
    phase = rng.uniform(0.0, 2 * math.pi, (1, n_particles, 3))
    return p0 + v * t + 0.5 * a * t * t + wobble * np.sin(2 * math.pi * t / period + phase)


def drop_observations(rng: np.random.Generator, paths: np.ndarray, rate: float):
    """Per-frame observation lists with each sample dropped with probability ``rate``.

    Returns (frames, ids): frames[i] is an (m, 3) array and ids[i] the true
    particle index of each row. Rows are shuffled within a frame.
    """
    frames, ids = [], []
    for pos in paths:
        keep = np.flatnonzero(rng.random(len(pos)) >= rate)
        keep = rng.permutation(keep)
        frames.append(pos[keep])
        ids.append(keep)
    return frames, ids
