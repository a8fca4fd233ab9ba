"""Monte Carlo estimates of the clipped moments by direct sampling.

Every draw is a pure function of (seed, stream, sample index): a Philox
counter-based generator is keyed by (seed, stream) and positioned at the
chunk that holds the index, and uniforms are mapped to normals by the inverse
CDF so each sample consumes a fixed number of draws. Chunk statistics are
merged in chunk order, so the result does not depend on how many threads
evaluated the chunks.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import special as sp

from .likelihood import (
    QUADRANTS,
    _cross,
    _sq_norm,
    diff,
    log_ratio_cond,
    log_ratio_joint,
    log_ratio_prior,
    orientation,
)
from .model import ProblemSpec, TestPoint

__all__ = [
    "McConfig",
    "McEstimate",
    "sample_state",
    "sample_noise",
    "sample_states",
    "sample_noises",
    "estimate_mu",
    "estimate_quadrants",
]

STATE_STREAM = 0
NOISE_STREAM = 1
# Samples per generator chunk. Part of the reproducibility contract: changing
# it changes every stream.
CHUNK = 1 << 14

_U64 = 1 << 64


@dataclass(frozen=True)
class McConfig:
    seed: int = 0
    n_samples: int = 1_000_000
    antithetic: bool = False

    def __post_init__(self):
        if isinstance(self.seed, bool) or int(self.seed) != self.seed or not 0 <= self.seed < _U64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if isinstance(self.n_samples, bool) or int(self.n_samples) != self.n_samples:
            raise ValueError(f"n_samples must be an integer, got {self.n_samples!r}")
        if self.n_samples < 2:
            raise ValueError("n_samples must be at least 2")
        if self.antithetic and self.n_samples % 2:
            raise ValueError("antithetic sampling needs an even n_samples")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "n_samples", int(self.n_samples))

    @property
    def n_units(self) -> int:
        """Independent units: antithetic pairs count once."""
        return self.n_samples // 2 if self.antithetic else self.n_samples


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_err: float
    n: int
    count: Optional[int] = None  # hits, for frequency estimates


# ---------------------------------------------------------------------------
# counter-based draws


def _chunk_normals(seed: int, stream: int, chunk: int, n_units: int, width: int) -> np.ndarray:
    """First n_units rows of the (CHUNK, width) normal block of one chunk."""
    bg = np.random.Philox(
        key=np.array([seed, stream], dtype=np.uint64),
        counter=np.array([0, 0, 0, chunk], dtype=np.uint64),
    )
    raw = bg.random_raw(n_units * width)
    # 53-bit uniforms on the open interval (0, 1)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return sp.ndtri(u).reshape(n_units, width)


def _normals(seed: int, stream: int, start: int, stop: int, width: int) -> np.ndarray:
    """Normal draws for base indices [start, stop), shape (stop - start, width)."""
    blocks = []
    c = start // CHUNK
    while c * CHUNK < stop:
        lo = max(start, c * CHUNK) - c * CHUNK
        hi = min(stop, (c + 1) * CHUNK) - c * CHUNK
        blocks.append(_chunk_normals(seed, stream, c, hi, width)[lo:])
        c += 1
    if not blocks:
        return np.empty((0, width))
    return np.concatenate(blocks)


def _to_state(spec: ProblemSpec, z: np.ndarray) -> np.ndarray:
    return spec.sigma_x * z[:, 0]


def _to_noise(spec: ProblemSpec, z: np.ndarray) -> np.ndarray:
    n = spec.n_y
    return (spec.sigma_v / math.sqrt(2.0)) * (z[:, :n] + 1j * z[:, n:])


def _base(mc: McConfig, i: int) -> Tuple[int, float]:
    if not 0 <= i < mc.n_samples:
        raise IndexError(f"sample index {i} outside [0, {mc.n_samples})")
    if mc.antithetic:
        return i // 2, -1.0 if i % 2 else 1.0
    return i, 1.0


def sample_state(spec: ProblemSpec, mc: McConfig, i: int) -> float:
    """State draw i, distributed N(0, sigma_x^2)."""
    b, sign = _base(mc, i)
    return float(sign * _to_state(spec, _normals(mc.seed, STATE_STREAM, b, b + 1, 1))[0])


def sample_noise(spec: ProblemSpec, mc: McConfig, i: int) -> np.ndarray:
    """Noise draw i: n_y components, real and imaginary parts N(0, sigma_v^2 / 2)."""
    b, sign = _base(mc, i)
    return sign * _to_noise(spec, _normals(mc.seed, NOISE_STREAM, b, b + 1, 2 * spec.n_y))[0]


def _batch(mc: McConfig, stream: int, width: int, start: int, stop: Optional[int]) -> np.ndarray:
    stop = mc.n_samples if stop is None else stop
    if not 0 <= start <= stop <= mc.n_samples:
        raise IndexError(f"sample range [{start}, {stop}) outside [0, {mc.n_samples})")
    idx = np.arange(start, stop)
    if not idx.size:
        return np.empty((0, width))
    base = idx // 2 if mc.antithetic else idx
    z = _normals(mc.seed, stream, int(base[0]), int(base[-1]) + 1, width)[base - base[0]]
    if mc.antithetic:
        z = z * np.where(idx % 2, -1.0, 1.0)[:, None]
    return z


def sample_states(spec: ProblemSpec, mc: McConfig, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
    """sample_state for every index in [start, stop)."""
    return _to_state(spec, _batch(mc, STATE_STREAM, 1, start, stop))


def sample_noises(spec: ProblemSpec, mc: McConfig, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
    """sample_noise for every index in [start, stop), shape (count, n_y)."""
    return _to_noise(spec, _batch(mc, NOISE_STREAM, 2 * spec.n_y, start, stop))


# ---------------------------------------------------------------------------
# chunked accumulation


def _chunk_stats(vals: np.ndarray):
    mean = vals.mean(axis=0)
    return vals.shape[0], mean, ((vals - mean) ** 2).sum(axis=0), vals.sum(axis=0)


def _merge(a, b):
    # Chan et al. pairwise update of (count, mean, M2)
    na, ma, m2a, sa = a
    nb, mb, m2b, sb = b
    n = na + nb
    delta = mb - ma
    return n, ma + delta * (nb / n), m2a + m2b + delta * delta * (na * nb / n), sa + sb


def _accumulate(unit_values: Callable[[int, int], np.ndarray], n_units: int, workers: int):
    """Run unit_values over chunks of base indices and merge in chunk order."""
    bounds = [(lo, min(lo + CHUNK, n_units)) for lo in range(0, n_units, CHUNK)]

    def run(b):
        return _chunk_stats(unit_values(*b))

    if workers > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            stats = list(pool.map(run, bounds))
    else:
        stats = [run(b) for b in bounds]
    total = stats[0]
    for s in stats[1:]:
        total = _merge(total, s)
    return total


def _std_err(m2, n_units: int):
    return np.sqrt(m2 / (n_units - 1) / n_units) if n_units > 1 else np.zeros_like(m2)


# ---------------------------------------------------------------------------


def _log_ratios(spec: ProblemSpec, which: str, tp: TestPoint, x, v):
    if which == "joint":
        return log_ratio_joint(spec, v, x, tp.h1), log_ratio_joint(spec, v, x, tp.h2)
    if which == "conditional":
        return log_ratio_cond(spec, v, tp.x_cond, tp.h1), log_ratio_cond(spec, v, tp.x_cond, tp.h2)
    return log_ratio_prior(spec, x, tp.h1), log_ratio_prior(spec, x, tp.h2)


def _clipped_product(spec, which, tp, x, v, m: int) -> np.ndarray:
    l1, l2 = _log_ratios(spec, which, tp, x, v)
    # min(L^s, 1) = exp(min(s log L, 0)); s = 0 gives exactly 1
    e1 = np.minimum(tp.s1 * np.asarray(l1), 0.0) if tp.s1 else 0.0
    e2 = np.minimum(tp.s2 * np.asarray(l2), 0.0) if tp.s2 else 0.0
    return np.exp(e1 + e2) * np.ones(m)


def _draws(spec: ProblemSpec, mc: McConfig, which: str, lo: int, hi: int):
    x = v = None
    if which in ("joint", "prior"):
        x = _to_state(spec, _normals(mc.seed, STATE_STREAM, lo, hi, 1))
    if which in ("joint", "conditional"):
        v = _to_noise(spec, _normals(mc.seed, NOISE_STREAM, lo, hi, 2 * spec.n_y))
    return x, v


def _neg(a):
    return None if a is None else -a


def _check(which: str, tp: TestPoint):
    if which not in ("joint", "conditional", "prior"):
        raise ValueError(f"family must be joint, conditional or prior, got {which!r}")
    if which == "conditional" and tp.x_cond is None:
        raise ValueError("the conditional moment needs tp.x_cond")


def estimate_mu(
    spec: ProblemSpec,
    which: str,
    tp: TestPoint,
    mc: Optional[McConfig] = None,
    workers: int = 1,
) -> McEstimate:
    """Sample mean of min(L^s1, 1) * min(L^s2, 1) with its standard error.

    Draws (x, v) for the joint family, v for the conditional one (at
    tp.x_cond) and x for the prior one. With antithetic sampling the standard
    error is computed from the pair averages.
    """
    mc = mc or McConfig()
    _check(which, tp)

    def unit_values(lo, hi):
        x, v = _draws(spec, mc, which, lo, hi)
        vals = _clipped_product(spec, which, tp, x, v, hi - lo)
        if mc.antithetic:
            vals = 0.5 * (vals + _clipped_product(spec, which, tp, _neg(x), _neg(v), hi - lo))
        return vals[:, None]

    n, mean, m2, _ = _accumulate(unit_values, mc.n_units, workers)
    return McEstimate(float(mean[0]), float(_std_err(m2, n)[0]), mc.n_samples)


def _quadrant_indicators(spec, which, tp, x, v):
    """One-hot (samples, 4) membership of the regions V1..V4."""
    h = (tp.h1, tp.h2)
    prior = which == "prior"
    clipped = []
    for i, s in enumerate((tp.s1, tp.s2)):
        if prior:
            a = (x * h[i] + 0.5 * h[i] * h[i]) / spec.sigma_x**2
            t = 0.0
        else:
            d = diff(spec, x, h[i])
            a = _cross(v, d)
            nd = float(_sq_norm(d))
            b = nd / spec.sigma_v**2
            if which == "joint":
                b += (x * h[i] + 0.5 * h[i] * h[i]) / spec.sigma_x**2
            t = 0.5 * spec.sigma_v**2 * b
        clipped.append(orientation(s, prior) * (a - t) >= 0)
    cols = [(clipped[0] != act1) & (clipped[1] != act2) for _, act1, act2 in QUADRANTS]
    return np.stack(cols, axis=-1).astype(float)


def estimate_quadrants(
    spec: ProblemSpec,
    x: Optional[float],
    tp: TestPoint,
    mc: Optional[McConfig] = None,
    which: str = "joint",
    workers: int = 1,
) -> Tuple[McEstimate, McEstimate, McEstimate, McEstimate]:
    """Frequencies of the regions V1..V4 of the quadrant decomposition.

    For the joint and conditional families the noise is drawn at the fixed
    state ``x`` (thresholds built from b or b1); for the prior family ``x`` is
    ignored and the state itself is drawn. ``count`` holds the hits, and the
    four counts always add up to n_samples.
    """
    mc = mc or McConfig()
    if which not in ("joint", "conditional", "prior"):
        raise ValueError(f"family must be joint, conditional or prior, got {which!r}")
    if which != "prior" and x is None:
        raise ValueError("a state x is needed for the noise-side regions")

    def unit_values(lo, hi):
        xs, v = _draws(spec, mc, "prior" if which == "prior" else "conditional", lo, hi)
        xx = xs if which == "prior" else float(x)
        ind = _quadrant_indicators(spec, which, tp, xx, v)
        if mc.antithetic:
            ind = 0.5 * (ind + _quadrant_indicators(spec, which, tp, _neg(xs) if which == "prior" else xx, _neg(v)))
        return ind

    n, mean, m2, sums = _accumulate(unit_values, mc.n_units, workers)
    se = _std_err(m2, n)
    factor = 2 if mc.antithetic else 1
    return tuple(
        McEstimate(float(mean[k]), float(se[k]), mc.n_samples, int(round(sums[k] * factor)))
        for k in range(4)
    )
