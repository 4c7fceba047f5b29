"""Bounded zero-mean disturbance models and splittable seeded RNG streams.

Admitted kinds all have densities that are positive on a neighbourhood of
the origin, so small disturbances always carry probability mass; atom-only
models cannot be constructed.  Sampling requires an explicit caller-owned
generator, so concurrent trajectories never share mutable state; streams
are counter-based (Philox) and identified by (seed, path), which makes
simulation deterministic regardless of scheduling.
"""

from dataclasses import dataclass, field

import numpy as np

from .polytope import HPolytope

UNIFORM_BOX = "uniform-on-box"
TRUNCATED_GAUSSIAN = "truncated-gaussian"
MIXTURE_WITH_CORE = "mixture-with-core"

REJECTION_CAP = 10_000
PIN_SAMPLES = 10**6


def make_stream(seed, *path):
    """Independent counter-based generator for (seed, *path).

    Same (seed, path) always yields the same sequence; distinct paths are
    statistically independent.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in path))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class DisturbanceModel:
    """Bounded zero-mean i.i.d. disturbance with known support polytope."""

    kind: str
    support: HPolytope
    params: dict
    seed: int
    covariance: np.ndarray = field(default=None)
    lo: np.ndarray = field(default=None, repr=False)
    hi: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in (UNIFORM_BOX, TRUNCATED_GAUSSIAN, MIXTURE_WITH_CORE):
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if np.min(self.support.h) <= 0:
            raise ValueError("support must contain the origin in its interior")
        if not self.support.is_bounded():
            raise ValueError("support must be bounded")
        if self.covariance is not None:
            self.covariance = np.asarray(self.covariance, dtype=float)

    @property
    def dim(self):
        return self.support.dim


def uniform_box(lo, hi, seed=0):
    """Uniform distribution on the symmetric box [lo, hi]."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    _require_symmetric(lo, hi)
    widths = hi - lo
    cov = np.diag(widths**2 / 12.0)
    return DisturbanceModel(UNIFORM_BOX, HPolytope.box(lo, hi),
                            {"lo": lo.tolist(), "hi": hi.tolist()},
                            int(seed), cov, lo=lo, hi=hi)


def truncated_gaussian(sigma, lo, hi, seed=0):
    """Zero-mean Gaussian rejection-truncated to the symmetric box [lo, hi]."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    _require_symmetric(lo, hi)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), lo.shape).copy()
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    model = DisturbanceModel(TRUNCATED_GAUSSIAN, HPolytope.box(lo, hi),
                             {"sigma": sigma.tolist(), "lo": lo.tolist(),
                              "hi": hi.tolist()},
                             int(seed), None, lo=lo, hi=hi)
    model.covariance = _pin_covariance(model)
    return model


def mixture_with_core(core_halfwidth, core_weight, lo, hi, seed=0):
    """Mixture of a uniform core near the origin and a uniform outer box."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    _require_symmetric(lo, hi)
    core = np.broadcast_to(np.asarray(core_halfwidth, dtype=float), lo.shape).copy()
    if np.any(core <= 0) or np.any(core > hi):
        raise ValueError("core must be inside the support with positive width")
    if not 0.0 < core_weight < 1.0:
        raise ValueError("core weight must be in (0, 1)")
    model = DisturbanceModel(MIXTURE_WITH_CORE, HPolytope.box(lo, hi),
                             {"core_halfwidth": core.tolist(),
                              "core_weight": float(core_weight),
                              "lo": lo.tolist(), "hi": hi.tolist()},
                             int(seed), None, lo=lo, hi=hi)
    model.covariance = _pin_covariance(model)
    return model


def _require_symmetric(lo, hi):
    if lo.shape != hi.shape:
        raise ValueError("bound shape mismatch")
    if np.any(lo >= hi):
        raise ValueError("support must have positive volume (0 in interior)")
    if np.max(np.abs(lo + hi)) > 1e-12:
        raise ValueError("support box must be symmetric for a zero-mean model")


def _pin_covariance(model, n=PIN_SAMPLES):
    draws = sample_batch(model, make_stream(model.seed, 0xC0F), n)
    return np.cov(draws, rowvar=False).reshape(model.dim, model.dim)


def sample(model, rng):
    """One draw; every sample is hard-checked against the support."""
    return sample_batch(model, rng, 1)[0]


def sample_batch(model, rng, size):
    """Vectorized i.i.d. draws of shape (size, dim)."""
    size = int(size)
    if model.kind == UNIFORM_BOX:
        out = rng.uniform(model.lo, model.hi, size=(size, model.dim))
    elif model.kind == TRUNCATED_GAUSSIAN:
        out = _rejection_gaussian(model, rng, size)
    else:
        sigma_pick = rng.random(size)
        core = np.asarray(model.params["core_halfwidth"])
        inner = rng.uniform(-core, core, size=(size, model.dim))
        outer = rng.uniform(model.lo, model.hi, size=(size, model.dim))
        take_inner = sigma_pick < model.params["core_weight"]
        out = np.where(take_inner[:, None], inner, outer)
    inside = model.support.contains_all(out, tol=0.0)
    if not np.all(inside):
        raise RuntimeError("sampler produced a point outside the support")
    return out


def _rejection_gaussian(model, rng, size):
    sigma = np.asarray(model.params["sigma"])
    out = np.empty((size, model.dim))
    pending = np.arange(size)
    for _ in range(REJECTION_CAP):
        cand = rng.normal(0.0, sigma, size=(pending.size, model.dim))
        ok = np.all((cand >= model.lo) & (cand <= model.hi), axis=1)
        out[pending[ok]] = cand[ok]
        pending = pending[~ok]
        if pending.size == 0:
            return out
    raise RuntimeError("rejection sampling cap exceeded; support and density "
                       "are badly mismatched")


def covariance(model):
    """Exact for uniform boxes, pinned 1e6-draw estimate otherwise."""
    return model.covariance


def tail_quantile(model, direction, horizon_map, p, n_samples=10**5, seed=0):
    """Conservative empirical p-quantile of direction' M w_stacked.

    The stacked disturbance consists of horizon_map.shape[1] / dim i.i.d.
    draws; the returned value is the order statistic at ceil(p n) shifted up
    by ceil(sqrt(n p (1-p))) positions, clipped to the worst sample, so it
    over-covers p with high probability.  Deterministic given the seed.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError("p must be in (0, 1]")
    n_samples = int(n_samples)
    if n_samples < 1000:
        raise ValueError("need at least 1e3 samples")
    direction = np.atleast_1d(np.asarray(direction, dtype=float))
    M = np.atleast_2d(np.asarray(horizon_map, dtype=float))
    if M.shape[0] != direction.shape[0]:
        raise ValueError("direction/horizon_map mismatch")
    if M.shape[1] % model.dim != 0:
        raise ValueError("horizon_map width must be a multiple of the "
                         "disturbance dimension")
    row = direction @ M
    if not np.any(row):
        return 0.0
    q = M.shape[1] // model.dim
    draws = sample_batch(model, make_stream(seed, 0x7A11), n_samples * q)
    vals = draws.reshape(n_samples, q * model.dim) @ row
    vals.sort()
    idx = int(np.ceil(p * n_samples)) - 1
    idx += int(np.ceil(np.sqrt(n_samples * p * (1.0 - p))))
    return float(vals[min(idx, n_samples - 1)])


def to_json(model):
    return {"kind": model.kind, "support": model.support.to_json(),
            "params": model.params, "seed": model.seed}


def from_json(obj):
    params = obj["params"]
    kind = obj["kind"]
    seed = int(obj["seed"])
    if kind == UNIFORM_BOX:
        return uniform_box(params["lo"], params["hi"], seed)
    if kind == TRUNCATED_GAUSSIAN:
        return truncated_gaussian(params["sigma"], params["lo"], params["hi"], seed)
    if kind == MIXTURE_WITH_CORE:
        return mixture_with_core(params["core_halfwidth"], params["core_weight"],
                                 params["lo"], params["hi"], seed)
    raise ValueError(f"unknown disturbance kind {kind!r}")
