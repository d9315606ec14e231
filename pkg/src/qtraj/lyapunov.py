"""Largest Lyapunov exponent by fiducial/neighbour renormalisation.

Works for any propagator that implements the small protocol below; the
classical flow and the Gaussian-closure quantum flow are provided.  Distances
are measured in dimensionless coordinates (z/dz, p/(m w dz), <J>/(J hbar)).
For noisy propagators the fiducial and neighbour consume identical
increments in every segment.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import classical as cl
from . import gaussian as ga
from .model import SystemParams
from .noise import GENERATOR_ID, NoiseStream, spawn_seeds

log = logging.getLogger(__name__)


class LyapunovError(RuntimeError):
    pass


# -- propagators --------------------------------------------------------------------

@dataclass
class ClassicalFlow:
    cp: cl.ClassicalParams
    dtau: float = 1e-3
    family: str = "classical"
    noisy: bool = False

    def coords(self, s) -> np.ndarray:
        return np.asarray(s, dtype=float)

    def with_coords(self, s, x: np.ndarray):
        return np.array(x, dtype=float)

    def advance(self, s, T: float, noise=None):
        return cl.advance_classical(s, T, self.dtau, self.cp)

    def steps(self, T: float) -> int:
        return int(round(T / self.dtau))


@dataclass
class GaussianFlow:
    params: SystemParams
    dt: float = 1e-4
    scheme: str = "strong-1.5"
    family: str = "gaussian"
    noisy: bool = True

    def coords(self, s: ga.GaussianState) -> np.ndarray:
        p = self.params
        mu = s.means
        return np.array([mu[0] / p.dz, mu[1] / p.pz, *(mu[2:] / p.spin_scale)])

    def with_coords(self, s: ga.GaussianState, x: np.ndarray) -> ga.GaussianState:
        p = self.params
        mu = np.array([x[0] * p.dz, x[1] * p.pz, *(np.asarray(x[2:]) * p.spin_scale)])
        # covariance copied so both states share all second cumulants
        return ga.GaussianState(mu, s.cov.copy())

    def advance(self, s: ga.GaussianState, T: float, noise):
        dW, dZ = noise
        out, _ = ga.advance(s, dW, dZ, self.dt, self.params, self.scheme)
        return out

    def steps(self, T: float) -> int:
        return int(round(T / (self.dt * self.params.omega)))


def phase_distance(a, b, flow=None) -> float:
    """Euclidean distance between two states in the dimensionless metric.

    Accepts raw coordinate vectors, :class:`ClassicalState` or
    :class:`GaussianState` (the latter needs ``flow`` for the scales).
    """
    ta, tb = type(a), type(b)
    if ta is not tb and not (isinstance(a, np.ndarray) and isinstance(b, np.ndarray)):
        raise TypeError(f"cannot compare states of different families ({ta.__name__}, {tb.__name__})")
    if isinstance(a, cl.ClassicalState):
        a, b = a.as_array(), b.as_array()
    elif isinstance(a, ga.GaussianState):
        if flow is None:
            raise ValueError("Gaussian states need a flow to set the scales")
        a, b = flow.coords(a), flow.coords(b)
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b)))


def _tangent_direction(x_fid: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Unit offset whose spin part is tangent to the fiducial spin sphere."""
    u = x_fid[2:]
    r = np.linalg.norm(u)
    d = np.array(delta, dtype=float)
    if r > 0:
        uh = u / r
        d[2:] -= np.dot(d[2:], uh) * uh
    nrm = np.linalg.norm(d)
    if nrm == 0:
        raise LyapunovError("neighbour direction has zero length")
    return d / nrm


def make_neighbor(flow, fiducial, direction: np.ndarray, eps: float):
    """Displace ``fiducial`` by ``eps`` along ``direction`` in the dimensionless metric.

    Position and momentum shift linearly; the spin part moves along the
    tangent plane and is scaled back to the fiducial spin length, which is
    a rotation of the mean spin by arctan(eps |dn| / r).
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    x = flow.coords(fiducial)
    if eps == 0:
        return flow.with_coords(fiducial, x)
    d = _tangent_direction(x, direction)
    out = x + eps * d
    u = x[2:]
    r = np.linalg.norm(u)
    shift = eps * np.linalg.norm(d[2:])
    if r > 0 and shift > 0:
        ratio = shift / r
        if 1.0 - np.arctan(ratio) / ratio > 0.01:
            raise LyapunovError(f"eps = {eps} distorts the spin rotation by more than 1%")
        v = u + eps * d[2:]
        out[2:] = v * (r / np.linalg.norm(v))
    return flow.with_coords(fiducial, out)


@dataclass
class LyapunovEstimate:
    lam: float
    log_stretch: np.ndarray
    running: np.ndarray
    n_segments: int
    eps: float
    T: float
    converged: bool
    meta: dict = field(default_factory=dict)

    def recompute(self) -> float:
        return float(np.sum(self.log_stretch) / (self.n_segments * self.T))


def _converged(running: np.ndarray, frac: float = 0.2, rtol: float = 0.02, atol: float = 2e-3) -> bool:
    """Spread of the running average over the final ``frac`` of segments.

    The absolute floor keeps regular orbits (lambda near 0) from never
    converging under a purely relative test.
    """
    tail = running[int(len(running) * (1 - frac)):]
    if len(tail) < 2:
        return False
    spread = tail.max() - tail.min()
    return bool(spread <= rtol * abs(running[-1]) + atol)


def lyapunov_run(flow, s0, eps: float, T: float, N: int, noise_seed: int) -> LyapunovEstimate:
    """Benettin-style estimate with neighbour restarts along the separation.

    One generator seeded by ``noise_seed`` draws the initial direction and,
    for noisy flows, the increments shared by fiducial and neighbour.
    """
    if eps <= 0 or T <= 0 or N <= 0:
        raise ValueError("eps, T and N must be positive")
    rng = np.random.Generator(np.random.PCG64(noise_seed))
    x0 = flow.coords(s0)
    direction = rng.standard_normal(len(x0))
    noise = None
    stream = None
    if flow.noisy:
        stream = NoiseStream(noise_seed, flow.dt)
    steps = flow.steps(T)
    fid = s0
    nb = make_neighbor(flow, fid, direction, eps)
    logs = np.empty(N)
    for i in range(N):
        if stream is not None:
            noise = stream.draw(steps)
        fid = flow.advance(fid, T, noise)
        nb = flow.advance(nb, T, noise)
        xf, xn = flow.coords(fid), flow.coords(nb)
        delta = xn - xf
        d = float(np.linalg.norm(delta))
        if not np.isfinite(d):
            raise LyapunovError(f"non-finite separation in segment {i}")
        if d < 1e-14:
            raise LyapunovError(f"separation underflow ({d:.2e}) in segment {i}; use a larger eps")
        logs[i] = np.log(d / eps)
        nb = make_neighbor(flow, fid, delta / d, eps)
    running = np.cumsum(logs) / (np.arange(1, N + 1) * T)
    return LyapunovEstimate(
        lam=float(logs.sum() / (N * T)),
        log_stretch=logs,
        running=running,
        n_segments=N,
        eps=eps,
        T=T,
        converged=_converged(running),
        meta={"seed": int(noise_seed), "generator": GENERATOR_ID, "family": flow.family},
    )


# -- ensembles ---------------------------------------------------------------------------

@dataclass
class EnsembleSpec:
    propagator: str  # "classical" or "gaussian"
    energy: float
    count: int
    eps: float = 1e-4
    T: float = 1.0
    N: int = 2000
    seed: int = 0
    action_ratio: float = 5.0
    c_tilde: float = 0.4
    params: SystemParams | None = None
    dt: float = 1e-3
    workers: int = 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["params"] = self.params.to_dict() if self.params else None
        return d


@dataclass
class LyapunovDistribution:
    samples: np.ndarray
    seeds: list
    converged: np.ndarray
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    initial_states: np.ndarray
    meta: dict = field(default_factory=dict)


def _flow_for(spec: EnsembleSpec):
    if spec.propagator == "classical":
        return ClassicalFlow(cl.ClassicalParams(spec.action_ratio, spec.c_tilde), dtau=spec.dt)
    if spec.propagator == "gaussian":
        if spec.params is None:
            raise ValueError("gaussian ensembles need SystemParams")
        return GaussianFlow(spec.params, dt=spec.dt)
    raise ValueError(f"unknown propagator {spec.propagator!r}")


def initial_state(spec: EnsembleSpec, child_seed: int):
    """Energy-shell sample for a fiducial (product coherent state for quantum runs)."""
    cp = cl.ClassicalParams(spec.action_ratio, spec.c_tilde)
    rng = np.random.Generator(np.random.PCG64(child_seed))
    s = cl.ShellSampler(spec.energy, cp).sample(rng)
    if spec.propagator == "classical":
        return s.as_array(), s.as_array()
    p = spec.params
    g = ga.product_coherent(s.z * p.dz, s.p * p.pz, s.n, p)
    return g, s.as_array()


def _one(args):
    spec, child = args
    flow = _flow_for(spec)
    s0, xc = initial_state(spec, child)
    # derived stream for the run so sampling and noise stay independent
    est = lyapunov_run(flow, s0, spec.eps, spec.T, spec.N, child ^ 0x9E3779B97F4A7C15)
    return est.lam, est.converged, xc


def histogram(samples: np.ndarray, bins: int = 20, lo: float | None = None, hi: float | None = None):
    lo = min(0.0, float(samples.min())) if lo is None else lo
    hi = float(samples.max()) if hi is None else hi
    if hi <= lo:
        hi = lo + 1.0
    counts, edges = np.histogram(samples, bins=bins, range=(lo, hi))
    return edges, counts


def lyapunov_distribution(spec: EnsembleSpec) -> LyapunovDistribution:
    seeds = spawn_seeds(spec.seed, spec.count)
    jobs = [(spec, s) for s in seeds]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as ex:
            results = list(ex.map(_one, jobs))
    else:
        results = [_one(j) for j in jobs]
    lam = np.array([r[0] for r in results])
    conv = np.array([r[1] for r in results])
    x0 = np.array([r[2] for r in results])
    edges, counts = histogram(lam)
    meta = {"spec": spec.to_dict(), "generator": GENERATOR_ID, "seed_scheme": "numpy.SeedSequence.spawn"}
    return LyapunovDistribution(lam, seeds, conv, edges, counts, x0, meta)


def histogram_intersection(a: np.ndarray, b: np.ndarray, bins: int = 20) -> float:
    """Overlap of two normalised histograms on a common binning (1 = identical)."""
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    ca, _ = np.histogram(a, bins=bins, range=(lo, hi))
    cb, _ = np.histogram(b, bins=bins, range=(lo, hi))
    return float(np.minimum(ca / ca.sum(), cb / cb.sum()).sum())
