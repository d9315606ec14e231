"""Figure-level experiments shared by the CLI, the scripts and the acceptance tests.

Each function takes an :class:`ExperimentConfig` and returns plain result
objects; nothing here writes files.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from shapely.geometry import MultiPoint

from . import classical as cl
from . import gaussian as ga
from . import lyapunov as ly
from . import sse
from .config import ConfigError, ExperimentConfig
from .noise import NoiseStream, spawn_seeds

log = logging.getLogger(__name__)

TRAJ_COLUMNS = ("tau", "z", "p", "nx", "ny", "nz", "energy")
SECTION_COLUMNS = ("tau", "z", "p", "nx", "ny", "nz")


def _direction(cfg: ExperimentConfig) -> np.ndarray:
    return ga.direction_from_angles(cfg.initial.theta, cfg.initial.phi)


def classical_initial(cfg: ExperimentConfig, z0: float, p0: float) -> np.ndarray:
    p = cfg.params()
    return np.array([z0 / p.dz, p0 / p.pz, *_direction(cfg)])


# -- plain trajectories ------------------------------------------------------------

def classical_runs(cfg: ExperimentConfig) -> list[cl.ClassicalTrajectory]:
    """Dimensionless classical trajectories for every configured initial condition."""
    cp = cfg.classical_params()
    n = cfg.numerics
    every = max(1, int(round(n.record_every * n.dt / n.dtau)))
    out = []
    for z0, p0 in cfg.initial_conditions():
        traj = cl.integrate_classical(classical_initial(cfg, z0, p0), n.tau_max, n.dtau, cp, every)
        out.append(traj)
    return out


def classical_rows(traj: cl.ClassicalTrajectory, cp: cl.ClassicalParams) -> np.ndarray:
    return np.column_stack([traj.tau, traj.states, cl.energy(traj.states, cp)])


def _steps(cfg: ExperimentConfig, dt: float) -> int:
    return int(round(cfg.numerics.tau_max / (cfg.system.omega * dt)))


def sse_runs(cfg: ExperimentConfig, seed: int) -> list[tuple[sse.Trajectory, NoiseStream]]:
    """Full SSE trajectories; initial condition i uses child seed i of ``seed``."""
    p = cfg.params()
    n = cfg.numerics
    grid = sse.GridSpec.spanning(n.n_grid, n.grid_span_zg * p.zg)
    out = []
    for (z0, p0), child in zip(cfg.initial_conditions(), spawn_seeds(seed, len(cfg.initial.z0))):
        wf = sse.product_state(grid, z0, p0, cfg.initial.theta, cfg.initial.phi, p)
        stream = NoiseStream(child, n.dt)
        dW, _ = stream.draw(_steps(cfg, n.dt)) if p.k > 0 else (np.zeros(_steps(cfg, n.dt)), None)
        prop = sse.SSEPropagator(p, n.dt, regrid_every=n.regrid_every, track_branches=True)
        _, traj, _ = prop.run(wf, dW, record_every=n.record_every)
        traj.meta["noise"] = stream.describe()
        out.append((traj, stream))
    return out


def gaussian_runs(cfg: ExperimentConfig, seed: int) -> list[tuple[sse.Trajectory, NoiseStream]]:
    p = cfg.params()
    n = cfg.numerics
    prop = ga.GaussianPropagator(p, n.dt, n.scheme)
    out = []
    for (z0, p0), child in zip(cfg.initial_conditions(), spawn_seeds(seed, len(cfg.initial.z0))):
        s0 = ga.product_coherent(z0, p0, _direction(cfg), p)
        stream = NoiseStream(child, n.dt)
        _, traj = prop.run(s0, stream, _steps(cfg, n.dt), n.record_every)
        traj.meta["noise"] = stream.describe()
        out.append((traj, stream))
    return out


def trajectory_means(traj: sse.Trajectory, cfg: ExperimentConfig) -> np.ndarray:
    """Dimensionless (z, p, n) rows of a quantum trajectory."""
    mu = np.column_stack([traj.col(c) for c in ("z_mean", "p_mean", "jx", "jy", "jz")])
    return cl.scaled_means(mu, cfg.params())


# -- motion diagnostics -------------------------------------------------------------

def spectral_modes(x: np.ndarray) -> float:
    """Effective number of spectral lines, exp of the spectral entropy.

    The signal is mean-removed and Hann-windowed.  Quasi-periodic motion
    puts its power in a few lines (small count); chaotic motion spreads it
    over a broadband continuum (large count).
    """
    x = np.asarray(x, dtype=float)
    x = (x - x.mean()) * np.hanning(len(x))
    power = np.abs(np.fft.rfft(x))[1:] ** 2
    q = power / power.sum()
    q = q[q > 0]
    return float(np.exp(-(q * np.log(q)).sum()))


@dataclass
class MotionSummary:
    modes: float  # effective spectral line count of nz over the window
    extent: float  # max - min of z in units of dz
    bounded: bool
    max_czz: float  # in units of zg^2
    extent_ratio: float  # squared extent over max Czz, both in zg^2


def summarize_motion(traj: sse.Trajectory, cfg: ExperimentConfig, window: float = 50.0) -> MotionSummary:
    """Boundedness, covariance scale and line count of nz for tau <= ``window``."""
    p = cfg.params()
    x = trajectory_means(traj, cfg)
    z = x[:, 0]
    extent = float(z.max() - z.min())
    czz = traj.col("czz") / p.zg**2
    ext_zg = extent * p.dz / p.zg
    keep = traj.col("tau") <= window + 1e-9
    return MotionSummary(
        modes=spectral_modes(x[keep, 4]),
        extent=extent,
        bounded=bool(np.all(np.isfinite(z)) and np.max(np.abs(z)) < 10),
        max_czz=float(czz.max()),
        extent_ratio=float(ext_zg**2 / czz.max()),
    )


def modes_threshold(cfg: ExperimentConfig, window: float = 50.0) -> tuple[float, float, float]:
    """Classical line counts of nz for the first two initial conditions and their geometric mean."""
    cp = cfg.classical_params()
    n = cfg.numerics
    every = max(1, int(round(n.record_every * n.dt / n.dtau)))
    counts = []
    for z0, p0 in cfg.initial_conditions()[:2]:
        traj = cl.integrate_classical(classical_initial(cfg, z0, p0), window, n.dtau, cp, every)
        counts.append(spectral_modes(traj.states[:, 4]))
    return counts[0], counts[1], float(np.sqrt(counts[0] * counts[1]))


# -- Fig. 1: branch collapse --------------------------------------------------------

@dataclass
class CollapseSummary:
    seed: int
    final_populations: np.ndarray
    branch: int
    max_departure: float  # max |<z>_quantum - z_classical| in units of dz


def collapse_summary(traj: sse.Trajectory, classical: cl.ClassicalTrajectory, cfg: ExperimentConfig, seed: int) -> CollapseSummary:
    pops = traj.meta["populations"][-1]
    zq = trajectory_means(traj, cfg)[:, 0]
    zc = np.interp(traj.col("tau"), classical.tau, classical.states[:, 0])
    return CollapseSummary(seed, pops, int(np.argmax(pops)), float(np.max(np.abs(zq - zc))))


# -- closure comparison -----------------------------------------------------------

@dataclass
class CompareReport:
    tau: np.ndarray
    means_diff: np.ndarray  # |x_sse - x_gauss| in the dimensionless metric
    cov_diff: np.ndarray  # Frobenius norm of the motional covariance difference over zg^2
    czz_sse: np.ndarray
    czz_gauss: np.ndarray
    scale: float  # diameter of the Gaussian trajectory in the dimensionless metric
    meta: dict = field(default_factory=dict)

    @property
    def rms_means(self) -> float:
        """RMS means difference as a fraction of the phase-space scale."""
        return float(np.sqrt(np.mean(self.means_diff**2)) / self.scale)

    @property
    def czz_rel(self) -> np.ndarray:
        return np.abs(self.czz_sse - self.czz_gauss) / self.czz_gauss

    @property
    def czz_rms_rel(self) -> float:
        return float(np.sqrt(np.mean(self.czz_rel**2)))

    @property
    def breakdown(self) -> bool:
        return self.rms_means > 0.05 or self.czz_rms_rel > 0.1

    def rows(self) -> np.ndarray:
        return np.column_stack([self.tau, self.means_diff, self.cov_diff, self.czz_sse, self.czz_gauss])


COMPARE_COLUMNS = ("tau", "means_diff", "cov_diff", "czz_sse", "czz_gauss")


def closure_compare(cfg: ExperimentConfig, seed: int, fine_dt: float | None = None) -> CompareReport:
    """Full SSE against the Gaussian closure driven by the same Wiener path.

    The Gaussian propagator runs at ``fine_dt`` (default: ``compare.gauss_dt``,
    or the SSE step when that is 0) and the SSE consumes the sums of
    consecutive fine increments.
    """
    p = cfg.params()
    if p.J > cfg.compare.j_cap and not cfg.compare.allow_large_j:
        raise ConfigError(
            f"J = {p.J} exceeds compare.j_cap = {cfg.compare.j_cap}; set compare.allow_large_j = true to override"
        )
    n = cfg.numerics
    if fine_dt is None:
        fine_dt = cfg.compare.gauss_dt or n.dt
    ratio = int(round(n.dt / fine_dt))
    if ratio < 1 or abs(ratio * fine_dt - n.dt) > 1e-12 * n.dt:
        raise ConfigError("numerics.dt must be an integer multiple of the Gaussian step")
    z0, p0 = cfg.initial_conditions()[0]
    steps = _steps(cfg, n.dt)
    stream = NoiseStream(seed, fine_dt)
    dw_f, dz_f = stream.draw(steps * ratio)
    dW = dw_f.reshape(steps, ratio).sum(axis=1)

    grid = sse.GridSpec.spanning(n.n_grid, n.grid_span_zg * p.zg)
    wf = sse.product_state(grid, z0, p0, cfg.initial.theta, cfg.initial.phi, p)
    _, tq, _ = sse.SSEPropagator(p, n.dt, regrid_every=n.regrid_every).run(wf, dW, record_every=n.record_every)

    s0 = ga.product_coherent(z0, p0, _direction(cfg), p)
    _, rows = ga.advance(s0, dw_f, dz_f, fine_dt, p, n.scheme, record_every=n.record_every * ratio)
    tg = ga.to_trajectory(rows, n.dt * n.record_every, p)

    xs, xg = trajectory_means(tq, cfg), trajectory_means(tg, cfg)
    diff = np.linalg.norm(xs - xg, axis=1)
    scale = float(np.linalg.norm(xg.max(axis=0) - xg.min(axis=0)))
    cs, cg = tq.covs[:, :2, :2], tg.covs[:, :2, :2]
    cov_diff = np.linalg.norm(cs - cg, axis=(1, 2)) / p.zg**2
    meta = {"seed": seed, "noise": stream.describe(), "sse_dt": n.dt, "gauss_dt": fine_dt, "discarded": tq.meta["discarded"]}
    return CompareReport(tq.col("tau"), diff, cov_diff, tq.col("czz"), tg.col("czz"), scale, meta)


# -- Fig. 3: islands ------------------------------------------------------------------

@dataclass
class Island:
    orbit: int  # index of the periodic orbit
    member: int  # which point of the orbit
    center: np.ndarray
    points: np.ndarray  # classical section points (z, p)

    def hull(self):
        return MultiPoint([tuple(x) for x in self.points]).convex_hull


@dataclass
class IslandStudy:
    energy: float  # absolute scaled energy of the shell
    orbits: list
    islands: list
    classical_sections: list  # per orbit, rows (tau, z, p, nx, ny, nz) of all launched tori
    quantum_sections: list  # per orbit, same layout
    p90: np.ndarray  # per orbit, 90th percentile distance to the orbit's island set
    gap: float

    @property
    def hulls_disjoint(self) -> bool:
        hulls = [isl.hull() for isl in self.islands]
        return not any(hulls[i].intersects(hulls[j]) for i in range(len(hulls)) for j in range(i))

    @property
    def quantum_follows(self) -> np.ndarray:
        return self.p90 < self.gap


def _orbit_guesses(cfg: ExperimentConfig) -> list[tuple[float, float, int]]:
    g = cfg.section.orbit_guesses
    return [(g[i], g[i + 1], int(g[i + 2])) for i in range(0, len(g), 3)]


def island_study(cfg: ExperimentConfig, seed: int, quantum: bool = True) -> IslandStudy:
    """Locate elliptic periodic orbits, surround them by tori, and launch quantum trajectories.

    Each orbit of period q yields q islands.  Island point sets are built
    from classical tori launched at the configured offsets (in z) from the
    orbit point; the inter-island gap is the smallest distance between points
    of different islands.
    """
    cp = cfg.classical_params()
    E = cfg.absolute_energy()
    n = cfg.numerics
    orbits, islands, csecs = [], [], []
    for z, p_, q in _orbit_guesses(cfg):
        orb = cl.find_periodic_orbit((z, p_), q, E, cp, dtau=n.dtau)
        if not orb.elliptic:
            log.warning("orbit near (%g, %g) is not elliptic (trace %.3f)", z, p_, orb.trace)
        rows = []
        for off in cfg.section.offsets:
            s = cl.section_state(orb.points[0, 0] + off, orb.points[0, 1], E, cp)
            if s is None:
                raise ValueError(f"offset {off} leaves the energy shell")
            rows.append(cl.poincare_array(s, cfg.section.tau_max, n.dtau, cp))
        rows = np.vstack(rows)
        which = np.argmin(np.linalg.norm(rows[:, None, 1:3] - orb.points[None], axis=2), axis=1)
        for j in range(q):
            islands.append(Island(len(orbits), j, orb.points[j], rows[which == j, 1:3]))
        orbits.append(orb)
        csecs.append(rows)

    gap = np.inf
    trees = [cKDTree(isl.points) for isl in islands]
    for i in range(len(islands)):
        for j in range(i):
            d, _ = trees[j].query(islands[i].points)
            gap = min(gap, float(d.min()))

    qsecs, p90 = [], []
    if quantum:
        p = cfg.params()
        for (orb, child) in zip(orbits, spawn_seeds(seed, len(orbits))):
            s = cl.section_state(orb.points[0, 0], orb.points[0, 1], E, cp)
            g0 = ga.product_coherent(s[0] * p.dz, s[1] * p.pz, s[2:], p)
            stream = NoiseStream(child, n.dt)
            steps = int(round(cfg.section.quantum_tau / (p.omega * n.dt)))
            _, traj = ga.GaussianPropagator(p, n.dt, n.scheme).run(g0, stream, steps, n.record_every)
            qs = cl.section_from_samples(traj.col("tau"), trajectory_means(traj, cfg))
            own = np.vstack([isl.points for isl in islands if isl.orbit == len(qsecs)])
            d, _ = cKDTree(own).query(qs[:, 1:3]) if len(qs) else (np.array([np.inf]), None)
            qsecs.append(qs)
            p90.append(float(np.percentile(d, 90)))
    return IslandStudy(E, orbits, islands, csecs, qsecs, np.array(p90), gap)


# -- Fig. 5: Lyapunov distributions ---------------------------------------------------

def ensemble_spec(cfg: ExperimentConfig, propagator: str) -> ly.EnsembleSpec:
    L = cfg.lyapunov
    cp = cfg.classical_params()
    quantum = propagator == "gaussian"
    return ly.EnsembleSpec(
        propagator=propagator,
        energy=cfg.absolute_energy(),
        count=L.quantum_count if quantum else L.count,
        eps=L.eps,
        T=L.T,
        N=L.quantum_N if quantum else L.N,
        seed=cfg.run.seed,
        action_ratio=cp.action_ratio,
        c_tilde=cp.c_tilde,
        params=cfg.params() if quantum else None,
        dt=L.quantum_dt if quantum else cfg.numerics.dtau,
        workers=cfg.run.workers,
    )


def lyapunov_study(cfg: ExperimentConfig) -> dict[str, ly.LyapunovDistribution]:
    which = ("classical", "gaussian") if cfg.lyapunov.propagator == "both" else (cfg.lyapunov.propagator,)
    return {name: ly.lyapunov_distribution(ensemble_spec(cfg, name)) for name in which}
