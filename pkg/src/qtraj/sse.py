"""Full conditioned wavefunction under continuous position measurement.

The wavefunction lives on a uniform position grid times the 2J+1 spin levels.
To keep the grid small the stored array is an *envelope*: the physical
amplitude is ``psi(z) = exp(i pc z / hbar) * amps(z)`` where ``pc`` is a
momentum offset carried by the grid, so fast-moving packets never alias.
Both ``zc`` and ``pc`` follow the packet through :func:`regrid`.

One step of :func:`sse_step` is the symmetric split

    exp(-M dt/2) K(dt/2) P(dt) K(dt/2) exp(-M dt/2)

with Cayley-form kinetic (K) and potential (P) factors.  The measurement
factor uses ``M = 2k (z - y)^2`` with ``y = <z> + dW / (sqrt(8k) dt)``, which
expands to the linear SSE ``d psi = [(-iH/hbar - k z^2) dt
+ (4k<z> dt + sqrt(2k) dW) z] psi`` term by term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import eigh

from .model import SystemParams, adiabatic_populations, branch_entropy, ladder_elements, spin_coherent, spin_matrices

log = logging.getLogger(__name__)

OBS = ("z", "p", "jx", "jy", "jz")


class GridError(RuntimeError):
    """The state no longer fits the grid; rerun with a larger n_z or span."""


@dataclass(frozen=True)
class GridSpec:
    n: int
    dz: float
    zc: float = 0.0
    pc: float = 0.0
    hbar: float = 1.0

    def __post_init__(self):
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError(f"grid size must be a power of two >= 4, got {self.n}")
        if self.dz <= 0:
            raise ValueError("grid spacing must be positive")

    @classmethod
    def spanning(cls, n: int, span: float, zc: float = 0.0, pc: float = 0.0, hbar: float = 1.0):
        dz = span / n
        return cls(n=n, dz=dz, zc=round(zc / dz) * dz, pc=pc, hbar=hbar)

    @property
    def z(self) -> np.ndarray:
        return self.zc + (np.arange(self.n) - self.n // 2) * self.dz

    @property
    def kappa(self) -> np.ndarray:
        """Momentum grid relative to ``pc`` in FFT order."""
        return 2 * np.pi * self.hbar * np.fft.fftfreq(self.n, self.dz)

    @property
    def dp(self) -> float:
        return 2 * np.pi * self.hbar / (self.n * self.dz)

    @property
    def p(self) -> np.ndarray:
        return self.pc + self.kappa

    def to_dict(self) -> dict:
        return {"n": self.n, "dz": self.dz, "zc": self.zc, "pc": self.pc}


@dataclass
class WaveFunction:
    grid: GridSpec
    amps: np.ndarray
    discarded: float = 0.0

    @property
    def dim(self) -> int:
        return self.amps.shape[1]

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amps) ** 2) * self.grid.dz)

    def normalized(self) -> "WaveFunction":
        return replace(self, amps=self.amps / np.sqrt(self.norm()))

    def density(self) -> np.ndarray:
        return np.sum(np.abs(self.amps) ** 2, axis=1)

    def psi(self) -> np.ndarray:
        """Physical amplitudes including the momentum-offset phase."""
        z = self.grid.z
        return self.amps * np.exp(1j * self.grid.pc * z / self.grid.hbar)[:, None]

    def copy(self) -> "WaveFunction":
        return replace(self, amps=self.amps.copy())


@dataclass
class MeasurementRecord:
    """Record samples y_i = <z>_i + dW_i / (sqrt(8k) dt)."""

    y: np.ndarray
    z_mean: np.ndarray
    dt: float
    k: float
    seed: int | None = None

    def increments(self) -> np.ndarray:
        return (self.y - self.z_mean) * np.sqrt(8 * self.k) * self.dt


# -- construction -----------------------------------------------------------

def product_state(
    grid: GridSpec, z0: float, p0: float, theta: float, phi: float, params: SystemParams
) -> WaveFunction:
    """Motional coherent state times spin coherent state, on ``grid``.

    The grid is moved so that its centre and momentum offset sit on (z0, p0).
    """
    zg = params.zg
    dp = grid.dp
    grid = replace(grid, zc=round(z0 / grid.dz) * grid.dz, pc=round(p0 / dp) * dp)
    z = grid.z
    if z[0] > z0 - 6 * zg or z[-1] < z0 + 6 * zg:
        raise GridError("grid must cover z0 +- 6 zg")
    if grid.n * grid.dz < 12 * zg or np.pi * params.hbar / grid.dz < 6 * params.hbar / (2 * zg):
        raise GridError("grid too coarse for a ground-state-width packet")
    env = np.exp(-((z - z0) ** 2) / (4 * zg**2) + 1j * (p0 - grid.pc) * z / params.hbar)
    chi = spin_coherent(params.J, theta, phi)
    wf = WaveFunction(grid, env[:, None] * chi[None, :])
    return wf.normalized()


# -- elementary operators -------------------------------------------------------

def _apply_spin(amps: np.ndarray, J: float, hbar: float):
    """Return (Jx amps, Jy amps, Jz amps) using the ladder structure."""
    a = ladder_elements(J, hbar)
    up = np.zeros_like(amps)
    dn = np.zeros_like(amps)
    up[:, :-1] = a * amps[:, 1:]
    dn[:, 1:] = a * amps[:, :-1]
    m = J - np.arange(amps.shape[1])
    return 0.5 * (up + dn), (up - dn) / 2j, hbar * m * amps


def _apply_p(wf: WaveFunction) -> np.ndarray:
    g = wf.grid
    return g.pc * wf.amps + np.fft.ifft(g.kappa[:, None] * np.fft.fft(wf.amps, axis=0), axis=0)


def kinetic_half_step(wf: WaveFunction, dt: float, params: SystemParams) -> WaveFunction:
    """Cayley factor (1 - i T dt/4hbar) / (1 + i T dt/4hbar) in momentum space.

    The kinetic energy is measured from ``pc^2/2m`` (a global phase) so the
    Cayley argument stays small for fast packets.
    """
    g = wf.grid
    fac = _kinetic_factor(g, dt, params)
    amps = np.fft.ifft(fac[:, None] * np.fft.fft(wf.amps, axis=0), axis=0)
    return replace(wf, amps=amps)


def _kinetic_factor(g: GridSpec, dt: float, params: SystemParams) -> np.ndarray:
    # (1 - ix)/(1 + ix) == exp(-2i arctan x); the latter has unbiased modulus rounding
    T = (g.pc * g.kappa + 0.5 * g.kappa**2) / params.m
    return np.exp(-2j * np.arctan(0.25 * T * dt / params.hbar))


class PotentialFactor:
    """Forward-eliminated tridiagonal systems (1 + i V dt/2hbar) on a grid.

    V = m w^2 z^2/2 + b z Jz + c Jx - v_ref is diagonal in z and tridiagonal
    in m, so each grid point gets its own Thomas elimination.  Factorisations
    are reusable while (grid centre, dt, v_ref) stay fixed.
    """

    def __init__(self, z: np.ndarray, dt: float, params: SystemParams, v_ref: float = 0.0):
        alpha = 0.5 * dt / params.hbar
        d = params.dim
        m = params.J - np.arange(d)
        V0 = 0.5 * params.m * params.omega**2 * z**2 - v_ref
        diag = 1 + 1j * alpha * (V0[:, None] + params.b * params.hbar * z[:, None] * m[None, :])
        off = 1j * alpha * 0.5 * params.c * ladder_elements(params.J, params.hbar)
        cp = np.empty((len(z), max(d - 1, 0)), dtype=complex)
        den = np.empty((len(z), d), dtype=complex)
        den[:, 0] = diag[:, 0]
        for i in range(1, d):
            cp[:, i - 1] = off[i - 1] / den[:, i - 1]
            den[:, i] = diag[:, i] - off[i - 1] * cp[:, i - 1]
        if np.min(np.abs(den)) < 1e-300:
            raise ZeroDivisionError("zero pivot in tridiagonal potential solve")
        self.off = off
        self.cp = cp
        self.den = den

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        d = rhs.shape[1]
        y = np.empty_like(rhs)
        y[:, 0] = rhs[:, 0] / self.den[:, 0]
        for i in range(1, d):
            y[:, i] = (rhs[:, i] - self.off[i - 1] * y[:, i - 1]) / self.den[:, i]
        for i in range(d - 2, -1, -1):
            y[:, i] -= self.cp[:, i] * y[:, i + 1]
        return y

    def apply(self, amps: np.ndarray) -> np.ndarray:
        # (1 - iaV)(1 + iaV)^-1 = 2 (1 + iaV)^-1 - 1
        return 2.0 * self.solve(amps) - amps


def potential_cayley_step(
    wf: WaveFunction, dt: float, params: SystemParams, v_ref: float = 0.0
) -> WaveFunction:
    """Apply (1 - i V dt/2hbar)(1 + i V dt/2hbar)^-1 pointwise in z.

    ``v_ref`` is a constant energy subtracted from V; it only changes the
    global phase.
    """
    fac = PotentialFactor(wf.grid.z, dt, params, v_ref)
    return replace(wf, amps=fac.apply(wf.amps))


def mean_z(wf: WaveFunction) -> float:
    rho = wf.density()
    return float(np.dot(rho, wf.grid.z) / rho.sum())


def _measurement_factor(z: np.ndarray, y: float, dt: float, k: float) -> np.ndarray:
    # exp(-k dt ((z-y)^2 - (zc-y)^2)); the subtracted constant keeps amplitudes O(1)
    ref = z[len(z) // 2]
    return np.exp(-k * dt * ((z - y) ** 2 - (ref - y) ** 2))


def record_sample(zmean: float, dW: float, dt: float, k: float) -> float:
    return zmean + dW / (np.sqrt(8 * k) * dt)


def measurement_step(wf: WaveFunction, dW: float, dt: float, params: SystemParams):
    """Full measurement factor exp(-2k dt (z - y)^2) followed by renormalisation.

    Returns ``(wf, y)``; with k = 0 the state is untouched and ``y`` is None.
    """
    k = params.k
    if k == 0:
        if dW != 0:
            raise ValueError("dW given but k = 0: there is no measurement channel")
        return wf, None
    y = record_sample(mean_z(wf), dW, dt, k)
    fac = _measurement_factor(wf.grid.z, y, dt, 2 * k)
    return replace(wf, amps=wf.amps * fac[:, None]).normalized(), y


def sse_step(wf: WaveFunction, dW: float, dt: float, params: SystemParams, v_ref: float = 0.0):
    """One split-operator step of the conditioned evolution; returns (wf, y)."""
    k = params.k
    if k == 0 and dW != 0:
        raise ValueError("dW given but k = 0: there is no measurement channel")
    amps = wf.amps
    y = None
    if k > 0:
        y = record_sample(mean_z(wf), dW, dt, k)
        half = _measurement_factor(wf.grid.z, y, dt, k)[:, None]
        amps = amps * half
    out = kinetic_half_step(replace(wf, amps=amps), dt, params)
    out = potential_cayley_step(out, dt, params, v_ref)
    out = kinetic_half_step(out, dt, params)
    if k > 0:
        out = replace(out, amps=out.amps * half)
    return out.normalized(), y


# -- observables ----------------------------------------------------------------

@dataclass
class Moments:
    means: np.ndarray
    cov: np.ndarray
    norm: float
    skew_z: float = 0.0

    @property
    def uncertainty(self) -> float:
        c = self.cov
        return float(c[0, 0] * c[1, 1] - c[0, 1] ** 2)


def expectations(wf: WaveFunction, params: SystemParams) -> Moments:
    """Means and symmetrised covariance of (z, p, Jx, Jy, Jz).

    All five observables are Hermitian and z, p commute with the spin, so
    1/2 <AB + BA> = Re <A psi | B psi>.
    """
    g = wf.grid
    nrm = wf.norm()
    phi = wf.amps / np.sqrt(nrm)
    ops = [g.z[:, None] * phi, _apply_p(replace(wf, amps=phi))]
    ops.extend(_apply_spin(phi, params.J, params.hbar))
    flat = np.stack([o.ravel() for o in ops])
    means = np.real(flat @ phi.ravel().conj()) * g.dz
    second = np.real(flat.conj() @ flat.T) * g.dz
    cov = second - np.outer(means, means)
    cov = 0.5 * (cov + cov.T)
    rho = np.sum(np.abs(phi) ** 2, axis=1) * g.dz
    dzs = g.z - means[0]
    var = np.dot(rho, dzs**2)
    skew = np.dot(rho, dzs**3) / var**1.5 if var > 0 else 0.0
    return Moments(means=means, cov=cov, norm=nrm, skew_z=float(skew))


# -- grid management --------------------------------------------------------

def _inner_mass(weights: np.ndarray) -> float:
    n = len(weights)
    lo, hi = n // 6, n - n // 6
    return float(weights[lo:hi].sum() / weights.sum())


def regrid(wf: WaveFunction, tol: float = 1e-4) -> WaveFunction:
    """Recentre the grid on the packet in position and momentum.

    Shifts are whole grid steps (an index roll with zero fill in z, a phase
    ramp that rolls the FFT bins in p).  Probability pushed off either end is
    added to ``discarded``.
    """
    g = wf.grid
    rho = wf.density()
    total = rho.sum()
    if _inner_mass(rho) < 1 - tol:
        raise GridError(
            "state is not localised within the inner 2/3 of the position grid; increase n_z or the span"
        )
    spec = np.sum(np.abs(np.fft.fft(wf.amps, axis=0)) ** 2, axis=1)
    spec_c = np.fft.fftshift(spec)
    if _inner_mass(spec_c) < 1 - tol:
        raise GridError(
            "state is not localised within the inner 2/3 of the momentum grid; decrease the grid spacing"
        )
    zmean = float(np.dot(rho, g.z) / total)
    pmean = g.pc + float(np.dot(spec, g.kappa) / spec.sum())
    shift = int(round((zmean - g.zc) / g.dz))
    pshift = int(round((pmean - g.pc) / g.dp))
    if shift == 0 and pshift == 0:
        return wf
    amps = wf.amps
    lost = 0.0
    if pshift:
        # bins that wrap around the momentum edge count as discarded
        order = np.argsort(g.kappa)
        edge = order[: pshift] if pshift > 0 else order[pshift:]
        lost += float(spec[edge].sum() / spec.sum())
        amps = amps * np.exp(-1j * pshift * g.dp * g.z / g.hbar)[:, None]
    if shift:
        out = np.zeros_like(amps)
        if shift > 0:
            out[:-shift] = amps[shift:]
            lost += float(rho[:shift].sum() / total)
        else:
            out[-shift:] = amps[:shift]
            lost += float(rho[shift:].sum() / total)
        amps = out
    grid = replace(g, zc=g.zc + shift * g.dz, pc=g.pc + pshift * g.dp)
    return WaveFunction(grid, amps, wf.discarded + lost)


def displace_rotate(
    wf: WaveFunction,
    dz: float,
    dp: float,
    axis=(0.0, 0.0, 1.0),
    dtheta: float = 0.0,
    params: SystemParams | None = None,
) -> WaveFunction:
    """exp(i(dp z - dz p)/hbar) on the motion and exp(-i dtheta n.J/hbar) on the spin.

    The translation is a linear phase in momentum space, exact for
    band-limited states.
    """
    g = wf.grid
    hbar = g.hbar
    amps = wf.amps
    if dz:
        ph = np.exp(-1j * g.kappa * dz / hbar)
        amps = np.fft.ifft(ph[:, None] * np.fft.fft(amps, axis=0), axis=0)
        amps = amps * np.exp(-1j * g.pc * dz / hbar)
    if dp:
        amps = amps * np.exp(1j * dp * g.z / hbar)[:, None] * np.exp(-0.5j * dp * dz / hbar)
    if dtheta:
        J = (wf.dim - 1) / 2
        ops = spin_matrices(J, hbar)
        n = np.asarray(axis, dtype=float)
        n = n / np.linalg.norm(n)
        gen = n[0] * ops.Jx + n[1] * ops.Jy + n[2] * ops.Jz
        w, v = eigh(gen)
        U = (v * np.exp(-1j * dtheta * w / hbar)) @ v.conj().T
        amps = amps @ U.T
    return WaveFunction(g, np.ascontiguousarray(amps), wf.discarded)


# -- trajectory driver ------------------------------------------------------------

COLUMNS = (
    "tau", "z_mean", "p_mean", "jx", "jy", "jz", "record_y",
    "czz", "cpp", "czp", "czjx", "czjy", "czjz", "norm_defect", "branch_entropy",
)


@dataclass
class Trajectory:
    """Sampled trajectory with the shared CSV column layout."""

    columns: tuple
    rows: np.ndarray
    meta: dict = field(default_factory=dict)
    covs: np.ndarray | None = None

    def col(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]


def _row(t, mom: Moments, y, defect, entropy):
    mu, C = mom.means, mom.cov
    return [
        t, mu[0], mu[1], mu[2], mu[3], mu[4], np.nan if y is None else y,
        C[0, 0], C[1, 1], C[0, 1], C[0, 2], C[0, 3], C[0, 4], defect, entropy,
    ]


@dataclass
class SSEPropagator:
    """Drives the split step with periodic recentering and cached factors.

    Works on raw amplitude arrays between regrids; the result is identical to
    repeated :func:`sse_step` calls up to the choice of ``v_ref``.
    """

    params: SystemParams
    dt: float = 1e-3
    regrid_every: int = 10
    track_branches: bool = False

    def __post_init__(self):
        self._pot_key = self._kin_key = None

    def _factors(self, g: GridSpec):
        p, dt = self.params, self.dt
        pkey = (g.zc, g.n, g.dz)
        if pkey != self._pot_key:
            # constant energy offset near the packet; only alters the global phase
            v_ref = 0.5 * p.m * p.omega**2 * g.zc**2
            self._pot = PotentialFactor(g.z, dt, p, v_ref)
            self._zmeas = g.z - g.z[g.n // 2]
            self._pot_key = pkey
        kkey = (g.pc, g.n, g.dz)
        if kkey != self._kin_key:
            self._kin = _kinetic_factor(g, dt, p)[:, None]
            self._kin_key = kkey
        return self._pot, self._kin

    def _advance(self, amps: np.ndarray, g: GridSpec, zmean: float, dW: float):
        p, dt = self.params, self.dt
        pot, kin = self._factors(g)
        y = None
        if p.k > 0:
            y = record_sample(zmean, dW, dt, p.k)
            u = self._zmeas
            off = g.z[g.n // 2] - y
            half = np.exp(-p.k * dt * (u * (u + 2 * off)))[:, None]
            amps = amps * half
        elif dW != 0:
            raise ValueError("dW given but k = 0: there is no measurement channel")
        amps = np.fft.ifft(kin * np.fft.fft(amps, axis=0), axis=0)
        before = np.vdot(amps, amps).real
        amps = pot.apply(amps)
        defect = abs(np.vdot(amps, amps).real / before - 1.0)
        amps = np.fft.ifft(kin * np.fft.fft(amps, axis=0), axis=0)
        if p.k > 0:
            amps *= half
        rho = np.einsum("ij,ij->i", amps.real, amps.real) + np.einsum("ij,ij->i", amps.imag, amps.imag)
        total = rho.sum()
        amps /= np.sqrt(total * g.dz)
        return amps, y, defect, float(np.dot(rho, g.z) / total)

    def step(self, wf: WaveFunction, dW: float):
        amps, y, defect, _ = self._advance(wf.amps, wf.grid, mean_z(wf), dW)
        return WaveFunction(wf.grid, amps, wf.discarded), y, defect

    def run(self, wf: WaveFunction, dW: np.ndarray, record_every: int = 1):
        """Propagate through ``len(dW)`` steps, sampling every ``record_every``.

        Returns ``(final wf, Trajectory, MeasurementRecord)``.
        """
        p = self.params
        n = len(dW)
        rows, covs, pops = [], [], []
        ys = np.full(n, np.nan)
        zs = np.empty(n)
        defect_acc = 0.0

        def sample(t, wf, y):
            mom = expectations(wf, p)
            ent = np.nan
            if self.track_branches:
                pops.append(adiabatic_populations(wf, p, tol=1e-6))
                ent = branch_entropy(pops[-1])
            rows.append(_row(t, mom, y, defect_acc, ent))
            covs.append(mom.cov)

        sample(0.0, wf, None)
        zmean = mean_z(wf)
        for i in range(n):
            if self.regrid_every and i % self.regrid_every == 0:
                wf = regrid(wf)
            zs[i] = zmean
            amps, y, defect, zmean = self._advance(wf.amps, wf.grid, zmean, float(dW[i]))
            wf = WaveFunction(wf.grid, amps, wf.discarded)
            defect_acc += defect
            if y is not None:
                ys[i] = y
            if (i + 1) % record_every == 0:
                sample((i + 1) * self.dt * p.omega, wf, y)
        meta = {"discarded": wf.discarded}
        if pops:
            meta["populations"] = np.array(pops)
        traj = Trajectory(COLUMNS, np.array(rows), meta, np.array(covs))
        rec = MeasurementRecord(ys, zs, self.dt, p.k)
        return wf, traj, rec
