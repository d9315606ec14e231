"""Dimensionless classical spin-oscillator dynamics.

State vector ``s = (z, p, nx, ny, nz)`` with z = z/dz, p = p/(m w dz) and
n the unit magnetic-moment direction; time is tau = w t.  Only two numbers
enter: the action ratio ``a = I0/J`` and the transverse coupling ``c``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.optimize import brentq

from .model import SystemParams


@dataclass(frozen=True)
class ClassicalParams:
    action_ratio: float
    c_tilde: float

    @classmethod
    def from_system(cls, params: SystemParams) -> "ClassicalParams":
        return cls(params.action_ratio, params.c_tilde)


@dataclass
class ClassicalState:
    z: float
    p: float
    n: np.ndarray

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=float).reshape(3)

    def as_array(self) -> np.ndarray:
        return np.array([self.z, self.p, *self.n])

    @classmethod
    def from_array(cls, s) -> "ClassicalState":
        return cls(float(s[0]), float(s[1]), np.array(s[2:5], dtype=float))


@dataclass
class SectionPoint:
    tau: float
    z: float
    p: float
    nx: float
    nz: float


@dataclass
class ClassicalTrajectory:
    tau: np.ndarray
    states: np.ndarray
    meta: dict = field(default_factory=dict)


def _as_array(s) -> np.ndarray:
    if isinstance(s, ClassicalState):
        return s.as_array()
    return np.asarray(s, dtype=float).reshape(5)


@numba.njit(cache=True)
def _rhs(s, a, c, out):
    z, p, nx, ny, nz = s[0], s[1], s[2], s[3], s[4]
    out[0] = p
    out[1] = -z - nz
    out[2] = -a * z * ny
    out[3] = a * z * nx - c * a * nz
    out[4] = c * a * ny


@numba.njit(cache=True)
def _rk4(s, h, a, c, k1, k2, k3, k4, tmp):
    _rhs(s, a, c, k1)
    for i in range(5):
        tmp[i] = s[i] + 0.5 * h * k1[i]
    _rhs(tmp, a, c, k2)
    for i in range(5):
        tmp[i] = s[i] + 0.5 * h * k2[i]
    _rhs(tmp, a, c, k3)
    for i in range(5):
        tmp[i] = s[i] + h * k3[i]
    _rhs(tmp, a, c, k4)
    out = np.empty(5)
    for i in range(5):
        out[i] = s[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return out


@numba.njit(cache=True)
def _renorm(s):
    r = np.sqrt(s[2] * s[2] + s[3] * s[3] + s[4] * s[4])
    s[2] /= r
    s[3] /= r
    s[4] /= r


@numba.njit(cache=True)
def _integrate(s0, n_steps, h, a, c, record_every, renorm, rec):
    k1 = np.empty(5)
    k2 = np.empty(5)
    k3 = np.empty(5)
    k4 = np.empty(5)
    tmp = np.empty(5)
    s = s0.copy()
    nrec = 0
    if record_every > 0:
        rec[0, :] = s
        nrec = 1
    for i in range(n_steps):
        s = _rk4(s, h, a, c, k1, k2, k3, k4, tmp)
        if renorm:
            _renorm(s)
        if record_every > 0 and (i + 1) % record_every == 0:
            rec[nrec, :] = s
            nrec += 1
    return s, nrec


@numba.njit(cache=True)
def _section(s0, n_steps, h, a, c, tol, out):
    """RK4 run recording upward crossings of ny = 0.

    Each crossing is refined by bisection on the step length of a partial
    RK4 step taken from the left end point.
    """
    k1 = np.empty(5)
    k2 = np.empty(5)
    k3 = np.empty(5)
    k4 = np.empty(5)
    tmp = np.empty(5)
    s = s0.copy()
    cnt = 0
    for i in range(n_steps):
        nxt = _rk4(s, h, a, c, k1, k2, k3, k4, tmp)
        if s[3] < 0.0 and nxt[3] >= 0.0 and cnt < out.shape[0]:
            lo, hi = 0.0, h
            pt = nxt
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                pt = _rk4(s, mid, a, c, k1, k2, k3, k4, tmp)
                if abs(pt[3]) < tol:
                    break
                if pt[3] < 0.0:
                    lo = mid
                else:
                    hi = mid
            out[cnt, 0] = i * h + mid
            for j in range(5):
                out[cnt, 1 + j] = pt[j]
            cnt += 1
        s = nxt
    return cnt


# -- public API ------------------------------------------------------------------

def classical_rhs(s, cp: ClassicalParams) -> np.ndarray:
    s = _as_array(s)
    if abs(np.linalg.norm(s[2:]) - 1.0) > 1e-6:
        raise ValueError("|n| must be within 1e-6 of 1")
    out = np.empty(5)
    _rhs(s, cp.action_ratio, cp.c_tilde, out)
    return out


def energy(s, cp: ClassicalParams):
    """Scaled energy E/E0 = p^2/2 + z^2/2 + z nz + c nx (vectorised over rows)."""
    s = np.asarray(s.as_array() if isinstance(s, ClassicalState) else s, dtype=float)
    z, p, nx, nz = s[..., 0], s[..., 1], s[..., 2], s[..., 4]
    return 0.5 * p**2 + 0.5 * z**2 + z * nz + cp.c_tilde * nx


def integrate_classical(s0, tau_span: float, dtau: float, cp: ClassicalParams,
                        record_every: int = 1, renormalize: bool = False) -> ClassicalTrajectory:
    """Fixed-step RK4 integration of the dimensionless equations of motion."""
    if dtau <= 0:
        raise ValueError("dtau must be positive")
    s0 = _as_array(s0)
    n = int(round(abs(tau_span) / dtau))
    h = np.copysign(dtau, tau_span) if tau_span else dtau
    rec = np.empty((1 + n // max(record_every, 1), 5))
    s, nrec = _integrate(s0, n, h, cp.action_ratio, cp.c_tilde, record_every, renormalize, rec)
    states = rec[:nrec] if record_every > 0 else np.array([s0, s])
    tau = np.arange(nrec) * h * record_every if record_every > 0 else np.array([0.0, n * h])
    drift = float(np.max(np.abs(np.linalg.norm(states[:, 2:], axis=1) - 1.0)))
    meta = {"norm_drift": drift, "dtau": dtau, "renormalized": renormalize}
    if not drift <= 1e-6 and not renormalize:
        meta["warning"] = f"|n| drifted by {drift:.2e}"
        warnings.warn(meta["warning"], RuntimeWarning, stacklevel=2)
    return ClassicalTrajectory(tau, states, meta)


def advance_classical(s, tau: float, dtau: float, cp: ClassicalParams) -> np.ndarray:
    """Final state after ``tau`` without recording."""
    n = int(round(tau / dtau))
    s, _ = _integrate(_as_array(s), n, dtau, cp.action_ratio, cp.c_tilde, 0, False, np.empty((1, 5)))
    return s


def energy_minimum(cp: ClassicalParams) -> float:
    """Global minimum of the scaled Hamiltonian over (z, p, n)."""
    c = cp.c_tilde
    if c < 1.0:
        # minimum of z^2/2 - sqrt(z^2 + c^2) sits at z^2 = 1 - c^2
        return -0.5 * (1 + c * c)
    return -c


def allowed_z_range(E: float, cp: ClassicalParams) -> float:
    """Largest |z| with z^2/2 - sqrt(z^2 + c^2) <= E."""
    c = cp.c_tilde
    f = lambda z: 0.5 * z * z - np.sqrt(z * z + c * c) - E
    hi = 2.0 + np.sqrt(2 * abs(E)) + 2 * c
    while f(hi) < 0:
        hi *= 2
    zmin = np.sqrt(max(1 - c * c, 0.0))
    if f(zmin) > 0:
        raise ValueError(f"energy {E} lies below the minimum {energy_minimum(cp)}")
    return brentq(f, zmin, hi, xtol=1e-14)


@dataclass
class ShellSampler:
    """Rejection sampler on an energy shell.

    Proposals draw n uniformly on the sphere and z uniformly on the globally
    allowed interval; p follows from energy with a random sign.
    """

    E: float
    cp: ClassicalParams
    max_tries: int = 1_000_000
    proposals: int = 0
    accepted: int = 0

    def __post_init__(self):
        if self.E < energy_minimum(self.cp):
            raise ValueError(f"energy {self.E} lies below the minimum {energy_minimum(self.cp)}")
        self.zmax = allowed_z_range(self.E, self.cp)

    def sample(self, rng: np.random.Generator) -> ClassicalState:
        c = self.cp.c_tilde
        for _ in range(self.max_tries):
            self.proposals += 1
            v = rng.standard_normal(3)
            n = v / np.linalg.norm(v)
            z = rng.uniform(-self.zmax, self.zmax)
            rad = 2.0 * (self.E - 0.5 * z * z - z * n[2] - c * n[0])
            sign = 1.0 if rng.random() < 0.5 else -1.0
            if rad >= 0:
                self.accepted += 1
                return ClassicalState(z, sign * np.sqrt(rad), n)
        raise ValueError(f"no state at energy {self.E} found in {self.max_tries} proposals")

    @property
    def acceptance(self) -> float:
        return self.accepted / self.proposals if self.proposals else float("nan")


def sample_energy_shell(E: float, rng: np.random.Generator, cp: ClassicalParams) -> ClassicalState:
    return ShellSampler(E, cp).sample(rng)


def poincare_section(s0, tau_max: float, dtau: float, cp: ClassicalParams,
                     tol: float = 1e-10, max_points: int = 100_000) -> list[SectionPoint]:
    """Crossings of ny = 0 with dny/dtau > 0."""
    arr = poincare_array(s0, tau_max, dtau, cp, tol, max_points)
    return [SectionPoint(r[0], r[1], r[2], r[3], r[5]) for r in arr]


def poincare_array(s0, tau_max: float, dtau: float, cp: ClassicalParams,
                   tol: float = 1e-10, max_points: int = 100_000) -> np.ndarray:
    """Section crossings as rows (tau, z, p, nx, ny, nz)."""
    n = int(round(tau_max / dtau))
    out = np.empty((max_points, 6))
    cnt = _section(_as_array(s0), n, dtau, cp.action_ratio, cp.c_tilde, tol, out)
    return out[:cnt].copy()


def field_angle(s, cp: ClassicalParams) -> np.ndarray:
    """Angle between n and the local field axis (c, 0, z), in radians."""
    s = np.atleast_2d(s)
    f = np.stack([np.full(len(s), cp.c_tilde), np.zeros(len(s)), s[:, 0]], axis=1)
    f /= np.linalg.norm(f, axis=1)[:, None]
    cosang = np.clip(np.einsum("ij,ij->i", f, s[:, 2:]), -1, 1)
    return np.arccos(cosang)


# -- section map and periodic orbits ---------------------------------------------

def section_state(z: float, p: float, E: float, cp: ClassicalParams) -> np.ndarray | None:
    """State on the section ny = 0 (upward) with given (z, p) and energy.

    On ny = 0 the energy fixes z nz + c nx; of the two unit vectors solving
    it only one has dny/dtau > 0.  Returns None outside the allowed region.
    """
    c = cp.c_tilde
    R = E - 0.5 * p * p - 0.5 * z * z
    rho = np.hypot(z, c)
    if rho == 0 or abs(R) > rho:
        return None
    phi = np.arctan2(z, c) - np.arccos(R / rho)
    return np.array([z, p, np.cos(phi), 0.0, np.sin(phi)])


def section_map(zp, E: float, cp: ClassicalParams, q: int = 1, dtau: float = 1e-3,
                tau_cap: float = 100.0) -> np.ndarray:
    """q-th return of (z, p) to the section."""
    s = section_state(zp[0], zp[1], E, cp)
    if s is None:
        raise ValueError(f"({zp[0]}, {zp[1]}) is outside the energy shell")
    sec = poincare_array(s, tau_cap * q, dtau, cp, tol=1e-13, max_points=q + 2)
    sec = sec[sec[:, 0] > 10 * dtau]
    if len(sec) < q:
        raise ValueError("trajectory did not return to the section")
    return sec[q - 1, 1:3].copy()


@dataclass
class PeriodicOrbit:
    points: np.ndarray  # (q, 2) section coordinates
    period: int
    trace: float  # trace of the q-th return map Jacobian

    @property
    def elliptic(self) -> bool:
        return abs(self.trace) < 2.0


def find_periodic_orbit(guess, period: int, E: float, cp: ClassicalParams,
                        dtau: float = 1e-3, tol: float = 1e-10) -> PeriodicOrbit:
    """Newton search for a fixed point of the ``period``-th return map."""
    from scipy.optimize import root

    def resid(x):
        if section_state(x[0], x[1], E, cp) is None:
            return np.array([1e3, 1e3])
        return section_map(x, E, cp, period, dtau) - x

    sol = root(resid, np.asarray(guess, dtype=float), method="hybr", options={"eps": 1e-7})
    x = sol.x
    if not sol.success or np.max(np.abs(resid(x))) > tol:
        raise ValueError(f"no period-{period} orbit found near {guess}")
    h = 1e-6
    jac = np.column_stack([
        (section_map(x + h * e, E, cp, period, dtau) - section_map(x - h * e, E, cp, period, dtau)) / (2 * h)
        for e in np.eye(2)
    ])
    pts = [x]
    for _ in range(period - 1):
        pts.append(section_map(pts[-1], E, cp, 1, dtau))
    return PeriodicOrbit(np.array(pts), period, float(np.trace(jac)))


def section_from_samples(tau: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Upward ny = 0 crossings of a sampled trajectory by linear interpolation.

    ``s`` holds rows (z, p, nx, ny, nz) in dimensionless units (the spin
    part may have any length); output rows are (tau, z, p, nx, ny, nz).
    """
    s = np.asarray(s, dtype=float)
    ny = s[:, 3]
    i = np.nonzero((ny[:-1] < 0) & (ny[1:] >= 0))[0]
    f = (-ny[i] / (ny[i + 1] - ny[i]))[:, None]
    pts = s[i] + f * (s[i + 1] - s[i])
    t = tau[i] + f[:, 0] * (tau[i + 1] - tau[i])
    return np.column_stack([t, pts])


def scaled_means(means: np.ndarray, params: SystemParams) -> np.ndarray:
    """(z, p, Jx, Jy, Jz) means to (z/dz, p/(m w dz), <J>/(J hbar))."""
    means = np.atleast_2d(means)
    scale = np.array([params.dz, params.pz, *([params.spin_scale] * 3)])
    return means / scale
