"""Second-cumulant closure: conditioned means plus a matrix Riccati covariance.

State vector layout used by the compiled kernels: ``y[0:5]`` are the means of
(z, p, Jx, Jy, Jz) and ``y[5:30]`` the row-major 5x5 covariance.  The
covariance obeys dC/dt = U + C V C + W C + C W^T with no noise of its own;
the means are driven by sqrt(8k) C[z, :] dW.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .model import SystemParams
from .noise import NoiseStream
from .sse import COLUMNS, Trajectory

SCHEMES = ("euler-maruyama", "strong-1.5")
NY = 30


class CovarianceError(RuntimeError):
    """The covariance lost positive semidefiniteness; reduce the step."""


@dataclass
class GaussianState:
    means: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float).reshape(5)
        self.cov = np.asarray(self.cov, dtype=float).reshape(5, 5)

    def pack(self) -> np.ndarray:
        return np.concatenate([self.means, self.cov.ravel()])

    @classmethod
    def unpack(cls, y: np.ndarray) -> "GaussianState":
        return cls(y[:5].copy(), y[5:].reshape(5, 5).copy())

    def copy(self) -> "GaussianState":
        return GaussianState(self.means.copy(), self.cov.copy())


def product_coherent(z0: float, p0: float, n, params: SystemParams) -> GaussianState:
    """Moments of a motional coherent state times a spin coherent state along ``n``.

    The spin block is the stretched-state covariance (J hbar^2/2)(1 - n n^T).
    """
    n = np.asarray(n, dtype=float)
    n = n / np.linalg.norm(n)
    S = params.spin_scale
    C = np.zeros((5, 5))
    C[0, 0] = params.zg**2
    C[1, 1] = params.hbar**2 / (4 * params.zg**2)
    C[2:, 2:] = 0.5 * params.J * params.hbar**2 * (np.eye(3) - np.outer(n, n))
    return GaussianState(np.array([z0, p0, *(S * n)]), C)


def direction_from_angles(theta: float, phi: float) -> np.ndarray:
    return np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])


def _prm(params: SystemParams) -> np.ndarray:
    return np.array([params.m, params.omega, params.b, params.c, params.k, params.hbar])


# -- model functions (compiled) ---------------------------------------------

@numba.njit(cache=True)
def _drift(y, prm, out):
    m, w, b, c, k, hb = prm[0], prm[1], prm[2], prm[3], prm[4], prm[5]
    z, p, jx, jy, jz = y[0], y[1], y[2], y[3], y[4]
    # C[0, j] sits at y[5 + j]
    out[0] = p / m
    out[1] = -m * w * w * z - b * jz
    out[2] = -b * (z * jy + y[8])
    out[3] = b * (z * jx + y[7]) - c * jz
    out[4] = c * jy
    # Riccati: U + C V C + W C + C W^T with W from the current means
    W = np.zeros((5, 5))
    W[0, 1] = 1.0 / m
    W[1, 0] = -m * w * w
    W[1, 4] = -b
    W[2, 0] = -b * jy
    W[2, 3] = -b * z
    W[3, 0] = b * jx
    W[3, 2] = b * z
    W[3, 4] = -c
    W[4, 3] = c
    for i in range(5):
        for j in range(5):
            s = -8.0 * k * y[5 + i * 5] * y[5 + j]
            for l in range(5):
                s += W[i, l] * y[5 + l * 5 + j] + y[5 + i * 5 + l] * W[j, l]
            out[5 + i * 5 + j] = s
    out[5 + 6] += 2.0 * hb * hb * k


@numba.njit(cache=True)
def _diffusion(y, prm, out):
    g = np.sqrt(8.0 * prm[4])
    for j in range(5):
        out[j] = g * y[5 + j]
    for j in range(5, NY):
        out[j] = 0.0


@numba.njit(cache=True)
def _symmetrize(y):
    for i in range(5):
        for j in range(i + 1, 5):
            a = 0.5 * (y[5 + i * 5 + j] + y[5 + j * 5 + i])
            y[5 + i * 5 + j] = a
            y[5 + j * 5 + i] = a


@numba.njit(cache=True)
def _step_em(y, dW, dt, prm, a, b):
    _drift(y, prm, a)
    _diffusion(y, prm, b)
    out = y + a * dt + b * dW
    _symmetrize(out)
    return out


@numba.njit(cache=True)
def _step_15(y, dW, dZ, dt, prm, a, b):
    """Explicit order-1.5 strong scheme for scalar noise (Kloeden & Platen 11.2.1)."""
    sq = np.sqrt(dt)
    _drift(y, prm, a)
    _diffusion(y, prm, b)
    up = y + a * dt + b * sq
    um = y + a * dt - b * sq
    a_up = np.empty(NY)
    a_um = np.empty(NY)
    b_up = np.empty(NY)
    b_um = np.empty(NY)
    _drift(up, prm, a_up)
    _drift(um, prm, a_um)
    _diffusion(up, prm, b_up)
    _diffusion(um, prm, b_um)
    pp = up + b_up * sq
    pm = up - b_up * sq
    b_pp = np.empty(NY)
    b_pm = np.empty(NY)
    _diffusion(pp, prm, b_pp)
    _diffusion(pm, prm, b_pm)
    out = (
        y
        + b * dW
        + (a_up - a_um) * (dZ / (2.0 * sq))
        + (a_up + 2.0 * a + a_um) * (0.25 * dt)
        + (b_up - b_um) * ((dW * dW - dt) / (4.0 * sq))
        + (b_up - 2.0 * b + b_um) * ((dW * dt - dZ) / (2.0 * dt))
        + (b_pp - b_pm - b_up + b_um) * ((dW * dW / 3.0 - dt) * dW / (4.0 * dt))
    )
    _symmetrize(out)
    return out


@numba.njit(cache=True)
def _motional_ok(y, tol):
    czz, cpp, czp = y[5], y[11], y[6]
    scale = max(1.0, abs(czz) + abs(cpp))
    return czz >= -tol * scale and cpp >= -tol * scale and czz * cpp - czp * czp >= -tol * scale * scale


@numba.njit(cache=True)
def _propagate(y0, dW, dZ, dt, prm, scheme, record_every, rec):
    """Advance through all increments; returns (y, status, rows written)."""
    y = y0.copy()
    a = np.empty(NY)
    b = np.empty(NY)
    n = dW.shape[0]
    nrec = 0
    if record_every > 0:
        rec[0, :] = y
        nrec = 1
    for i in range(n):
        if scheme == 0:
            y = _step_em(y, dW[i], dt, prm, a, b)
        else:
            y = _step_15(y, dW[i], dZ[i], dt, prm, a, b)
        if not _motional_ok(y, 1e-10):
            return y, 1, nrec
        if record_every > 0 and (i + 1) % record_every == 0:
            rec[nrec, :] = y
            nrec += 1
    return y, 0, nrec


# -- public surface ------------------------------------------------------------

def means_drift(s: GaussianState, params: SystemParams) -> np.ndarray:
    out = np.empty(NY)
    _drift(s.pack(), _prm(params), out)
    return out[:5]


def means_diffusion(s: GaussianState, params: SystemParams) -> np.ndarray:
    return np.sqrt(8 * params.k) * s.cov[0, :].copy()


def riccati_matrices(means: np.ndarray, params: SystemParams):
    """Return (U, V, W) for the covariance equation at the given means."""
    m, w, b, c, k, hb = _prm(params)
    z, _, jx, jy, _ = means
    U = np.zeros((5, 5))
    U[1, 1] = 2 * hb**2 * k
    V = np.zeros((5, 5))
    V[0, 0] = -8 * k
    W = np.array([
        [0, 1 / m, 0, 0, 0],
        [-m * w**2, 0, 0, 0, -b],
        [-b * jy, 0, 0, -b * z, 0],
        [b * jx, 0, b * z, 0, -c],
        [0, 0, 0, c, 0],
    ], dtype=float)
    return U, V, W


def riccati_rhs(C: np.ndarray, means: np.ndarray, params: SystemParams) -> np.ndarray:
    U, V, W = riccati_matrices(means, params)
    out = U + C @ V @ C + W @ C + C @ W.T
    return 0.5 * (out + out.T)


def _scheme_id(scheme: str) -> int:
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    return SCHEMES.index(scheme)


def _check_psd(C: np.ndarray, params: SystemParams, tol: float = 1e-10):
    """Eigenvalue floor on the dimensionless covariance (z/dz, p/pz, J/J hbar).

    The spin block of a coherent state is singular, so its null eigenvalue
    sits on the boundary and truncation error moves it by O(dt^3) per unit time.
    """
    d = 1 / np.array([params.dz, params.pz, params.spin_scale, params.spin_scale, params.spin_scale])
    lo = np.linalg.eigvalsh(d[:, None] * C * d[None, :]).min()
    if lo < -tol:
        raise CovarianceError(f"scaled covariance eigenvalue {lo:.3e} < -{tol:g}; reduce dt")


def gaussian_step(
    s: GaussianState, dW: float, dt: float, params: SystemParams, scheme: str = "strong-1.5", dZ: float = 0.0
) -> GaussianState:
    sid = _scheme_id(scheme)
    a = np.empty(NY)
    b = np.empty(NY)
    prm = _prm(params)
    if sid == 0:
        y = _step_em(s.pack(), dW, dt, prm, a, b)
    else:
        y = _step_15(s.pack(), dW, dZ, dt, prm, a, b)
    out = GaussianState.unpack(y)
    _check_psd(out.cov, params)
    return out


def advance(
    s: GaussianState,
    dW: np.ndarray,
    dZ: np.ndarray,
    dt: float,
    params: SystemParams,
    scheme: str = "strong-1.5",
    record_every: int = 0,
):
    """Advance through a block of increments; returns (state, recorded rows)."""
    dW = np.ascontiguousarray(dW, dtype=float)
    dZ = np.ascontiguousarray(dZ, dtype=float)
    nrows = 1 + len(dW) // record_every if record_every else 1
    rec = np.empty((nrows, NY))
    y, status, nrec = _propagate(s.pack(), dW, dZ, dt, _prm(params), _scheme_id(scheme), record_every, rec)
    if status:
        raise CovarianceError("motional covariance lost positivity; reduce dt")
    out = GaussianState.unpack(y)
    _check_psd(out.cov, params)
    return out, rec[:nrec]


@dataclass
class GaussianPropagator:
    params: SystemParams
    dt: float = 1e-4
    scheme: str = "strong-1.5"
    meta: dict = field(default_factory=dict)

    def run(self, s0: GaussianState, noise: NoiseStream, n_steps: int, record_every: int = 1, chunk: int = 200_000):
        """Propagate ``n_steps`` drawing increments from ``noise``; returns (state, Trajectory)."""
        if abs(noise.dt - self.dt) > 1e-15 * self.dt:
            raise ValueError("noise stream dt differs from propagator dt")
        chunk = max(record_every, chunk - chunk % record_every)
        rows = [s0.pack()]
        s = s0
        done = 0
        dws = []
        while done < n_steps:
            n = min(chunk, n_steps - done)
            dW, dZ = noise.draw(n)
            dws.append(dW)
            s, rec = advance(s, dW, dZ, self.dt, self.params, self.scheme, record_every)
            rows.extend(rec[1:])
            done += n
        return s, to_trajectory(np.array(rows), self.dt * record_every, self.params, np.concatenate(dws) if dws else np.zeros(0), record_every)


def to_trajectory(ys: np.ndarray, dt_row: float, params: SystemParams, dW=None, record_every: int = 1) -> Trajectory:
    t = np.arange(len(ys)) * dt_row * params.omega
    C = ys[:, 5:].reshape(-1, 5, 5)
    y_rec = np.full(len(ys), np.nan)
    if dW is not None and params.k > 0 and len(dW):
        # record sample of the last step before each row: <z> + dW/(sqrt(8k) dt)
        dt = dt_row / record_every
        idx = np.arange(1, len(ys)) * record_every - 1
        y_rec[1:] = ys[:-1, 0] + dW[idx] / (np.sqrt(8 * params.k) * dt)
    rows = np.column_stack([
        t, ys[:, 0], ys[:, 1], ys[:, 2], ys[:, 3], ys[:, 4], y_rec,
        C[:, 0, 0], C[:, 1, 1], C[:, 0, 1], C[:, 0, 2], C[:, 0, 3], C[:, 0, 4],
        np.zeros(len(ys)), np.full(len(ys), np.nan),
    ])
    return Trajectory(COLUMNS, rows, {}, C)


def propagate_gaussian(s0: GaussianState, noise: NoiseStream, tau_span: float, dt: float, params: SystemParams,
                       scheme: str = "strong-1.5", record_every: int = 1):
    n = int(round(tau_span / (params.omega * dt)))
    return GaussianPropagator(params, dt, scheme).run(s0, noise, n, record_every)


def stationary_oscillator_covariance(params: SystemParams) -> np.ndarray:
    """Closed-form fixed point of the 2x2 motional Riccati system (b = 0).

    Solves 2Czp/m = 8k Czz^2, 2hbar^2 k = 2 m w^2 Czp + 8k Czp^2 and
    Cpp/m = m w^2 Czz + 8k Czz Czp.
    """
    m, w, k, hb = params.m, params.omega, params.k, params.hbar
    if k <= 0:
        raise ValueError("stationary state needs k > 0")
    a = m * w**2
    czp = (-2 * a + np.sqrt(4 * a**2 + 64 * k**2 * hb**2)) / (16 * k)
    czz = np.sqrt(czp / (4 * k * m))
    cpp = m * (a * czz + 8 * k * czz * czp)
    return np.array([[czz, czp], [czp, cpp]])
