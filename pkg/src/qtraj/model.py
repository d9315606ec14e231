"""System parameters, spin algebra and adiabatic eigenbasis for the spin-oscillator.

Internally everything is expressed with hbar = m = omega = 1 unless a caller
builds :class:`SystemParams` with other values; the formulas below keep the
constants explicit so that either choice works.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.special import gammaln, xlogy


def _check_spin(J: float) -> None:
    twoJ = 2.0 * J
    if J < 0 or abs(twoJ - round(twoJ)) > 1e-12:
        raise ValueError(f"spin J must be a non-negative half-integer, got {J!r}")


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of H = p^2/2m + m w^2 z^2/2 + b z Jz + c Jx.

    ``dz`` is the length scale Delta z used for the dimensionless classical
    coordinates; ``k`` is the position-measurement strength.
    """

    m: float = 1.0
    omega: float = 1.0
    b: float = 0.0
    c: float = 0.0
    J: float = 0.5
    k: float = 0.0
    hbar: float = 1.0
    dz: float = 1.0

    def __post_init__(self):
        if self.m <= 0 or self.omega <= 0 or self.hbar <= 0:
            raise ValueError("m, omega and hbar must be positive")
        if self.dz <= 0:
            raise ValueError("length scale dz must be positive")
        if self.k < 0:
            raise ValueError("measurement strength k must be >= 0")
        _check_spin(self.J)

    @property
    def dim(self) -> int:
        return int(round(2 * self.J)) + 1

    @property
    def zg(self) -> float:
        return float(np.sqrt(self.hbar / (2.0 * self.m * self.omega)))

    @property
    def Eg(self) -> float:
        return 0.5 * self.hbar * self.omega

    @property
    def E0(self) -> float:
        return self.m * self.omega**2 * self.dz**2

    @property
    def I0(self) -> float:
        return self.m * self.omega * self.dz**2

    @property
    def pz(self) -> float:
        """Momentum scale m w dz."""
        return self.m * self.omega * self.dz

    @property
    def c_tilde(self) -> float:
        return self.c * self.J * self.hbar / (self.m * self.omega**2 * self.dz**2)

    @property
    def action_ratio(self) -> float:
        """I0/J in units where J carries hbar (I0 / (J hbar))."""
        return self.I0 / (self.J * self.hbar)

    @property
    def spin_scale(self) -> float:
        return self.J * self.hbar

    def replace(self, **changes) -> "SystemParams":
        from dataclasses import replace

        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "m": self.m, "omega": self.omega, "b": self.b, "c": self.c,
            "J": self.J, "k": self.k, "hbar": self.hbar, "dz": self.dz,
        }


def build_params(
    m: float = 1.0,
    omega: float = 1.0,
    dz_in_zg: float = 1.0,
    J: float = 0.5,
    c_tilde: float = 0.0,
    k: float = 0.0,
    hbar: float = 1.0,
) -> SystemParams:
    """Build parameters from the dimensionless description.

    The gradient coupling is fixed by ``b = m w^2 dz / (J hbar)`` so that the
    spin force at full polarisation displaces the trap centre by one ``dz``,
    and ``c = c_tilde m w^2 dz^2 / (J hbar)``.
    """
    if m <= 0 or omega <= 0 or hbar <= 0:
        raise ValueError("m, omega and hbar must be positive")
    if dz_in_zg <= 0:
        raise ValueError("dz_in_zg must be positive")
    if c_tilde < 0:
        raise ValueError("c_tilde must be >= 0")
    _check_spin(J)
    if J == 0:
        raise ValueError("J = 0 leaves the couplings undefined")
    zg = np.sqrt(hbar / (2.0 * m * omega))
    dz = dz_in_zg * zg
    spin = J * hbar
    b = m * omega**2 * dz / spin
    c = c_tilde * m * omega**2 * dz**2 / spin
    return SystemParams(m=float(m), omega=float(omega), b=float(b), c=float(c), J=float(J), k=float(k), hbar=float(hbar), dz=float(dz))


def k_from_zg(rate: float, params_or_zg) -> float:
    """Measurement strength ``rate * omega / zg^2`` (e.g. rate=1/8)."""
    if isinstance(params_or_zg, SystemParams):
        return rate * params_or_zg.omega / params_or_zg.zg**2
    return rate / float(params_or_zg) ** 2


@dataclass(frozen=True)
class SpinOperators:
    Jx: np.ndarray
    Jy: np.ndarray
    Jz: np.ndarray
    J: float
    hbar: float = 1.0

    @property
    def m(self) -> np.ndarray:
        return self.J - np.arange(int(round(2 * self.J)) + 1)


def ladder_elements(J: float, hbar: float = 1.0) -> np.ndarray:
    """Elements <m+1|J+|m> for the basis ordering m = J, J-1, ..., -J.

    Entry ``i`` (i = 0..2J-1) couples basis index i+1 to index i.
    """
    _check_spin(J)
    m = J - np.arange(1, int(round(2 * J)) + 1)
    return hbar * np.sqrt(J * (J + 1) - m * (m + 1))


@lru_cache(maxsize=16)
def _spin_matrices_cached(J: float, hbar: float):
    n = int(round(2 * J)) + 1
    a = ladder_elements(J, hbar)
    jplus = np.diag(a, k=1).astype(complex)
    jminus = jplus.T.copy()
    Jx = 0.5 * (jplus + jminus)
    Jy = (jplus - jminus) / 2j
    Jz = np.diag(hbar * (J - np.arange(n))).astype(complex)
    for M in (Jx, Jy, Jz):
        M.setflags(write=False)
    return Jx, Jy, Jz


def spin_matrices(J: float, hbar: float = 1.0) -> SpinOperators:
    _check_spin(J)
    Jx, Jy, Jz = _spin_matrices_cached(float(J), float(hbar))
    return SpinOperators(Jx=Jx, Jy=Jy, Jz=Jz, J=float(J), hbar=float(hbar))


def spin_coherent(J: float, theta: float, phi: float) -> np.ndarray:
    """Amplitudes of exp(-i phi Jz) exp(-i theta Jy) |m=J> in the m = J..-J basis."""
    _check_spin(J)
    if not (0.0 <= theta <= np.pi):
        raise ValueError("theta must lie in [0, pi]")
    n = int(round(2 * J)) + 1
    m = J - np.arange(n)
    up = J + m
    down = J - m
    logc = 0.5 * (gammaln(2 * J + 1) - gammaln(up + 1) - gammaln(down + 1))
    # cos(theta/2), sin(theta/2) >= 0 on [0, pi]; xlogy keeps 0 * log(0) = 0
    ch, sh = abs(np.cos(theta / 2)), abs(np.sin(theta / 2))
    with np.errstate(divide="ignore"):
        mag = np.exp(logc + xlogy(up, ch) + xlogy(down, sh))
    amps = mag * np.exp(-1j * m * phi)
    return amps / np.linalg.norm(amps)


def spin_moments(chi: np.ndarray, J: float, hbar: float = 1.0):
    """Mean vector and symmetrised covariance of (Jx, Jy, Jz) for a spinor."""
    ops = spin_matrices(J, hbar)
    vecs = [ops.Jx @ chi, ops.Jy @ chi, ops.Jz @ chi]
    norm = np.vdot(chi, chi).real
    mean = np.array([np.vdot(chi, v).real for v in vecs]) / norm
    second = np.array([[np.vdot(a, b).real for b in vecs] for a in vecs]) / norm
    return mean, second - np.outer(mean, mean)


def motional_coherent(z: np.ndarray, z0: float, p0: float, params: SystemParams) -> np.ndarray:
    """Minimum-uncertainty Gaussian of width zg centred at (z0, p0) on grid ``z``.

    The grid must be uniform and reach at least six widths beyond ``z0`` on
    both sides; the result is normalised so that sum |psi|^2 dz = 1.
    """
    z = np.asarray(z, dtype=float)
    zg = params.zg
    lo, hi = z0 - 6 * zg, z0 + 6 * zg
    if z[0] > lo or z[-1] < hi:
        raise ValueError(
            f"grid [{z[0]:.4g}, {z[-1]:.4g}] must cover [{lo:.4g}, {hi:.4g}] (z0 +- 6 zg)"
        )
    step = z[1] - z[0]
    amp = np.exp(-((z - z0) ** 2) / (4 * zg**2) + 1j * p0 * z / params.hbar)
    return amp / np.sqrt(np.sum(np.abs(amp) ** 2) * step)


@dataclass(frozen=True)
class AdiabaticSpectrum:
    z: float
    energies: np.ndarray
    vectors: np.ndarray = field(repr=False)


def _fix_gauge(vecs: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude component of each column real positive.

    Works on a single (dim, dim) matrix or a stack (..., dim, dim).
    """
    idx = np.argmax(np.abs(vecs), axis=-2)
    lead = np.take_along_axis(vecs, idx[..., None, :], axis=-2)
    signs = np.sign(lead)
    signs[signs == 0] = 1.0
    return vecs * signs


def adiabatic_spectrum(z: float, params: SystemParams) -> AdiabaticSpectrum:
    """Eigen-decomposition of the spin potential b z Jz + c Jx at position z."""
    if not np.isfinite(z):
        raise ValueError("z must be finite")
    J, hbar = params.J, params.hbar
    m = J - np.arange(params.dim)
    diag = params.b * z * hbar * m
    off = 0.5 * params.c * ladder_elements(J, hbar)
    if params.dim == 1:
        return AdiabaticSpectrum(float(z), diag.copy(), np.ones((1, 1)))
    w, v = eigh_tridiagonal(diag, off)
    return AdiabaticSpectrum(float(z), w, _fix_gauge(v))


def adiabatic_basis(z: np.ndarray, params: SystemParams) -> np.ndarray:
    """Eigenvectors for every z in an array, shape (len(z), dim, dim)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if params.dim == 2:
        # closed form for spin-1/2: angle of the (c, bz) field
        ang = np.arctan2(params.c, params.b * z)
        lo = np.stack([-np.sin(ang / 2), np.cos(ang / 2)], axis=-1)
        hi = np.stack([np.cos(ang / 2), np.sin(ang / 2)], axis=-1)
        return _fix_gauge(np.stack([lo, hi], axis=-1))
    return np.stack([adiabatic_spectrum(zi, params).vectors for zi in z])


def adiabatic_populations(psi, params: SystemParams, tol: float = 1e-8) -> np.ndarray:
    """Probability carried by each adiabatic branch (ascending energy order).

    ``psi`` is a :class:`qtraj.wavefunction.WaveFunction`.
    """
    norm = psi.norm()
    if abs(norm - 1.0) > tol:
        raise ValueError(f"wavefunction must be normalised (norm = {norm:.12g})")
    basis = adiabatic_basis(psi.grid.z, params)
    proj = np.einsum("zmb,zm->zb", basis.conj(), psi.amps)
    return np.sum(np.abs(proj) ** 2, axis=0) * psi.grid.dz


def branch_entropy(pops: np.ndarray) -> float:
    """Shannon entropy in bits of a population vector."""
    p = np.clip(np.asarray(pops, dtype=float), 0.0, None)
    p = p[p > 0]
    return float(-(p * np.log2(p)).sum())
