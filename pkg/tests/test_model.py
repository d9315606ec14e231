import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from qtraj import sse
from qtraj.model import (
    SystemParams, adiabatic_populations, adiabatic_spectrum, branch_entropy, build_params,
    motional_coherent, spin_coherent, spin_matrices, spin_moments,
)

ZG = 1 / np.sqrt(2)
twoJ = st.integers(min_value=1, max_value=60)


# -- parameters ---------------------------------------------------------------------

def test_fig1_action_near_250():
    p = build_params(dz_in_zg=22.0, J=0.5)
    assert p.I0 == pytest.approx(242.0)
    assert abs(p.I0 - 250.0) / 250.0 < 0.05


def test_fig2_action_ratio_near_5():
    p = build_params(dz_in_zg=45.0, J=200.0)
    assert p.action_ratio == pytest.approx(45.0**2 / 2 / 200)
    assert p.action_ratio == pytest.approx(5.0, rel=0.02)


@given(
    m=st.floats(0.1, 10), w=st.floats(0.1, 10), hbar=st.floats(0.1, 10),
    dz=st.floats(0.5, 100), twoJ=twoJ, c=st.floats(0, 2), k=st.floats(0, 1),
)
def test_derived_fields(m, w, hbar, dz, twoJ, c, k):
    p = build_params(m, w, dz, twoJ / 2, c, k, hbar)
    assert p.E0 / p.Eg == pytest.approx(2 * p.I0 / hbar)
    assert p.dz == pytest.approx(dz * p.zg)
    assert p.c_tilde == pytest.approx(c, abs=1e-12)
    # spin force J hbar b equals m w^2 dz
    assert p.b * p.J * hbar == pytest.approx(m * w**2 * p.dz)


@pytest.mark.parametrize("J", [0.3, 1.25, -0.5])
def test_rejects_bad_spin(J):
    with pytest.raises(ValueError):
        build_params(J=J)


@pytest.mark.parametrize("kw", [{"m": 0}, {"omega": -1}, {"hbar": 0}])
def test_rejects_nonpositive_constants(kw):
    with pytest.raises(ValueError):
        build_params(**kw)


def test_rejects_negative_k():
    with pytest.raises(ValueError):
        SystemParams(k=-1.0)


# -- spin algebra -------------------------------------------------------------------------

def test_spin_half_is_pauli():
    ops = spin_matrices(0.5)
    sx = np.array([[0, 1], [1, 0]])
    sy = np.array([[0, -1j], [1j, 0]])
    sz = np.diag([1, -1])
    for M, s in ((ops.Jx, sx), (ops.Jy, sy), (ops.Jz, sz)):
        np.testing.assert_allclose(M, 0.5 * s, atol=1e-15)


def test_spin_one_elements():
    ops = spin_matrices(1.0, hbar=2.0)
    np.testing.assert_allclose(np.diag(ops.Jz).real, [2, 0, -2])
    np.testing.assert_allclose(np.diag(ops.Jx, 1).real, [2 / np.sqrt(2)] * 2)


@pytest.mark.parametrize("J", [200.0, 400.0])
def test_commutator_large_spin(J):
    ops = spin_matrices(J)
    comm = ops.Jx @ ops.Jy - ops.Jy @ ops.Jx
    assert np.linalg.norm(comm - 1j * ops.Jz) < 1e-10 * np.linalg.norm(ops.Jz)


@given(twoJ=twoJ, hbar=st.floats(0.2, 3))
def test_algebra_identities(twoJ, hbar):
    J = twoJ / 2
    ops = spin_matrices(J, hbar)
    X, Y, Z = ops.Jx, ops.Jy, ops.Jz
    scale = hbar**2 * J * (J + 1)
    for A, B, Cm in ((X, Y, Z), (Y, Z, X), (Z, X, Y)):
        assert np.abs(A @ B - B @ A - 1j * hbar * Cm).max() < 1e-10 * scale
    cas = X @ X + Y @ Y + Z @ Z
    np.testing.assert_allclose(cas, scale * np.eye(twoJ + 1), atol=1e-10 * scale)


# -- spin coherent states -------------------------------------------------------------------

def test_coherent_north_pole():
    chi = spin_coherent(3.0, 0.0, 0.0)
    assert chi[0] == pytest.approx(1.0)
    assert np.abs(chi[1:]).max() == 0.0


def test_coherent_along_x_is_jx_eigenstate():
    mean, cov = spin_moments(spin_coherent(2.5, np.pi / 2, 0.0), 2.5)
    assert mean[0] == pytest.approx(2.5)
    assert abs(cov[0, 0]) < 1e-12


def test_coherent_south_pole_j200():
    mean, cov = spin_moments(spin_coherent(200.0, np.pi, 0.0), 200.0)
    np.testing.assert_allclose(mean, [0, 0, -200], atol=1e-9)
    assert cov[0, 0] == pytest.approx(100.0, rel=1e-10)
    assert cov[1, 1] == pytest.approx(100.0, rel=1e-10)


@given(twoJ=st.integers(1, 30), theta=st.floats(0, np.pi), phi=st.floats(0, 2 * np.pi, exclude_max=True))
def test_coherent_matches_rotation_oracle(twoJ, theta, phi):
    J = twoJ / 2
    ops = spin_matrices(J)
    top = np.zeros(twoJ + 1, complex)
    top[0] = 1
    oracle = expm(-1j * phi * ops.Jz) @ expm(-1j * theta * ops.Jy) @ top
    chi = spin_coherent(J, theta, phi)
    assert abs(np.linalg.norm(chi) - 1) < 1e-12
    np.testing.assert_allclose(chi, oracle, atol=1e-9)
    mean, _ = spin_moments(chi, J)
    n = np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    np.testing.assert_allclose(mean / J, n, atol=1e-9)


def test_coherent_rejects_theta_out_of_range():
    with pytest.raises(ValueError):
        spin_coherent(1.0, 4.0, 0.0)


# -- motional coherent states -------------------------------------------------------------------

@pytest.fixture
def unit():
    return SystemParams()


@pytest.mark.parametrize("z0,p0", [(0.0, 0.0), (76 * ZG, 0.0), (3.0, -2.5)])
def test_motional_moments(unit, z0, p0):
    grid = sse.GridSpec.spanning(512, 60 * ZG, zc=z0)
    wf = sse.product_state(grid, z0, p0, 0.0, 0.0, unit)
    mom = sse.expectations(wf, unit)
    assert mom.means[0] == pytest.approx(z0, rel=1e-8, abs=1e-10)
    assert mom.means[1] == pytest.approx(p0, rel=1e-8, abs=1e-10)
    assert mom.cov[0, 0] == pytest.approx(ZG**2, rel=1e-8)
    assert mom.cov[1, 1] == pytest.approx(1 / (4 * ZG**2), rel=1e-8)
    assert mom.uncertainty == pytest.approx(0.25, rel=1e-8)


def test_motional_coherent_normalised(unit):
    z = np.linspace(-10, 10, 401)
    psi = motional_coherent(z, 1.0, 0.5, unit)
    assert np.sum(np.abs(psi) ** 2) * (z[1] - z[0]) == pytest.approx(1.0, abs=1e-14)


def test_motional_grid_too_small(unit):
    with pytest.raises(ValueError, match="must cover"):
        motional_coherent(np.linspace(-2, 2, 64), 0.0, 0.0, unit)


# -- adiabatic basis ---------------------------------------------------------------------------

def test_spin_half_spectrum_closed_form():
    p = SystemParams(b=2.0, c=3.0, J=0.5)
    for z in (0.0, 0.7, -1.3):
        spec = adiabatic_spectrum(z, p)
        half = 0.5 * np.sqrt((p.b * z) ** 2 + p.c**2)
        np.testing.assert_allclose(spec.energies, [-half, half], rtol=1e-14)


def test_spin_half_no_transverse_field():
    p = SystemParams(b=2.0, c=0.0, J=0.5)
    spec = adiabatic_spectrum(1.5, p)
    np.testing.assert_allclose(spec.energies, [-1.5, 1.5])
    np.testing.assert_allclose(np.abs(spec.vectors), np.eye(2)[:, ::-1], atol=1e-15)


def test_j200_matches_dense_eigensolver(fig2_params):
    p = fig2_params
    spec = adiabatic_spectrum(p.dz, p)
    ops = spin_matrices(p.J)
    V = (p.b * p.dz * ops.Jz + p.c * ops.Jx).real
    ref = np.linalg.eigvalsh(V)
    np.testing.assert_allclose(spec.energies, ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())
    U = spec.vectors
    assert np.abs(U.T @ U - np.eye(p.dim)).max() < 1e-12
    assert np.abs(V @ U - U * spec.energies).max() < 1e-12 * np.abs(ref).max()


@given(twoJ=st.integers(1, 40), z=st.floats(-5, 5), b=st.floats(0.1, 3), c=st.floats(0.01, 3))
def test_spectrum_even_in_z(twoJ, z, b, c):
    p = SystemParams(b=b, c=c, J=twoJ / 2)
    e1 = adiabatic_spectrum(z, p).energies
    e2 = adiabatic_spectrum(-z, p).energies
    np.testing.assert_allclose(e1, e2, atol=1e-10 * max(1.0, np.abs(e1).max()))


def test_gauge_fixed_largest_component_positive():
    p = SystemParams(b=1.0, c=0.5, J=3.0)
    v = adiabatic_spectrum(0.4, p).vectors
    lead = v[np.argmax(np.abs(v), axis=0), np.arange(v.shape[1])]
    assert np.all(lead > 0)


def _grid_state(p, spinor_fn):
    grid = sse.GridSpec.spanning(256, 40 * ZG)
    wf = sse.product_state(grid, 0.0, 0.0, 0.0, 0.0, p)
    env = np.sqrt(wf.density())
    amps = np.array([e * spinor_fn(z) for e, z in zip(env, grid.z)])
    return sse.WaveFunction(grid, amps).normalized()


def test_pure_branch_population():
    p = SystemParams(b=1.0, c=0.7, J=1.5)
    wf = _grid_state(p, lambda z: adiabatic_spectrum(z, p).vectors[:, 0])
    pops = adiabatic_populations(wf, p)
    np.testing.assert_allclose(pops, [1, 0, 0, 0], atol=1e-12)
    assert branch_entropy(pops) < 1e-9


def test_x_polarised_spin_half_at_origin():
    # along +x is the upper eigenvector of c Jx, i.e. branch 1 in ascending order
    p = SystemParams(b=1e-3, c=5.0, J=0.5)
    grid = sse.GridSpec.spanning(256, 40 * ZG)
    wf = sse.product_state(grid, 0.0, 0.0, np.pi / 2, 0.0, p)
    pops = adiabatic_populations(wf, p)
    assert pops.sum() == pytest.approx(1.0, abs=1e-8)
    assert pops[1] > 1 - 1e-5


def test_populations_reject_unnormalised():
    p = SystemParams(b=1.0, c=1.0)
    grid = sse.GridSpec.spanning(64, 20 * ZG)
    wf = sse.product_state(grid, 0.0, 0.0, 0.0, 0.0, p)
    with pytest.raises(ValueError, match="normalised"):
        adiabatic_populations(sse.WaveFunction(grid, 2 * wf.amps), p)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=8).filter(lambda x: sum(x) > 0))
def test_entropy_bounds(raw):
    pops = np.array(raw) / sum(raw)
    h = branch_entropy(pops)
    assert -1e-12 <= h <= np.log2(len(pops)) + 1e-12
