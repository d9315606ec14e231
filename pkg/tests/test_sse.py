import numpy as np
import pytest
from dataclasses import replace
from hypothesis import given
from hypothesis import strategies as st

from qtraj import sse
from qtraj.model import SystemParams, spin_matrices
from qtraj.noise import NoiseStream

ZG = 1 / np.sqrt(2)


def coherent(p, z0=0.0, p0=0.0, theta=0.0, phi=0.0, n=256, span=40 * ZG):
    return sse.product_state(sse.GridSpec.spanning(n, span, zc=z0), z0, p0, theta, phi, p)


def random_wf(rng, n, dim, span=20.0):
    grid = sse.GridSpec.spanning(n, span)
    amps = rng.standard_normal((n, dim)) + 1j * rng.standard_normal((n, dim))
    return sse.WaveFunction(grid, amps).normalized()


# -- kinetic factor ---------------------------------------------------------------------

def test_free_gaussian_width():
    p = SystemParams()
    wf = coherent(p, n=1024, span=120 * ZG)
    dt, steps = 1e-3, int(round(2 * np.pi / 1e-3))
    for _ in range(steps):
        wf = sse.kinetic_half_step(sse.kinetic_half_step(wf, dt, p), dt, p)
    t = steps * dt
    exact = ZG**2 + (t / (2 * ZG)) ** 2
    czz = sse.expectations(wf, p).cov[0, 0]
    assert abs(czz - exact) / exact < 1e-6


def test_kinetic_norm_and_identity():
    p = SystemParams(J=1.0)
    wf = random_wf(np.random.default_rng(0), 128, 3)
    out = sse.kinetic_half_step(wf, 0.1, p)
    assert abs(out.norm() - wf.norm()) < 1e-14
    np.testing.assert_allclose(sse.kinetic_half_step(wf, 0.0, p).amps, wf.amps, atol=1e-15)


# -- potential factor ---------------------------------------------------------------------

def test_potential_diagonal_case():
    p = SystemParams(b=1.3, c=0.0, J=1.5)
    wf = random_wf(np.random.default_rng(1), 64, 4)
    dt = 0.05
    out = sse.potential_cayley_step(wf, dt, p)
    z = wf.grid.z[:, None]
    m = p.J - np.arange(4)[None, :]
    V = 0.5 * z**2 + p.b * z * m
    fac = (1 - 0.5j * V * dt) / (1 + 0.5j * V * dt)
    np.testing.assert_allclose(out.amps, fac * wf.amps, atol=1e-14)


def test_potential_norm_j200():
    p = SystemParams(b=0.01, c=0.2, J=200.0)
    wf = random_wf(np.random.default_rng(2), 512, 401)
    out = sse.potential_cayley_step(wf, 1e-3, p)
    assert abs(out.norm() - 1.0) < 1e-12


def test_potential_matches_dense_2x2():
    p = SystemParams(b=0.8, c=1.7, J=0.5)
    wf = random_wf(np.random.default_rng(3), 16, 2)
    dt = 0.3
    out = sse.potential_cayley_step(wf, dt, p)
    ops = spin_matrices(0.5)
    for i, z in enumerate(wf.grid.z):
        V = 0.5 * z**2 * np.eye(2) + p.b * z * ops.Jz + p.c * ops.Jx
        U = (np.eye(2) - 0.5j * dt * V) @ np.linalg.inv(np.eye(2) + 0.5j * dt * V)
        np.testing.assert_allclose(out.amps[i], U @ wf.amps[i], atol=1e-14)


@given(twoJ=st.integers(1, 20), dt=st.floats(1e-4, 1.0), seed=st.integers(0, 2**32 - 1))
def test_potential_unitary(twoJ, dt, seed):
    p = SystemParams(b=0.7, c=1.1, J=twoJ / 2)
    wf = random_wf(np.random.default_rng(seed), 16, twoJ + 1)
    out = sse.potential_cayley_step(wf, dt, p, v_ref=3.0)
    assert abs(out.norm() - 1.0) < 1e-12


# -- measurement factor -------------------------------------------------------------------

def test_measurement_k0_identity():
    p = SystemParams()
    wf = coherent(p)
    out, y = sse.measurement_step(wf, 0.0, 1e-3, p)
    assert y is None and out is wf
    with pytest.raises(ValueError):
        sse.measurement_step(wf, 0.1, 1e-3, p)


def test_measurement_narrow_state():
    p = SystemParams(k=0.5)
    grid = sse.GridSpec.spanning(64, 10.0)
    amps = np.zeros((64, 2), complex)
    amps[40, 0] = 1
    wf = sse.WaveFunction(grid, amps).normalized()
    out, _ = sse.measurement_step(wf, 0.3, 1e-3, p)
    assert sse.mean_z(out) == pytest.approx(grid.z[40], abs=1e-12)


def test_measurement_czz_increment_matches_riccati():
    p = SystemParams(k=0.25)
    wf = coherent(p, z0=1.0)
    dt = 1e-4
    before = sse.expectations(wf, p).cov[0, 0]
    out, _ = sse.measurement_step(wf, 0.0, dt, p)
    change = sse.expectations(out, p).cov[0, 0] - before
    expect = -8 * p.k * before**2 * dt
    assert abs(change / expect - 1) < 0.01


def test_record_inverts_to_increments():
    p = SystemParams(k=0.25)
    dW, _ = NoiseStream(4, 1e-3).draw(200)
    _, _, rec = sse.SSEPropagator(p, 1e-3).run(coherent(p, z0=2.0), dW)
    np.testing.assert_allclose(rec.increments(), dW, rtol=1e-9, atol=1e-15)


def test_record_noise_variance():
    p = SystemParams(k=0.25)
    dt, M, blocks = 1e-3, 20, 200
    dW, _ = NoiseStream(11, dt).draw(M * blocks)
    _, _, rec = sse.SSEPropagator(p, dt).run(coherent(p, z0=1.0), dW)
    avg = (rec.y - rec.z_mean).reshape(blocks, M).mean(axis=1)
    expect = 1 / (8 * p.k * dt * M)
    # sample variance of a Gaussian has relative sd sqrt(2/(n-1))
    assert abs(avg.var(ddof=1) / expect - 1) < 5 * np.sqrt(2 / (blocks - 1))


# -- full step -------------------------------------------------------------------------------

def oscillator_error(dt, periods=1):
    p = SystemParams()
    z0 = 1.0
    wf = coherent(p, z0=z0)
    n = int(round(2 * np.pi * periods / dt))
    _, traj, _ = sse.SSEPropagator(p, dt).run(wf, np.zeros(n), record_every=max(1, n // 64))
    t = traj.col("tau")
    return np.abs(traj.col("z_mean") - z0 * np.cos(t)).max()


def test_strang_second_order():
    e1, e2 = oscillator_error(4e-3), oscillator_error(2e-3)
    assert e1 / e2 >= 3.5


def test_precession_about_x():
    p = SystemParams(c=1.0, J=0.5)
    dt = 2.5e-4
    wf = coherent(p, theta=0.0)
    n = int(round(2 * np.pi / dt))
    _, traj, _ = sse.SSEPropagator(p, dt).run(wf, np.zeros(n), record_every=n // 50)
    t = traj.col("tau")
    assert np.abs(traj.col("jz") - 0.5 * np.cos(t)).max() < 1e-6
    assert np.abs(traj.col("jy") + 0.5 * np.sin(t)).max() < 1e-6


def test_unitary_without_measurement():
    p = SystemParams(b=0.3, c=0.5, J=1.0)
    wf = coherent(p, z0=1.0, theta=1.0)
    prop = sse.SSEPropagator(p, 1e-3, regrid_every=0)
    pot, kin = prop._factors(wf.grid)
    amps = wf.amps
    for _ in range(10_000):
        amps = np.fft.ifft(kin * np.fft.fft(amps, axis=0), axis=0)
        amps = pot.apply(amps)
        amps = np.fft.ifft(kin * np.fft.fft(amps, axis=0), axis=0)
    # no renormalisation anywhere in the loop
    assert abs(np.vdot(amps, amps).real * wf.grid.dz - 1) < 1e-12


def test_step_matches_propagator():
    p = SystemParams(b=0.2, c=0.4, J=1.0, k=0.1)
    wf = coherent(p, z0=0.5, theta=0.7)
    dW, _ = NoiseStream(5, 1e-3).draw(20)
    a = wf
    for w in dW:
        a, _ = sse.sse_step(a, w, 1e-3, p)
    b, _, _ = sse.SSEPropagator(p, 1e-3, regrid_every=0).run(wf, dW)
    # the two differ only by a global phase (v_ref)
    overlap = abs(np.vdot(a.amps, b.amps)) * a.grid.dz
    assert overlap == pytest.approx(1.0, abs=1e-12)


def test_uncertainty_bound_along_run(small_params):
    p = small_params
    z0 = 76 / np.sqrt(1000) * p.dz
    wf = coherent(p, z0=z0, theta=np.pi, n=128)
    dW, _ = NoiseStream(8, 2e-4).draw(10_000)
    _, traj, _ = sse.SSEPropagator(p, 2e-4).run(wf, dW, record_every=100)
    unc = traj.col("czz") * traj.col("cpp") - traj.col("czp") ** 2
    assert np.all(unc >= 0.25 * (1 - 1e-9))
    assert np.all(np.abs(traj.rows[:, 1:6]).max(axis=0) < np.inf)
    assert traj.meta["discarded"] < 1e-8


# -- moments -----------------------------------------------------------------------------------

def test_coherent_product_moments():
    p = SystemParams(J=3.0)
    mom = sse.expectations(coherent(p, z0=1.0, p0=0.5, theta=np.pi / 2), p)
    C = mom.cov
    assert C[0, 0] == pytest.approx(ZG**2, rel=1e-10)
    assert C[1, 1] == pytest.approx(1 / (4 * ZG**2), rel=1e-10)
    assert abs(C[0, 1]) < 1e-12
    assert np.abs(C[0, 2:]).max() < 1e-12
    assert abs(C[2, 2]) < 1e-12
    assert C[3, 3] == pytest.approx(1.5, rel=1e-12)
    assert C[4, 4] == pytest.approx(1.5, rel=1e-12)


# -- grid handling ----------------------------------------------------------------------------

def test_regrid_centred_noop():
    p = SystemParams()
    wf = coherent(p)
    assert sse.regrid(wf) is wf


def test_regrid_integer_shift():
    p = SystemParams()
    g = sse.GridSpec.spanning(256, 40 * ZG)
    wf = sse.product_state(g, 0.0, 0.0, 0.0, 0.0, p)
    moved = sse.WaveFunction(g, np.roll(wf.amps, 7, axis=0))
    out = sse.regrid(moved)
    assert out.grid.zc == pytest.approx(g.zc + 7 * g.dz)
    np.testing.assert_allclose(out.amps[:-7], moved.amps[7:])
    assert abs(out.norm() - moved.norm()) < 1e-12


def test_regrid_refuses_delocalised_state():
    p = SystemParams()
    g = sse.GridSpec.spanning(64, 10.0)
    wf = sse.WaveFunction(g, np.ones((64, 2), complex)).normalized()
    with pytest.raises(sse.GridError):
        sse.regrid(wf)


def test_grid_must_be_power_of_two():
    with pytest.raises(ValueError):
        sse.GridSpec(n=100, dz=0.1)


# -- displacement and rotation -----------------------------------------------------------------

def test_displace_identity():
    p = SystemParams(J=1.0)
    wf = coherent(p, theta=0.4)
    out = sse.displace_rotate(wf, 0.0, 0.0, dtheta=0.0)
    np.testing.assert_allclose(out.amps, wf.amps)


@given(dz=st.floats(-3, 3), dp=st.floats(-2, 2))
def test_displacement_shifts_means(dz, dp):
    p = SystemParams(J=0.5)
    wf = coherent(p, z0=0.5, p0=0.2, n=256, span=60 * ZG)
    a = sse.expectations(wf, p)
    b = sse.expectations(sse.displace_rotate(wf, dz, dp), p)
    assert b.means[0] - a.means[0] == pytest.approx(dz, abs=1e-9)
    assert b.means[1] - a.means[1] == pytest.approx(dp, abs=1e-9)
    np.testing.assert_allclose(b.cov[:2, :2], a.cov[:2, :2], atol=1e-10)


def test_rotation_about_y():
    J = 5.0
    p = SystemParams(J=J)
    wf = coherent(p, theta=0.3)
    a = sse.expectations(wf, p)
    d = 0.01
    b = sse.expectations(sse.displace_rotate(wf, 0.0, 0.0, axis=(0, 1, 0), dtheta=d), p)
    R = np.array([[np.cos(d), 0, np.sin(d)], [0, 1, 0], [-np.sin(d), 0, np.cos(d)]])
    np.testing.assert_allclose(b.means[2:], R @ a.means[2:], atol=1e-9)
    ea = np.linalg.eigvalsh(a.cov[2:, 2:])
    eb = np.linalg.eigvalsh(b.cov[2:, 2:])
    np.testing.assert_allclose(eb, ea, atol=10 * d**2)
