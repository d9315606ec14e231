import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qtraj import classical as cl
from qtraj import gaussian as ga
from qtraj import lyapunov as ly
from qtraj.model import SystemParams

CP = cl.ClassicalParams(5.0, 0.4)

# frozen from tests/oracles/lyapunov_dop853.py (DOP853, Benettin, eps = 1e-6, N = 2000)
CHAOTIC = np.array([0.3, 0.6855654600401043, 0.0, 0.0, 1.0])
CHAOTIC_LAMBDA = 0.5442092008761455
REGULAR = np.array([76 / np.sqrt(2000.0), 0.0, 0.0, 0.0, -1.0])
REGULAR_LAMBDA = 0.0029264733021661274


@pytest.fixture(scope="module")
def flow():
    return ly.ClassicalFlow(CP)


# -- distance and neighbours --------------------------------------------------------------

def test_distance_zero_and_position_offset():
    a = np.array([0.2, 0.1, 0, 0, 1.0])
    assert ly.phase_distance(a, a) == 0.0
    assert ly.phase_distance(a, a + [1e-3, 0, 0, 0, 0]) == pytest.approx(1e-3)


@given(alpha=st.floats(1e-6, 0.5))
def test_distance_spin_chord(alpha):
    a = np.array([0, 0, 0, 0, 1.0])
    b = np.array([0, 0, np.sin(alpha), 0, np.cos(alpha)])
    assert ly.phase_distance(a, b) == pytest.approx(2 * np.sin(alpha / 2), rel=1e-9)


def test_distance_gaussian_uses_scales():
    p = SystemParams(J=2.0, dz=3.0)
    f = ly.GaussianFlow(p)
    s = ga.product_coherent(1.0, 0.0, [0, 0, 1], p)
    t = ga.GaussianState(s.means + [3e-3, 0, 0, 0, 0], s.cov)
    assert ly.phase_distance(s, t, f) == pytest.approx(1e-3)


def test_distance_mixed_families():
    p = SystemParams()
    with pytest.raises(TypeError):
        ly.phase_distance(cl.ClassicalState(0, 0, [0, 0, 1]), ga.product_coherent(0, 0, [0, 0, 1], p))


def test_neighbor_zero_eps(flow):
    np.testing.assert_array_equal(ly.make_neighbor(flow, CHAOTIC, np.ones(5), 0.0), CHAOTIC)


@given(seed=st.integers(0, 2**32 - 1), eps=st.floats(1e-8, 1e-3))
def test_neighbor_on_sphere_at_distance(seed, eps):
    f = ly.ClassicalFlow(CP)
    d = np.random.default_rng(seed).standard_normal(5)
    nb = ly.make_neighbor(f, CHAOTIC, d, eps)
    assert abs(np.linalg.norm(nb[2:]) - 1) < 1e-14
    assert ly.phase_distance(nb, CHAOTIC) == pytest.approx(eps, rel=1e-6)


def test_neighbor_restart_along_separation():
    p = SystemParams(J=10.0, b=0.1, c=0.05, k=0.1, dz=4.0)
    f = ly.GaussianFlow(p)
    fid = ga.product_coherent(2.0, 0.5, [0.6, 0, 0.8], p)
    other = ga.GaussianState(fid.means + [0.04, 0, 0, 0, 0], fid.cov)
    delta = f.coords(other) - f.coords(fid)
    d1 = np.linalg.norm(delta)
    eps = 1e-4
    nb = ly.make_neighbor(f, fid, delta / d1, eps)
    assert nb.means[0] == pytest.approx(fid.means[0] + delta[0] / d1 * eps * p.dz, rel=1e-12)
    assert nb.cov.tobytes() == fid.cov.tobytes()


def test_neighbor_large_eps_rejected():
    p = SystemParams(J=1.0, dz=1.0)
    f = ly.GaussianFlow(p)
    s = ga.product_coherent(0.0, 0.0, [0, 0, 1], p)
    with pytest.raises(ly.LyapunovError):
        ly.make_neighbor(f, s, np.array([0, 0, 1.0, 0, 0]), 0.5)


# -- single runs -------------------------------------------------------------------------------------

def test_linear_oscillator_zero_exponent_classical():
    f = ly.ClassicalFlow(cl.ClassicalParams(5.0, 0.0))
    est = ly.lyapunov_run(f, [1.0, 0, 1, 0, 0], 1e-4, 1.0, 2000, 3)
    assert abs(est.lam) < 0.01


def test_linear_oscillator_zero_exponent_quantum():
    p = SystemParams(k=0.0, J=1.0)
    f = ly.GaussianFlow(p, dt=1e-3)
    est = ly.lyapunov_run(f, ga.product_coherent(1.0, 0.0, [0, 0, 1], p), 1e-4, 1.0, 300, 3)
    assert abs(est.lam) < 0.01


def test_chaotic_matches_oracle(flow):
    est = ly.lyapunov_run(flow, CHAOTIC, 1e-4, 1.0, 2000, 7)
    assert est.lam > 0
    assert est.converged
    assert est.lam == pytest.approx(CHAOTIC_LAMBDA, rel=0.1)
    assert est.recompute() == pytest.approx(est.lam, rel=1e-14)


def test_regular_below_threshold(flow):
    est = ly.lyapunov_run(flow, REGULAR, 1e-6, 1.0, 2000, 7)
    assert est.lam < 0.02
    assert est.lam == pytest.approx(REGULAR_LAMBDA, abs=2e-3)


def test_eps_robust(flow):
    a = ly.lyapunov_run(flow, CHAOTIC, 1e-4, 1.0, 2000, 7)
    b = ly.lyapunov_run(flow, CHAOTIC, 1e-5, 1.0, 2000, 7)
    assert a.converged and b.converged
    assert abs(a.lam - b.lam) < 0.1 * abs(a.lam)


def test_underflow_detected(flow):
    with pytest.raises(ly.LyapunovError):
        ly.lyapunov_run(ly.ClassicalFlow(cl.ClassicalParams(5.0, 0.0)), [0, 0, 1, 0, 0], 1e-15, 1.0, 3, 0)


def test_shared_noise_keeps_identical_states_identical(small_params):
    p = small_params
    f = ly.GaussianFlow(p)
    from qtraj.noise import NoiseStream

    stream = NoiseStream(99, f.dt)
    a = b = ga.product_coherent(1.5 * p.dz, 0.0, [0, 0, -1], p)
    for _ in range(10):
        noise = stream.draw(1000)
        a = f.advance(a, 0.1, noise)
        b = f.advance(b, 0.1, noise)
        assert ly.phase_distance(a, b, f) == 0.0


def test_convergence_flag():
    assert ly._converged(np.full(100, 0.5))
    assert not ly._converged(np.linspace(0.1, 1.0, 100))
    # near-zero exponents pass through the absolute floor
    assert ly._converged(1e-3 * np.sin(np.arange(100)))


# -- ensembles ---------------------------------------------------------------------------------------

def test_distribution_deterministic():
    spec = ly.EnsembleSpec("classical", 0.58, 4, N=200, seed=5)
    a = ly.lyapunov_distribution(spec)
    b = ly.lyapunov_distribution(spec)
    assert a.samples.tobytes() == b.samples.tobytes()
    assert a.seeds == b.seeds
    assert a.hist_counts.sum() == 4
    assert len(a.hist_edges) == 21


def test_distribution_parallel_matches_serial():
    spec = ly.EnsembleSpec("classical", 0.58, 4, N=100, seed=5)
    par = ly.EnsembleSpec("classical", 0.58, 4, N=100, seed=5, workers=2)
    assert ly.lyapunov_distribution(spec).samples.tobytes() == ly.lyapunov_distribution(par).samples.tobytes()


def test_energy_stratification():
    from scipy.stats import mannwhitneyu

    cp = cl.ClassicalParams(2.5, 0.4)
    E_low = -0.5  # 0.08 above the minimum, where the regular islands live
    low = []
    for z in (-0.8707, -0.866, -0.86, 0.7983, 0.79, -1.2718):
        s = cl.section_state(z, 0.0, E_low, cp)
        low.append(ly.lyapunov_run(ly.ClassicalFlow(cp), s, 1e-6, 1.0, 300, 1).lam)
    spec = ly.EnsembleSpec("classical", 0.58, 6, N=300, seed=2, action_ratio=2.5)
    high = ly.lyapunov_distribution(spec).samples
    assert mannwhitneyu(low, high, alternative="less").pvalue < 0.01


def test_histogram_intersection_bounds():
    rng = np.random.default_rng(0)
    a = rng.normal(size=500)
    assert ly.histogram_intersection(a, a) == pytest.approx(1.0)
    assert ly.histogram_intersection(a, a + 100) == 0.0
