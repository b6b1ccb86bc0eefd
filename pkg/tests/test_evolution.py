import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tfelab.evolution import (ContractionError, Stepper, Trajectory,
                              duhamel_fixed_point, energy_identity_residual, evolve_homogeneous,
                              geometric_times, imex_direct, scaling_equivariance_check,
                              smoothing_probe, solve_linear)
from tfelab.grid import Field, Grid
from tfelab.linop import OperatorMatrix


def _bump(g, c=1.5, w=0.5, amp=1.0):
    x = g.coords()[-1]
    return Field(g, amp * np.exp(-(x - c) ** 2 / w) * x)


def test_stepper_validation():
    g = Grid(M=16)
    with pytest.raises(ValueError):
        Stepper(g, 0.0, 1.0)
    with pytest.raises(ValueError):
        Stepper(g, 0.3, 1.0)
    with pytest.raises(ValueError):
        Stepper(g, 0.1, 1.0, scheme="rk4")
    with pytest.raises(ValueError):
        solve_linear(Field(g, g.xn))


def test_zero_data_stays_zero():
    g = Grid(M=32)
    tr, led = solve_linear(Field(g, np.zeros(g.shape)), T=0.1, tau=0.01)
    assert np.all(tr.values == 0)
    assert energy_identity_residual(led) == 0


def test_kernel_element_is_stationary():
    g = Grid(M=128, Xmax=8)
    op = OperatorMatrix(g, "extrapolate")
    st_ = Stepper(g, 1e-2, 0.5, op=op)
    tr, _ = solve_linear(Field(g, g.xn), stepper=st_)
    assert np.max(np.abs(tr.values - g.xn)) < 1e-8
    # the natural (zero-flux) top does not keep x_n: the defect enters from the
    # truncation and is largest there
    tr, _ = solve_linear(Field(g, g.xn), T=0.01, tau=1e-3)
    d = np.abs(tr.values[-1] - g.xn)
    assert np.max(d[g.xn < 1]) < 1e-2 * np.max(d)


def test_energy_monotone_and_identity():
    g = Grid(M=128)
    tr, led = solve_linear(_bump(g), T=0.1, tau=1e-3)
    assert np.all(np.diff(led.energy) <= 1e-15 * led.energy[0])
    assert led.residual() / 0.1 < 1e-10
    with pytest.raises(ValueError):
        led.residual(3, 3)


def test_implicit_euler_identity_first_order():
    g = Grid(M=128)
    res = []
    for tau in (1e-3, 5e-4, 2.5e-4):
        _, led = solve_linear(_bump(g), T=0.05, tau=tau, scheme="implicit-euler")
        res.append(led.residual())
    ratios = np.array(res[:-1]) / np.array(res[1:])
    assert np.all((ratios > 1.7) & (ratios < 2.3))


def test_forced_energy_balance():
    g = Grid(M=128)
    f = lambda t: np.cos(3 * t) * np.exp(-(g.xn - 1) ** 2)
    _, led = solve_linear(_bump(g), f, T=0.1, tau=1e-3)
    assert led.residual() < 1e-10


def test_conserved_first_moment():
    # integral of u against mu_1 is preserved because K 1 = 0
    g = Grid(M=128)
    tr, _ = solve_linear(_bump(g), T=0.05, tau=1e-3)
    op = OperatorMatrix(g, "natural")
    m = [np.sum(op.mass * tr.values[k]) for k in range(len(tr))]
    assert np.max(np.abs(np.array(m) - m[0])) < 1e-12 * abs(m[0])


def test_trajectory_save_load(tmp_path):
    g = Grid(M=32)
    tr, led = solve_linear(_bump(g), T=0.02, tau=1e-2)
    back = Trajectory.load(tr.save(tmp_path / "traj"))
    assert np.array_equal(back.times, tr.times)
    assert np.array_equal(back.values, tr.values)
    led.to_csv(tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().startswith("step,time,energy")


def test_trajectory_shape_check():
    g = Grid(M=16)
    with pytest.raises(ValueError):
        Trajectory(g, [0.0, 1.0], np.zeros((3, 17)))


def test_geometric_times():
    t = geometric_times(1e-4, 1e-1, per_decade=10, n_start=5)
    assert t[0] == 0 and t[-1] == pytest.approx(1e-1)
    assert np.all(np.diff(t) > 0)
    assert len(t) == 5 + 30 + 1


def test_evolve_homogeneous_matches_stepper():
    g = Grid(M=64)
    times = np.linspace(0, 0.02, 11)
    a, _ = evolve_homogeneous(_bump(g), times)
    b, _ = solve_linear(_bump(g), T=0.02, tau=2e-3, scheme="implicit-euler", extended=False)
    assert np.allclose(a.values, b.values, rtol=1e-10, atol=1e-13)


def test_smoothing_probe_affine_is_zero():
    g = Grid(M=128)
    r = smoothing_probe(Field(g, 0.01 * g.xn), np.geomspace(1e-4, 1e-2, 3),
                        op=OperatorMatrix(g, "extrapolate"))
    for col in r["columns"].values():
        assert np.max(col) < 1e-6
    with pytest.raises(ValueError):
        smoothing_probe(Field(g, np.ones(g.shape)), [1e-3])


def test_fixed_point_trivial_cases():
    g = Grid(M=64)
    u, tr = duhamel_fixed_point(Field(g, np.zeros(g.shape)), 0.01, 1e-3)
    assert tr.converged and len(tr.distances) == 1 and np.all(u.values == 0)
    op = OperatorMatrix(g, "extrapolate")
    st_ = Stepper(g, 1e-3, 0.01, op=op)
    u, tr = duhamel_fixed_point(Field(g, 0.1 * g.xn), 0.01, 1e-3, stepper=st_)
    assert tr.converged and len(tr.distances) == 1
    assert np.max(np.abs(u.values - 0.1 * g.xn)) < 1e-8


def test_fixed_point_small_data_contracts():
    g = Grid(M=128)
    u, tr = duhamel_fixed_point(_bump(g, amp=1e-2), 0.05, 1e-3)
    assert tr.converged
    assert max(tr.ratios) < 0.5
    im = imex_direct(_bump(g, amp=1e-2), 0.05, 1e-3)
    d = np.max(np.abs(im.values[-1] - u.values[-1])) / np.max(np.abs(im.values[-1]))
    assert d < 1e-2


def test_fixed_point_large_data_fails():
    g = Grid(M=64)
    with pytest.raises(ContractionError):
        duhamel_fixed_point(_bump(g, amp=3.0), 0.05, 1e-3)


def test_scaling_identity_lambda_one():
    g = Grid(M=64)
    assert scaling_equivariance_check(_bump(g), 1.0, 0.02, 1e-3) == 0
    assert scaling_equivariance_check(_bump(g), 1.0, 0.02, 1e-3, truncation="same") == 0


def test_scaling_second_order_with_resampling():
    r = []
    for M in (128, 256):
        g = Grid(M=M)
        r.append(scaling_equivariance_check(_bump(g), 2.0, 0.05, 1e-3, M_scaled=3 * M // 4))
    assert 3.5 < r[0] / r[1] < 4.5
    with pytest.raises(ValueError):
        scaling_equivariance_check(_bump(Grid(M=32)), 2.0, 0.05, 1e-3, truncation="other")


@settings(max_examples=10, deadline=None)
@given(st.floats(-2, 2), st.floats(-2, 2))
def test_linear_superposition(a, b):
    g = Grid(M=64)
    u1, _ = solve_linear(_bump(g, 1.0), T=0.01, tau=1e-3)
    u2, _ = solve_linear(_bump(g, 2.0), T=0.01, tau=1e-3)
    u3, _ = solve_linear(Field(g, a * _bump(g, 1.0).values + b * _bump(g, 2.0).values),
                         T=0.01, tau=1e-3)
    assert np.allclose(u3.values, a * u1.values + b * u2.values, atol=1e-12)
