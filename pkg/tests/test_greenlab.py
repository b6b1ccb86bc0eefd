import json

import numpy as np
import pytest

from tfelab.grid import Field, Grid
from tfelab.greenlab import (EnvelopeFit, admissible_q, collapse_correlation, evolve,
                             exterior_decay_check, fit_envelope, kernel_Lq_norm, noise_floor,
                             predicted_height_exponent, probe_kernel, shell_maxima, source_bump,
                             superpolynomial_check, symmetry_defect)
from tfelab.linop import OperatorMatrix


@pytest.fixture(scope="module")
def grid():
    return Grid(M=512, Xmax=8)


@pytest.fixture(scope="module")
def long_run():
    g = Grid(M=1024, Xmax=16)
    ts = [k * 2e-3 for k in (4, 8, 16, 32, 64, 128, 256, 512, 1024)]
    return g, probe_kernel(g, (1.0,), 0.05, ts, n_steps=1024)


def test_source_bump(grid):
    g, m = source_bump(grid, (1.0,), 0.05)
    assert m == pytest.approx(1.0, rel=1e-3)
    assert np.all(g.values >= 0)
    with pytest.raises(ValueError, match="unresolved"):
        source_bump(Grid(M=32), (1.0,), 0.01)


def test_probe_time_too_small(grid):
    with pytest.raises(ValueError, match="three steps"):
        probe_kernel(grid, (1.0,), 0.05, [1e-5, 1e-1], n_steps=100)
    with pytest.raises(ValueError, match="step grid"):
        probe_kernel(grid, (1.0,), 0.05, [0.0123456, 0.1], n_steps=100)


def test_flow_is_linear(grid):
    g1, _ = source_bump(grid, (1.0,), 0.05)
    g2, _ = source_bump(grid, (2.0,), 0.05)
    op = OperatorMatrix(grid, "natural")
    _, a, _, _ = evolve(g1, [0.01], 100, op)
    _, b, _, _ = evolve(g2, [0.01], 100, op)
    _, c, _, _ = evolve(Field(grid, 2 * g1.values - 3 * g2.values), [0.01], 100, op)
    assert np.allclose(c[0], 2 * a[0] - 3 * b[0], atol=1e-12 * np.abs(c[0]).max())


def test_first_moment_conserved(grid):
    g0, _ = source_bump(grid, (1.0,), 0.05)
    op = OperatorMatrix(grid, "natural")
    _, snaps, (times, allsnaps), _ = evolve(g0, [0.01, 0.05, 0.1], 200, op)
    m = allsnaps.reshape(len(times), -1) @ op.mass
    m0 = np.sum(op.mass * g0.values.ravel())
    # exact in exact arithmetic; the LU solves lose about 1e-12 per step
    assert np.max(np.abs(m - m0)) < 1e-11 * len(times) * abs(m0)


def test_time_profile_rises_then_decays(long_run):
    g, ps = long_run
    i = np.argmin(np.abs(g.xn - 2.0))
    vals = np.array([abs(p.u.values[i]) for p in ps])
    k = int(np.argmax(vals))
    assert 0 < k < len(vals) - 1
    assert np.all(np.diff(vals[:k + 1]) > 0) and np.all(np.diff(vals[k:]) < 0)


def test_sign_change(long_run):
    g, ps = long_run
    i = np.argmin(np.abs(g.xn - 3.0))
    vals = np.array([p.u.values[i] for p in ps])
    assert vals.min() < 0 < vals.max()


def test_width_consistency(grid):
    a = probe_kernel(Grid(M=1024), (1.0,), 0.03, 1e-4, n_steps=500)
    b = probe_kernel(Grid(M=1024), (1.0,), 0.015, 1e-4, n_steps=500)
    fl = max(noise_floor(a), noise_floor(b))
    keep = (a.normalized > 100 * fl) & (b.normalized > 100 * fl)
    d = np.abs(a.normalized - b.normalized)[keep] / np.max(a.normalized)
    assert d.max() < 0.05


def test_shell_maxima_and_fit(grid):
    ps = probe_kernel(Grid(M=1024), (1.0,), 0.03, [5e-5, 1e-4, 2e-4], n_steps=500)
    s, m = shell_maxima(ps[0])
    assert np.all(np.diff(s) > 0) and np.all(m >= 0)
    fit = fit_envelope(ps)
    assert isinstance(fit, EnvelopeFit)
    assert 0.2 <= fit.q <= 0.5 and fit.b > 0
    d = json.loads(fit.to_text())
    assert d["q"] == pytest.approx(fit.q)
    assert collapse_correlation(ps) < -0.9
    chk = superpolynomial_check(ps[0], N=10)
    assert chk.passed


def test_probe_csv(tmp_path):
    p = probe_kernel(Grid(M=256), (1.0,), 0.1, 1e-3, n_steps=50)
    path = p.to_csv(tmp_path / "p.csv")
    head = path.read_text().splitlines()[0]
    assert head.split(",") == ["x1", "rho", "t", "raw", "normalized"]


def test_exterior_decay_bounded_and_decreasing():
    g = Grid(M=512, Xmax=8)
    r = [exterior_decay_check(g, (y,), (0.5,), 0.05, 0.7) for y in (1.5, 3.0, 4.5)]
    assert max(r) < 10
    assert exterior_decay_check(g, (3.0,), (0.5,), 0.05, 0.7, source_scale=0.0) == 0


def test_admissibility():
    assert admissible_q(1, 0, (1,)) == pytest.approx(1.5)
    assert predicted_height_exponent(1, 0, (1,), 2.0) == pytest.approx(0.5)
    assert predicted_height_exponent(1, 0, (1,), 1.5) == pytest.approx(0.0)
    g = Grid(M=256)
    with pytest.raises(ValueError):
        kernel_Lq_norm(g, (1.0,), 0.1, 0, (1,), 0.5)


def test_kernel_mass_finite():
    vals = [kernel_Lq_norm(Grid(M=M), (1.0,), 0.1, 0, (0,), 1.0, t_min=1e-6, per_decade=10)
            for M in (256, 512)]
    assert np.all(np.isfinite(vals))
    assert vals[0] == pytest.approx(vals[1], rel=0.05)


def test_symmetry_of_weighted_kernel():
    g = Grid(M=1024, Xmax=8)
    assert symmetry_defect(g, (1.0,), (1.5,), 0.05, 0.01) < 0.02
