"""Scenario runner: ``tfelab verify | simulate | green | norms``.

Configuration is flat ``key = value`` text (``#`` starts a comment).  Keys:

    n, grid.M, grid.Xmax, grid.gamma, grid.K, grid.Lambda,
    time.dt, time.T, norm.p, scenario.name, scenario.epsilon, seed, out.dir

plus the scenario parameters ``scenario.sources``, ``scenario.widths``,
``scenario.times``, ``scenario.steps`` (green probes, comma-separated) and
``scenario.tests`` (number of weak-form test functions).  Every run writes
``config.txt`` (the resolved configuration) and ``verdicts.csv`` (check,
module, value, relation, threshold, passed) to the output directory; no
timestamps are written, so identical configurations give identical records.

Exit codes: 0 all checks passed, 1 a check failed, 2 usage or configuration
error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    n: int = 1
    M: int = 256
    Xmax: float = 8.0
    gamma: float = 2.0
    K: int = 1
    Lambda: float = 2 * np.pi
    dt: float = 1e-3
    T: float = 0.1
    p: float | None = None
    scenario: str = "film"
    epsilon: float = 1e-2
    sources: tuple = (1.0, 0.0)
    widths: tuple = (0.03, 0.002)
    times: tuple = (5e-5, 1e-4, 2e-4)
    steps: int = 500
    tests: int = 20
    seed: int = 0
    out: str = "tfelab-out"

    def __post_init__(self):
        for name in ("M", "Xmax", "gamma", "K", "Lambda", "dt", "T", "steps", "tests"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.n not in (1, 2, 3):
            raise ConfigError("n must be 1, 2 or 3")
        if self.epsilon < 0:
            raise ConfigError("scenario.epsilon must be nonnegative")
        if self.p is None:
            self.p = float(self.n + 3)
        if self.p <= self.n + 2:
            warnings.warn(f"norm.p = {self.p} <= n + 2", stacklevel=2)
        if len(self.widths) != len(self.sources):
            raise ConfigError("scenario.widths must match scenario.sources")

    def grid(self):
        from .grid import Grid
        K = self.K if self.n > 1 else 1
        return Grid(self.n, self.M, self.Xmax, self.gamma, K, self.Lambda)

    def echo(self) -> str:
        rows = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(float(x)) for x in v)
            rows.append(f"{_KEYS_INV[f.name]} = {v}")
        return "\n".join(rows) + "\n"


_KEYS = {
    "n": ("n", int), "grid.M": ("M", int), "grid.Xmax": ("Xmax", float),
    "grid.gamma": ("gamma", float), "grid.K": ("K", int), "grid.Lambda": ("Lambda", float),
    "time.dt": ("dt", float), "time.T": ("T", float), "norm.p": ("p", float),
    "scenario.name": ("scenario", str), "scenario.epsilon": ("epsilon", float),
    "scenario.sources": ("sources", "list"), "scenario.widths": ("widths", "list"),
    "scenario.times": ("times", "list"), "scenario.steps": ("steps", int),
    "scenario.tests": ("tests", int), "seed": ("seed", int), "out.dir": ("out", str),
}
_KEYS_INV = {v[0]: k for k, v in _KEYS.items()}


def parse_config(text: str) -> dict:
    """Parse ``key = value`` lines into RunConfig keyword arguments."""
    out = {}
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {ln}: unknown key {key!r}")
        name, typ = _KEYS[key]
        try:
            if typ == "list":
                out[name] = tuple(float(x) for x in val.split(",") if x.strip())
            else:
                out[name] = typ(val)
        except ValueError:
            raise ConfigError(f"line {ln}: bad value {val!r} for {key}") from None
    return out


def load_config(path=None, **overrides) -> RunConfig:
    kw = parse_config(Path(path).read_text()) if path else {}
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**kw)


@dataclass
class Verdict:
    check: str
    module: str
    value: float
    relation: str
    threshold: float

    @property
    def passed(self) -> bool:
        v, t = self.value, self.threshold
        if not np.isfinite(v):
            return False
        return {"<=": v <= t, "<": v < t, ">=": v >= t, ">": v > t}[self.relation]


@dataclass
class RunRecord:
    config: RunConfig
    verdicts: list = field(default_factory=list)
    series: dict = field(default_factory=dict)

    def add(self, check, module, value, relation, threshold):
        self.verdicts.append(Verdict(check, module, float(value), relation, float(threshold)))

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def write(self, out: Path):
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(self.config.echo())
        with open(out / "verdicts.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["check", "module", "value", "relation", "threshold", "passed"])
            for v in self.verdicts:
                w.writerow([v.check, v.module, repr(v.value), v.relation, repr(v.threshold), int(v.passed)])
        for name, (head, rows) in self.series.items():
            with open(out / name, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(head)
                w.writerows([[repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r]
                             for r in rows])

    def table(self) -> str:
        lines = [f"{'check':34s} {'module':13s} {'value':>12s}   {'threshold':>10s}  verdict"]
        for v in self.verdicts:
            lines.append(f"{v.check:34s} {v.module:13s} {v.value:12.4g} {v.relation:>2s} {v.threshold:10.3g}  "
                         f"{'pass' if v.passed else 'FAIL'}")
        return "\n".join(lines)


# ------------------------------------------------------------------ verify


def cmd_verify(cfg: RunConfig) -> RunRecord:
    from scipy import special

    from . import besselkernel as bk
    from .geometry import ball_measure_1d, rho
    from .grid import Field, Grid, integrate
    from .hodograph import FilmState, forward_transform, nonlinearity
    from .linop import apply_L, factorization_residual

    rec = RunRecord(cfg)
    g = cfg.grid()
    X = g.coords()
    xn = X[-1]

    # grid: boundary-weighted quadrature of sqrt(x) e^-x
    q = integrate(Field(g, np.sqrt(xn) * np.exp(-xn)))
    exact = special.gamma(1.5) * special.gammainc(1.5, g.Xmax)
    rec.add("quadrature_sqrt_exp", "grid", abs(q - exact) / exact, "<=", 1e-6)

    # geometry: exact boundary balls and doubling
    rec.add("ball_mu0_boundary", "geometry", abs(ball_measure_1d(np.array([0.0]), 1.0, 0.0)[0] - 4) / 4, "<=", 1e-10)
    rec.add("ball_mu1_boundary", "geometry", abs(ball_measure_1d(np.array([0.0]), 1.0, 1.0)[0] - 8) / 8, "<=", 1e-10)
    Rs, hs = np.meshgrid(np.geomspace(1e-2, 10, 10), np.geomspace(1e-4, 10, 10))
    worst = 0.0
    for sig in (0.0, 1.0, 3.0):
        worst = max(worst, float(np.max(ball_measure_1d(hs.ravel(), 2 * Rs.ravel(), sig)
                                        / ball_measure_1d(hs.ravel(), Rs.ravel(), sig))))
    rec.add("doubling_ratio_n1", "geometry", worst, "<=", 2.0 ** 10)
    a = np.array([[0.3], [2.0]])
    rec.add("rho_symmetry", "geometry", abs(float(rho(a[:1], a[1:])[0] - rho(a[1:], a[:1])[0])), "<=", 1e-15)

    # linop: polynomial identities on the lower half of the grid
    keep = xn <= g.Xmax / 2
    L2 = apply_L(Field(g, xn ** 2)).values
    rec.add("L_xn2_equals_12", "linop", float(np.max(np.abs(L2[keep] - 12))) / 12, "<=", 1e-8)
    L1 = apply_L(Field(g, xn)).values
    rec.add("L_xn_equals_0", "linop", float(np.max(np.abs(L1[keep]))), "<=", 1e-8)
    poly = Field(g, xn ** 3 - 2 * xn ** 2 + xn)
    Ld = apply_L(poly, "divergence").values
    Le = apply_L(poly, "expanded").values
    rec.add("divergence_vs_expanded", "linop",
            float(np.max(np.abs(Ld - Le)[keep]) / np.max(np.abs(Le[keep]))), "<=", 1e-10)
    # the factorization residual is a truncation error: check it at M >= 1024
    gf = g if g.M >= 1024 else Grid(g.n, 1024, g.Xmax, g.gamma, g.K, g.Lambda)
    xf = gf.coords()[-1]
    bump = Field(gf, np.exp(-(xf - 2) ** 2 / 0.3) * xf ** 2)
    rec.add("factorization_residual", "linop", factorization_residual(bump), "<=", 1e-6)

    # Bessel machinery
    z = np.linspace(0.01, 20, 2000)
    rec.add("wronskian_z2", "besselkernel", float(np.max(np.abs(z ** 2 * bk.wronskian(z) + 1))), "<=", 1e-12)
    zz = np.linspace(0, 60, 1601)
    u = bk.solve_reduced(zz, -2 * np.exp(-zz))
    rec.add("manufactured_exp", "besselkernel", float(np.max(np.abs(u - np.exp(-zz))[zz <= 20])), "<=", 1e-6)

    # hodograph: flat film and affine perturbations
    y = np.linspace(-0.5, g.Xmax + 0.5, 4 * g.M + 1)
    flat = FilmState.from_function(g, y, lambda *c: np.maximum(c[-1], 0) ** 2)
    rec.add("flat_film_transform", "hodograph", float(np.max(np.abs(forward_transform(flat).values))), "<=", 1e-12)
    rng = np.random.default_rng(cfg.seed)
    worst = 0.0
    for _ in range(5):
        c = rng.uniform(-0.5, 0.5, g.n) / np.sqrt(g.n)
        aff = sum(c[i] * X[i] for i in range(g.n)) if g.n == 1 or not g.periodic else c[-1] * xn
        worst = max(worst, float(np.max(np.abs(nonlinearity(Field(g, aff + 0 * xn)).values))))
    rec.add("affine_annihilation", "hodograph", worst, "<=", 1e-5)
    return rec


# ---------------------------------------------------------------- simulate


def initial_film(cfg: RunConfig, grid, y):
    from .hodograph import FilmState
    eps = cfg.epsilon if cfg.scenario != "flat" else 0.0

    def hh(*c):
        yn = c[-1]
        mod = 1.0
        if grid.n > 1:
            mod = np.cos(2 * np.pi * c[0] / grid.Lambda)
        r = yn + eps * yn * np.exp(-(yn - 1.5) ** 2 / 0.5) * mod
        return np.maximum(r, 0.0) ** 2

    return FilmState.from_function(grid, y, hh, 0.0)


def cmd_simulate(cfg: RunConfig, out: Path) -> tuple[RunRecord, int]:
    from .evolution import ContractionError, duhamel_fixed_point, solve_linear, _nonlinear_forcing
    from .hodograph import forward_transform, free_boundary, random_test_functions, weak_residual
    from .norms import default_plan, film_xp_seminorm, lipschitz_seminorm, xp_norm

    if cfg.scenario not in ("flat", "film"):
        raise ConfigError(f"unknown scenario {cfg.scenario!r} for simulate")
    rec = RunRecord(cfg)
    g = cfg.grid()
    y = np.linspace(-0.5, g.Xmax + 0.5, 4 * g.M + 1)
    u0 = forward_transform(initial_film(cfg, g, y), g)
    lip = lipschitz_seminorm(u0)
    rec.add("initial_lipschitz", "hodograph", lip, "<", 1.0)
    if not lip < 1:
        print(f"contraction failure: initial perturbation has |grad u| = {lip:.3g} >= 1", file=sys.stderr)
        return rec, 1
    try:
        traj, trace = duhamel_fixed_point(u0, cfg.T, cfg.dt, p=cfg.p)
    except ContractionError as exc:
        tr = exc.trace
        if tr is not None:
            rec.series["fixed_point.csv"] = (["iteration", "distance", "norm"],
                                             [[m + 1, d, nm] for m, (d, nm) in enumerate(zip(tr.distances, tr.norms))])
        rec.add("fixed_point_converged", "evolution", 0.0, ">=", 1.0)
        print(f"contraction failure: {exc}", file=sys.stderr)
        return rec, 1
    rec.add("fixed_point_converged", "evolution", float(trace.converged), ">=", 1.0)
    rec.series["fixed_point.csv"] = (["iteration", "distance", "ratio", "norm"],
                                     [[m + 1, d, (trace.ratios[m - 1] if 0 < m <= len(trace.ratios) else float("nan")), nm]
                                      for m, (d, nm) in enumerate(zip(trace.distances, trace.norms))])
    traj.save(out / "trajectory")
    plan = default_plan(g, traj.times)
    xp = xp_norm(traj, cfg.p, plan)
    F = _nonlinear_forcing(traj)
    _, ledger = solve_linear(u0, F, T=cfg.T, tau=cfg.dt)
    rec.series["energy.csv"] = (["step", "time", "energy", "dissipation", "work"],
                                [[k, t, e, (ledger.dissipation[k - 1] if k else 0.0), (ledger.work[k - 1] if k else 0.0)]
                                 for k, (t, e) in enumerate(zip(ledger.times, ledger.energy))])
    fb = np.stack([np.atleast_1d(free_boundary(traj.field(k))) for k in range(len(traj))])
    rec.series["free_boundary.csv"] = (["time"] + [f"y{i}" for i in range(fb.shape[1])],
                                       [[t] + list(r) for t, r in zip(traj.times, fb)])
    film = film_xp_seminorm(traj, cfg.p, plan)
    rec.series["norms.csv"] = (["quantity", "value"], [["xp_norm", xp], ["film_xp_seminorm", film],
                                                       ["lipschitz_g", lip]])
    if cfg.scenario == "flat":
        rec.add("flat_film_seminorm", "norms", film, "<=", 0.0)
        rec.add("flat_xp_norm", "norms", xp, "<=", 0.0)
    else:
        tests = random_test_functions(cfg.tests, g, cfg.T, (0.3, min(2.0, g.Xmax / 4)), cfg.seed)
        res = [abs(weak_residual(traj.times, [traj.field(k) for k in range(len(traj))], phi, relative=True))
               for phi in tests]
        rec.series["weak_residual.csv"] = (["test", "relative_residual"], [[i, r] for i, r in enumerate(res)])
        rec.add("weak_residual_max", "hodograph", max(res), "<=", 1e-2)
        jumps = np.max(np.abs(np.diff(fb, axis=0))) if len(fb) > 1 else 0.0
        rec.add("boundary_trace_step_jump", "hodograph", jumps, "<=", 10 * cfg.dt)
    return rec, 0 if rec.passed else 1


# ------------------------------------------------------------------- green


def cmd_green(cfg: RunConfig, out: Path) -> tuple[RunRecord, int]:
    from .greenlab import fit_envelope, probe_kernel, superpolynomial_check
    rec = RunRecord(cfg)
    g = cfg.grid()
    if g.n != 1:
        raise ConfigError("green probes are implemented for n = 1")
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for y0, w in zip(cfg.sources, cfg.widths):
        tag = f"y{y0:g}"
        probes = probe_kernel(g, (y0,), w, list(cfg.times), cfg.steps)
        half = probe_kernel(g, (y0,), w / 2, list(cfg.times), cfg.steps)
        width = max(float(np.max(np.abs(p.normalized - h.normalized)) / np.max(p.normalized))
                    for p, h in zip(probes, half))
        for p in probes:
            p.to_csv(out / f"probe_{tag}_t{p.t:g}.csv")
        fit = fit_envelope(probes)
        dec = superpolynomial_check(probes[0], N=10)
        summary.append({"source": y0, "width": w, **json.loads(fit.to_text()),
                        "superpoly_peak": dec.peak, "superpoly_tail": dec.tail, "superpoly_slope": dec.tail_slope})
        rec.add(f"{tag}_width_consistency", "greenlab", width, "<=", 0.05)
        rec.add(f"{tag}_fit_q_low", "greenlab", fit.q, ">=", 0.2)
        rec.add(f"{tag}_fit_q_high", "greenlab", fit.q, "<=", 0.5)
        rec.add(f"{tag}_fit_b", "greenlab", fit.b, ">", 0.0)
        rec.add(f"{tag}_superpoly_tail_over_peak", "greenlab", dec.tail / dec.peak, "<", 1.0)
        rec.add(f"{tag}_superpoly_tail_slope", "greenlab", dec.tail_slope, "<", 0.0)
    (out / "fits.txt").write_text("\n".join(json.dumps(s, sort_keys=True) for s in summary) + "\n")
    return rec, 0 if rec.passed else 1


# ------------------------------------------------------------------- norms


def load_run(path: Path):
    from .evolution import Trajectory
    from .grid import load_field
    path = Path(path)
    if (path / "trajectory" / "index.csv").exists():
        return Trajectory.load(path / "trajectory")
    if (path / "index.csv").exists():
        return Trajectory.load(path)
    if path.is_file():
        f = load_field(path)
        return Trajectory(f.grid, [f.t or 0.0], f.values[None])
    raise ConfigError(f"no trajectory or snapshot at {path}")


def cmd_norms(cfg: RunConfig, run: Path, out: Path) -> tuple[RunRecord, int]:
    from .evolution import Trajectory, _nonlinear_forcing
    from .norms import default_plan, film_xp_seminorm, lipschitz_seminorm, xp_norm, yp_norm
    rec = RunRecord(cfg)
    traj = load_run(run)
    g = traj.grid
    p = cfg.p if cfg.p is not None else g.n + 3
    rows = [["lipschitz_max", max(lipschitz_seminorm(traj.field(k)) for k in range(len(traj)))]]
    if len(traj) > 1:
        plan = default_plan(g, traj.times)
        rows.append(["xp_norm", xp_norm(traj, p, plan)])
        rows.append(["yp_norm_f", yp_norm(Trajectory(g, traj.times, _nonlinear_forcing(traj)), p, plan)])
        rows.append(["film_xp_seminorm", film_xp_seminorm(traj, p, plan)])
    rec.series["norms.csv"] = (["quantity", "value"], rows)
    for name, val in rows:
        rec.add(name + "_finite", "norms", 0.0 if np.isfinite(val) else 1.0, "<=", 0.0)
    return rec, 0 if rec.passed else 1


# -------------------------------------------------------------------- main


def build_parser():
    ap = argparse.ArgumentParser(prog="tfelab", description="thin-film linearization laboratory")
    sub = ap.add_subparsers(dest="cmd", required=True)
    for name in ("verify", "simulate", "green", "norms"):
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path)
        s.add_argument("--out", type=Path)
        s.add_argument("--seed", type=int)
        s.add_argument("--quiet", action="store_true")
        if name == "norms":
            s.add_argument("run", type=Path, help="run directory or snapshot CSV")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = load_config(args.config, seed=args.seed)
        out = args.out if args.out is not None else Path(cfg.out)
        if args.cmd == "verify":
            rec = cmd_verify(cfg)
            code = 0 if rec.passed else 1
        elif args.cmd == "simulate":
            rec, code = cmd_simulate(cfg, out)
        elif args.cmd == "green":
            rec, code = cmd_green(cfg, out)
        else:
            rec, code = cmd_norms(cfg, args.run, out)
    except (ConfigError, OSError, TypeError) as exc:
        print(f"tfelab: configuration error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"tfelab: rejected: {exc}", file=sys.stderr)
        return 2
    rec.write(out)
    if not args.quiet:
        print(rec.table())
    for v in rec.verdicts:
        if not v.passed:
            print(f"tfelab: check failed: {v.check} ({v.module}) value {v.value:.4g} "
                  f"{v.relation} {v.threshold:.3g} violated", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
