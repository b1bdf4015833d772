"""Command line interface: ``pauli-lab <subcommand> ...``.

Exit status: 0 success, 1 parse/format error, 2 precondition violation,
3 solver failure, 4 inconclusive verdict under ``--strict``.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import io as pio
from ._validation import SingularPointError
from .grid import Grid
from .measure import DyadicScaleError, SignedMeasure, dyadic_scale, epsilon_mu, flux, reduce, total_variation
from .spectrum import SpectrumError

logger = logging.getLogger("pauli_lab")

EXIT_OK, EXIT_PARSE, EXIT_PRECONDITION, EXIT_SOLVER, EXIT_INCONCLUSIVE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- config

@dataclass
class RunConfig:
    """Everything a run depends on; echoed into every report."""

    subcommand: str
    inputs: list = field(default_factory=list)
    output: Optional[str] = None
    grid: Optional[str] = None
    eps: Optional[float] = None
    k: Optional[int] = None
    seed: Optional[int] = None
    format: str = "table"
    strict: bool = False
    options: dict = field(default_factory=dict)

    def echo(self):
        d = asdict(self)
        d.pop("output")
        return d


class RunResult(NamedTuple):
    status: int
    text: str


def _render(tables, config, fmt):
    out = []
    for t in tables:
        if fmt == "rows":
            out.append(f"# schema: {pio.REPORT_SCHEMA} {t.kind}\n# config: "
                       + json.dumps(config, sort_keys=True, default=pio._json_default) + "\n")
            for r in t.rows:
                out.append(t.kind + " " + " ".join(f"{c}={pio._fmt(v)}" for c, v in zip(t.columns, r)) + "\n")
        else:
            out.append(t.render(config))
    return "".join(out)


def parse_range(text):
    """``"a..b"`` -> ``range(a, b + 1)``; a single integer is a one-element range."""
    try:
        if ".." in text:
            a, b = text.split("..")
            a, b = int(a), int(b)
        else:
            a = b = int(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a..b, got {text!r}") from exc
    if b < a:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return range(a, b + 1)


def parse_floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def parse_grid(text):
    try:
        return Grid.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


# ---------------------------------------------------------------- gauge comparison

class GaugeVerdict(NamedTuple):
    equivalent: bool
    diff: list  # [((x, y), n)]: integer atoms of B minus those of A
    atom_mismatch: float
    density_mismatch: float
    radial_mismatch: float

    @property
    def verdict(self):
        return "gauge-equivalent" if self.equivalent else "not-equivalent"


def _atom_dict(removed):
    return {(float(p[0]), float(p[1])): int(n) for p, n in zip(removed.positions, removed.n)}


def compare_gauge(field_a: SignedMeasure, field_b: SignedMeasure, tol: float = 1e-12) -> GaugeVerdict:
    """Gauge equivalence: equal reductions (atoms and cellwise density, within ``tol``)."""
    a, ra = reduce(field_a)
    b, rb = reduce(field_b)
    inf = math.inf
    # atoms
    atom_err = 0.0
    if len(a.atoms) != len(b.atoms):
        atom_err = inf
    elif len(a.atoms):
        A = a.atoms[np.lexsort((a.atoms[:, 1], a.atoms[:, 0]))]
        B = b.atoms[np.lexsort((b.atoms[:, 1], b.atoms[:, 0]))]
        atom_err = float(np.abs(A - B).max())
    # density
    da, db = a.density, b.density
    if da is None and db is None:
        dens_err = 0.0
    elif da is None or db is None:
        dens_err = float(np.abs((da or db).values).max())
    elif da.shape != db.shape or not np.allclose(da.origin, db.origin, rtol=0, atol=tol) \
            or not np.allclose(da.spacing, db.spacing, rtol=0, atol=tol):
        dens_err = inf
    else:
        dens_err = float(np.abs(da.values - db.values).max())
    # radial channel: compare Phi on the union of knots
    pa, pb = a.radial, b.radial
    if pa is None and pb is None:
        rad_err = 0.0
    else:
        knots = np.union1d(pa.r if pa is not None else [], pb.r if pb is not None else [])
        fa = pa.flux_within(knots) if pa is not None else 0.0
        fb = pb.flux_within(knots) if pb is not None else 0.0
        rad_err = float(np.abs(np.asarray(fa) - np.asarray(fb)).max())
        if pa is not None and pb is not None and not np.allclose(pa.center, pb.center, rtol=0, atol=tol):
            rad_err = inf
    da_, db_ = _atom_dict(ra), _atom_dict(rb)
    diff = sorted((p, db_.get(p, 0) - da_.get(p, 0)) for p in set(da_) | set(db_) if db_.get(p, 0) != da_.get(p, 0))
    ok = max(atom_err, dens_err, rad_err) <= tol
    return GaugeVerdict(ok, diff, atom_err, dens_err, rad_err)


# ---------------------------------------------------------------- subcommands

def _cmd_field(args, cfg):
    if args.action == "compare":
        if len(args.files) != 2:
            raise UsageError("field compare needs two files")
        v = compare_gauge(pio.read_field(args.files[0]), pio.read_field(args.files[1]), args.tol)
        t = pio.Table("gauge_compare", ["verdict", "atom_mismatch", "density_mismatch", "radial_mismatch", "diff"])
        t.add(v.verdict, v.atom_mismatch, v.density_mismatch, v.radial_mismatch,
              json.dumps([[list(p), n] for p, n in v.diff]))
        return EXIT_OK, [t]
    if len(args.files) != 1:
        raise UsageError(f"field {args.action} needs one file")
    mu = pio.read_field(args.files[0])
    mu_star, removed = reduce(mu)
    rt = pio.Table("reduction", ["x", "y", "C", "C_star", "n"])
    for p, c in zip(mu.positions, mu.coefficients):
        n = int(math.floor(c + 0.5))
        rt.add(float(p[0]), float(p[1]), float(c), float(c - n), n)
    if args.action == "reduce":
        if args.output_field:
            pio.write_field(mu_star, args.output_field)
        return EXIT_OK, [rt]
    eps_mu = epsilon_mu(mu_star)
    eps = args.eps if args.eps is not None else 0.5 * eps_mu
    if not 0 < eps < eps_mu:
        raise ValueError(f"eps must lie in (0, eps(mu) = {eps_mu:g})")
    t = pio.Table("field_info", ["flux", "total_variation", "eps_mu", "eps", "M", "reduced", "removed"])
    t.add(flux(mu), total_variation(mu), eps_mu, eps, dyadic_scale(mu_star, eps), mu.is_reduced, int(len(removed)))
    return EXIT_OK, [t, rt]


def _cmd_potential(args, cfg):
    from .potential import asymptotic_flux_check, build_potential

    mu = pio.read_field(args.field)
    if not mu.is_reduced:
        raise ValueError("field is not reduced (some |C| >= 1); run `field reduce` first")
    eps_mu = epsilon_mu(mu)
    eps = args.eps if args.eps is not None else 0.5 * eps_mu
    pf = build_potential(mu, eps, args.grid, args.kernel)
    out = args.output_potential or f"{args.field}.h.json"
    pio.write_potential(pf, out)
    t = pio.Table("potential", ["file", "nx", "ny", "extent", "flux", "eps", "R_asym", "h_min", "h_max"])
    t.add(out, args.grid.nx, args.grid.ny, args.grid.extent, pf.flux, eps, pf.R_asym,
          float(pf.h.min()), float(pf.h.max()))
    tables = [t]
    if args.check_asymptotics:
        tables += pio.emit_plotdata(asymptotic_flux_check(pf, 2.0 ** np.arange(1, 13)))
    return EXIT_OK, tables


def _require_evaluator(pf, what):
    if pf.evaluator is None:
        raise ValueError(f"{what} needs a potential file with an embedded field")


def _cmd_a2(args, cfg):
    from .weights import a2_scan, weight_from_potential

    pf = pio.read_potential(args.hfile)
    _require_evaluator(pf, "a2")
    atoms = pf.measure.atoms if pf.measure is not None else ()
    w = weight_from_potential(pf.evaluate, atoms, args.sign)
    region = args.region or [-1.0, 1.0, -1.0, 1.0]
    if len(region) != 4:
        raise UsageError("--region needs x0,x1,y0,y1")
    rep = a2_scan(w, region, args.scales, args.refine, name=args.hfile)
    t = pio.Table("a2_rows", ["scale", "kx", "ky", "avg_w", "avg_winv", "product"])
    for r in rep.rows:
        t.add(r.square.scale, r.square.index[0], r.square.index[1], r.avg_w, r.avg_winv, r.product)
    s = pio.Table("a2_summary", ["sup_product", "argmax_scale", "argmax_kx", "argmax_ky"])
    s.add(rep.sup_product, rep.argmax.scale, rep.argmax.index[0], rep.argmax.index[1])
    return EXIT_OK, [s, t] + pio.emit_plotdata(rep)


def _cmd_multiplier(args, cfg):
    from .weights import localized_weight, weighted_ratio_suite

    if args.weight:
        pf = pio.read_potential(args.weight)
        X, Y = pf.grid.mesh()
        half = args.q1 if args.q1 is not None else 0.5 * pf.grid.extent
        mask = (np.abs(X) <= half) & (np.abs(Y) <= half)
        omega = localized_weight(args.sign * pf.h, mask)
        spacing = pf.grid.spacing[0]
    else:
        omega = np.ones((args.n, args.n))
        spacing = 1.0
    suite = weighted_ratio_suite(omega, samples=args.samples, seed=args.seed, bandwidth=args.bandwidth,
                                 spacing=spacing, windowed=not args.no_window)
    t = pio.Table("multiplier", ["max_ratio", "samples", "skipped", "seed"])
    t.add(suite.max_ratio, int(suite.ratios.size), suite.skipped, args.seed)
    return EXIT_OK, [t]


def _read_vector_potential(path, grid):
    from .spectrum import vector_potential_from_nodes

    doc = pio._load_json(path)
    if doc.get("schema") != "pauli-A/1":
        raise pio.FormatError("vector potential files use schema pauli-A/1 with nodal A1, A2")
    try:
        A1 = np.asarray(doc["A1"], dtype=float).reshape(grid.shape)
        A2 = np.asarray(doc["A2"], dtype=float).reshape(grid.shape)
    except (KeyError, ValueError) as exc:
        raise pio.FormatError(f"invalid vector potential file: {exc}") from exc
    return vector_potential_from_nodes(grid, A1, A2)


def _kernel_tables(rep, eigen):
    s = pio.Table("kernel", ["dimension", "verdict", "gap_ratio", "tol"])
    s.add(rep.dimension, rep.verdict, rep.gap_ratio, rep.tol)
    e = pio.Table("eigenvalues", ["index", "lambda", "spin", "residual", "polarization"])
    for i, lam in enumerate(rep.eigenvalues):
        pol = rep.polarization[i] if i < rep.polarization.size else None
        e.add(i + 1, float(lam), str(eigen.spins[i]), float(eigen.residuals[i]), pol)
    return [s, e]


def _cmd_spectrum(args, cfg):
    from .potential import build_potential
    from .spectrum import (KernelReport, assemble_form, free_dirichlet_eigenvalue, kernel_dimension,
                           lowest_eigenvalues)

    pf = pio.read_potential(args.hfile)
    if args.grid is not None and (args.grid.nx, args.grid.ny, args.grid.extent) != (
            pf.grid.nx, pf.grid.ny, pf.grid.extent):
        _require_evaluator(pf, "--grid different from the file grid")
        pf = build_potential(pf.measure, pf.epsilon, args.grid, pf.kernel)
    A = _read_vector_potential(args.vector_potential, pf.grid) if args.vector_potential else None
    op = assemble_form(pf, bc=args.bc, vector_potential=A, scheme=args.scheme)
    eig = lowest_eigenvalues(op, args.k, tol=args.tol)
    ref = free_dirichlet_eigenvalue(pf.grid.nx, pf.grid.spacing[0])
    sign = 1 if pf.flux >= 0 else -1
    if args.k < 2:
        # a single eigenvalue cannot exhibit a gap
        rep = KernelReport(eig.eigenvalues, 0.0, 0, float("nan"), "inconclusive")
    else:
        rep = kernel_dimension(eig.eigenvalues, args.gap_factor, ref, vectors=eig.vectors, sign=sign,
                               spins=eig.spins)
        if rep.dimension >= args.k - 1:
            # no bulk eigenvalue above the gap: the count is a lower bound only
            rep = type(rep)(rep.eigenvalues, rep.tol, rep.dimension, rep.gap_ratio, "inconclusive",
                            rep.polarization, rep.spins)
    status = EXIT_INCONCLUSIVE if (args.strict and not rep.confident) else EXIT_OK
    return status, _kernel_tables(rep, eig)


def _cmd_acheck(args, cfg):
    from .zero_modes import acheck

    mu = pio.read_field(args.field)
    res = acheck(mu, args.grid, eps=args.eps, k=args.k, gap_factor=args.gap_factor, scheme=args.scheme)
    pred = res.prediction
    measured = res.report.dimension
    match = pred.admits(measured)
    t = pio.Table("acheck", ["flux", "regime", "predicted", "measured", "match", "verdict", "gap_ratio"])
    t.add(pred.flux, pred.regime, "|".join(map(str, pred.candidates)), measured, match,
          res.report.verdict, res.report.gap_ratio)
    c = pio.Table("candidates", ["degree", "spin", "tail_exponent", "normalizability", "slope", "rayleigh"])
    for m, v, q in zip(res.candidates, res.verdicts, res.rayleigh):
        c.add(m.degree, m.spin, m.tail_exponent, v.verdict, v.slope, float(q))
    e = pio.Table("eigenvalues", ["index", "lambda"])
    for i, lam in enumerate(res.report.eigenvalues, 1):
        e.add(i, float(lam))
    bad = not (match and res.report.confident)
    return (EXIT_INCONCLUSIVE if args.strict and bad else EXIT_OK), [t, c, e]


def _cmd_threshold(args, cfg):
    from .zero_modes import threshold_count, threshold_scan

    t = pio.Table("radial_threshold", ["N", "beta", "predicted", "counted", "threshold_verdict", "threshold_slope"])
    status = EXIT_OK
    for beta in args.beta:
        if beta <= 0:
            raise ValueError("beta must be positive")
        count, results = threshold_count(args.N, beta, margin=args.margin)
        last = results[-1]
        t.add(args.N, beta, threshold_scan(args.N, beta)[0], count, last.verdict, last.slope)
        if args.strict and last.verdict == "borderline":
            status = EXIT_INCONCLUSIVE
    return status, [t]


def _cmd_counterexample(args, cfg):
    from .counterexample import build_band_field, divergence_scan, no_zero_mode_probe

    band = build_band_field(args.delta, args.eps, args.bands, args.mollify)
    scan = divergence_scan(band)
    probe = no_zero_mode_probe(band, args.probe_degrees, scan=scan)
    g = pio.Table("monomial_growth", ["m", "growing_on_annuli", "verdict"])
    for m in args.probe_degrees:
        g.add(m, probe.growth[m], probe.verdict(m))
    status = EXIT_OK
    if args.strict and not scan.increasing:
        status = EXIT_INCONCLUSIVE
    return status, pio.emit_plotdata(scan) + pio.emit_plotdata(probe) + [g]


# ---------------------------------------------------------------- parser

def build_parser():
    p = _Parser(prog="pauli-lab", description="Generating potentials, Pauli spectra and zero-mode checks.")
    p.add_argument("-o", "--output", help="write the report here instead of stdout")
    p.add_argument("--format", choices=("table", "rows"), default="table")
    p.add_argument("--strict", action="store_true", help="exit 4 on inconclusive verdicts")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    f = sub.add_parser("field", help="inspect, reduce or compare field descriptors")
    f.add_argument("action", choices=("info", "reduce", "compare"))
    f.add_argument("files", nargs="+")
    f.add_argument("--eps", type=float)
    f.add_argument("--tol", type=float, default=1e-12)
    f.add_argument("--write", dest="output_field", help="reduced descriptor output (reduce)")
    f.set_defaults(func=_cmd_field)

    q = sub.add_parser("potential", help="sample h = h1 + h2 on a grid")
    q.add_argument("field")
    q.add_argument("--grid", type=parse_grid, required=True, help="nx,ny,extent")
    q.add_argument("--eps", type=float)
    q.add_argument("--kernel", choices=("normalized", "plain"), default="normalized")
    q.add_argument("--write", dest="output_potential", help="potential file (default <field>.h.json)")
    q.add_argument("--check-asymptotics", action="store_true")
    q.set_defaults(func=_cmd_potential)

    a = sub.add_parser("a2", help="A2 products of exp(2h) over doubled dyadic squares")
    a.add_argument("hfile")
    a.add_argument("--scales", type=parse_range, default=range(1, 5), help="a..b")
    a.add_argument("--region", type=parse_floats, help="x0,x1,y0,y1 (default -1,1,-1,1)")
    a.add_argument("--refine", type=int, default=2)
    a.add_argument("--sign", type=int, choices=(1, -1), default=1)
    a.set_defaults(func=_cmd_a2)

    m = sub.add_parser("multiplier", help="weighted multiplier ratio over random test functions")
    m.add_argument("--weight", help="potential file; omega = exp(2 sign h) on the central square")
    m.add_argument("--samples", type=int, default=64)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--bandwidth", type=int, default=6)
    m.add_argument("--n", type=int, default=256, help="grid size without --weight")
    m.add_argument("--q1", type=float, help="half side of the weighted square")
    m.add_argument("--sign", type=int, choices=(1, -1), default=1)
    m.add_argument("--no-window", action="store_true")
    m.set_defaults(func=_cmd_multiplier)

    s = sub.add_parser("spectrum", help="lowest eigenvalues of the discrete Pauli form")
    s.add_argument("hfile")
    s.add_argument("--vector-potential")
    s.add_argument("--grid", type=parse_grid)
    s.add_argument("--k", type=int, default=8)
    s.add_argument("--bc", choices=("dirichlet",), default="dirichlet")
    s.add_argument("--scheme", choices=("corrected", "p1"), default="corrected")
    s.add_argument("--gap-factor", type=float, default=10.0)
    s.add_argument("--tol", type=float, default=1e-8)
    s.set_defaults(func=_cmd_spectrum)

    c = sub.add_parser("acheck", help="predicted vs measured kernel dimension")
    c.add_argument("field")
    c.add_argument("--grid", type=parse_grid, required=True)
    c.add_argument("--eps", type=float)
    c.add_argument("--k", type=int, default=8)
    c.add_argument("--gap-factor", type=float, default=10.0)
    c.add_argument("--scheme", choices=("corrected", "p1"), default="corrected")
    c.set_defaults(func=_cmd_acheck)

    r = sub.add_parser("radial-threshold", help="integer flux with a beta/log r tail")
    r.add_argument("--N", type=int, default=2)
    r.add_argument("--beta", type=parse_floats, default=[0.25, 0.5, 0.75])
    r.add_argument("--margin", type=float, default=0.1)
    r.set_defaults(func=_cmd_threshold)

    x = sub.add_parser("counterexample", help="band field with flux above 1 and no zero modes")
    x.add_argument("--delta", type=float, default=0.05)
    x.add_argument("--eps", type=float, default=0.1)
    x.add_argument("--bands", type=int, default=4)
    x.add_argument("--mollify", type=float, default=0.0)
    x.add_argument("--probe-degrees", type=parse_range, default=range(0, 4))
    x.set_defaults(func=_cmd_counterexample)
    return p


def _config(args):
    d = {k: v for k, v in vars(args).items() if k not in ("func", "output", "format", "strict", "verbose",
                                                          "subcommand")}
    inputs = [d.pop(k) for k in ("field", "hfile") if k in d]
    inputs += d.pop("files", [])
    grid = d.pop("grid", None)
    return RunConfig(
        subcommand=args.subcommand + (f" {d.pop('action')}" if "action" in d else ""),
        inputs=inputs, output=args.output,
        grid=None if grid is None else f"{grid.nx},{grid.ny},{grid.extent}",
        eps=d.pop("eps", None), k=d.pop("k", None), seed=d.pop("seed", None),
        format=args.format, strict=args.strict,
        options={k: (list(v) if isinstance(v, range) else v) for k, v in sorted(d.items())},
    )


def run(argv=None) -> RunResult:
    """Parse ``argv`` and run; returns the exit status and the report text."""
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return RunResult(EXIT_PARSE, str(exc) + "\n")
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(name)s: %(message)s")
    cfg = _config(args)
    t0 = time.perf_counter()
    try:
        status, tables = args.func(args, cfg)
    except (UsageError, pio.FormatError) as exc:
        return RunResult(EXIT_PARSE, f"error: {exc}\n")
    except SpectrumError as exc:
        return RunResult(EXIT_SOLVER, f"solver error: {exc}\n")
    except (ValueError, SingularPointError, DyadicScaleError) as exc:
        return RunResult(EXIT_PRECONDITION, f"precondition violated: {exc}\n")
    logger.info("%s finished in %.1f s", cfg.subcommand, time.perf_counter() - t0)
    text = _render(tables, cfg.echo(), cfg.format)
    if cfg.output:
        with open(cfg.output, "w") as fh:
            fh.write(text)
        return RunResult(status, "")
    return RunResult(status, text)


def main(argv=None):
    status, text = run(argv)
    stream = sys.stdout if status in (EXIT_OK, EXIT_INCONCLUSIVE) else sys.stderr
    stream.write(text)
    return status


if __name__ == "__main__":
    sys.exit(main())
