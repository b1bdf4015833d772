"""File formats: field descriptors, potential files and delimited reports.

Field descriptors (``pauli-field/1``) and potential files (``pauli-h/1``)
are JSON documents. Reports are tab-delimited text with a schema line and a
config echo::

    # schema: pauli-report/1 <kind>
    # config: {"delta": 0.05, ...}
    k	t_k	ratio
    1	0.966...	nan

All floats are written with ``repr`` so output is byte-stable.
"""

from __future__ import annotations

import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .grid import Grid
from .measure import DensityGrid, RadialProfile, SignedMeasure

FIELD_SCHEMA = "pauli-field/1"
H_SCHEMA = "pauli-h/1"
REPORT_SCHEMA = "pauli-report/1"


class FormatError(ValueError):
    """Malformed or unsupported input file."""


def _float_list(a):
    return [float(v) for v in np.asarray(a, dtype=float).ravel()]


def _require(doc, key, where):
    if key not in doc:
        raise FormatError(f"{where}: missing key {key!r}")
    return doc[key]


# ---------------------------------------------------------------- fields

def field_to_dict(mu: SignedMeasure) -> dict:
    doc = {"schema": FIELD_SCHEMA, "atoms": [_float_list(row) for row in mu.atoms]}
    if mu.density is not None:
        g = mu.density
        doc["density"] = {
            "origin": list(g.origin), "spacing": list(g.spacing),
            "nx": g.shape[0], "ny": g.shape[1], "values": _float_list(g.values),
        }
    if mu.radial is not None:
        p = mu.radial
        doc["radial_profile"] = {"r": _float_list(p.r), "phi": _float_list(p.phi),
                                 "center": list(map(float, p.center))}
    return doc


def field_from_dict(doc) -> SignedMeasure:
    if not isinstance(doc, dict):
        raise FormatError("field descriptor must be a JSON object")
    schema = doc.get("schema")
    if schema != FIELD_SCHEMA:
        raise FormatError(f"unsupported field schema {schema!r} (expected {FIELD_SCHEMA})")
    try:
        atoms = np.asarray(doc.get("atoms", []), dtype=float).reshape(-1, 3)
        density = None
        if doc.get("density") is not None:
            d = doc["density"]
            nx, ny = int(_require(d, "nx", "density")), int(_require(d, "ny", "density"))
            values = np.asarray(_require(d, "values", "density"), dtype=float)
            if values.size != nx * ny:
                raise FormatError(f"density: {values.size} values for a {nx}x{ny} grid")
            density = DensityGrid(tuple(_require(d, "origin", "density")),
                                  tuple(_require(d, "spacing", "density")), values.reshape(nx, ny))
        radial = None
        if doc.get("radial_profile") is not None:
            p = doc["radial_profile"]
            radial = RadialProfile(np.asarray(_require(p, "r", "radial_profile"), dtype=float),
                                   np.asarray(_require(p, "phi", "radial_profile"), dtype=float),
                                   tuple(p.get("center", (0.0, 0.0))))
        return SignedMeasure(atoms, density, radial)
    except FormatError:
        raise
    except (TypeError, ValueError) as exc:
        raise FormatError(f"invalid field descriptor: {exc}") from exc


def _load_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc


def read_field(path) -> SignedMeasure:
    return field_from_dict(_load_json(path))


def write_field(mu: SignedMeasure, path):
    Path(path).write_text(json.dumps(field_to_dict(mu), indent=1) + "\n")


# ---------------------------------------------------------------- potentials

def potential_to_dict(pf, include_field=True) -> dict:
    g = pf.grid
    doc = {
        "schema": H_SCHEMA,
        "grid": {"nx": g.nx, "ny": g.ny, "extent": g.extent},
        "flux": pf.flux, "epsilon": pf.epsilon, "R_asym": pf.R_asym, "kernel": pf.kernel,
        "h": _float_list(pf.h), "h1": _float_list(pf.h1), "h2": _float_list(pf.h2),
    }
    if include_field and pf.measure is not None:
        doc["field"] = field_to_dict(pf.measure)
    return doc


def potential_from_dict(doc):
    """Rebuild a :class:`PotentialField`; with an embedded field the evaluator is restored."""
    from .potential import PotentialField, build_potential

    if not isinstance(doc, dict) or doc.get("schema") != H_SCHEMA:
        raise FormatError(f"unsupported potential schema {doc.get('schema') if isinstance(doc, dict) else None!r}")
    try:
        gd = _require(doc, "grid", "potential")
        grid = Grid(int(gd["nx"]), int(gd["ny"]), float(gd["extent"]))
        arrays = {k: np.asarray(_require(doc, k, "potential"), dtype=float).reshape(grid.shape)
                  for k in ("h", "h1", "h2")}
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid potential file: {exc}") from exc
    if doc.get("field") is not None:
        mu = field_from_dict(doc["field"])
        pf = build_potential(mu, float(doc["epsilon"]), grid, doc.get("kernel", "normalized"))
        if not np.allclose(pf.h, arrays["h"], rtol=0, atol=1e-9):
            raise FormatError("stored h does not match the embedded field")
        return pf
    return PotentialField(grid, arrays["h"], arrays["h1"], arrays["h2"], float(doc["flux"]),
                          float(doc["epsilon"]), doc.get("R_asym"), doc.get("kernel", "normalized"))


def read_potential(path):
    return potential_from_dict(_load_json(path))


def write_potential(pf, path, include_field=True):
    Path(path).write_text(json.dumps(potential_to_dict(pf, include_field)) + "\n")


# ---------------------------------------------------------------- reports

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else repr(v)
    if v is None:
        return ""
    return str(v)


class Table:
    """A delimited table: kind, column names, rows."""

    def __init__(self, kind, columns, rows=()):
        self.kind = kind
        self.columns = list(columns)
        self.rows = [list(r) for r in rows]

    def add(self, *row):
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} fields, table {self.kind} has {len(self.columns)}")
        self.rows.append(list(row))

    def render(self, config=None) -> str:
        buf = _io.StringIO()
        buf.write(f"# schema: {REPORT_SCHEMA} {self.kind}\n")
        if config is not None:
            buf.write("# config: " + json.dumps(config, sort_keys=True, default=_json_default) + "\n")
        buf.write("\t".join(self.columns) + "\n")
        for r in self.rows:
            buf.write("\t".join(_fmt(v) for v in r) + "\n")
        return buf.getvalue()


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (range, tuple, set)):
        return list(o)
    return str(o)


def parse_report(text):
    """Inverse of :meth:`Table.render` (values left as strings); returns (kind, config, table)."""
    lines = text.splitlines()
    if not lines or not lines[0].startswith(f"# schema: {REPORT_SCHEMA} "):
        raise FormatError("missing report schema line")
    kind = lines[0].split()[-1]
    config, i = None, 1
    if len(lines) > 1 and lines[1].startswith("# config: "):
        config, i = json.loads(lines[1][len("# config: "):]), 2
    cols = lines[i].split("\t")
    return kind, config, Table(kind, cols, [ln.split("\t") for ln in lines[i + 1:]])


# ---------------------------------------------------------------- plot data

def emit_plotdata(report) -> list:
    """Plot-ready tables for a report object.

    Supported: :class:`KernelReport` (index, lambda), :class:`FluxCheckReport`
    (r, deviation), :class:`DivergenceScan` (k, t_k, ratio, ...),
    :class:`Normalizability` (r, log mass), :class:`WeightReport` (scale,
    sup A2 product), :class:`ProbeTable` (m, k, value).
    """
    from .counterexample import DivergenceScan, ProbeTable
    from .potential import FluxCheckReport
    from .spectrum import KernelReport
    from .weights import WeightReport
    from .zero_modes import Normalizability

    if isinstance(report, KernelReport):
        t = Table("eigenvalues", ["index", "lambda"])
        for i, lam in enumerate(report.eigenvalues, 1):
            t.add(i, float(lam))
        return [t]
    if isinstance(report, FluxCheckReport):
        t = Table("flux_deviation", ["r", "max_deviation"])
        for r, d in zip(report.radii, report.deviation):
            t.add(float(r), float(d))
        return [t]
    if isinstance(report, DivergenceScan):
        t = Table("band_terms", ["k", "t_k", "ratio", "predicted_ratio", "lower_bound", "flagged"])
        for b in report.terms:
            t.add(b.k, b.t_k, b.ratio, b.predicted_ratio, b.lower_bound, b.flagged)
        return [t]
    if isinstance(report, ProbeTable):
        t = Table("monomial_probe", ["m", "k", "integral", "predicted_exponent"])
        for r in report.rows:
            t.add(r.m, r.k, r.value, r.predicted_exponent)
        return [t]
    if isinstance(report, Normalizability):
        t = Table("annulus_mass", ["r", "log_mass"])
        for r, m in zip(report.radii, report.log_masses):
            t.add(float(r), float(m))
        return [t]
    if isinstance(report, WeightReport):
        t = Table("a2_by_scale", ["scale", "sup_product"])
        for s, v in sorted(report.sup_by_scale().items()):
            t.add(s, float(v))
        return [t]
    raise TypeError(f"no plot data for {type(report).__name__}")
