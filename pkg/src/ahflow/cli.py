"""Command line front end: metric specs in, JSON reports and CSV diagnostics out.

A metric spec is a JSON document.  Either a named preset

    {"preset": "vr-generic", "n": 4, "N": 8}

or explicit data

    {"n": 4, "N": 6,
     "backend": {"kind": "grid", "resolution": [16, 8, 8], "derivative": "spectral"},
     "h0": [[1, 0, 0], [0, 1, 0], [0, 0, 1]],
     "coefficients": [{"power": 2, "block": "ab", "value": [[...], ...]}]}

Matrices are row-major nested lists.  On a grid backend every entry is a
number, ``{"const": c, "fourier": [{"k": [..], "cos": a, "sin": b}, ...]}``
or ``{"samples": <array of the grid shape>}``.  Blocks are ``xx`` (scalar),
``xa`` (covector) and ``ab`` (boundary matrix); a coefficient sets that
block at that power and anything not listed is zero (``xx`` at power 0 is 1).

Exit codes: 0 pass, 2 invariant failure, 3 numerical blow-up, 4 config error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import presets
from .boundary import BoundaryField, Grid
from .geometry import CollarMetric, GeometryError, appendix_report

EXIT_OK, EXIT_INVARIANT, EXIT_BLOWUP, EXIT_CONFIG = 0, 2, 3, 4
BLOCKS = ("xx", "xa", "ab")


class SpecError(ValueError):
    """Malformed spec or run configuration; ``path`` names the offending field."""

    def __init__(self, msg, path=""):
        self.path = path
        super().__init__(f"{path}: {msg}" if path else msg)


class InvariantFailure(RuntimeError):
    def __init__(self, name, detail):
        self.name = name
        super().__init__(f"invariant {name!r} failed: {detail}")


# ---------------------------------------------------------------------------
# field expressions

def _num(v, path):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise SpecError(f"expected a number, got {type(v).__name__}", path)
    v = float(v)
    if not math.isfinite(v):
        raise SpecError("number must be finite", path)
    return v


def _norm_leaf(v, grid_shape, path):
    """Canonical form of one entry: a float, or a dict field expression."""
    if not isinstance(v, dict):
        return _num(v, path)
    if grid_shape is None:
        raise SpecError("field expressions need a grid backend", path)
    extra = set(v) - {"const", "fourier", "samples"}
    if extra:
        raise SpecError(f"unknown keys {sorted(extra)}", path)
    if "samples" in v:
        if set(v) != {"samples"}:
            raise SpecError("'samples' cannot be combined with other keys", path)
        arr = np.asarray(v["samples"], dtype=float)
        if arr.shape != tuple(grid_shape):
            raise SpecError(f"samples have shape {arr.shape}, grid is {tuple(grid_shape)}", path)
        if not np.all(np.isfinite(arr)):
            raise SpecError("samples must be finite", path + ".samples")
        return {"samples": arr.tolist()}
    terms = []
    for i, t in enumerate(v.get("fourier", [])):
        p = f"{path}.fourier[{i}]"
        if not isinstance(t, dict) or "k" not in t:
            raise SpecError("fourier term needs 'k'", p)
        if set(t) - {"k", "cos", "sin"}:
            raise SpecError(f"unknown keys {sorted(set(t) - {'k', 'cos', 'sin'})}", p)
        k = t["k"]
        if (not isinstance(k, list) or len(k) != len(grid_shape)
                or not all(isinstance(c, int) and not isinstance(c, bool) for c in k)):
            raise SpecError(f"k must be a list of {len(grid_shape)} integers", p + ".k")
        terms.append({"k": list(k), "cos": _num(t.get("cos", 0.0), p + ".cos"),
                      "sin": _num(t.get("sin", 0.0), p + ".sin")})
    return {"const": _num(v.get("const", 0.0), path + ".const"), "fourier": terms}


def _eval_leaf(v, grid):
    if not isinstance(v, dict):
        return v if grid is None else np.full(grid.shape, v)
    if "samples" in v:
        return np.asarray(v["samples"], dtype=float)
    y = grid.coords()
    out = np.full(grid.shape, v["const"])
    for t in v["fourier"]:
        ph = sum(k * yi for k, yi in zip(t["k"], y))
        out = out + t["cos"] * np.cos(ph) + t["sin"] * np.sin(ph)
    return out


def _norm_tensor(v, shape, grid_shape, path):
    """Nested lists of leaves with the given tensor shape."""
    if not shape:
        return _norm_leaf(v, grid_shape, path)
    if not isinstance(v, list) or len(v) != shape[0]:
        raise SpecError(f"expected a list of length {shape[0]}", path)
    return [_norm_tensor(e, shape[1:], grid_shape, f"{path}[{i}]") for i, e in enumerate(v)]


def _eval_tensor(v, shape, grid):
    gshape = () if grid is None else grid.shape
    out = np.zeros(gshape + tuple(shape))
    for idx in np.ndindex(*shape):
        leaf = v
        for i in idx:
            leaf = leaf[i]
        out[(Ellipsis,) + idx] = _eval_leaf(leaf, grid)
    return out


def _emit_tensor(arr, shape):
    """Nested-list form of boundary values (numbers or samples)."""
    gdim = arr.ndim - len(shape)

    def leaf(a):
        if gdim == 0:
            return float(a)
        if np.all(a == a.flat[0]):
            return float(a.flat[0])
        return {"samples": a.tolist()}

    def rec(idx):
        if len(idx) == len(shape):
            return leaf(arr[(Ellipsis,) + idx])
        return [rec(idx + (i,)) for i in range(shape[len(idx)])]

    return rec(())


# ---------------------------------------------------------------------------
# metric spec

@dataclass
class MetricSpec:
    """Validated, canonical form of a metric spec document."""

    n: int
    N: int
    preset: str | None = None
    backend: dict = field(default_factory=lambda: {"kind": "constant"})
    h0: list | None = None
    coefficients: list = field(default_factory=list)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise SpecError("spec must be a JSON object")
        extra = set(d) - {"n", "N", "preset", "backend", "h0", "coefficients"}
        if extra:
            raise SpecError(f"unknown keys {sorted(extra)}")
        n = d.get("n", 4)
        N = d.get("N", 8)
        for name, v in (("n", n), ("N", N)):
            if not isinstance(v, int) or isinstance(v, bool):
                raise SpecError("must be an integer", name)
        if n < 2 or n % 2:
            raise SpecError("bulk dimension must be even and >= 2", "n")
        if N < 1:
            raise SpecError("truncation order must be >= 1", "N")
        if "preset" in d:
            if set(d) - {"n", "N", "preset"}:
                raise SpecError("a preset spec takes only n and N", "preset")
            if d["preset"] not in presets.PRESETS:
                raise SpecError(f"unknown preset {d['preset']!r}; choose from "
                                f"{', '.join(presets.PRESETS)}", "preset")
            return cls(n, N, preset=d["preset"])
        backend = cls._backend(d.get("backend", {"kind": "constant"}))
        gshape = tuple(backend["resolution"]) if backend["kind"] == "grid" else None
        if gshape is not None and len(gshape) != n - 1:
            raise SpecError(f"grid needs {n - 1} resolutions", "backend.resolution")
        dim = n - 1
        h0 = d.get("h0", np.eye(dim).tolist())
        h0 = _norm_tensor(h0, (dim, dim), gshape, "h0")
        coeffs, seen = [], set()
        raw = d.get("coefficients", [])
        if not isinstance(raw, list):
            raise SpecError("must be a list", "coefficients")
        shapes = {"xx": (), "xa": (dim,), "ab": (dim, dim)}
        for i, c in enumerate(raw):
            p = f"coefficients[{i}]"
            if not isinstance(c, dict) or set(c) != {"power", "block", "value"}:
                raise SpecError("needs exactly the keys power, block, value", p)
            pw, blk = c["power"], c["block"]
            if not isinstance(pw, int) or isinstance(pw, bool) or not 0 <= pw <= N:
                raise SpecError(f"power must be an integer in [0, {N}]", p + ".power")
            if blk not in BLOCKS:
                raise SpecError(f"block must be one of {BLOCKS}", p + ".block")
            if pw == 0 and blk == "ab":
                raise SpecError("the ab block at power 0 is h0", p)
            if (pw, blk) in seen:
                raise SpecError(f"duplicate coefficient ({pw}, {blk})", p)
            seen.add((pw, blk))
            coeffs.append({"power": pw, "block": blk,
                           "value": _norm_tensor(c["value"], shapes[blk], gshape, p + ".value")})
        coeffs.sort(key=lambda c: (c["power"], BLOCKS.index(c["block"])))
        spec = cls(n, N, None, backend, h0, coeffs)
        spec.to_metric()
        return spec

    @staticmethod
    def _backend(b):
        if not isinstance(b, dict) or b.get("kind") not in ("constant", "grid"):
            raise SpecError("kind must be 'constant' or 'grid'", "backend")
        if b["kind"] == "constant":
            if set(b) != {"kind"}:
                raise SpecError("constant backend takes no options", "backend")
            return {"kind": "constant"}
        if set(b) - {"kind", "resolution", "derivative"} or "resolution" not in b:
            raise SpecError("grid backend needs resolution (and optional derivative)", "backend")
        res = b["resolution"]
        if not isinstance(res, list) or not all(isinstance(r, int) for r in res):
            raise SpecError("must be a list of integers", "backend.resolution")
        out = {"kind": "grid", "resolution": list(res),
               "derivative": b.get("derivative", "spectral")}
        try:
            Grid(tuple(res), out["derivative"])
        except ValueError as e:
            raise SpecError(str(e), "backend") from None
        return out

    def to_dict(self):
        if self.preset is not None:
            return {"preset": self.preset, "n": self.n, "N": self.N}
        return {"n": self.n, "N": self.N, "backend": dict(self.backend),
                "h0": self.h0, "coefficients": self.coefficients}

    @property
    def grid(self):
        if self.preset is not None or self.backend["kind"] == "constant":
            return None
        return Grid(tuple(self.backend["resolution"]), self.backend["derivative"])

    def to_metric(self) -> CollarMetric:
        if self.preset is not None:
            return presets.preset(self.preset, self.n, self.N)
        grid, n, dim = self.grid, self.n, self.n - 1
        gshape = () if grid is None else grid.shape
        data = np.zeros((self.N + 1,) + gshape + (n, n))
        data[0][..., 0, 0] = 1.0
        data[0][..., 1:, 1:] = _eval_tensor(self.h0, (dim, dim), grid)
        for c in self.coefficients:
            k, blk = c["power"], c["block"]
            if blk == "xx":
                data[k][..., 0, 0] = _eval_tensor(c["value"], (), grid)
            elif blk == "xa":
                v = _eval_tensor(c["value"], (dim,), grid)
                data[k][..., 0, 1:] = v
                data[k][..., 1:, 0] = v
            else:
                v = _eval_tensor(c["value"], (dim, dim), grid)
                if np.max(np.abs(v - np.swapaxes(v, -1, -2)), initial=0.0) > 1e-12:
                    raise SpecError("ab coefficient must be symmetric",
                                    f"coefficients(power={k}, block=ab)")
                data[k][..., 1:, 1:] = v
        normal = not any(c["block"] != "ab" for c in self.coefficients)
        try:
            return CollarMetric(n, data, grid, normal_form=normal)
        except GeometryError as e:
            raise SpecError(str(e), "h0") from None

    @classmethod
    def from_metric(cls, g: CollarMetric):
        """Spec reproducing the coefficients of ``g`` (nonzero blocks only)."""
        dim = g.n - 1
        if g.grid is None:
            backend = {"kind": "constant"}
        else:
            backend = {"kind": "grid", "resolution": list(g.grid.resolution),
                       "derivative": g.grid.derivative}
        coeffs = []
        for k in range(g.trunc_order + 1):
            parts = {"xx": (g.data[k][..., 0, 0], ()), "xa": (g.data[k][..., 0, 1:], (dim,)),
                     "ab": (g.data[k][..., 1:, 1:], (dim, dim))}
            for blk in BLOCKS:
                arr, shape = parts[blk]
                if k == 0 and blk != "xa":
                    continue
                if np.any(arr):
                    coeffs.append({"power": k, "block": blk, "value": _emit_tensor(arr, shape)})
        if np.any(g.data[0][..., 0, 0] != 1.0):
            coeffs.insert(0, {"power": 0, "block": "xx",
                              "value": _emit_tensor(g.data[0][..., 0, 0], ())})
        return cls(g.n, g.trunc_order, None, backend,
                   _emit_tensor(g.data[0][..., 1:, 1:], (dim, dim)), coeffs)


def load_spec(path):
    """Read a spec file, reporting JSON errors with line and column."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise SpecError(f"cannot read spec: {e.strerror}", str(path)) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpecError(f"line {e.lineno} column {e.colno}: {e.msg}", str(path)) from None
    return MetricSpec.from_dict(doc)


@dataclass
class RunConfig:
    dt: float = 1e-3
    T: float = 0.1
    dx: float = 0.01
    x_max: float = 0.5
    x_cut: float = 0.1
    engines: tuple = ("jet",)
    tol: float = 1e-9
    out: str | None = None
    strict: bool = False
    seed: int = 0
    format: str = "csv"

    def __post_init__(self):
        for name in ("dt", "T", "dx", "x_max", "x_cut", "tol"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise SpecError("must be positive", name)
        if self.x_cut >= self.x_max:
            raise SpecError("x_cut must be below x_max", "x_cut")
        bad = set(self.engines) - {"jet", "grid", "both"}
        if bad:
            raise SpecError(f"unknown engine(s) {sorted(bad)}", "engine")

    @property
    def engine(self):
        e = set(self.engines)
        if "both" in e or e == {"jet", "grid"}:
            return "both"
        return self.engines[0]

    def as_dict(self):
        d = asdict(self)
        d["engines"] = list(d["engines"])
        return d


# ---------------------------------------------------------------------------
# output helpers

def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def _dump(obj):
    return json.dumps(obj, sort_keys=True, indent=2, default=_jsonable) + "\n"


def _sha256(text):
    return hashlib.sha256(text.encode()).hexdigest()


def rows_csv(rows, with_gap=False):
    from .flow import DiagnosticsRow
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(DiagnosticsRow.FIELDS + (("xval_gap",) if with_gap else ()))
    for r in rows:
        w.writerow([_fmt(v) for v in r.values(with_gap)])
    return buf.getvalue()


def rows_json(rows, with_gap=False):
    from .flow import DiagnosticsRow
    names = DiagnosticsRow.FIELDS + (("xval_gap",) if with_gap else ())
    return _dump([dict(zip(names, r.values(with_gap))) for r in rows])


class Output:
    """Collects named text artifacts; writes them to --out or to stdout."""

    def __init__(self, out):
        self.dir = Path(out) if out else None
        self.files = {}

    def add(self, name, text):
        self.files[name] = text
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)
            (self.dir / name).write_text(text)
        else:
            if len(self.files) > 1 or not name.endswith(".json"):
                sys.stdout.write(f"# {name}\n")
            sys.stdout.write(text)

    def hashes(self):
        return {k: _sha256(v) for k, v in sorted(self.files.items())}


# ---------------------------------------------------------------------------
# commands

def _metric(args):
    if args.spec and args.preset:
        raise SpecError("give either --spec or --preset, not both")
    if args.spec:
        return load_spec(args.spec)
    if not args.preset:
        raise SpecError("a metric is required: give --spec or --preset")
    return MetricSpec.from_dict({"preset": args.preset})


def _run_config(args, **defaults):
    kw = dict(defaults)
    for name in ("dt", "T", "dx", "x_max", "x_cut"):
        v = getattr(args, name, None)
        if v is not None:
            kw[name] = v
    if getattr(args, "engine", None):
        kw["engines"] = tuple(args.engine)
    return RunConfig(strict=args.strict, seed=args.seed, out=args.out,
                     format=args.format, **kw)


def _summary(r):
    if not r["is_AH"]:
        return "not asymptotically hyperbolic"
    parts = [f"AH, even to order {r['evenness_order']}",
             "partially even" if r["is_partially_even"] else "not partially even",
             "VR" if r["is_VR"] else "not VR"]
    if r["is_partially_even"] and not r["is_VR"]:
        parts[-1] += f" (|tr h_{{n-1}}| = {r['vr_trace_norm']:.3g})"
    if r["is_APE"]:
        parts.append("APE")
    else:
        parts.append(f"Einstein defect at power {r['ape_defect_order']}")
    return ", ".join(parts)


def cmd_classify(spec: MetricSpec, cfg: RunConfig):
    from .gauge import classify
    g = spec.to_metric()
    r = classify(g).as_dict()
    r["is_APE"] = bool(r["is_AH"] and r["ape_defect_order"] >= g.n)
    r["summary"] = _summary(r)
    out = Output(cfg.out)
    out.add("classify.json", _dump(r))
    print(r["summary"], file=sys.stderr)
    return EXIT_OK


def cmd_normal_form(spec: MetricSpec, cfg: RunConfig):
    from .gauge import normal_form
    g = spec.to_metric()
    if not g.is_ah():
        raise InvariantFailure("asymptotically_hyperbolic", "gbar^xx(0) != 1")
    gn = normal_form(g)
    Output(cfg.out).add("normal_form.json", _dump(MetricSpec.from_metric(gn).to_dict()))
    return EXIT_OK


def cmd_renvol(spec: MetricSpec, cfg: RunConfig):
    from .gauge import classify, normal_form
    from .renorm import renormalized_volume
    g = spec.to_metric()
    c = classify(g)
    if not c.is_AH:
        raise InvariantFailure("asymptotically_hyperbolic", "gbar^xx(0) != 1")
    if not c.is_VR:
        msg = "metric is not VR; the renormalized volume depends on the bdf"
        if cfg.strict:
            raise InvariantFailure("volume_renormalizable", msg)
        print(f"warning: {msg}", file=sys.stderr)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fp = renormalized_volume(normal_form(g), cfg.x_cut, cfg.x_max, check_vr=False)
    r = {"renv": fp.finite_part, "is_VR": c.is_VR, "x_cut": cfg.x_cut, "x_max": cfg.x_max,
         "poles": {str(k): float(v) for k, v in sorted(fp.poles.items())}}
    Output(cfg.out).add("renvol.json", _dump(r))
    return EXIT_OK


def _omega0(g, cfg, value):
    if value is not None:
        return value if g.grid is None else np.full(g.grid.shape, value)
    rng = np.random.default_rng(cfg.seed)
    if g.grid is None:
        return 0.3 * rng.normal()
    return presets.random_fourier(rng, g.grid, (), 0.3)


def cmd_discrepancy(spec: MetricSpec, cfg: RunConfig, omega0=None):
    from .gauge import normal_form, solve_hj_normal, vr_trace
    from .renorm import bdf_discrepancy
    g = spec.to_metric()
    if not g.is_ah():
        raise InvariantFailure("asymptotically_hyperbolic", "gbar^xx(0) != 1")
    gn = normal_form(g)
    om0 = _omega0(gn, cfg, omega0)
    w = solve_hj_normal(gn, BoundaryField(np.asarray(om0, dtype=float), "scalar", gn.grid))
    d = bdf_discrepancy(gn, [1.0], w, cfg.x_cut, cfg.x_max)
    agree = abs(d.route_a - d.route_b)
    r = {"route_a": d.route_a, "route_b": d.route_b, "leading": d.leading,
         "route_gap": agree, "vr_trace_norm": float(np.max(np.abs(vr_trace(gn)))),
         "omega0": om0 if np.ndim(om0) == 0 else "random field (seed %d)" % cfg.seed}
    Output(cfg.out).add("discrepancy.json", _dump(r))
    if cfg.strict and agree > 1e-8 * max(1.0, abs(d.route_b)):
        raise InvariantFailure("discrepancy_routes_agree", f"gap {agree:.3g}")
    return EXIT_OK


def cmd_appendix(spec: MetricSpec | None, cfg: RunConfig):
    if spec is not None:
        metrics = [("spec", spec.to_metric())]
    else:
        rng = np.random.default_rng(cfg.seed)
        metrics = [(f"random n={n}", presets.random_even_metric(rng, n, 2 * n, 2 * n))
                   for n in (4, 6)]
    report, ok = [], True
    for label, g in metrics:
        for row in appendix_report(g):
            report.append({"metric": label, **asdict(row)})
            ok &= row.ok
    Output(cfg.out).add("appendix.json", _dump({"ok": ok, "rows": report}))
    if not ok:
        bad = [r["component"] for r in report if not r["ok"]]
        raise InvariantFailure("appendix_rows", ", ".join(bad))
    return EXIT_OK


def _flow_checks(g, c0, res, cfg):
    """Named invariant guards; returns {name: (ok, detail)}."""
    checks = {}
    scale = max(1.0, float(np.max(np.abs(g.data[0]))))
    checks["conformal_infinity_fixed"] = (res.drift <= 1e-9 * scale, f"drift {res.drift:.3g}")
    finite = all(math.isfinite(float(v)) for rows in res.rows.values() for r in rows
                 for v in r.values() if v is not None)
    checks["finite_diagnostics"] = (finite, "non-finite diagnostics" if not finite else "")
    jet = res.rows.get("jet", [])
    if jet and c0.is_partially_even:
        low = min(r.evenness_order for r in jet)
        checks["partial_evenness_preserved"] = (low >= g.n - 2, f"min evenness order {low}")
    if jet and c0.is_VR:
        top = max(r.vr_trace_norm for r in jet)
        checks["vr_preserved"] = (top <= cfg.tol, f"max vr_trace_norm {top:.3g}")
    if cfg.strict and not c0.is_VR:
        checks["volume_renormalizable"] = (False, "RenV of a non-VR metric depends on the bdf")
    return checks


def cmd_flow(spec: MetricSpec, cfg: RunConfig):
    from .flow import FlowConfig, run_flow
    from .gauge import classify
    g = spec.to_metric()
    c0 = classify(g)
    if not c0.is_AH:
        raise InvariantFailure("asymptotically_hyperbolic", "gbar^xx(0) != 1")
    if not c0.is_VR and not cfg.strict:
        print("warning: metric is not VR; renv column depends on the bdf", file=sys.stderr)
    fc = FlowConfig(T=cfg.T, dt=cfg.dt, engine=cfg.engine, dx=cfg.dx,
                    x_max=cfg.x_max, x_cut=cfg.x_cut)
    res = run_flow(g, fc)
    both = cfg.engine == "both"
    out = Output(cfg.out)
    ext = "csv" if cfg.format == "csv" else "json"
    for e, rows in res.rows.items():
        text = rows_csv(rows, both) if ext == "csv" else rows_json(rows, both)
        out.add(f"flow_{e}.{ext}", text)
    checks = _flow_checks(g, c0, res, cfg)
    run = {k: v for k, v in cfg.as_dict().items() if k != "out"}
    config = {"spec": spec.to_dict(), "run": run, "flow": asdict(fc)}
    manifest = {
        "tool": "ahflow", "version": __version__, "command": "flow",
        "config": config, "config_sha256": _sha256(_canonical(config)),
        "grid": {"dx": fc.dx, "x_max": fc.x_max, "x_cut": fc.x_cut,
                 "nodes": int(round(fc.x_max / fc.dx)) + 1},
        "tolerances": {"vr_trace": cfg.tol, "conformal_infinity": 1e-9, "cfl": fc.cfl},
        "initial_classification": c0.as_dict(),
        "outputs": out.hashes(),
        "checks": {k: {"ok": bool(ok), "detail": d} for k, (ok, d) in checks.items()},
    }
    if cfg.out:
        out.add("manifest.json", _dump(manifest))
    failed = [k for k, (ok, _) in checks.items() if not ok]
    if failed:
        raise InvariantFailure(failed[0], checks[failed[0]][1])
    return EXIT_OK


def cmd_verify(cfg: RunConfig, only=None):
    from . import verify
    results = verify.run_all(only=only, seed=cfg.seed)
    lines = [r.line() for r in results]
    print("\n".join(lines))
    if cfg.out:
        Output(cfg.out).add("verify.json", _dump([r.as_dict() for r in results]))
    if not all(r.passed for r in results):
        raise InvariantFailure("acceptance", ", ".join(str(r.number) for r in results
                                                         if not r.passed))
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", help="metric spec (JSON)")
    common.add_argument("--preset", choices=presets.PRESETS, help="named metric instead of --spec")
    common.add_argument("--strict", action="store_true",
                        help="treat bdf-dependent results and soft checks as failures")
    common.add_argument("--seed", type=int, default=0, help="seed for randomized inputs")
    common.add_argument("--out", help="output directory (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")

    def collar(p):
        p.add_argument("--x-max", dest="x_max", type=float)
        p.add_argument("--x-cut", dest="x_cut", type=float)

    ap = _Parser(prog="ahflow", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("classify", parents=[common], help="AH / parity / VR / APE report")
    sub.add_parser("normal-form", parents=[common], help="re-emit the spec in normal form")
    p = sub.add_parser("renvol", parents=[common], help="renormalized volume")
    collar(p)
    p = sub.add_parser("discrepancy", parents=[common],
                       help="change of the renormalized volume under a new representative")
    collar(p)
    p.add_argument("--omega0", type=float, help="constant log conformal factor (default random)")
    p = sub.add_parser("flow", parents=[common], help="normalized Ricci flow diagnostics")
    collar(p)
    p.add_argument("--engine", action="append", choices=("jet", "grid", "both"))
    p.add_argument("--dt", type=float)
    p.add_argument("--T", type=float)
    p.add_argument("--dx", type=float)
    sub.add_parser("appendix-check", parents=[common],
                   help="coefficient tables of the curvature expansion")
    p = sub.add_parser("verify", parents=[common], help="run the acceptance suite")
    p.add_argument("--only", type=lambda s: [int(c) for c in s.split(",")],
                   help="comma-separated criterion numbers")
    return ap


def main(argv=None):
    from .flow import BlowUpError, FlowError
    from .gauge import GaugeError
    from .renorm import RenormError
    args = build_parser().parse_args(argv)
    try:
        cmd = args.command
        if cmd == "verify":
            return cmd_verify(_run_config(args), args.only)
        if cmd == "appendix-check":
            spec = _metric(args) if (args.spec or args.preset) else None
            return cmd_appendix(spec, _run_config(args))
        spec = _metric(args)
        if cmd == "classify":
            return cmd_classify(spec, _run_config(args))
        if cmd == "normal-form":
            return cmd_normal_form(spec, _run_config(args))
        if cmd == "renvol":
            return cmd_renvol(spec, _run_config(args, x_cut=0.1, x_max=1.0))
        if cmd == "discrepancy":
            return cmd_discrepancy(spec, _run_config(args, x_cut=0.1, x_max=1.0), args.omega0)
        if cmd == "flow":
            return cmd_flow(spec, _run_config(args))
    except SpecError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantFailure as e:
        print(f"FAILED: {e}", file=sys.stderr)
        return EXIT_INVARIANT
    except BlowUpError as e:
        print(f"blow-up: {e}", file=sys.stderr)
        return EXIT_BLOWUP
    except (FlowError, GaugeError, RenormError, GeometryError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
