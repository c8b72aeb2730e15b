"""Batch front end: ``bergman <suite> --config FILE [--out DIR] [--plots]``.

Configuration files hold flat ``key = value`` lines; ``#`` starts a comment.
Reals accept a ``pi`` suffix (``8pi``, ``0.5*pi``); lists are comma
separated; curvature pairs are written ``rX:rE``.

Exit codes: 0 all checks pass, 1 some check failed, 2 usage or config error.
``BERGMAN_THREADS`` caps the worker threads used for independent p-values.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _svg
from .asymptotics import (DEFAULT_P_RANGE, check_b1, diagonal_values, offdiag_decay_scan,
                          orbifold_profile)
from .errors import BergmanError
from .geometry import build_model
from .model import (CurvatureScalars, b0u, b1, j2u_closed, j2u_deviation, j2u_volterra,
                    kaehler_spectrum, model_bergman, model_heat_kernel, plane_rule)

SCHEMA_VERSION = "1"
SUBCOMMANDS = ("diag", "offdiag", "orbifold", "model-check", "heat")

_MODEL_KEYS = {"model", "perturbation", "tau", "twist", "k"}
_KEYS = {
    "diag": _MODEL_KEYS | {"p_range", "points", "fit_degree", "tol_b0", "tol_b1"},
    "offdiag": _MODEL_KEYS | {"p", "point", "direction", "tol_near"},
    "orbifold": _MODEL_KEYS | {"p_range", "pairs", "seed", "tol_ratio", "tol_r2", "tol_identity"},
    "model-check": {"u_values", "curvatures", "tol", "tol_semigroup"},
    "heat": {"u_values", "curvatures", "slope_max"},
}
_DEFAULTS = {
    "diag": {"model": "fs", "p_range": ",".join(map(str, DEFAULT_P_RANGE)), "points": "0, 0.5, 1+1j, 3",
             "fit_degree": "4", "tol_b0": "1e-6", "tol_b1": "2e-2"},
    "offdiag": {"model": "fs", "p": "64", "point": "0", "tol_near": "0.05"},
    "orbifold": {"model": "quotient", "k": "2", "pairs": "100", "seed": "0", "tol_ratio": "0.6",
                 "tol_r2": "0.95", "tol_identity": "1e-8"},
    "model-check": {"u_values": "0.5, 1, 2, 4", "curvatures": "8pi:0, 0:4pi, 8pi:4pi", "tol": "1e-6",
                    "tol_semigroup": "1e-7"},
    "heat": {"u_values": "0.25, 0.5, 1, 1.5, 2, 2.5, 3, 3.5, 4", "curvatures": "8pi:0, 0:4pi, 8pi:4pi",
             "slope_max": "-2pi"},
}


class ConfigError(ValueError):
    pass


def parse_real(text: str) -> float:
    s = text.strip().replace("π", "pi").replace(" ", "")
    if s.endswith("pi"):
        coef = s[:-2].rstrip("*")
        coef = {"": "1", "-": "-1", "+": "1"}.get(coef, coef)
        return float(coef) * math.pi
    return float(s)


def _split(text: str):
    return [t.strip() for t in text.split(",") if t.strip()]


@dataclass
class RunConfig:
    subcommand: str
    values: dict
    out_dir: str = "."
    plots: bool = False
    raw: dict = field(default_factory=dict)

    def get(self, key, conv=str):
        try:
            return conv(self.values[key])
        except KeyError:
            raise ConfigError(f"missing key {key!r}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for {key!r}: {self.values[key]!r}") from exc

    def has(self, key) -> bool:
        return key in self.values

    def real(self, key) -> float:
        return self.get(key, parse_real)

    def positive(self, key) -> float:
        v = self.real(key)
        if not v > 0:
            raise ConfigError(f"{key} must be positive")
        return v

    def int_list(self, key):
        vals = [int(t) for t in _split(self.get(key))]
        if not vals or any(v < 1 for v in vals):
            raise ConfigError(f"{key} must be a nonempty list of positive integers")
        return vals

    def real_list(self, key):
        vals = [parse_real(t) for t in _split(self.get(key))]
        if not vals:
            raise ConfigError(f"{key} must be nonempty")
        return vals

    def complex_list(self, key):
        try:
            return [complex(t.replace(" ", "")) for t in _split(self.get(key))]
        except ValueError as exc:
            raise ConfigError(f"bad point list in {key!r}") from exc

    def curvatures(self):
        out = []
        for item in _split(self.get("curvatures")):
            try:
                rx, re_ = item.split(":")
                out.append(CurvatureScalars(parse_real(rx), parse_real(re_)))
            except ValueError as exc:
                raise ConfigError(f"bad curvature pair {item!r}; expected rX:rE") from exc
        return out

    @property
    def canonical(self) -> str:
        return "\n".join(f"{k} = {self.values[k]}" for k in sorted(self.values))

    @property
    def hash(self) -> str:
        return hashlib.sha256(f"{self.subcommand}\n{self.canonical}".encode()).hexdigest()


def parse_config(text: str, subcommand: str) -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (t.strip() for t in line.split("=", 1))
        if key not in _KEYS[subcommand]:
            raise ConfigError(f"line {lineno}: unknown key {key!r} for {subcommand}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def load_config(path: str, subcommand: str, out_dir: str = ".", plots: bool = False) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    raw = parse_config(text, subcommand)
    values = dict(_DEFAULTS[subcommand])
    values.update(raw)
    cfg = RunConfig(subcommand, values, out_dir, plots, raw)
    for key in values:
        if key.startswith("tol") and not cfg.real(key) > 0:
            raise ConfigError(f"{key} must be positive")
    return cfg


def _model_from(cfg: RunConfig):
    kind = cfg.get("model")
    kwargs = {}
    if cfg.has("perturbation"):
        kwargs["perturbation"] = cfg.real("perturbation")
    if cfg.has("tau"):
        kwargs["torus_modulus"] = cfg.get("tau", lambda s: complex(s.replace(" ", "")))
    if cfg.has("twist"):
        kwargs["twist_degree"] = cfg.get("twist", int)
    if cfg.has("k"):
        kwargs["quotient_order"] = cfg.get("k", int)
    try:
        return build_model(kind, **kwargs)
    except (BergmanError, ValueError) as exc:
        raise ConfigError(f"invalid model: {exc}") from exc


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("BERGMAN_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    items = list(items)
    n = min(_threads(), len(items))
    if n <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _check(name, target, measured, tolerance, passed):
    return {"name": name, "target": _num(target), "measured": _num(measured),
            "tolerance": _num(tolerance), "pass": bool(passed)}


def _num(v):
    if isinstance(v, (bool, str)) or v is None:
        return v
    v = float(v)
    return v if math.isfinite(v) else repr(v)


def _fmt(v) -> str:
    if isinstance(v, complex):
        return f"{v.real!r}{v.imag:+}j"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["schema_version"] + list(header))
    for row in rows:
        w.writerow([SCHEMA_VERSION] + [_fmt(v) for v in row])
    return buf.getvalue()


@dataclass
class Outputs:
    csv_header: list
    csv_rows: list
    checks: list
    plot: str | None = None
    extra: dict = field(default_factory=dict)


def run_diag(cfg: RunConfig) -> Outputs:
    model = _model_from(cfg)
    p_range = cfg.int_list("p_range")
    k = cfg.get("fit_degree", int)
    if len(set(p_range)) < k + 2:
        raise ConfigError(f"need >= k+2 p-values (k = {k}), got {len(set(p_range))}")
    points = cfg.complex_list("points")
    tol_b0, tol_b1 = cfg.positive("tol_b0"), cfg.positive("tol_b1")
    vals = _pmap(lambda p: diagonal_values(model, p, points), p_range)
    rows = [(model.label, p, z, float(v[i])) for p, v in zip(p_range, vals) for i, z in enumerate(points)]
    reports = check_b1(model, points, p_range, k=k)
    checks = []
    for rep in reports:
        tag = _fmt(rep.point)
        checks.append(_check(f"b0@{tag}", 1.0, rep.fit.b0, tol_b0, abs(rep.fit.b0 - 1.0) <= tol_b0))
        scale = max(abs(rep.target), 1.0)
        checks.append(_check(f"b1@{tag}", rep.target, rep.measured, tol_b1 * scale,
                             rep.abs_error <= tol_b1 * scale))
    plot = None
    if cfg.plots:
        series = [(f"x={_fmt(z)}", [1.0 / p for p in p_range], [float(v[i]) / p for p, v in zip(p_range, vals)])
                  for i, z in enumerate(points)]
        plot = _svg.line_chart(series, f"B_p/p on {model.label}", "1/p", "B_p / p")
    extra = {"fits": [{"point": _fmt(r.point), "coeffs": [float(c) for c in r.fit.coeffs],
                       "condition": r.fit.condition, "residual_norm": r.fit.residual_norm} for r in reports]}
    return Outputs(["model", "p", "x", "B_p"], rows, checks, plot, extra)


def run_offdiag(cfg: RunConfig) -> Outputs:
    model = _model_from(cfg)
    p = cfg.get("p", int)
    if p < 1:
        raise ConfigError("p must be positive")
    x = cfg.get("point", lambda s: complex(s.replace(" ", "")))
    direction = cfg.get("direction", lambda s: complex(s.replace(" ", ""))) if cfg.has("direction") else None
    scan = offdiag_decay_scan(model, x, p, direction=direction)
    tol = cfg.positive("tol_near")
    near_cut = 3.0 / math.sqrt(p)
    rows = [(model.label, p, float(d), float(lm), "near" if d <= near_cut * (1 + 1e-12) else
             ("far" if scan.far_mask[i] else "floor"))
            for i, (d, lm) in enumerate(zip(scan.distances, scan.log_magnitudes))]
    checks = [
        _check("near_exponent", scan.near_target, scan.near_exponent, tol, scan.near_rel_error <= tol),
        _check("agmon_exponent_positive", 0.0, scan.agmon_exponent, 0.0, scan.agmon_exponent > 0),
        _check("monotone_decay", True, scan.monotone, 0.0, scan.monotone),
    ]
    plot = None
    if cfg.plots:
        ok = np.isfinite(scan.log_magnitudes)
        plot = _svg.line_chart([(f"p={p}", scan.distances[ok], scan.log_magnitudes[ok])],
                               f"|P_p(x, y)| on {model.label}", "distance", "log |P_p|")
    return Outputs(["model", "p", "distance", "log_magnitude", "zone"], rows, checks, plot,
                   {"agmon_log_constant": scan.agmon_log_constant, "floor": scan.floor})


def run_orbifold(cfg: RunConfig) -> Outputs:
    model = _model_from(cfg)
    p_range = cfg.int_list("p_range") if cfg.has("p_range") else None
    rep = orbifold_profile(model, p_range, n_pairs=cfg.get("pairs", int), seed=cfg.get("seed", int))
    rows = [(model.label, p, r, dv) for p, r, dv in zip(rep.p_values, rep.fixed_ratios, rep.deviations)]
    tol_ratio, tol_r2, tol_id = cfg.positive("tol_ratio"), cfg.positive("tol_r2"), cfg.positive("tol_identity")
    checks = [_check(f"fixed_point_deviation_ratio_{p}_{q}", 0.25, r, tol_ratio, r <= tol_ratio)
              for p, q, r in rep.deviation_ratios]
    if not rep.deviation_ratios:
        checks.append(_check("fixed_point_deviation_ratio", 0.25, math.nan, tol_ratio, False))
    checks += [
        _check("envelope_r2", 1.0, rep.envelope_r2, tol_r2, rep.envelope_r2 >= tol_r2),
        _check("envelope_bounds_correction", True, rep.envelope_consistent, 0.0, rep.envelope_consistent),
        _check("orbifold_identity", 0.0, rep.identity_residual, tol_id, rep.identity_residual <= tol_id),
    ]
    plot = None
    if cfg.plots:
        plot = _svg.line_chart([(f"k={rep.k}", rep.p_values, rep.fixed_ratios)],
                               "B_p^orb(0) / p", "p", "ratio")
    return Outputs(["model", "p", "fixed_point_ratio", "deviation"], rows, checks, plot,
                   {"envelope_slope": rep.envelope_slope, "predicted_slope": rep.predicted_slope})


def _u_values(cfg):
    us = cfg.real_list("u_values")
    if any(not u > 0 for u in us):
        raise ConfigError("u_values must be positive")
    return us


def run_model_check(cfg: RunConfig) -> Outputs:
    us = _u_values(cfg)
    if max(us) > 8:
        raise ConfigError("u_values must not exceed 8 for the Volterra quadrature")
    curvs = cfg.curvatures()
    tol, tol_sg = cfg.positive("tol"), cfg.positive("tol_semigroup")
    spec = kaehler_spectrum(1)
    rows, checks = [], []

    def job(item):
        c, u = item
        return c, u, j2u_volterra(u, c), j2u_closed(u, c)

    for c, u, vol, clo in _pmap(job, [(c, u) for c in curvs for u in us]):
        err = abs(vol - clo) / abs(clo) if clo else abs(vol - clo)
        rows.append((u, c.rX, c.rE, vol, clo, err))
        checks.append(_check(f"volterra_vs_closed(u={u!r},rX={c.rX!r},rE={c.rE!r})", clo, vol, tol, err <= tol))
    for c in curvs:
        dev = abs(j2u_deviation(8.0, c))
        checks.append(_check(f"closed_limit_b1(rX={c.rX!r},rE={c.rE!r})", b1(c), j2u_closed(8.0, c), tol, dev <= tol))
    for u in us:
        hk = model_heat_kernel([0.0, 0.0], [0.0, 0.0], u, spec).real
        checks.append(_check(f"b0u_vs_heat(u={u!r})", hk, b0u(u, spec), 1e-12, abs(b0u(u, spec) - hk) <= 1e-12 * hk))
    W, w = plane_rule()
    Z, Zp = np.array([0.4, 0.1]), np.array([-0.3, 0.5])
    for u, v in ((0.5, 0.5), (1.0, 2.0)):
        val = np.sum(w * model_heat_kernel(Z, W, u, spec) * model_heat_kernel(W, Zp, v, spec))
        ref = model_heat_kernel(Z, Zp, u + v, spec)
        r = abs(val / ref - 1)
        checks.append(_check(f"semigroup(u={u!r},v={v!r})", 0.0, r, tol_sg, r <= tol_sg))
    val = np.sum(w * model_bergman(Z, W, spec) * model_bergman(W, Zp, spec))
    r = abs(val / model_bergman(Z, Zp, spec) - 1)
    checks.append(_check("projector_reproducing", 0.0, r, tol_sg, r <= tol_sg))
    return Outputs(["u", "rX", "rE", "j2u_volterra", "j2u_closed", "rel_residual"], rows, checks)


def run_heat(cfg: RunConfig) -> Outputs:
    us = sorted(_u_values(cfg))
    curvs = cfg.curvatures()
    slope_max = cfg.real("slope_max")
    spec = kaehler_spectrum(1)
    rows, checks, series = [], [], []
    for c in curvs:
        devs = [abs(j2u_deviation(u, c)) for u in us]
        for u, dv in zip(us, devs):
            rows.append((u, c.rX, c.rE, j2u_closed(u, c), b1(c), dv, b0u(u, spec), b0u(u, spec) - 1.0))
        tag = f"rX={c.rX!r},rE={c.rE!r}"
        if c.rX == 0 and c.rE == 0:
            checks.append(_check(f"vanishing({tag})", 0.0, max(devs), 0.0, max(devs) == 0.0))
            continue
        dec = bool(np.all(np.diff(devs) < 0))
        checks.append(_check(f"deviation_decreasing({tag})", True, dec, 0.0, dec))
        window = [(u, dv) for u, dv in zip(us, devs) if 1.0 <= u <= 4.0]
        if len(window) >= 2:
            slope = np.polyfit([u for u, _ in window], [math.log(dv) for _, dv in window], 1)[0]
            checks.append(_check(f"deviation_slope({tag})", slope_max, slope, 0.0, slope <= slope_max))
        series.append((tag, us, [math.log(d) for d in devs]))
    plot = _svg.line_chart(series, "|J_2,u(0,0) - b_1|", "u", "log deviation") if cfg.plots and series else None
    return Outputs(["u", "rX", "rE", "j2u_closed", "b1", "abs_deviation", "b0u", "b0u_minus_1"], rows, checks, plot)


_RUNNERS = {"diag": run_diag, "offdiag": run_offdiag, "orbifold": run_orbifold,
            "model-check": run_model_check, "heat": run_heat}


def _write_atomic(path: str, text: str, written: list) -> None:
    d = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
        written.append(path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def execute(cfg: RunConfig) -> int:
    result = _RUNNERS[cfg.subcommand](cfg)
    stem = cfg.subcommand.replace("-", "_")
    report = {
        "schema_version": SCHEMA_VERSION,
        "subcommand": cfg.subcommand,
        "config": {k: cfg.values[k] for k in sorted(cfg.values)},
        "config_hash": cfg.hash,
        "checks": result.checks,
        "details": result.extra,
    }
    os.makedirs(cfg.out_dir, exist_ok=True)
    written = []
    try:
        _write_atomic(os.path.join(cfg.out_dir, f"{stem}.csv"), _csv_text(result.csv_header, result.csv_rows), written)
        _write_atomic(os.path.join(cfg.out_dir, f"{stem}.json"),
                      json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n", written)
        if result.plot is not None:
            _write_atomic(os.path.join(cfg.out_dir, f"{stem}.svg"), result.plot, written)
    except BaseException:
        for path in written:
            os.unlink(path)
        raise
    return 0 if all(c["pass"] for c in result.checks) else 1


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bergman", description="Bergman kernel verification suites")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, help="flat key = value configuration file")
    ap.add_argument("--out", default=".", help="output directory (default: current)")
    ap.add_argument("--plots", action="store_true", help="also write an SVG plot")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = load_config(args.config, args.subcommand, args.out, args.plots)
        code = execute(cfg)
    except (ConfigError, BergmanError) as exc:
        print(f"bergman: error: {exc}", file=sys.stderr)
        return 2
    for line in _summary(args):
        print(line)
    return code


def _summary(args):
    stem = args.subcommand.replace("-", "_")
    path = os.path.join(args.out, f"{stem}.json")
    with open(path, encoding="utf-8") as fh:
        report = json.load(fh)
    for c in report["checks"]:
        yield f"{'PASS' if c['pass'] else 'FAIL'}  {c['name']}  measured={c['measured']}  target={c['target']}"


if __name__ == "__main__":
    sys.exit(main())
