"""``gcltlab`` command-line entry point.

Usage::

    gcltlab <command> [--manifest file] [--seed k] [--out path] [--timing] [key=value ...]

Parameters come from the JSON manifest first; ``key=value`` pairs and flags
override them.  Exit codes: 0 success, 1 failed self-test, 2 validation error,
3 numerical-guard violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import acceptance, g_limit, limit_harness, payoffs
from .errors import GuardError, ValidationError
from .measure_core import measure_set_from_json

COMMANDS = ("variance", "lln", "clt", "gheat", "capacity", "mc",
            "example51", "example52", "example53", "selftest")
VALUE_COLUMNS = ("experiment", "quantity", "value", "runtime_ms")
HARNESS_COLUMNS = limit_harness.CSV_COLUMNS


@dataclass
class Manifest:
    command: str
    parameters: dict = field(default_factory=dict)
    seed: int = 0
    output_path: str | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValidationError(f"unknown command {self.command!r}")

    def get(self, key, default=None, required=False):
        if key not in self.parameters:
            if required:
                raise ValidationError(f"{self.command}: missing parameter {key!r}")
            return default
        return self.parameters[key]


def _floats(value) -> list[float]:
    if isinstance(value, (int, float)):
        return [float(value)]
    if isinstance(value, str):
        value = value.split(",")
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"expected a list of numbers, got {value!r}") from exc


def _ints(value) -> list[int]:
    out = _floats(value)
    if any(v != int(v) for v in out):
        raise ValidationError(f"expected integers, got {value!r}")
    return [int(v) for v in out]


def _theta(value):
    vals = _floats(value)
    if len(vals) != 2:
        raise ValidationError(f"theta must be 'lo,hi', got {value!r}")
    return g_limit.ThetaInterval(*vals)


def _measure_set(value):
    if isinstance(value, dict):
        return measure_set_from_json(value)
    if isinstance(value, str) and Path(value).is_file():
        return measure_set_from_json(json.loads(Path(value).read_text()))
    return limit_harness.named_set(str(value))


def emit_csv(rows, path, columns=HARNESS_COLUMNS, timing: bool = False) -> str:
    """Write rows as CSV (header first, ``repr`` floats) and return the text.

    ``runtime_ms`` is left blank unless ``timing`` is set, keeping reruns
    byte-identical.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        rec = row.as_dict() if hasattr(row, "as_dict") else dict(row)
        if not timing:
            rec["runtime_ms"] = None
        writer.writerow(["" if rec.get(c) is None else rec[c] for c in columns])
    text = buf.getvalue()
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        try:
            Path(path).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot write {path}: {exc}") from exc
    return text


def _timed_row(experiment, quantity, fn):
    start = time.perf_counter()
    value = fn()
    return {"experiment": experiment, "quantity": quantity, "value": value,
            "runtime_ms": 1e3 * (time.perf_counter() - start)}


def _cmd_variance(m: Manifest):
    base = _measure_set(m.get("set", required=True))
    return limit_harness.variance_rows(base, "variance", float(m.get("grid_step", 0.01))), VALUE_COLUMNS


def _cmd_lln(m: Manifest):
    base = _measure_set(m.get("set", "example52"))
    phi = payoffs.parse_payoff(str(m.get("payoff", "d_unit")))
    rows = limit_harness.lln_converge(base, phi, _ints(m.get("n_list", "10,50,200")),
                                      float(m.get("lipschitz", 1.0)))
    return rows, HARNESS_COLUMNS


def _cmd_clt(m: Manifest):
    base = _measure_set(m.get("set", "example52"))
    phi = payoffs.parse_payoff(str(m.get("payoff", "tent")))
    rows = limit_harness.clt_converge(base, phi, _ints(m.get("n_list", "32,128,512")),
                                      M=int(m.get("M", 10)), h=float(m.get("h", 0.01)))
    return rows, HARNESS_COLUMNS


def _cmd_gheat(m: Manifest):
    theta = _theta(m.get("theta", required=True))
    phi = payoffs.parse_payoff(str(m.get("payoff", "square")))
    kw = {"h": float(m.get("h", g_limit.DEFAULT_H))}
    if m.get("steps") is not None:
        kw["time_steps"] = int(m.get("steps"))
    rows = [_timed_row("gheat", "pde", lambda: g_limit.solve_g_heat(
        g_limit.GHeatConfig.build(theta, phi, **kw)).value_at_origin)]
    if str(m.get("method", "pde")) in ("tree", "both"):
        rows.append(_timed_row("gheat", "tree", lambda: g_limit.tree_g_expect(
            phi, theta, n=int(m.get("tree_steps", g_limit.DEFAULT_TREE_STEPS)))))
    return rows, VALUE_COLUMNS


def _cmd_capacity(m: Manifest):
    theta = _theta(m.get("theta", "0.25,0.25"))
    a, b, eps = float(m.get("a", required=True)), float(m.get("b", required=True)), float(m.get("eps", 0.01))
    start = time.perf_counter()
    br = g_limit.capacity_interval(a, b, theta, eps)
    ms = 1e3 * (time.perf_counter() - start)
    return [{"experiment": "capacity", "quantity": "lower", "value": br.lower, "runtime_ms": ms},
            {"experiment": "capacity", "quantity": "upper", "value": br.upper, "runtime_ms": ms}], VALUE_COLUMNS


def _cmd_mc(m: Manifest):
    theta = _theta(m.get("theta", required=True))
    control = g_limit.control_from_spec(str(m.get("control", "high")), theta)
    phi = g_limit.terminal(payoffs.parse_payoff(str(m.get("payoff", "square"))))
    start = time.perf_counter()
    est, se = g_limit.control_mc_lower_bound(phi, theta, control, paths=int(m.get("paths", 100_000)),
                                             seed=m.seed, steps=int(m.get("steps", 64)))
    ms = 1e3 * (time.perf_counter() - start)
    return [{"experiment": "mc", "quantity": "estimate", "value": est, "runtime_ms": ms},
            {"experiment": "mc", "quantity": "std_error", "value": se, "runtime_ms": ms}], VALUE_COLUMNS


def _cmd_example(name):
    def run(m: Manifest):
        rows = limit_harness.example_rows(name, _ints(m.get("n_list", "32,128,512")),
                                          M=int(m.get("M", 1 if name == "example51" else 10)),
                                          h=float(m.get("h", 0.01)))
        return rows, HARNESS_COLUMNS
    return run


def _cmd_example53(m: Manifest):
    rep = limit_harness.example_5_3(_ints(m.get("K", "10,100,1000")), _ints(m.get("n_list", "16")))
    return rep.rows, HARNESS_COLUMNS


DISPATCH = {
    "variance": _cmd_variance,
    "lln": _cmd_lln,
    "clt": _cmd_clt,
    "gheat": _cmd_gheat,
    "capacity": _cmd_capacity,
    "mc": _cmd_mc,
    "example51": _cmd_example("example51"),
    "example52": _cmd_example("example52"),
    "example53": _cmd_example53,
}


def run(manifest: Manifest, timing: bool = False) -> int:
    if manifest.command == "selftest":
        results = acceptance.run_all()
        return 0 if all(r.passed for r in results) else 1
    rows, columns = DISPATCH[manifest.command](manifest)
    emit_csv(rows, manifest.output_path, columns, timing=timing)
    return 0


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def build_manifest(argv) -> tuple[Manifest, bool]:
    parser = argparse.ArgumentParser(prog="gcltlab", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--manifest", type=Path)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out")
    parser.add_argument("--timing", action="store_true", help="fill the runtime_ms column")
    parser.add_argument("params", nargs="*", metavar="key=value")
    args = parser.parse_intermixed_args(argv)

    doc = {}
    if args.manifest is not None:
        try:
            doc = json.loads(args.manifest.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read manifest: {exc}") from exc
        if doc.get("command", args.command) != args.command:
            raise ValidationError(f"manifest is for {doc['command']!r}, not {args.command!r}")
    params = dict(doc.get("parameters", {}))
    for item in args.params:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ValidationError(f"expected key=value, got {item!r}")
        params[key] = _parse_value(raw)
    seed = args.seed if args.seed is not None else int(doc.get("seed", 0))
    out = args.out if args.out is not None else doc.get("output_path")
    return Manifest(args.command, params, seed, out), args.timing


def main(argv=None) -> int:
    try:
        manifest, timing = build_manifest(argv)
        return run(manifest, timing)
    except ValidationError as exc:
        print(f"gcltlab: validation error: {exc}", file=sys.stderr)
        return 2
    except GuardError as exc:
        print(f"gcltlab: numerical guard: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
