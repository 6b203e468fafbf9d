"""Command line runner: collect | identify | synthesize | validate | reproduce-paper.

Every artifact carries the config hash and the RNG seeds. Exit codes are
listed in :data:`EXIT_CODES`.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
import warnings
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .config import build_plant, config_hash, load_config, validate_config, with_overrides
from .datamat import build_shifted
from .delayid import Identified, Undecidable, scan_delays
from .estimators import shifts_for
from .exceptions import (ConfigError, DdtdsError, InfeasibleError, NotIdentifiableError)
from .model import Constant, DataRecord, add_measurement_noise
from .scenarios import REFERENCE_K_NOISE_FREE, REFERENCE_K_NOISY, collect_from_rest
from .synth import (GuaranteedCost, Hinf, Stabilize, StabilizeNoisy, SynthesisSpec, synthesize)
from .validate import LkfCertificate, validate_gain

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_RANK = 3
EXIT_UNDECIDABLE = 4
EXIT_INFEASIBLE = 5
EXIT_VALIDATION = 6

EXIT_CODES = {
    "ok": EXIT_OK,
    "error": EXIT_ERROR,
    "config": EXIT_CONFIG,
    "rank": EXIT_RANK,
    "undecidable": EXIT_UNDECIDABLE,
    "infeasible": EXIT_INFEASIBLE,
    "validation": EXIT_VALIDATION,
}


class StageError(Exception):
    def __init__(self, stage, code, message):
        super().__init__(f"{stage}: {message}")
        self.stage = stage
        self.code = code


# --------------------------------------------------------------------------
# artifact helpers


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, float) and not np.isfinite(o):
        return str(o)
    if isinstance(o, tuple):
        return list(o)
    return str(o)


def _clean(o):
    # json cannot write inf/nan; store them as strings
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    if isinstance(o, (np.floating, float)):
        v = float(o)
        return v if np.isfinite(v) else str(v)
    if isinstance(o, (np.integer, np.bool_)):
        return o.item()
    return o


def _stamp(cfg):
    return {"config_hash": config_hash(cfg), "noise_seed": cfg["noise"]["seed"],
            "validation_seed": cfg["validation"]["seed"], "ddtds_version": __version__}


def write_json(path: Path, payload: dict, cfg: dict):
    body = dict(_stamp(cfg))
    body.update(payload)
    try:
        path.write_text(json.dumps(_clean(body), indent=2, default=_jsonable) + "\n",
                        encoding="utf-8")
    except OSError as exc:
        raise StageError("write", EXIT_ERROR, f"cannot write {path}: {exc}") from None


def write_manifest(out: Path, stage: str, cfg: dict, files):
    write_json(out / f"manifest_{stage}.json",
               {"stage": stage, "files": [str(f) for f in files], "config": cfg,
                "created": time.strftime("%Y-%m-%dT%H:%M:%S%z")}, cfg)


def _csv_header_comment(cfg):
    s = _stamp(cfg)
    return (f"# config_hash={s['config_hash']} noise_seed={s['noise_seed']} "
            f"validation_seed={s['validation_seed']}")


def write_trajectory_csv(path: Path, k, x, u, cfg, extra=None):
    """Columns ``k, x1..xn, u1..um`` plus any ``extra`` named columns."""
    x = np.atleast_2d(x)
    u = np.atleast_2d(u)
    header = ["k"] + [f"x{i + 1}" for i in range(x.shape[1])] + \
             [f"u{i + 1}" for i in range(u.shape[1])]
    cols = [np.asarray(k)[:, None], x, u]
    for name, col in (extra or {}).items():
        col = np.atleast_2d(np.asarray(col, dtype=float))
        col = col.T if col.shape[0] == 1 and col.shape[1] == len(k) else col
        header += [f"{name}{i + 1}" for i in range(col.shape[1])] if col.shape[1] > 1 else [name]
        cols.append(col)
    data = np.hstack(cols)
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            fh.write(_csv_header_comment(cfg) + "\n")
            w = csv.writer(fh)
            w.writerow(header)
            for row in data:
                w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
    except OSError as exc:
        raise StageError("write", EXIT_ERROR, f"cannot write {path}: {exc}") from None


def read_record(path: Path, hbar: int) -> DataRecord:
    """Load a trajectory CSV written by ``collect``."""
    try:
        with path.open(encoding="utf-8") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
    except OSError as exc:
        raise StageError("read", EXIT_ERROR, f"cannot read {path}: {exc}") from None
    header = lines[0].strip().split(",")
    data = np.array([[float(v) for v in ln.strip().split(",")] for ln in lines[1:] if ln.strip()])
    xi = [c for c, h in enumerate(header) if h.startswith("x")]
    ui = [c for c, h in enumerate(header) if h.startswith("u")]
    k = data[:, 0].astype(int)
    if k[0] != -hbar:
        raise StageError("read", EXIT_CONFIG, f"{path}: first k is {k[0]}, config hbar implies {-hbar}")
    return DataRecord(data[:, xi], data[:, ui], int(k[-1]), hbar)


# --------------------------------------------------------------------------
# stages


def stage_collect(cfg, out: Path):
    plant = build_plant(cfg)
    d = cfg["delays"]
    rec = collect_from_rest(plant, Constant(d["h1"]), Constant(d["h2"]),
                            [tuple(t) for t in cfg["excitation"]], cfg["sampling_period"],
                            cfg["samples"])
    if cfg["noise"]["variance"] > 0:
        rec = add_measurement_noise(rec, cfg["noise"]["variance"], cfg["noise"]["seed"])
    path = out / "data.csv"
    write_trajectory_csv(path, rec.k, rec.x, rec.u, cfg)
    write_manifest(out, "collect", cfg, [path.name])
    return rec


def stage_identify(cfg, out: Path, rec: DataRecord):
    ident = cfg["identification"]
    var = cfg["noise"]["variance"] or None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        scan = scan_delays(rec, cfg["hbar"], ident["r"], fixed_j=ident["fixed_j"], variance=var,
                           state_delay=ident["state_delay"])
    path = out / "distances.csv"
    try:
        with path.open("w", newline="", encoding="utf-8") as fh:
            fh.write(_csv_header_comment(cfg) + "\n")
            w = csv.writer(fh)
            w.writerow(["i"] + [f"j={j}" for j in scan.state_shifts])
            for a, i in enumerate(scan.input_shifts):
                w.writerow([i] + [repr(float(v)) for v in scan.distances[a]])
    except OSError as exc:
        raise StageError("identify", EXIT_ERROR, f"cannot write {path}: {exc}") from None
    payload = scan.as_dict()
    if isinstance(scan.verdict, Identified):
        payload["identified"] = {"h2": scan.verdict.i, "h1": scan.verdict.j}
    write_json(out / "identify.json", payload, cfg)
    write_manifest(out, "identify", cfg, [path.name, "identify.json"])
    if isinstance(scan.verdict, Undecidable):
        raise StageError("identify", EXIT_UNDECIDABLE,
                         f"several shift pairs fit the data: {list(scan.verdict.candidates)}")
    if not isinstance(scan.verdict, Identified):
        raise StageError("identify", EXIT_UNDECIDABLE,
                         f"no shift pair within r = {scan.threshold:.4g}; "
                         f"smallest distance {np.nanmin(scan.distances):.4g}")
    return scan


def _kind(cfg, plant):
    s = cfg["synthesis"]
    if s["kind"] == "stabilize":
        return Stabilize()
    if s["kind"] == "noisy":
        return StabilizeNoisy(s["alpha"], s["lam"], s["coupling"])
    n = plant.n
    L1 = plant.L1 if plant.has_performance else np.eye(n)
    if s["kind"] == "cost":
        if s["x0"] is None:
            raise ConfigError("synthesis/x0 is required for kind 'cost'")
        return GuaranteedCost(np.array(s["x0"], dtype=float), L1, plant.L2, plant.D, s["delta"],
                              theta=s["theta"])
    if plant.D0 is None:
        raise ConfigError("plant/D0 is required for kind 'hinf'")
    return Hinf(plant.D0, L1, plant.L2, plant.D, s["gamma"])


def stage_synthesize(cfg, out: Path, rec: DataRecord, delays):
    plant = build_plant(cfg)
    s = cfg["synthesis"]
    i, j = shifts_for(*delays)
    try:
        dm = build_shifted(rec, i, j)
        spec = SynthesisSpec(_kind(cfg, plant), cfg["hbar"] if s["hbar"] is None else s["hbar"],
                             s["epsilon"], s["mode"], s["margin"], epsilon_grid=s["epsilon_grid"],
                             backend=s["backend"])
        res = synthesize(dm, spec)
    except NotIdentifiableError as exc:
        raise StageError("synthesize", EXIT_RANK, str(exc)) from None
    except DdtdsError as exc:
        raise StageError("synthesize", EXIT_INFEASIBLE, str(exc)) from None
    payload = res.as_dict()
    payload.pop("variables", None)
    payload["delays"] = {"h2": delays[0], "h1": delays[1]}
    payload["hbar"] = spec.hbar
    write_json(out / "result.json", payload, cfg)
    write_manifest(out, "synthesize", cfg, ["result.json"])
    if not res.feasible:
        raise StageError("synthesize", EXIT_INFEASIBLE,
                         f"status {res.status}; solver {res.diagnostics.get('solver', {})}")
    return res


def stage_validate(cfg, out: Path, result: dict):
    plant = build_plant(cfg)
    v = cfg["validation"]
    if result.get("status") != "Feasible" or "K" not in result:
        raise StageError("validate", EXIT_INFEASIBLE, "result file holds no certified gain")
    K = np.array(result["K"], dtype=float)
    c = result.get("certificate")
    cert = None
    if c is not None:
        cert = LkfCertificate(np.array(c["P"]), np.array(c["S"]), np.array(c["R1"]),
                              np.array(c["R2"]), int(result["hbar"]))
    rep = validate_gain(plant, K, cert, v["histories"], v["sequences"], v["horizon"],
                        h1_range=v["h1_range"] or (0, 0), h2_range=v["h2_range"], seed=v["seed"],
                        reference=v["reference"], tracking_tol=v["tracking_tol"],
                        tracking_T=v["tracking_horizon"])
    files = ["validation.json"]
    if v["reference"] is not None:
        # one tracking run for plotting, under the slowest admissible input delay
        from .model import simulate_closed_loop
        from .exceptions import DivergenceError
        h2 = (v["h2_range"] or (0, cfg["hbar"]))[1]
        try:
            tr = simulate_closed_loop(plant, K, 0, h2, None, v["tracking_horizon"],
                                      r=v["reference"])
            k = np.arange(0, tr.T + 1)
            write_trajectory_csv(out / "tracking.csv", k, tr.x[tr.hbar:],
                                 np.vstack([tr.u, np.full((1, tr.u.shape[1]), np.nan)]), cfg,
                                 {"h2": np.append(tr.h2, -1)})
            files.append("tracking.csv")
        except DivergenceError:
            pass
    write_json(out / "validation.json", rep.as_dict(), cfg)
    write_manifest(out, "validate", cfg, files)
    if not rep.passed:
        failed = [k for k, c in rep.checks.items() if not c["passed"]]
        raise StageError("validate", EXIT_VALIDATION, f"checks failed: {failed}")
    return rep


# --------------------------------------------------------------------------
# commands


def _out_dir(args, cfg):
    out = Path(args.out or cfg.get("output_dir") or ".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StageError("setup", EXIT_ERROR, f"cannot create {out}: {exc}") from None
    return out


def _load(args):
    if args.config is None:
        raise ConfigError("--config is required")
    cfg = load_config(args.config)
    return with_overrides(cfg, args.seed, args.mode, args.epsilon, args.margin)


def _data(args, cfg, out):
    path = Path(args.data) if getattr(args, "data", None) else out / "data.csv"
    return read_record(path, cfg["hbar"])


def _delays(cfg, out, rec):
    p = out / "identify.json"
    if p.exists():
        info = json.loads(p.read_text(encoding="utf-8"))
        if info.get("config_hash") == config_hash(cfg) and "identified" in info:
            return info["identified"]["h2"], info["identified"]["h1"]
    scan = stage_identify(cfg, out, rec)
    return scan.verdict.i, scan.verdict.j


def cmd_collect(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    rec = stage_collect(cfg, out)
    print(f"wrote {out / 'data.csv'} ({rec.x.shape[0]} rows, T={rec.T})")


def cmd_identify(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    scan = stage_identify(cfg, out, _data(args, cfg, out))
    print(f"verdict {scan.verdict}; threshold {scan.threshold:.4g}")


def cmd_synthesize(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    rec = _data(args, cfg, out)
    res = stage_synthesize(cfg, out, rec, _delays(cfg, out, rec))
    print(f"{res.status}: K = {np.array2string(res.K, precision=5)}")


def cmd_validate(args):
    cfg = _load(args)
    out = _out_dir(args, cfg)
    path = Path(args.result) if args.result else out / "result.json"
    try:
        result = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise StageError("validate", EXIT_ERROR, f"cannot read {path}: {exc}") from None
    rep = stage_validate(cfg, out, result)
    print(f"validation passed; decay rate {rep.decay_rate:.6f}")


def packaged_config(name: str) -> dict:
    text = resources.files("ddtds").joinpath("configs", f"{name}.json").read_text("utf-8")
    return validate_config(json.loads(text))


def run_pipeline(cfg, out: Path):
    """collect -> identify -> synthesize -> validate; returns a summary row."""
    out.mkdir(parents=True, exist_ok=True)
    row = {"name": cfg["name"], "stage_failed": None, "exit_code": EXIT_OK}
    try:
        rec = stage_collect(cfg, out)
        scan = stage_identify(cfg, out, rec)
        row["distances"] = scan.row(scan.state_shifts[0]).tolist()
        row["verdict"] = str(scan.verdict)
        res = stage_synthesize(cfg, out, rec, (scan.verdict.i, scan.verdict.j))
        row["status"] = res.status
        row["K"] = res.K.tolist()
        result = json.loads((out / "result.json").read_text(encoding="utf-8"))
        rep = stage_validate(cfg, out, result)
        row["decay_rate"] = rep.decay_rate
        row["tracking_settle"] = rep.tracking_settle
    except StageError as exc:
        row["stage_failed"] = exc.stage
        row["exit_code"] = exc.code
        row["error"] = str(exc)
        res_path = out / "result.json"
        if exc.stage == "synthesize" and res_path.exists():
            row["status"] = json.loads(res_path.read_text(encoding="utf-8")).get("status")
    return row


def cmd_reproduce(args):
    out = Path(args.out or "reproduction")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    refs = {"scenario1": REFERENCE_K_NOISE_FREE, "scenario2": REFERENCE_K_NOISY}
    for name in ("scenario1", "scenario2"):
        cfg = packaged_config(name)
        cfg = with_overrides(cfg, args.seed, args.mode, args.epsilon, args.margin)
        row = run_pipeline(cfg, out / name)
        row["reference_K"] = refs[name].tolist()
        rows.append(row)
        state = "ok" if row["stage_failed"] is None else f"failed at {row['stage_failed']}"
        print(f"{name}: {state}; verdict {row.get('verdict')}; status {row.get('status')}; "
              f"decay rate {row.get('decay_rate')}")
    (out / "summary.json").write_text(json.dumps(_clean({"scenarios": rows}), indent=2) + "\n",
                                      encoding="utf-8")
    with (out / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "verdict", "d(0)", "d(1)", "d(2)", "d(3)", "d(4)", "d(5)", "d(6)",
                    "status", "decay_rate", "stage_failed"])
        for r in rows:
            d = r.get("distances") or [None] * 7
            w.writerow([r["name"], r.get("verdict")] + d +
                       [r.get("status"), r.get("decay_rate"), r["stage_failed"]])
    codes = [r["exit_code"] for r in rows if r["exit_code"]]
    if codes:
        raise StageError("reproduce-paper", codes[0], "one or more scenarios failed")


# --------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="ddtds", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON experiment configuration")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, metavar="N", help="override the RNG seeds")
    common.add_argument("--mode", choices=["equality", "norm-min"],
                        help="impose the data equalities exactly or minimize their norms")
    common.add_argument("--epsilon", type=float, metavar="F", help="descriptor tuning scalar")
    common.add_argument("--margin", type=float, metavar="F", help="LMI strictness margin")
    sub = p.add_subparsers(dest="command", required=True)
    c = sub.add_parser("collect", parents=[common], help="simulate and record an experiment")
    c.set_defaults(func=cmd_collect)
    c = sub.add_parser("identify", parents=[common], help="scan candidate delays")
    c.add_argument("--data", metavar="PATH", help="trajectory CSV (default OUT/data.csv)")
    c.set_defaults(func=cmd_identify)
    c = sub.add_parser("synthesize", parents=[common], help="solve the synthesis LMIs")
    c.add_argument("--data", metavar="PATH", help="trajectory CSV (default OUT/data.csv)")
    c.set_defaults(func=cmd_synthesize)
    c = sub.add_parser("validate", parents=[common], help="validate a synthesized gain")
    c.add_argument("--result", metavar="PATH", help="result JSON (default OUT/result.json)")
    c.set_defaults(func=cmd_validate)
    c = sub.add_parser("reproduce-paper", parents=[common],
                       help="run both reference scenarios end to end")
    c.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NotIdentifiableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RANK
    except InfeasibleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DdtdsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
