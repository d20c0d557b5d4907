"""``adrgraph`` command line: run, sweep, gen-sbm, validate-bank, report.

Exit codes: 0 success, 1 runtime failure, 2 bad invocation or unreadable config.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, SbmConfig, SweepConfig, apply_overrides, dump_config, load_config
from .continual import run_experiment, write_outputs
from .datasets import SbmSpec, generate_sbm, save_dataset
from .evaluate import dump_metrics, metrics_dict, read_matrix_csv
from .linalg import load_matrix, spectral_sanity

log = logging.getLogger("adrgraph")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    """Invocation problem that maps to exit code 2."""


@dataclass
class CliInvocation:
    subcommand: str
    config_path: str | None = None
    overrides: list[str] = field(default_factory=list)
    output_dir: str | None = None
    seed: int | None = None

    def load(self) -> ExperimentConfig:
        if self.config_path is None:
            cfg = ExperimentConfig()
        else:
            cfg = load_config(self.config_path)
        if self.overrides:
            cfg = apply_overrides(cfg, self.overrides)
        if self.seed is not None:
            cfg = cfg.with_seed(self.seed)
        return cfg


def setup_logging() -> None:
    raw = os.environ.get("ADR_LOG_LEVEL", "warn").strip().lower()
    level = LOG_LEVELS.get(raw)
    logging.basicConfig(level=level or logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if level is None:
        log.warning("ADR_LOG_LEVEL=%r is not one of %s; using warn", raw, sorted(LOG_LEVELS))


def _err(msg: str) -> None:
    print(f"adrgraph: error: {msg}", file=sys.stderr)


# -------------------------------------------------------------------- run


def cmd_run(inv: CliInvocation, checkpoints: bool = True) -> int:
    cfg = inv.load()
    out = Path(inv.output_dir or cfg.output_dir or "out")
    cfg.output_dir = str(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dump_config(cfg), encoding="utf-8")
    record = run_experiment(cfg)
    write_outputs(record, out, checkpoints=checkpoints)
    m = record.metrics()
    print(f"{cfg.method}: A_avg={_fmt(m['A_avg'])} A_f={_fmt(m['A_f'])} A_l={_fmt(m['A_l'])} -> {out}")
    return EXIT_OK


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.4f}"


# ------------------------------------------------------------------ sweep

SWEEP_COLUMNS = ["gamma", "alpha", "seed", "A_avg_val", "A_f_val", "error"]


def _point_name(gamma: float, alpha: int, seed: int) -> str:
    return f"g{gamma!r}_a{alpha}_s{seed}"


def _sweep_point(job: tuple[dict, float, int, int, str]) -> dict:
    cfg_dict, gamma, alpha, seed, out_dir = job
    from .config import config_from_dict

    row = {"gamma": gamma, "alpha": alpha, "seed": seed, "A_avg_val": None, "A_f_val": None, "error": ""}
    try:
        cfg = config_from_dict(cfg_dict).with_seed(seed)
        cfg.gamma, cfg.alpha, cfg.eval_split, cfg.sweep = gamma, alpha, "val", None
        cfg.output_dir = out_dir
        cfg.validate()
        record = run_experiment(cfg)
        write_outputs(record, out_dir, checkpoints=False)
        m = record.metrics()
        row["A_avg_val"], row["A_f_val"] = m["A_avg"], m["A_f"]
    except Exception as exc:  # recorded, the sweep goes on
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep_jobs(cfg: ExperimentConfig, out: Path) -> list[tuple]:
    sw = cfg.sweep or SweepConfig()
    base = cfg.to_dict()
    return [
        (base, float(g), int(a), int(s), str(out / "points" / _point_name(float(g), int(a), int(s))))
        for g, a, s in itertools.product(sw.gammas, sw.alphas, sw.seeds)
    ]


def _cell(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, float) else str(v)


def sweep_table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_cell(r[c]) for c in SWEEP_COLUMNS])
    return buf.getvalue()


def summarize_sweep(rows: list[dict]) -> tuple[list[dict], dict | None]:
    """Mean and std per (gamma, alpha) over seeds; best point by mean validation A_avg."""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        groups.setdefault((r["gamma"], r["alpha"]), []).append(r)
    summary = []
    for (g, a), rs in groups.items():
        ok = [r for r in rs if not r["error"]]
        entry = {"gamma": g, "alpha": a, "runs": len(rs), "failed": len(rs) - len(ok)}
        for key in ("A_avg_val", "A_f_val"):
            vals = np.array([r[key] for r in ok if r[key] is not None], dtype=np.float64)
            entry[f"{key}_mean"] = float(vals.mean()) if vals.size else None
            entry[f"{key}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else (0.0 if vals.size else None)
        summary.append(entry)
    scored = [e for e in summary if e["A_avg_val_mean"] is not None]
    best = None
    if scored:
        # first in grid order wins ties
        top = max(e["A_avg_val_mean"] for e in scored)
        best = next(e for e in scored if e["A_avg_val_mean"] == top)
    return summary, best


def cmd_sweep(inv: CliInvocation, workers: int | None = None) -> int:
    cfg = inv.load()
    out = Path(inv.output_dir or cfg.output_dir or "sweep_out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dump_config(cfg), encoding="utf-8")
    jobs = sweep_jobs(cfg, out)
    n_workers = max(1, workers if workers is not None else (cfg.sweep or SweepConfig()).workers)
    log.info("sweep: %d grid points x seeds, %d worker(s)", len(jobs), n_workers)
    if n_workers == 1:
        rows = [_sweep_point(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            rows = list(pool.map(_sweep_point, jobs))

    (out / "sweep.csv").write_text(sweep_table_csv(rows), encoding="utf-8")
    summary, best = summarize_sweep(rows)
    cols = list(summary[0]) if summary else []
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for e in summary:
        w.writerow([_cell(e[c]) for c in cols])
    (out / "sweep_summary.csv").write_text(buf.getvalue(), encoding="utf-8")
    (out / "best.json").write_text(json.dumps(best, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    failed = sum(1 for r in rows if r["error"])
    for r in rows:
        if r["error"]:
            log.warning("point %s failed: %s", _point_name(r["gamma"], r["alpha"], r["seed"]), r["error"])
    if best is None:
        _err(f"all {len(rows)} sweep runs failed")
        return EXIT_RUNTIME
    print(
        f"sweep: {len(rows)} runs ({failed} failed); best gamma={best['gamma']!r} alpha={best['alpha']} "
        f"A_avg_val={best['A_avg_val_mean']:.4f}+-{best['A_avg_val_std']:.4f} -> {out}"
    )
    return EXIT_OK


# ---------------------------------------------------------------- gen-sbm


def cmd_gen_sbm(inv: CliInvocation, args) -> int:
    s = inv.load().dataset.sbm if inv.config_path else SbmConfig()
    blocks = [int(b) for b in args.blocks.split(",")] if args.blocks else list(s.blocks)
    spec = SbmSpec(
        tuple(blocks),
        s.p_intra if args.p_intra is None else args.p_intra,
        s.p_inter if args.p_inter is None else args.p_inter,
        s.feature_dim if args.feature_dim is None else args.feature_dim,
        s.feature_shift if args.feature_shift is None else args.feature_shift,
        s.seed if inv.seed is None else inv.seed,
    )
    out = Path(inv.output_dir or "sbm_data")
    ds = generate_sbm(spec)
    save_dataset(ds, out)
    print(f"gen-sbm: {ds.num_nodes} nodes, {ds.edges.shape[0]} edges, {ds.class_count} classes -> {out}")
    return EXIT_OK


# ---------------------------------------------------------- validate-bank


def _gram_shift(A: np.ndarray) -> float:
    # lets exactly rank-deficient Gram matrices (dead ReLU units, few nodes) pass as semidefinite
    n = A.shape[0]
    tr = float(np.trace(A)) if n else 0.0
    return 1e-9 * (tr / n if n and np.isfinite(tr) and tr > 0 else 1.0)


def validate_bank_dir(path: Path) -> tuple[list[str], bool]:
    """Report lines and overall verdict for every matrix file under ``path``."""
    files = sorted(path.rglob("*.bin"))
    if not files:
        raise UsageError(f"no matrix files (*.bin) under {path}")
    lines, ok = [], True
    for f in files:
        name = str(f.relative_to(path))
        try:
            A = load_matrix(f)
        except (OSError, ValueError) as exc:
            lines.append(f"FAIL {name}: unreadable ({exc})")
            ok = False
            continue
        finite = bool(np.all(np.isfinite(A)))
        if f.stem.startswith("R"):
            if A.shape[0] != A.shape[1]:
                lines.append(f"FAIL {name}: autocorrelation matrix is not square {A.shape}")
                ok = False
                continue
            rep = spectral_sanity(A, shift=_gram_shift(A))
            good = rep.ok and finite
            pivot = "n/a" if rep.min_pivot is None else f"{rep.min_pivot:.3e}"
            lines.append(
                f"{'PASS' if good else 'FAIL'} {name}: {A.shape[0]}x{A.shape[1]} "
                f"asym={rep.max_asymmetry:.3e} symmetric={rep.symmetric} psd={rep.psd} min_pivot={pivot}"
            )
        else:
            good = finite
            lines.append(f"{'PASS' if good else 'FAIL'} {name}: {A.shape[0]}x{A.shape[1]} finite={finite}")
        ok &= good
    return lines, ok


def cmd_validate_bank(bank_dir: str) -> int:
    path = Path(bank_dir)
    if not path.is_dir():
        raise UsageError(f"bank directory {path} does not exist")
    lines, ok = validate_bank_dir(path)
    for line in lines:
        print(line)
    if not ok:
        bad = [ln.split(":", 1)[0][5:] for ln in lines if ln.startswith("FAIL")]
        _err(f"bank check failed for {', '.join(bad)}")
        return EXIT_RUNTIME
    return EXIT_OK


# ----------------------------------------------------------------- report


def build_report(path: Path) -> dict:
    """Metrics payload for a run directory or a bare performance-matrix CSV."""
    if path.is_dir():
        csv_path = path / "performance_matrix.csv"
        rec_path = path / "run_record.json"
    else:
        csv_path, rec_path = path, None
    if not csv_path.is_file():
        raise UsageError(f"no performance matrix at {csv_path}")
    M = read_matrix_csv(csv_path)
    rho, drift, complete = [], None, True
    if rec_path is not None and rec_path.is_file():
        rec = json.loads(rec_path.read_text(encoding="utf-8"))
        rho = rec.get("rho_t") or []
        complete = rec.get("method") != "joint"
        if rec.get("drift"):
            drift = {k: rec["drift"][k] for k in ("mean_normalized", "base_final_normalized")}
    else:
        complete = not np.isnan(np.diag(M)).any()
    return metrics_dict(M, rho, drift, complete)


def cmd_report(target: str, out_file: str | None) -> int:
    text = dump_metrics(build_report(Path(target)))
    if out_file:
        Path(out_file).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adrgraph", description="Analytic continual graph learning experiments.")
    sub = p.add_subparsers(dest="subcommand", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="experiment config (JSON)")
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-key override, value parsed as JSON (repeatable)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--seed", type=int, help="set every named seed to this value")

    r = sub.add_parser("run", help="run one experiment")
    common(r, config_required=True)
    r.add_argument("--no-checkpoints", action="store_true", help="skip writing bank/model checkpoints")

    s = sub.add_parser("sweep", help="gamma x alpha x seed grid on the validation split")
    common(s, config_required=True)
    s.add_argument("--workers", type=int, help="worker processes (default: sweep.workers)")

    g = sub.add_parser("gen-sbm", help="write a block-model dataset as TSV files")
    common(g)
    g.add_argument("--blocks", help="comma-separated block sizes")
    g.add_argument("--p-intra", type=float)
    g.add_argument("--p-inter", type=float)
    g.add_argument("--feature-dim", type=int)
    g.add_argument("--feature-shift", type=float)

    v = sub.add_parser("validate-bank", help="symmetry/PSD report for checkpointed banks")
    v.add_argument("bank_dir")

    rp = sub.add_parser("report", help="metrics JSON from a run directory or matrix CSV")
    rp.add_argument("target", help="run directory or performance_matrix.csv")
    rp.add_argument("--out", help="also write the JSON here")
    return p


def main(argv: list[str] | None = None) -> int:
    setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE

    try:
        if args.subcommand == "validate-bank":
            return cmd_validate_bank(args.bank_dir)
        if args.subcommand == "report":
            return cmd_report(args.target, args.out)
        inv = CliInvocation(args.subcommand, args.config, list(args.override), args.out, args.seed)
        if args.subcommand == "run":
            return cmd_run(inv, checkpoints=not args.no_checkpoints)
        if args.subcommand == "sweep":
            return cmd_sweep(inv, args.workers)
        return cmd_gen_sbm(inv, args)
    except (ConfigError, UsageError) as exc:
        _err(str(exc))
        return EXIT_USAGE
    except Exception as exc:
        log.debug("failure", exc_info=True)
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
