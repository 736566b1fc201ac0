"""Command-line front end: calibration, pricing, scenario grids and figure data.

Exit codes: 0 success, 1 input error, 2 calibration failure, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import platform
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy

from . import __version__
from .at1p import At1pParams, barrier
from .bonds import price_pdb_analytic
from .calibration import CalibrationReport, calibrate_cds, calibrate_full
from .capital import average_params, regress_panel
from .config import PATH_KEYS, RunConfig, file_sha256, format_params, load_params
from .engine import (PriceResult, path_statistics, price_coco, price_coco_stripped, price_pdb_mc,
                     sampling_frequency_check)
from .equity import ProfileVariant, equity_profile
from .errors import CalibrationError, CocoError, DegenerateError, DomainError, InputError, NumericalError
from .market import MarketSnapshot, load_balance_sheet_panel

log = logging.getLogger("coco_at1p")

EXIT_OK, EXIT_INPUT, EXIT_CALIBRATION, EXIT_NUMERICAL = 0, 1, 2, 3


def _fmt(x) -> str:
    return repr(float(x))


class Outputs:
    """Collects machine-readable files for one run and writes them with a manifest."""

    def __init__(self, out_dir: Path, want_csv: bool):
        self.out_dir = out_dir
        self.want_csv = want_csv
        self.files: dict[str, str] = {}

    def text(self, name: str, content: str) -> None:
        self.files[name] = content

    def table(self, name: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
        self.files[name] = buf.getvalue()

    def csv(self, name: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
        if self.want_csv:
            self.table(name, header, rows)

    def write(self, command: str, cfg: RunConfig) -> None:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        for name, content in sorted(self.files.items()):
            (self.out_dir / name).write_text(content)
        inputs = {}
        for key in sorted(PATH_KEYS):
            if cfg.has(key):
                try:
                    inputs[key] = file_sha256(cfg.path(key))
                except InputError:
                    pass
        manifest = {
            "command": command,
            "settings": cfg.recorded(),
            "inputs_sha256": inputs,
            "outputs": sorted(self.files),
            "versions": {"coco_at1p": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
        }
        (self.out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _price_rows(label: str, res: PriceResult) -> list:
    return [label, res.estimate, res.ci_low, res.ci_high, res.ytm, res.std_error, res.n_paths, res.dt]


PRICE_HEADER = ("instrument", "price", "ci_low", "ci_high", "ytm", "std_error", "n_paths", "dt")


def _price_line(label: str, res: PriceResult) -> str:
    return (f"{label:<22} {res.estimate:>10.6f}  CI ({res.ci_low:.6f}; {res.ci_high:.6f})"
            f"  YTM {res.ytm:.6f}  paths {res.n_paths}  dt {res.dt:.6g}")


def _calibrate(cfg: RunConfig, snap: MarketSnapshot, q: float | None = None) -> CalibrationReport:
    q = cfg.real("q") if q is None else q
    seed = cfg.integer("seed")
    fixed = cfg.fixed_params()
    opts = {"anneal_options": cfg.anneal_options(), "refinement": cfg.integer("cds_refinement")}
    mode = cfg.raw("calibration")
    if mode not in ("full", "cds"):
        raise InputError(f"calibration must be 'full' or 'cds', got {mode!r}")
    try:
        if mode == "cds":
            return calibrate_cds(snap, q=q, fixed=fixed, seed=seed, **opts)
        return calibrate_full(snap, cfg.coco(), cfg.capital_model(), seed=seed, q=q, fixed=fixed, **opts)
    except DomainError as exc:
        raise CalibrationError(str(exc)) from exc


def _params(cfg: RunConfig, snap: MarketSnapshot) -> At1pParams:
    """Parameters from the configured parameter file, else from a fresh calibration."""
    if cfg.has("params"):
        return load_params(cfg.path("params"))
    rep = _calibrate(cfg, snap)
    print(rep.table())
    return rep.params


def cmd_calibrate(cfg: RunConfig, out: Outputs) -> None:
    snap = cfg.snapshot()
    rep = _calibrate(cfg, snap)
    print(rep.table())
    out.text("calibration_report.txt", rep.table() + "\n")
    out.text("params.txt", format_params(rep.params))
    out.csv("calibration.csv", ("observable", "market", "model", "relative_error"),
            [(lab, m, v, e) for lab, m, v, e in zip(rep.labels, rep.market, rep.model, rep.relative_errors)])


def cmd_price_coco(cfg: RunConfig, out: Outputs) -> None:
    snap = cfg.snapshot()
    params = _params(cfg, snap)
    res = price_coco(params, cfg.coco(), cfg.capital_model(), snap, cfg.sim())
    print(_price_line("coco", res))
    out.csv("price_coco.csv", PRICE_HEADER, [_price_rows("coco", res)])


def cmd_price_pdb(cfg: RunConfig, out: Outputs) -> None:
    snap = cfg.snapshot()
    params = _params(cfg, snap)
    bond = cfg.pdb()
    res = price_pdb_mc(params, bond, snap, cfg.sim())
    analytic = price_pdb_analytic(params, bond, snap)
    print(_price_line("pdb", res))
    print(f"{'pdb closed form (R=0)':<22} {analytic:>10.6f}")
    out.csv("price_pdb.csv", PRICE_HEADER + ("closed_form_zero_recovery",),
            [_price_rows("pdb", res) + [analytic]])


def cmd_price_stripped(cfg: RunConfig, out: Outputs) -> None:
    snap = cfg.snapshot()
    params = _params(cfg, snap)
    res = price_coco_stripped(params, cfg.coco(), snap, cfg.sim(), cfg.real("stripped_recovery_R"))
    print(_price_line("coco without trigger", res))
    out.csv("price_stripped.csv", PRICE_HEADER, [_price_rows("coco_stripped", res)])


def cmd_regress_capital(cfg: RunConfig, out: Outputs) -> None:
    panel = load_balance_sheet_panel(cfg.path("balance_sheet"))
    if panel.rejects:
        print(f"rejected {len(panel.rejects)} record(s) with non-positive equity or invalid ratios")
    results = regress_panel(panel)
    rows, avg_rows = [], []
    for cls in sorted(results):
        for r in results[cls]:
            rows.append((cls, r.date.isoformat() if r.date else "", r.alpha, r.beta, r.n_obs))
            print(f"{cls:<6} {r.date}  alpha {r.alpha:.6f}  beta {r.beta:.6f}  n {r.n_obs}")
        a, b = average_params(results[cls])
        avg_rows.append((cls, a, b, len(results[cls])))
        print(f"{cls:<6} average  alpha_bar {a:.6f}  beta_bar {b:.6f}")
    out.table("regression_by_date.csv", ("rating_class", "date", "alpha", "beta", "n_obs"), rows)
    out.table("regression_average.csv", ("rating_class", "alpha_bar", "beta_bar", "n_dates"), avg_rows)


@dataclass
class ScenarioOutcome:
    label: str
    result: PriceResult | None
    error: str = ""


def _run_scenarios(jobs: Sequence[tuple[str, Callable[[], PriceResult]]], parallel: int) -> list[ScenarioOutcome]:
    def run(job):
        label, fn = job
        try:
            return ScenarioOutcome(label, fn())
        except CalibrationError as exc:
            return ScenarioOutcome(label, None, f"calibration failed: {exc}")
        except CocoError as exc:
            return ScenarioOutcome(label, None, f"{type(exc).__name__}: {exc}")

    if parallel <= 1:
        return [run(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(run, jobs))


def _scenario_price(cfg: RunConfig, snap: MarketSnapshot, q: float | None = None, eta: float | None = None):
    def fn():
        rep = _calibrate(cfg, snap, q)
        cap = cfg.capital_model()
        if eta is not None:
            cap = cap.replace(eta=eta)
        return price_coco(rep.params, cfg.coco(), cap, snap, cfg.sim())
    return fn


def stress_report(base: PriceResult, outcomes: dict[tuple[str, float], ScenarioOutcome],
                  pcts: Sequence[float]) -> tuple[list[str], list[dict]]:
    """Impact table and the same-percentage dominance check (equity down vs CDS up)."""
    lines = [_price_line("base", base)]
    checks = []
    for (kind, p), oc in sorted(outcomes.items()):
        if oc.result is None:
            lines.append(f"{oc.label:<22} FAILED  {oc.error}")
        else:
            lines.append(_price_line(oc.label, oc.result) + f"  impact {oc.result.estimate - base.estimate:+.6f}")
    for p in pcts:
        eq, cds = outcomes.get(("equity", p)), outcomes.get(("cds", p))
        if eq is None or cds is None or eq.result is None or cds.result is None:
            continue
        d_eq = eq.result.estimate - base.estimate
        d_cds = cds.result.estimate - base.estimate
        ok = abs(d_eq) > abs(d_cds)
        checks.append({"pct": p, "equity_impact": d_eq, "cds_impact": d_cds, "equity_dominates": ok})
        lines.append(f"same-percentage check {p:.0%}: equity {d_eq:+.6f} vs CDS {d_cds:+.6f}"
                     f" -> {'equity dominates' if ok else 'CDS dominates'}")
    if len(pcts) >= 2:
        lo, hi = min(pcts), max(pcts)
        eq, cds = outcomes.get(("equity", lo)), outcomes.get(("cds", hi))
        if eq and cds and eq.result and cds.result:
            d_eq = eq.result.estimate - base.estimate
            d_cds = cds.result.estimate - base.estimate
            lines.append(
                f"cross-percentage comparison equity -{lo:.0%} vs CDS +{hi:.0%}: {d_eq:+.6f} vs {d_cds:+.6f}"
                " (not asserted: the reference narrative claims the equity move is larger,"
                " the reference table shows the opposite for this pairing)")
    return lines, checks


def cmd_stress(cfg: RunConfig, out: Outputs) -> None:
    snap = cfg.snapshot()
    pcts = cfg.reals("stress_pcts")
    jobs = [("base", _scenario_price(cfg, snap))]
    keys = []
    for p in pcts:
        jobs.append((f"equity -{p:.0%}", _scenario_price(cfg, snap.shift_equity(-p))))
        keys.append(("equity", p))
        jobs.append((f"CDS +{p:.0%}", _scenario_price(cfg, snap.shift_cds(p))))
        keys.append(("cds", p))
    res = _run_scenarios(jobs, cfg.integer("parallel_scenarios") if cfg.has("parallel_scenarios") else 1)
    base = res[0]
    if base.result is None:
        raise CalibrationError(f"base scenario failed: {base.error}")
    outcomes = dict(zip(keys, res[1:]))
    lines, checks = stress_report(base.result, outcomes, pcts)
    print("\n".join(lines))
    out.text("stress_report.txt", "\n".join(lines) + "\n")
    rows = [["base", 0.0] + _price_rows("base", base.result)[1:] + [""]]
    for (kind, p), oc in zip(keys, res[1:]):
        if oc.result is None:
            rows.append([kind, p] + [""] * 7 + [oc.error])
        else:
            rows.append([kind, p] + _price_rows(kind, oc.result)[1:] + [""])
    out.csv("stress.csv", ("scenario", "pct") + PRICE_HEADER[1:] + ("error",), rows)


def cmd_grid(cfg: RunConfig, out: Outputs) -> None:
    snap = cfg.snapshot()
    r = cfg.real("r")
    qs = [m * r for m in cfg.reals("grid_q_multiples")]
    etas = cfg.reals("grid_eta")
    parallel = cfg.integer("parallel_scenarios") if cfg.has("parallel_scenarios") else 1

    def row_job(q):
        def fn():
            rep = _calibrate(cfg, snap, q)
            cells = []
            for eta in etas:
                try:
                    cells.append(price_coco(rep.params, cfg.coco(), cfg.capital_model().replace(eta=eta), snap,
                                            cfg.sim()))
                except (DegenerateError, NumericalError) as exc:
                    cells.append(exc)
            return cells
        return fn

    results = _run_scenarios([(f"q={q!r}", row_job(q)) for q in qs], parallel)
    lines = ["q \\ eta   " + "".join(f"{e:>12g}" for e in etas)]
    rows = []
    for q, oc in zip(qs, results):
        if oc.result is None:
            lines.append(f"{q:<10.6g} FAILED  {oc.error}")
            rows.append([q, "", "", "", "", oc.error])
            continue
        cells = []
        for eta, cell in zip(etas, oc.result):
            if isinstance(cell, Exception):
                cells.append(f"{'n/a':>12}")
                rows.append([q, eta, "", "", "", str(cell)])
            else:
                cells.append(f"{cell.estimate:>12.5f}")
                rows.append([q, eta, cell.estimate, cell.ci_low, cell.ci_high, ""])
        lines.append(f"{q:<10.6g}" + "".join(cells))
    print("\n".join(lines))
    out.text("grid_report.txt", "\n".join(lines) + "\n")
    out.csv("grid.csv", ("q", "eta", "price", "ci_low", "ci_high", "error"), rows)


def cmd_sampling_check(cfg: RunConfig, out: Outputs) -> None:
    snap = cfg.snapshot()
    params = _params(cfg, snap)
    rep = sampling_frequency_check(params, cfg.pdb(), snap, cfg.reals("sampling_dts"), cfg.sim())
    rows = []
    for row in rep.rows:
        print(f"dt {row.dt:<10.6g} closed form {row.analytic:.6f}  MC {row.mc.estimate:.6f}"
              f"  CI ({row.mc.ci_low:.6f}; {row.mc.ci_high:.6f})  {'pass' if row.passed else 'fail'}")
        rows.append((row.dt, row.analytic, row.mc.estimate, row.mc.ci_low, row.mc.ci_high,
                     "pass" if row.passed else "fail"))
    rec = rep.recommended_dt
    print(f"recommended dt: {rec if rec is not None else 'none passes'}")
    out.csv("sampling_check.csv", ("dt", "closed_form", "mc_price", "ci_low", "ci_high", "status"), rows)


def cmd_profiles(cfg: RunConfig, out: Outputs) -> None:
    snap = cfg.snapshot()
    params = _params(cfg, snap)
    coco = cfg.coco()
    T = snap.time_to(coco.maturity_date)
    V = np.linspace(cfg.real("profile_v_min"), cfg.real("profile_v_max"), cfg.integer("profile_points"))
    cols = {}
    for variant in ProfileVariant:
        cols[variant.value] = equity_profile(params, V, T, variant, cfg.integer("profile_mc_paths"),
                                             cfg.integer("seed"))[:, 1]
    header = ("V",) + tuple(v.value for v in ProfileVariant)
    out.table("equity_profiles.csv", header, [(v,) + tuple(cols[k][i] for k in header[1:]) for i, v in enumerate(V)])
    print(f"equity profiles on {len(V)} spots, barrier at t=0 {float(barrier(params, 0.0)):.6f}")
    stats = path_statistics(params, coco, cfg.capital_model(), snap, cfg.sim())
    for name, h in (("conversion_ratio", stats.conversion_ratio), ("conversion_time", stats.conversion_time),
                    ("default_time", stats.default_time)):
        out.table(f"hist_{name}.csv", ("bin_low", "bin_high", "count"), h.rows())
    print(f"paths {stats.n_paths}  conversions {stats.n_conversions}  defaults {stats.n_defaults}"
          f"  mean conversion ratio {stats.mean_conversion_ratio:.6f}")
    out.table("path_statistics.csv", ("n_paths", "n_conversions", "n_defaults", "mean_conversion_ratio"),
              [(stats.n_paths, stats.n_conversions, stats.n_defaults, stats.mean_conversion_ratio)])


COMMANDS = {
    "calibrate": cmd_calibrate,
    "price-coco": cmd_price_coco,
    "price-pdb": cmd_price_pdb,
    "price-stripped": cmd_price_stripped,
    "regress-capital": cmd_regress_capital,
    "stress": cmd_stress,
    "grid": cmd_grid,
    "sampling-check": cmd_sampling_check,
    "profiles": cmd_profiles,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coco-at1p", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--paths", type=int, dest="n_paths")
        sp.add_argument("--dt", help="monitoring step, decimal or a/b")
        sp.add_argument("--threads", type=int)
        sp.add_argument("--parallel-scenarios", type=int, dest="parallel_scenarios")
        sp.add_argument("--params", help="parameter file from a previous calibration")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any configuration key")
        sp.add_argument("--csv", action="store_true", help="also write comma-separated results")
        sp.add_argument("--out", default="output", help="output directory")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise InputError(f"--set expects KEY=VALUE, got {item!r}")
            k, v = item.split("=", 1)
            overrides[k.strip()] = v.strip()
        for key in ("seed", "n_paths", "dt", "threads", "parallel_scenarios"):
            if getattr(args, key) is not None:
                overrides[key] = str(getattr(args, key))
        if args.params is not None:
            overrides["params"] = str(Path(args.params).resolve())
        cfg = RunConfig.load(args.config, overrides)
        out = Outputs(Path(args.out), args.csv)
        COMMANDS[args.command](cfg, out)
        out.write(args.command, cfg)
    except (InputError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except (NumericalError, DegenerateError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except CocoError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
