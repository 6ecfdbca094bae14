"""Command-line front end for the canonical experiments.

Three subcommands reproduce the experiment families:

* ``trimquad mass``     -- mass-matrix deviation table (fast vs reference),
* ``trimquad converge`` -- L2-projection convergence study,
* ``trimquad time``     -- formation/assembly timing breakdown.

All outputs are CSV files with headers documented in the README.  Runs are
deterministic: identical configurations produce byte-identical CSVs, except
for the timing columns of ``time``.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .assembly import STRATEGIES, assemble_mass, form_with_timings
from .cases import CASE_NAMES, build_space, make_case
from .projection import run_convergence_study
from .quadrature import compute_wq_rules, place_wq_points
from .splines import KnotVector

__all__ = ["RunConfig", "main", "run_mass_table", "run_convergence", "run_timings"]

FAST_STRATEGIES = ("hybrid", "dwq", "wq")
#: naive weighted quadrature is only meaningful for the mass table; the
#: projection and timing experiments compare the viable strategies
PROJECTION_STRATEGIES = ("reference", "hybrid", "dwq")


@dataclass
class RunConfig:
    """Validated run configuration shared by all subcommands."""

    case: str = "line"
    strategy: str = "all"
    degrees: list[int] = field(default_factory=lambda: [1, 2, 3, 4])
    meshes: list[int] = field(default_factory=lambda: [5, 10, 20, 40])
    out: Path = Path("out")
    parallel: bool = False
    seed: int = 0
    knots1: KnotVector | None = None
    knots2: KnotVector | None = None
    dump_rules: Path | None = None
    dump_cutcells: Path | None = None

    def __post_init__(self):
        if self.case not in CASE_NAMES:
            raise ValueError(f"case must be one of {CASE_NAMES}, got {self.case!r}")
        if not self.degrees or any(not 1 <= p <= 6 for p in self.degrees):
            raise ValueError("degrees must lie within 1..6")
        if not self.meshes or any(n < 1 for n in self.meshes):
            raise ValueError("meshes must be positive")
        self.out = Path(self.out)

    def strategies(self, command: str) -> tuple[str, ...]:
        if self.strategy != "all":
            if self.strategy not in STRATEGIES:
                raise ValueError(f"unknown strategy {self.strategy!r}")
            return (self.strategy,)
        if command == "mass":
            return STRATEGIES
        return PROJECTION_STRATEGIES


def _parse_int_list(text: str) -> list[int]:
    """Accept ``1..6`` range syntax or comma-separated values."""
    text = text.strip()
    if ".." in text:
        lo, hi = text.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(tok) for tok in text.split(",") if tok]


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def run_mass_table(config: RunConfig) -> Path:
    """Deviation of each fast strategy's mass matrix from the reference.

    Columns mirror the deviation table of the experiments: absolute
    Frobenius deviations per fast strategy, plus relative deviations and the
    reference norm for context.
    """
    nel = config.meshes[0]
    case = make_case(config.case)
    rows = []
    wanted = [s for s in config.strategies("mass") if s != "reference"]
    for p in config.degrees:
        basis2d, cfg = build_space(case, nel, p, config.knots1, config.knots2)
        ref = assemble_mass(basis2d, cfg, strategy="reference", parallel=config.parallel)
        nrm = sp.linalg.norm(ref.data)
        devs = {}
        for strategy in wanted:
            M = assemble_mass(basis2d, cfg, strategy=strategy, parallel=config.parallel)
            devs[strategy] = float(sp.linalg.norm(M.data - ref.data))
        rows.append(
            [p]
            + [repr(float(devs.get(s, math.nan))) for s in ("hybrid", "dwq", "wq")]
            + [repr(float(devs.get(s, math.nan) / nrm)) for s in ("hybrid", "dwq", "wq")]
            + [repr(float(nrm))]
        )
        if config.dump_rules and p == config.degrees[0]:
            _dump_rules(basis2d, config.dump_rules)
        if config.dump_cutcells and p == config.degrees[0]:
            _dump_cutcells(cfg, p, config.dump_cutcells)
    out = config.out / f"mass_{config.case}_n{nel}.csv"
    _write_csv(
        out,
        ["degree", "hybrid_gauss", "disc_weighted_quadrature", "weighted_quadrature",
         "hybrid_rel", "dwq_rel", "wq_rel", "reference_frobenius"],
        rows,
    )
    return out


def _dump_rules(basis2d, path: Path) -> None:
    payload = []
    for d, basis in enumerate(basis2d.dir):
        rules = compute_wq_rules(basis, place_wq_points(basis), direction=d)
        payload.append({
            "direction": d,
            "points": rules.layout.points.tolist(),
            "rows": [
                {"index": i, "first_point": int(k0), "weights": w.tolist()}
                for i, (k0, w) in enumerate(rules.rows)
            ],
        })
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1))


def _dump_cutcells(cfg, q: int, path: Path) -> None:
    rule = cfg.cut_cell_rule(q)
    rows = []
    for (_, _), (pts, wts) in sorted(rule.rules.items()):
        for k in range(pts.shape[0]):
            rows.append([repr(float(pts[k, 0])), repr(float(pts[k, 1])), repr(float(wts[k]))])
    _write_csv(Path(path), ["u1", "u2", "weight"], rows)


def run_convergence(config: RunConfig) -> tuple[Path, Path]:
    """Convergence records plus a per-(strategy, degree) rate summary."""
    strategies = config.strategies("converge")
    records = run_convergence_study(
        config.case, strategies, config.degrees, config.meshes,
        parallel=config.parallel,
    )
    rows = [
        [r.case, r.strategy, r.degree, repr(r.h), r.dofs, repr(r.l2_rel), repr(r.rate)]
        for r in records
    ]
    out = config.out / f"convergence_{config.case}.csv"
    _write_csv(out, ["case", "strategy", "p", "h", "dofs", "l2_rel", "rate"], rows)

    by_run: dict[tuple[str, int], list] = {}
    for r in records:
        by_run.setdefault((r.strategy, r.degree), []).append(r)
    ref_err = {
        (r.degree, r.mesh): r.l2_rel for r in records if r.strategy == "reference"
    }
    summary = []
    for (strategy, p), recs in sorted(by_run.items()):
        recs = sorted(recs, key=lambda r: r.mesh)
        final_rate = recs[-1].rate
        agreement = max(
            (abs(r.l2_rel - ref_err.get((r.degree, r.mesh), r.l2_rel)) for r in recs),
            default=0.0,
        )
        verdict = "PASS" if (math.isnan(final_rate) or final_rate >= p + 0.8) else "FAIL"
        summary.append([config.case, strategy, p, repr(final_rate),
                        verdict, repr(agreement)])
    out2 = config.out / f"convergence_{config.case}_summary.csv"
    _write_csv(out2, ["case", "strategy", "p", "observed_rate", "rate_check",
                      "ref_agreement"], summary)
    return out, out2


def run_timings(config: RunConfig, repeats: int = 5) -> Path:
    """Median formation timings at the finest mesh, one row per strategy/degree."""
    nel = max(config.meshes)
    case = make_case(config.case)
    rows = []
    for p in config.degrees:
        basis2d, cfg = build_space(case, nel, p)
        for strategy in config.strategies("time"):
            samples = []
            form_with_timings(strategy, basis2d, cfg, parallel=config.parallel)  # warm-up
            for _ in range(repeats):
                _, rep = form_with_timings(strategy, basis2d, cfg, parallel=config.parallel)
                samples.append(rep)
            med = lambda attr: statistics.median(getattr(s, attr) for s in samples)
            rows.append([
                strategy, config.case, p, repr(1.0 / nel),
                repr(med("t_weights")), repr(med("t_interior")),
                repr(med("t_cut_regular")), repr(med("t_cut_elements")),
                repr(med("t_total")),
                samples[0].n_wq_points, samples[0].n_gauss_elements,
                samples[0].n_cutcell_points,
            ])
    out = config.out / f"timings_{config.case}_n{nel}.csv"
    _write_csv(
        out,
        ["strategy", "case", "p", "h", "t_weights", "t_interior", "t_cutRegular",
         "t_cutElements", "t_total", "n_wq_points", "n_gauss_elements",
         "n_cutcell_points"],
        rows,
    )
    return out


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    payload: dict = {}
    if args.config:
        payload = json.loads(Path(args.config).read_text())
    if args.case is not None:
        payload["case"] = args.case
    if args.strategy is not None:
        payload["strategy"] = args.strategy
    if args.degrees is not None:
        payload["degrees"] = _parse_int_list(args.degrees)
    elif isinstance(payload.get("degrees"), str):
        payload["degrees"] = _parse_int_list(payload["degrees"])
    if args.meshes is not None:
        payload["meshes"] = _parse_int_list(args.meshes)
    elif isinstance(payload.get("meshes"), str):
        payload["meshes"] = _parse_int_list(payload["meshes"])
    if args.out is not None:
        payload["out"] = args.out
    if args.parallel:
        payload["parallel"] = True
    if args.seed is not None:
        payload["seed"] = args.seed
    for key in ("knots1", "knots2"):
        if isinstance(payload.get(key), dict):
            payload[key] = KnotVector(payload[key]["knots"], payload[key]["degree"])
    if getattr(args, "dump_rules", None):
        payload["dump_rules"] = Path(args.dump_rules)
    if getattr(args, "dump_cutcells", None):
        payload["dump_cutcells"] = Path(args.dump_cutcells)
    payload.setdefault("case", "line")
    # per-command defaults for anything still unspecified
    if "meshes" not in payload:
        payload["meshes"] = [10] if args.command == "mass" else [5, 10, 20, 40]
    if "degrees" not in payload:
        payload["degrees"] = {
            "mass": [1, 2, 3, 4, 5, 6],
            "time": [2, 3, 4, 5, 6],
        }.get(args.command, [1, 2, 3, 4])
    if "out" in payload:
        payload["out"] = Path(payload["out"])
    return RunConfig(**payload)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="trimquad",
        description="Mass-matrix formation and L2-projection experiments on "
                    "trimmed B-spline spaces.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("mass", "mass-matrix deviation table against the Gauss reference"),
        ("converge", "L2-projection convergence study"),
        ("time", "formation and assembly timing breakdown"),
    ):
        cmd = sub.add_parser(name, help=helptext)
        cmd.add_argument("--case", choices=CASE_NAMES, default=None)
        cmd.add_argument("--strategy", default=None,
                         help="reference|wq|hybrid|dwq|all (default all)")
        cmd.add_argument("--degrees", default=None, help="e.g. 1..6 or 2,4,6")
        cmd.add_argument("--meshes", default=None, help="elements per side, e.g. 5,10,20,40")
        cmd.add_argument("--out", default=None, help="output directory (default ./out)")
        cmd.add_argument("--config", default=None, help="JSON run configuration file")
        cmd.add_argument("--parallel", action="store_true")
        cmd.add_argument("--seed", type=int, default=None)
        if name == "mass":
            cmd.add_argument("--dump-rules", default=None,
                             help="write the weighted-rule debug dump (JSON) here")
            cmd.add_argument("--dump-cutcells", default=None,
                             help="write cut-element quadrature points (CSV) here")

    args = parser.parse_args(argv)
    config = _config_from_args(args)
    t0 = time.perf_counter()
    if args.command == "mass":
        paths = [run_mass_table(config)]
    elif args.command == "converge":
        paths = list(run_convergence(config))
    else:
        paths = [run_timings(config)]
    dt = time.perf_counter() - t0
    for path in paths:
        print(path)
    print(f"done in {dt:.1f}s", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
