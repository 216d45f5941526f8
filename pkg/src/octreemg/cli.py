"""Command-line harness: solve, convergence, comm-volume, check-forest.

Runs are configured by a JSON document (or a named preset) and a few
overriding flags.  Exit codes: 0 success, 1 config error, 2 solver
divergence, 3 internal invariant failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import presets
from .blockforest import (
    RefineAll, RefineRegion, assign_ranks, build_forest, check_balance, ForestError,
)
from .comm import ProtocolError, VolumeReport, build_plan, volume_report
from .fields import max_mg_level
from .interp import SchemeOrder
from .mg import (
    BC_RULES, GHOST_CENTER, PROBLEMS, COARSEST_CELLS, MgHierarchy, SolverConfig, SolverDivergence,
    grid_convergence, l2_error, solve,
)

logger = logging.getLogger("octreemg")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_INTERNAL = 0, 1, 2, 3
SCHEME_LABELS = {
    SchemeOrder.CONSTANT: "constant",
    SchemeOrder.LINEAR: "linear",
    SchemeOrder.QUADRATIC: "quadratic",
}
CONVERGENCE_COLUMNS = [
    "block_size", "scheme", "l2_error_volume_weighted", "l2_error_plain", "kappa", "cycles",
    "residual_final",
]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    dim: int = 3
    root_dims: list = field(default_factory=lambda: [1, 1, 1])
    domain: list = field(default_factory=lambda: [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]])
    refinement: list = field(default_factory=list)
    block_size: int = 16
    scheme: str = "quadratic"
    omega: float = 0.8
    nu1: int = 3
    nu2: int = 3
    coarse_iters: int = 256
    max_cycles: int = 35
    tol: float = 1e-16
    ranks: int = 1
    routed: bool = False
    workers: int = 1
    problem: str = "poisson-sinh"
    bc_rule: str = GHOST_CENTER
    out: str | None = None

    def validate(self) -> "RunConfig":
        def bad(name, msg):
            raise ConfigError(f"field '{name}': {msg}")

        if self.dim not in (2, 3):
            bad("dim", f"must be 2 or 3, got {self.dim}")
        if len(self.root_dims) != self.dim or any(int(r) < 1 for r in self.root_dims):
            bad("root_dims", f"need {self.dim} positive integers, got {self.root_dims}")
        if len(self.domain) != 2 or any(len(c) != self.dim for c in self.domain):
            bad("domain", f"need [[lo...], [hi...]] with {self.dim} coordinates each")
        if any(h <= l for l, h in zip(*self.domain)):
            bad("domain", "empty domain")
        if self.block_size < 4 or self.block_size & (self.block_size - 1):
            bad("block_size", f"must be a power of two >= {COARSEST_CELLS}, got {self.block_size}")
        try:
            SchemeOrder.parse(self.scheme)
        except ValueError as e:
            bad("scheme", str(e))
        for i, step in enumerate(self.refinement):
            where = f"refinement[{i}]"
            if not isinstance(step, dict) or step.get("type") not in ("all", "region"):
                bad(where, "expected {\"type\": \"all\"} or {\"type\": \"region\", \"lo\": ..., \"hi\": ...}")
            if step["type"] == "region":
                lo, hi = step.get("lo"), step.get("hi")
                if lo is None or hi is None or len(lo) != self.dim or len(hi) != self.dim:
                    bad(where, f"region needs lo/hi with {self.dim} coordinates")
                if any(a > b for a, b in zip(lo, hi)):
                    bad(where, "region lo exceeds hi")
        if not 0 < self.omega <= 1:
            bad("omega", "must lie in (0, 1]")
        for name in ("nu1", "nu2", "coarse_iters", "max_cycles"):
            if getattr(self, name) < 0:
                bad(name, "must be non-negative")
        if self.ranks < 1:
            bad("ranks", "must be >= 1")
        if self.workers < 1:
            bad("workers", "must be >= 1")
        if self.problem not in PROBLEMS:
            bad("problem", f"unknown problem, expected one of {sorted(PROBLEMS)}")
        if self.bc_rule not in BC_RULES:
            bad("bc_rule", f"expected one of {BC_RULES}")
        return self

    def steps(self):
        out = []
        for s in self.refinement:
            out.append(RefineAll() if s["type"] == "all"
                       else RefineRegion(tuple(map(float, s["lo"])), tuple(map(float, s["hi"]))))
        return out

    def forest(self):
        return build_forest(self.dim, self.root_dims, (self.domain[0], self.domain[1]),
                            self.block_size, self.steps())

    def solver(self) -> SolverConfig:
        return SolverConfig(self.omega, self.nu1, self.nu2, self.coarse_iters, self.max_cycles,
                            self.tol, SchemeOrder.parse(self.scheme))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        try:
            return cls(**d).validate()
        except TypeError as e:
            raise ConfigError(str(e)) from e


PRESET_CONFIGS = {
    "poisson-fig6": dict(
        dim=3, root_dims=[1, 1, 1], domain=[[0, 0, 0], [1, 1, 1]],
        refinement=[{"type": "all"}, {"type": "all"},
                    {"type": "region", "lo": [0.25] * 3, "hi": [0.75] * 3}],
        block_size=16,
    ),
    "fig2": dict(
        dim=2, root_dims=[2, 1], domain=[[0, 0], [2, 1]],
        refinement=[{"type": "region", "lo": [0, 0], "hi": [1, 1]}], block_size=8,
    ),
    "fig1": dict(
        dim=2, root_dims=[2, 2], domain=[[0, 0], [1, 1]],
        refinement=[{"type": "all"}, {"type": "region", "lo": [0, 0], "hi": [0.5, 0.5]},
                    {"type": "region", "lo": [0, 0], "hi": [0.25, 0.25]}],
        block_size=8,
    ),
}
assert set(PRESET_CONFIGS) <= set(presets.PRESETS)


def load_config(args) -> RunConfig:
    data = {}
    if getattr(args, "preset", None):
        if args.preset not in PRESET_CONFIGS:
            raise ConfigError(f"unknown preset '{args.preset}', expected one of {sorted(PRESET_CONFIGS)}")
        data.update(PRESET_CONFIGS[args.preset])
    if getattr(args, "config", None):
        try:
            text = Path(args.config).read_text()
            doc = json.loads(text)
        except OSError as e:
            raise ConfigError(f"cannot read config: {e}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"{args.config}:{e.lineno}:{e.colno}: {e.msg}") from e
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        data.update(doc)
    overrides = {
        "block_size": "block_size", "scheme": "scheme", "ranks": "ranks",
        "max_cycles": "max_cycles", "coarse_iters": "coarse_iters", "out": "out",
        "bc_rule": "bc_rule", "workers": "workers",
    }
    for attr, key in overrides.items():
        val = getattr(args, attr, None)
        if val is not None:
            data[key] = val
    if getattr(args, "routed", False):
        data["routed"] = True
    return RunConfig.from_dict(data)


# commands ----------------------------------------------------------------

@dataclass
class RunReport:
    block_size: int
    scheme: str
    l2_error_volume_weighted: float
    l2_error_plain: float
    cycles: int
    residual_final: float
    history: list
    volume: VolumeReport
    seconds: float


def run_solve(cfg: RunConfig) -> RunReport:
    t0 = time.perf_counter()
    forest = cfg.forest()
    owner = assign_ranks(forest, cfg.ranks)
    problem = PROBLEMS[cfg.problem](cfg.dim)
    hier = MgHierarchy.build(forest, problem, SchemeOrder.parse(cfg.scheme), owner=owner,
                             n_ranks=cfg.ranks, routed=cfg.routed or cfg.ranks > 1,
                             workers=cfg.workers, boundary_rule=cfg.bc_rule)
    res = solve(hier, cfg.solver())
    weighted, plain = l2_error(hier)
    return RunReport(cfg.block_size, SCHEME_LABELS[SchemeOrder.parse(cfg.scheme)], weighted, plain,
                     res.cycles, res.history[-1], res.history, hier.volume(),
                     time.perf_counter() - t0)


def cmd_solve(cfg: RunConfig, stream=None) -> RunReport:
    stream = stream or sys.stdout
    rep = run_solve(cfg)
    print(f"forest: {cfg.forest().levels()}  block size {cfg.block_size}  scheme {rep.scheme}  "
          f"ranks {cfg.ranks}", file=stream)
    print(f"cycles: {rep.cycles}  final residual: {rep.residual_final:.6e}", file=stream)
    print(f"L2 error (plain RMS):      {rep.l2_error_plain:.6e}", file=stream)
    print(f"L2 error (volume-weighted): {rep.l2_error_volume_weighted:.6e}", file=stream)
    tot = rep.volume.totals()
    print(f"communicated: {tot.messages} messages, {tot.scalars} scalars ({rep.seconds:.1f}s)",
          file=stream)
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "solve.csv").write_text(_rows_csv([_row(rep, None)]))
        (out / "residual_history.csv").write_text(
            "cycle,residual\n" + "".join(f"{i},{r!r}\n" for i, r in enumerate(rep.history)))
        (out / "volume.csv").write_text(rep.volume.to_csv())
    return rep


def _row(rep: RunReport, kappa):
    return {
        "block_size": rep.block_size, "scheme": rep.scheme,
        "l2_error_volume_weighted": repr(rep.l2_error_volume_weighted),
        "l2_error_plain": repr(rep.l2_error_plain),
        "kappa": "" if kappa is None else repr(kappa),
        "cycles": rep.cycles, "residual_final": repr(rep.residual_final),
    }


def _rows_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, CONVERGENCE_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def convergence_rows(cfg: RunConfig, sizes, schemes=tuple(SchemeOrder)):
    """Solve every (size, scheme); kappa uses the plain RMS error of consecutive sizes."""
    sizes = list(sizes)
    if any(b != 2 * a for a, b in zip(sizes, sizes[1:])):
        raise ConfigError(f"sizes must double strictly, got {sizes}")
    rows, reports = [], {}
    for scheme in schemes:
        prev = None
        for n in sizes:
            rep = run_solve(replace(cfg, block_size=n, scheme=SCHEME_LABELS[scheme]).validate())
            logger.info("n=%d %s: plain %.4e weighted %.4e (%.1fs)", n, rep.scheme,
                        rep.l2_error_plain, rep.l2_error_volume_weighted, rep.seconds)
            kappa = None if prev is None else grid_convergence(prev.l2_error_plain, rep.l2_error_plain)
            reports[n, scheme] = (rep, kappa)
            prev = rep
    for n in sizes:
        for scheme in schemes:
            rep, kappa = reports[n, scheme]
            rows.append(_row(rep, kappa))
    return rows, reports


def format_table(reports, sizes, schemes=tuple(SchemeOrder)) -> str:
    names = {SchemeOrder.CONSTANT: "Constant-Order", SchemeOrder.LINEAR: "First-Order",
             SchemeOrder.QUADRATIC: "Second-Order"}
    head1 = f"{'Block':>8} |" + "|".join(f" {names[s] + ' Scheme':^24} " for s in schemes)
    head2 = f"{'Size':>8} |" + "|".join(f" {'L2 Error':>12} {'kappa':>11} " for _ in schemes)
    lines = [head1, head2, "-" * len(head2)]
    for n in sizes:
        cells = []
        for s in schemes:
            rep, kappa = reports[n, s]
            k = "-" if kappa is None else f"{kappa:.3f}"
            cells.append(f" {rep.l2_error_plain:>12.3e} {k:>11} ")
        lines.append(f"{n:>8} |" + "|".join(cells))
    return "\n".join(lines) + "\n"


def cmd_convergence(cfg: RunConfig, sizes, stream=None, schemes=tuple(SchemeOrder)):
    stream = stream or sys.stdout
    rows, reports = convergence_rows(cfg, sizes, schemes)
    text = format_table(reports, sizes, schemes)
    stream.write(text)
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "convergence.csv").write_text(_rows_csv(rows))
        (out / "convergence.txt").write_text(text)
    return rows, reports


def comm_volume(cfg: RunConfig) -> VolumeReport:
    forest = cfg.forest()
    owner = assign_ranks(forest, cfg.ranks)
    total = VolumeReport()
    for lvl in range(max_mg_level(forest.n, COARSEST_CELLS) + 1):
        plan = build_plan(forest, lvl, SchemeOrder.parse(cfg.scheme))
        total.merge(volume_report(plan, owner=owner))
    return total


def cmd_comm_volume(cfg: RunConfig, stream=None) -> VolumeReport:
    stream = stream or sys.stdout
    rep = comm_volume(cfg)
    text = rep.to_csv()
    stream.write(text)
    if cfg.out:
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "volume.csv").write_text(text)
    return rep


def cmd_check_forest(cfg: RunConfig, stream=None) -> dict:
    stream = stream or sys.stdout
    forest = cfg.forest()
    levels = forest.levels()
    bad = check_balance(forest)
    owner = assign_ranks(forest, cfg.ranks)
    per_rank = {}
    for r in owner.values():
        per_rank[r] = per_rank.get(r, 0) + 1
    print(f"leaves: {len(forest)}", file=stream)
    for lvl, cnt in levels.items():
        print(f"level {lvl}: {cnt}", file=stream)
    print(f"balance violations: {len(bad)}", file=stream)
    for a, b in bad:
        print(f"  {a} <-> {b}", file=stream)
    print("blocks per rank: " + ", ".join(f"{r}:{c}" for r, c in sorted(per_rank.items())),
          file=stream)
    return {"levels": levels, "violations": bad, "per_rank": per_rank}


# argument parsing --------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--preset", help=f"named configuration ({', '.join(sorted(PRESET_CONFIGS))})")
    p.add_argument("--block-size", type=int, dest="block_size")
    p.add_argument("--scheme", choices=["constant", "linear", "quadratic"])
    p.add_argument("--ranks", type=int, help="number of simulated ranks")
    p.add_argument("--max-cycles", type=int, dest="max_cycles")
    p.add_argument("--coarse-iters", type=int, dest="coarse_iters")
    p.add_argument("--bc-rule", choices=list(BC_RULES), dest="bc_rule")
    p.add_argument("--routed", action="store_true", help="route every exchange through envelopes")
    p.add_argument("--workers", type=int, help="threads for packing in routed exchanges")
    p.add_argument("--out", help="output directory for CSV files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="octreemg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="solve one configuration and report errors")
    _common(p)
    p = sub.add_parser("convergence", help="error table over doubling block sizes")
    _common(p)
    p.add_argument("--sizes", default="8,16,32")
    p.add_argument("--schemes", default="constant,linear,quadratic")
    p = sub.add_parser("comm-volume", help="per-level message and scalar counts")
    _common(p)
    p = sub.add_parser("check-forest", help="leaf counts, balance and rank distribution")
    _common(p)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "solve":
            cmd_solve(cfg)
        elif args.command == "convergence":
            try:
                sizes = [int(s) for s in args.sizes.split(",") if s]
                schemes = tuple(SchemeOrder.parse(s) for s in args.schemes.split(",") if s)
            except ValueError as e:
                raise ConfigError(f"--sizes/--schemes: {e}") from e
            cmd_convergence(cfg, sizes, schemes=schemes)
        elif args.command == "comm-volume":
            cmd_comm_volume(cfg)
        else:
            cmd_check_forest(cfg)
    except (ConfigError, ForestError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverDivergence as e:
        print(f"solver diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (AssertionError, ProtocolError) as e:
        print(f"internal invariant failure: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
