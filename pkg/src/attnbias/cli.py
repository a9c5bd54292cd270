"""``attnbias`` command line: ``verify`` runs property checks, ``emit`` writes figure data.

Output formats are byte-stable: CSV has no header, LF line endings and floats
in shortest round-trip form; DOT lists edges in row-major order.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import equivariance as eq
from .attention import AttentionParams, attend
from .graphs import Bipartite, Causal, CustomGraph, Full, RelationalGraph, Strided, build_graph, graph_to_mask
from .linalg import EmptyNeighborhoodError, Rng

REPORT_VERSION = 1
GRADIENT_TRIALS = 20
CONTROL_PREFIX = "negative_control:"


class AdjacencyParseError(ValueError):
    pass


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    mechanism: Optional[str]
    n: Optional[int]
    d: Optional[int]
    p: Optional[int]
    n_x: Optional[int]
    n_y: Optional[int]
    seed: int
    trials: int
    out_dir: Path
    adjacency_path: Optional[Path] = None
    negative_control: bool = False
    worked: bool = False

    def validate(self):
        m = self.mechanism
        if self.p is not None and m != "strided":
            raise UsageError("--p is only valid with --mechanism strided")
        if (self.n_x is not None or self.n_y is not None) and m != "bipartite":
            raise UsageError("--nx/--ny are only valid with --mechanism bipartite")
        if self.adjacency_path is not None and m != "graph":
            raise UsageError("--adjacency is only valid with --mechanism graph")
        if m == "strided" and self.p is None:
            raise UsageError("--mechanism strided requires --p")
        if m == "bipartite" and self.n is not None:
            raise UsageError("bipartite attention takes --nx and --ny, not --n")
        if m == "graph" and self.n is not None and self.adjacency_path is not None:
            raise UsageError("--n is implied by --adjacency")
        for name in ("n", "d", "p", "n_x", "n_y"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise UsageError(f"--{name.replace('_', '')} must be >= 1")
        if m == "strided" and self.n is not None and self.p > self.n:
            raise UsageError("--p must not exceed --n")
        if self.trials < 1:
            raise UsageError("--trials must be >= 1")
        if self.command == "emit":
            if m is None:
                raise UsageError("emit requires --mechanism")
            if m in ("full", "causal", "strided") and self.n is None:
                raise UsageError(f"emit --mechanism {m} requires --n")
            if m == "bipartite" and (self.n_x is None or self.n_y is None):
                raise UsageError("emit --mechanism bipartite requires --nx and --ny")
            if m == "graph" and self.adjacency_path is None:
                raise UsageError("emit --mechanism graph requires --adjacency")
        if self.command == "verify" and self.n is not None and self.n < 2 and m in (None, "full", "causal"):
            raise UsageError("verify needs --n >= 2")
        return self


# -- file formats --------------------------------------------------------------


def format_float(v: float) -> str:
    return repr(float(v))


def matrix_to_csv(m: np.ndarray) -> str:
    if m.dtype == bool:
        return "".join(",".join("1" if b else "0" for b in row) + "\n" for row in m)
    return "".join(",".join(format_float(v) for v in row) + "\n" for row in m)


def graph_to_dot(g: RelationalGraph, n_x: Optional[int] = None) -> str:
    """DOT text for ``g``; with ``n_x`` the first ``n_x`` vertices are encoder nodes.

    Encoder self-loops are bookkeeping for non-output rows and are left out.
    """
    n = g.n_vertices

    def label(k):
        if n_x is None:
            return f"x{k}"
        return f"x{k}" if k < n_x else f"y{k - n_x}"

    lines = ["digraph attention {", "  node [shape=circle];"]
    if n_x is None:
        lines.append("  " + " ".join(f"{label(k)};" for k in range(n)))
    else:
        lines.append("  { rank=same; " + " ".join(f"{label(k)};" for k in range(n_x)) + " }")
        lines.append("  { rank=same; " + " ".join(f"{label(k)};" for k in range(n_x, n)) + " }")
    for i, j in g.edges():
        if n_x is not None and i < n_x:
            continue
        lines.append(f"  {label(i)} -> {label(j)};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def load_adjacency(path) -> RelationalGraph:
    """Read a square 0/1 CSV adjacency matrix."""
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
    except OSError as exc:
        raise AdjacencyParseError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise AdjacencyParseError(f"{path}: empty adjacency file")
    n = len(rows)
    adj = np.zeros((n, n), dtype=bool)
    for i, row in enumerate(rows):
        if len(row) != n:
            raise AdjacencyParseError(f"{path}: row {i} has {len(row)} entries, expected {n} (matrix must be square)")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if cell not in ("0", "1"):
                raise AdjacencyParseError(f"{path}: entry ({i}, {j}) is {cell!r}, expected 0 or 1")
            adj[i, j] = cell == "1"
        if not adj[i].any():
            raise EmptyNeighborhoodError(i, what=f"{path}: row")
    return RelationalGraph(adj)


# -- commands -----------------------------------------------------------------


def _check_rng(seed: int, name: str) -> Rng:
    # streams keyed by check name: running a subset of checks does not perturb the others
    return Rng(seed).split(zlib.crc32(name.encode()))


def planned_checks(cfg: RunConfig):
    """``(name, thunk)`` pairs for the checks applicable to ``cfg.mechanism``."""
    mechanisms = [cfg.mechanism] if cfg.mechanism else list(eq.MECHANISMS)
    n, d, t = cfg.n, cfg.d, cfg.trials
    gt = min(t, GRADIENT_TRIALS)
    graph = load_adjacency(cfg.adjacency_path) if cfg.adjacency_path else None
    graph_spec = CustomGraph(graph) if graph is not None else None
    fixed_bip = Bipartite(cfg.n_x, cfg.n_y) if cfg.n_x and cfg.n_y else None
    s = cfg.seed
    plan = {}

    def add(name, fn):
        plan.setdefault(name, lambda: fn(_check_rng(s, name)))

    for m in mechanisms:
        if m == "full":
            add("stochastic_rows:full", lambda r: eq.check_stochastic("full", t, r, n, d))
            add("permutation_equivariance:full", lambda r: eq.check_permutation_equivariance(n=n, d=d, trials=t, rng=r))
            add("gradient:full", lambda r: eq.check_gradients("full", gt, r, n, d))
        elif m == "causal":
            add("stochastic_rows:causal", lambda r: eq.check_stochastic("causal", t, r, n, d))
            add("prefix_causality:causal", lambda r: eq.check_prefix_causality(t, r, n, d))
            add("gradient:causal", lambda r: eq.check_gradients("causal", gt, r, n, d))
        elif m == "strided":
            p = cfg.p
            add("stochastic_rows:strided", lambda r: eq.check_stochastic("strided", t, r, n, d, p=p))
            add("windowed_locality:strided", lambda r: eq.check_locality(t, r, n, p, d))
            for shift in (1, 2, 3):
                add(f"translation_equivariance:m={shift}",
                    lambda r, shift=shift: eq.check_translation_equivariance(n=n, p=p, m=shift, d=d, trials=t, rng=r))
            add("gradient:strided", lambda r: eq.check_gradients("strided", gt, r, n, d, p=p))
        elif m == "bipartite":
            nx, ny = cfg.n_x, cfg.n_y
            add("stochastic_rows:bipartite", lambda r: eq.check_stochastic("bipartite", t, r, d=d, spec=fixed_bip))
            add("block_permutation_equivariance:bipartite",
                lambda r: eq.check_block_permutation_equivariance(n_x=nx, n_y=ny, d=d, trials=t, rng=r))
            add("encoder_permutation_invariance:bipartite",
                lambda r: eq.check_encoder_permutation_invariance(n_x=nx, n_y=ny, d=d, trials=t, rng=r))
            add("gradient:bipartite", lambda r: eq.check_gradients("bipartite", gt, r, d=d, spec=fixed_bip))
        elif m == "graph":
            add("stochastic_rows:graph", lambda r: eq.check_stochastic("graph", t, r, n, d, spec=graph_spec))
            add("zero_off_edges:graph", lambda r: eq.check_zero_off_edges(t, r, n, d, graph=graph))
            add("gradient:graph", lambda r: eq.check_gradients("graph", gt, r, n, d, spec=graph_spec))
    if cfg.mechanism != "graph":
        add("hierarchy_collapse", lambda r: eq.check_hierarchy(n=n, d=d, trials=t, rng=r))
    if cfg.mechanism in (None, "causal", "strided"):
        plan.setdefault("order_structure", lambda: eq.check_order_structure(10, s))
    if cfg.negative_control:
        name = CONTROL_PREFIX + "permutation_equivariance:causal"
        add(name, lambda r: _named(
            eq.check_permutation_equivariance(n=n if n and n >= 2 else 4, d=d, trials=min(t, 10), rng=r,
                                              mechanism="causal"), name))
    return list(plan.items())


def _named(report: eq.PropertyReport, name: str) -> eq.PropertyReport:
    return eq.PropertyReport(name, report.trials, report.max_violation, report.tolerance, report.seed)


def cmd_verify(cfg: RunConfig) -> int:
    reports = [thunk() for _, thunk in planned_checks(cfg)]
    doc = {
        "version": REPORT_VERSION,
        "seed": cfg.seed,
        "checks": [r.to_dict() for r in reports],
    }
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    (cfg.out_dir / "report.json").write_text(json.dumps(doc, indent=2) + "\n")
    ok = True
    for r in reports:
        control = r.name.startswith(CONTROL_PREFIX)
        # a control passes when its property check fails
        good = (not r.passed) if control else r.passed
        ok &= good
        status = "PASS" if good else "FAIL"
        note = " (expected violation)" if control else ""
        print(f"{status}  {r.name}  max_violation={r.max_violation:.3e}  tol={r.tolerance:.0e}{note}")
    return 0 if ok else 1


def emit_instance(cfg: RunConfig):
    """Spec, inputs and parameters for ``emit``; seeded random unless ``cfg.worked``."""
    m = cfg.mechanism
    if m == "graph":
        spec = CustomGraph(load_adjacency(cfg.adjacency_path))
    elif m == "bipartite":
        spec = Bipartite(cfg.n_x, cfg.n_y)
    else:
        spec = {"full": Full, "causal": Causal}.get(m, lambda n: Strided(n, cfg.p))(cfg.n)
    d = cfg.d or (1 if cfg.worked else 2)
    n_rows = spec.n
    if cfg.worked:
        params = AttentionParams.identity(d)
        z = np.repeat(np.arange(n_rows, dtype=np.float64)[:, None], d, axis=1)
    else:
        rng = Rng(cfg.seed)
        params = AttentionParams.random(d, rng.split(0))
        z = eq.random_matrix(rng.split(1), n_rows, d)
    if isinstance(spec, Bipartite):
        return spec, params, z[: spec.n_x], z[spec.n_x:]
    return spec, params, z, None


def cmd_emit(cfg: RunConfig) -> List[Path]:
    spec, params, x, y = emit_instance(cfg)
    out = attend(x, params, spec, y)
    graph = build_graph(spec)
    files = {
        "alpha.csv": matrix_to_csv(out.alpha),
        "mask.csv": matrix_to_csv(graph_to_mask(graph)),
        "graph.dot": graph_to_dot(graph, spec.n_x if isinstance(spec, Bipartite) else None),
    }
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in files.items():
        path = cfg.out_dir / name
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
        written.append(path)
    return written


# -- argument parsing ------------------------------------------------------------


def _add_shape_flags(p: argparse.ArgumentParser):
    p.add_argument("--mechanism", choices=eq.MECHANISMS)
    p.add_argument("--n", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--p", type=int, help="strided window: number of attended entities including self")
    p.add_argument("--nx", dest="n_x", type=int)
    p.add_argument("--ny", dest="n_y", type=int)
    p.add_argument("--adjacency", type=Path, help="square 0/1 CSV (graph mechanism)")
    p.add_argument("--seed", type=int, help="64-bit seed; falls back to $ATTNBIAS_SEED, then 0")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--out", type=Path, default=Path("."))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attnbias", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    verify = sub.add_parser("verify", help="run property checks and write report.json")
    _add_shape_flags(verify)
    verify.add_argument("--negative-control", action="store_true",
                        help="also run a check that must fail (causal attention under permutations)")
    emit = sub.add_parser("emit", help="write alpha.csv, mask.csv and graph.dot")
    _add_shape_flags(emit)
    emit.add_argument("--worked", action="store_true",
                      help="identity projections and x_i = i instead of a random instance")
    return parser


def _resolve_seed(seed: Optional[int]) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("ATTNBIAS_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"ATTNBIAS_SEED must be an integer, got {env!r}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        seed = _resolve_seed(args.seed)
        if not 0 <= seed < 2**64:
            raise UsageError("seed must be a 64-bit unsigned integer")
        cfg = RunConfig(
            command=args.command,
            mechanism=args.mechanism,
            n=args.n,
            d=args.d,
            p=args.p,
            n_x=args.n_x,
            n_y=args.n_y,
            seed=seed,
            trials=args.trials,
            out_dir=args.out,
            adjacency_path=args.adjacency,
            negative_control=getattr(args, "negative_control", False),
            worked=getattr(args, "worked", False),
        ).validate()
    except UsageError as exc:
        parser.error(str(exc))
    try:
        if cfg.command == "verify":
            return cmd_verify(cfg)
        for path in cmd_emit(cfg):
            print(path)
        return 0
    except (AdjacencyParseError, EmptyNeighborhoodError) as exc:
        print(f"attnbias: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"attnbias: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
