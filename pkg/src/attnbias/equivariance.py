"""Group actions and seeded property checks for the attention mechanisms.

Each ``check_*`` function runs independent trials, each on its own child
stream ``rng.split(trial)``, and reduces them with ``max`` into a
:class:`PropertyReport`. Because trials never share a stream, the report does
not depend on trial execution order.

Random instances draw entries i.i.d. uniform on [-1, 1], ``n`` in [2, 8] and
``d`` in [1, 4] unless fixed by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .attention import AttentionOutput, AttentionParams, attend, attend_backward
from .graphs import (
    Bipartite,
    Causal,
    CustomGraph,
    Full,
    RelationalGraph,
    Strided,
    build_graph,
    verify_dag_of_proper_edges,
    verify_total_order,
)
from .linalg import Rng, ShapeError, central_difference_grad, max_abs_diff

MECHANISMS = ("full", "causal", "strided", "bipartite", "graph")

EQUIVARIANCE_TOL = 1e-10
RECOMPUTE_TOL = 1e-12
GRADIENT_TOL = 1e-5


def _check_bijection(sigma, n: int) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.int64)
    if sigma.shape != (n,) or not np.array_equal(np.sort(sigma), np.arange(n)):
        raise ShapeError(f"{sigma.tolist()} is not a permutation of 0..{n - 1}")
    return sigma


@dataclass(frozen=True)
class Permutation:
    """Row ``i`` of the acted-on matrix is row ``sigma[i]`` of the original."""

    sigma: tuple

    def __post_init__(self):
        object.__setattr__(self, "sigma", tuple(int(s) for s in self.sigma))
        _check_bijection(self.sigma, len(self.sigma))


@dataclass(frozen=True)
class BlockPermutation:
    sigma_x: tuple
    sigma_y: tuple

    def __post_init__(self):
        for name in ("sigma_x", "sigma_y"):
            sigma = tuple(int(s) for s in getattr(self, name))
            _check_bijection(sigma, len(sigma))
            object.__setattr__(self, name, sigma)


@dataclass(frozen=True, eq=False)
class Shift:
    """Translation ``i -> i + m``, realised by prepending ``m`` rows.

    ``prefix`` supplies the new leading rows (zeros when omitted).
    """

    m: int
    prefix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("shift offset must be >= 0")

    def index(self, i: int) -> int:
        return i + self.m


GroupAction = Union[Permutation, BlockPermutation, Shift]


def representation(action, n: int) -> np.ndarray:
    """Permutation matrix ``P`` with ``P @ x`` equal to the action on ``x``."""
    if isinstance(action, Permutation):
        sigma = _check_bijection(action.sigma, n)
    elif isinstance(action, BlockPermutation):
        n_x = len(action.sigma_x)
        if n_x + len(action.sigma_y) != n:
            raise ShapeError(f"block sizes do not add up to {n}")
        sigma = np.concatenate([np.asarray(action.sigma_x), n_x + np.asarray(action.sigma_y)])
    else:
        raise TypeError("shifts change the index set and have no square representation")
    return np.eye(n, dtype=np.float64)[sigma]


def apply_action(action, x, y=None):
    x = np.asarray(x, dtype=np.float64)
    if isinstance(action, Permutation):
        sigma = _check_bijection(action.sigma, x.shape[0])
        return x[sigma], y
    if isinstance(action, BlockPermutation):
        if y is None:
            raise ValueError("a block permutation acts on both x and y")
        y = np.asarray(y, dtype=np.float64)
        sx = _check_bijection(action.sigma_x, x.shape[0])
        sy = _check_bijection(action.sigma_y, y.shape[0])
        return x[sx], y[sy]
    if isinstance(action, Shift):
        prefix = action.prefix
        if prefix is None:
            prefix = np.zeros((action.m, x.shape[1]))
        prefix = np.asarray(prefix, dtype=np.float64)
        if prefix.shape != (action.m, x.shape[1]):
            raise ShapeError(f"shift prefix must be {action.m}x{x.shape[1]}, got {prefix.shape}")
        return np.concatenate([prefix, x], axis=0), y
    raise TypeError(f"unknown action {action!r}")


@dataclass(frozen=True)
class PropertyReport:
    name: str
    trials: int
    max_violation: float
    tolerance: float
    seed: int

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tolerance

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "trials": self.trials,
            "tolerance": self.tolerance,
            "max_violation": self.max_violation,
            "pass": self.passed,
        }


# -- random instances -------------------------------------------------------


def random_matrix(rng: Rng, rows: int, cols: int) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, (rows, cols))


def random_graph(rng: Rng, n: int, density: float = 0.5) -> RelationalGraph:
    adj = rng.bits((n, n), density)
    for i in np.flatnonzero(~adj.any(axis=1)):
        adj[i, rng.integer(0, n - 1)] = True
    return RelationalGraph(adj)


def random_spec(rng: Rng, mechanism: str, n: int):
    if mechanism == "full":
        return Full(n)
    if mechanism == "causal":
        return Causal(n)
    if mechanism == "strided":
        return Strided(n, rng.integer(1, n))
    if mechanism == "bipartite":
        return Bipartite(rng.integer(1, 6), rng.integer(1, 6))
    if mechanism == "graph":
        return CustomGraph(random_graph(rng, n))
    raise ValueError(f"unknown mechanism {mechanism!r}")


@dataclass
class Instance:
    spec: object
    params: AttentionParams
    x: np.ndarray
    y: Optional[np.ndarray] = None

    def attend(self):
        return attend(self.x, self.params, self.spec, self.y)


def random_instance(
    rng: Rng,
    mechanism: str,
    n: Optional[int] = None,
    d: Optional[int] = None,
    params: Optional[AttentionParams] = None,
    spec=None,
    bias: bool = False,
) -> Instance:
    if params is not None:
        d = params.d
    d = d if d is not None else rng.integer(1, 4)
    n = n if n is not None else rng.integer(2, 8)
    spec = spec if spec is not None else random_spec(rng, mechanism, n)
    params = params if params is not None else AttentionParams.random(d, rng, bias=bias)
    if isinstance(spec, Bipartite):
        return Instance(spec, params, random_matrix(rng, spec.n_x, d), random_matrix(rng, spec.n_y, d))
    return Instance(spec, params, random_matrix(rng, spec.n, d))


def _size_and_window(r: Rng, n: Optional[int], p: Optional[int]):
    if n is None:
        n = r.integer(max(2, p or 2), max(8, p or 8))
    if p is None:
        p = r.integer(1, n)
    if not 1 <= p <= n:
        raise ValueError(f"need n >= p >= 1, got n={n}, p={p}")
    return n, p


def _run(name: str, trials: int, tolerance: float, rng: Rng, trial: Callable[[Rng], float]) -> PropertyReport:
    worst = 0.0
    for t in range(trials):
        worst = max(worst, float(trial(rng.split(t))))
    return PropertyReport(name, trials, worst, tolerance, rng.seed)


# -- single-instance violation measures --------------------------------------


def stochastic_violation(inst: Instance) -> float:
    """Worst deviation of a row sum from 1, or inf if a masked weight is nonzero."""
    out = inst.attend()
    adj = build_graph(inst.spec).adjacency
    if isinstance(inst.spec, Bipartite):
        adj = adj[inst.spec.n_x:, : inst.spec.n_x]
    if np.any(out.alpha[~adj] != 0.0) or np.any(out.alpha < 0.0):
        return float("inf")
    return float(np.max(np.abs(out.alpha.sum(axis=1) - 1.0)))


def permutation_violation(inst: Instance, sigma: Sequence[int]) -> float:
    """``max |attend(sigma x) - sigma attend(x)|`` for a self-attention-style instance."""
    act = Permutation(tuple(sigma))
    px, _ = apply_action(act, inst.x)
    lhs = attend(px, inst.params, inst.spec).h
    rhs, _ = apply_action(act, inst.attend().h)
    return max_abs_diff(lhs, rhs)


def block_permutation_violation(inst: Instance, sigma_x, sigma_y) -> float:
    act = BlockPermutation(tuple(sigma_x), tuple(sigma_y))
    px, py = apply_action(act, inst.x, inst.y)
    lhs = attend(px, inst.params, inst.spec, py).h
    rhs = inst.attend().h[np.asarray(act.sigma_y, dtype=np.int64)]
    return max_abs_diff(lhs, rhs)


def prefix_causality_violation(x: np.ndarray, params: AttentionParams) -> float:
    """Causal output ``i`` recomputed on ``x[:i+1]`` against the full-sequence output."""
    n = x.shape[0]
    full = attend(x, params, Causal(n)).h
    worst = 0.0
    for i in range(n):
        part = attend(x[: i + 1], params, Causal(i + 1)).h
        worst = max(worst, max_abs_diff(part[i], full[i]))
    return worst


def shift_match_violation(x: np.ndarray, prefix: np.ndarray, params: AttentionParams, p: int) -> float:
    """Strided output ``i`` against output ``i + m`` after prepending ``m`` rows, for ``i >= p - 1``."""
    n = x.shape[0]
    shift = Shift(prefix.shape[0], prefix)
    base = attend(x, params, Strided(n, p)).h
    sx, _ = apply_action(shift, x)
    moved = attend(sx, params, Strided(sx.shape[0], p)).h
    worst = 0.0
    for i in range(p - 1, n):
        worst = max(worst, max_abs_diff(moved[shift.index(i)], base[i]))
    return worst


def locality_violation(x: np.ndarray, params: AttentionParams, p: int, i: int, replacement: np.ndarray) -> float:
    """Change every row outside row ``i``'s window; output ``i`` must not move."""
    n = x.shape[0]
    window = np.zeros(n, dtype=bool)
    window[max(0, i - p + 1): i + 1] = True
    x2 = np.where(window[:, None], x, replacement)
    before = attend(x, params, Strided(n, p)).h[i]
    after = attend(x2, params, Strided(n, p)).h[i]
    return max_abs_diff(before, after)


def _outputs_differ(a, b) -> float:
    if a.h.shape != b.h.shape or a.alpha.shape != b.alpha.shape:
        return float("inf")
    if np.array_equal(a.h, b.h) and np.array_equal(a.alpha, b.alpha):
        return 0.0
    return max(max_abs_diff(a.h, b.h), max_abs_diff(a.alpha, b.alpha), np.finfo(float).tiny)


def hierarchy_violation(x: np.ndarray, params: AttentionParams, p: int, n_x: int) -> float:
    """Worst disagreement among the five mask identities; 0.0 means all are bit-identical.

    The reference adjacencies are written out here directly rather than taken
    from ``build_graph``, so the check exercises the mechanism builders too.
    """
    n = x.shape[0]
    ones = np.ones((n, n), dtype=bool)
    lower = np.tril(ones)
    band = lower & np.triu(ones, k=-(p - 1))
    worst = 0.0
    for spec, adj in ((Full(n), ones), (Causal(n), lower), (Strided(n, p), band)):
        worst = max(worst, _outputs_differ(attend(x, params, spec), attend(x, params, CustomGraph(RelationalGraph(adj)))))
    worst = max(worst, _outputs_differ(attend(x, params, Strided(n, n)), attend(x, params, Causal(n))))

    bip = Bipartite(n_x, n - n_x)
    adj = np.zeros((n, n), dtype=bool)
    adj[n_x:, :n_x] = True
    for i in range(n_x):
        adj[i, i] = True
    ref = attend(x[:n_x], params, bip, x[n_x:])
    custom = attend(x, params, CustomGraph(RelationalGraph(adj)))
    worst = max(worst, _outputs_differ(ref, AttentionOutput(custom.h[n_x:], custom.alpha[n_x:, :n_x])))
    return worst


def gradient_violation(inst: Instance, upstream: np.ndarray, h: float = 1e-5) -> float:
    """Worst gradient error ``||analytic - numeric|| / max(||analytic||, ||numeric||, 1)`` over all inputs."""
    p = inst.params
    d = p.d
    zero = np.zeros(d)
    state = {
        "x": inst.x,
        "y": inst.y,
        "w_q": p.w_q,
        "w_k": p.w_k,
        "w_v": p.w_v,
        "b_q": zero if p.b_q is None else p.b_q,
        "b_k": zero if p.b_k is None else p.b_k,
        "b_v": zero if p.b_v is None else p.b_v,
    }

    def loss(**over) -> float:
        s = {**state, **over}
        params = AttentionParams(s["w_q"], s["w_k"], s["w_v"], s["b_q"], s["b_k"], s["b_v"])
        return float(np.sum(upstream * attend(s["x"], params, inst.spec, s["y"]).h))

    full_params = AttentionParams(*(state[k] for k in ("w_q", "w_k", "w_v", "b_q", "b_k", "b_v")))
    g = attend_backward(inst.x, full_params, inst.spec, inst.y, upstream)
    analytic = {
        "x": g.d_x, "y": g.d_y, "w_q": g.d_wq, "w_k": g.d_wk, "w_v": g.d_wv,
        "b_q": g.d_bq, "b_k": g.d_bk, "b_v": g.d_bv,
    }
    worst = 0.0
    for key, a in analytic.items():
        if state[key] is None:
            continue
        base = np.atleast_2d(state[key])
        if key.startswith("b_"):
            f = lambda m, key=key: loss(**{key: m[0]})
        else:
            f = lambda m, key=key: loss(**{key: m})
        num = central_difference_grad(f, base, h).reshape(np.shape(a))
        scale = max(np.linalg.norm(a), np.linalg.norm(num), 1.0)
        worst = max(worst, float(np.linalg.norm(a - num) / scale))
    return worst


# -- property checks ---------------------------------------------------------


def _trial_spec(r: Rng, mechanism: str, n, p, spec):
    """Fixed spec if given; a strided spec with window ``p`` if only ``p`` is fixed."""
    if spec is None and mechanism == "strided" and p is not None:
        size, window = _size_and_window(r, n, p)
        return Strided(size, window)
    return spec


def check_stochastic(mechanism: str, trials: int, rng: Rng, n: Optional[int] = None, d: Optional[int] = None,
                     spec=None, p: Optional[int] = None) -> PropertyReport:
    def trial(r):
        s = _trial_spec(r, mechanism, n, p, spec)
        return stochastic_violation(random_instance(r, mechanism, n, d, spec=s, bias=True))

    return _run(f"stochastic_rows:{mechanism}", trials, RECOMPUTE_TOL, rng, trial)


def check_zero_off_edges(trials: int, rng: Rng, n: Optional[int] = None, d: Optional[int] = None,
                        graph: Optional[RelationalGraph] = None) -> PropertyReport:
    """Zero attention weight exactly where the graph has no edge; violation counts mismatches."""
    spec = CustomGraph(graph) if graph is not None else None

    def trial(r):
        inst = random_instance(r, "graph", n, d, spec=spec)
        alpha = inst.attend().alpha
        adj = inst.spec.graph.adjacency
        return float(np.count_nonzero((alpha == 0.0) != ~adj))

    return _run("zero_off_edges:graph", trials, 0.0, rng, trial)


def check_permutation_equivariance(
    params: Optional[AttentionParams] = None,
    n: Optional[int] = None,
    d: Optional[int] = None,
    trials: int = 100,
    rng: Optional[Rng] = None,
    mechanism: str = "full",
) -> PropertyReport:
    rng = rng or Rng(0)
    if n is not None and n < 2:
        raise ValueError("permutation checks need n >= 2")
    builders = {"full": Full, "causal": Causal}

    def trial(r):
        size = n if n is not None else r.integer(2, 8)
        inst = random_instance(r, mechanism, size, d, params, spec=builders[mechanism](size))
        return permutation_violation(inst, r.permutation(size))

    return _run(f"permutation_equivariance:{mechanism}", trials, EQUIVARIANCE_TOL, rng, trial)


def check_block_permutation_equivariance(
    params: Optional[AttentionParams] = None,
    n_x: Optional[int] = None,
    n_y: Optional[int] = None,
    d: Optional[int] = None,
    trials: int = 100,
    rng: Optional[Rng] = None,
) -> PropertyReport:
    rng = rng or Rng(0)

    def trial(r):
        spec = Bipartite(n_x or r.integer(1, 6), n_y or r.integer(1, 6))
        inst = random_instance(r, "bipartite", d=d, params=params, spec=spec)
        return block_permutation_violation(inst, r.permutation(spec.n_x), r.permutation(spec.n_y))

    return _run("block_permutation_equivariance:bipartite", trials, EQUIVARIANCE_TOL, rng, trial)


def check_encoder_permutation_invariance(
    params: Optional[AttentionParams] = None,
    n_x: Optional[int] = None,
    n_y: Optional[int] = None,
    d: Optional[int] = None,
    trials: int = 100,
    rng: Optional[Rng] = None,
) -> PropertyReport:
    """Permuting only the encoder set leaves every decoder output unchanged."""
    rng = rng or Rng(0)

    def trial(r):
        spec = Bipartite(n_x or r.integer(1, 6), n_y or r.integer(1, 6))
        inst = random_instance(r, "bipartite", d=d, params=params, spec=spec)
        return block_permutation_violation(inst, r.permutation(spec.n_x), range(spec.n_y))

    return _run("encoder_permutation_invariance:bipartite", trials, RECOMPUTE_TOL, rng, trial)


def check_translation_equivariance(
    params: Optional[AttentionParams] = None,
    n: Optional[int] = None,
    p: Optional[int] = None,
    m: int = 1,
    d: Optional[int] = None,
    trials: int = 100,
    rng: Optional[Rng] = None,
) -> PropertyReport:
    """Causal prefix causality plus strided interior shift-match for offset ``m``."""
    rng = rng or Rng(0)
    if m < 0:
        raise ValueError("m must be >= 0")

    def trial(r):
        size, window = _size_and_window(r, n, p)
        inst = random_instance(r, "causal", size, d, params, spec=Causal(size))
        prefix = random_matrix(r, m, inst.params.d)
        return max(
            prefix_causality_violation(inst.x, inst.params),
            shift_match_violation(inst.x, prefix, inst.params, window),
        )

    return _run(f"translation_equivariance:m={m}", trials, RECOMPUTE_TOL, rng, trial)


def check_prefix_causality(trials: int, rng: Rng, n=None, d=None) -> PropertyReport:
    def trial(r):
        inst = random_instance(r, "causal", n, d)
        return prefix_causality_violation(inst.x, inst.params)

    return _run("prefix_causality:causal", trials, RECOMPUTE_TOL, rng, trial)


def check_locality(trials: int, rng: Rng, n=None, p=None, d=None) -> PropertyReport:
    def trial(r):
        size, window = _size_and_window(r, n, p)
        inst = random_instance(r, "strided", size, d, spec=Strided(size, window))
        i = r.integer(0, size - 1)
        return locality_violation(inst.x, inst.params, window, i, random_matrix(r, size, inst.params.d))

    return _run("windowed_locality:strided", trials, RECOMPUTE_TOL, rng, trial)


def check_hierarchy(
    params: Optional[AttentionParams] = None,
    n: Optional[int] = None,
    d: Optional[int] = None,
    trials: int = 50,
    rng: Optional[Rng] = None,
) -> PropertyReport:
    rng = rng or Rng(0)
    if n is not None and n < 2:
        raise ValueError("hierarchy checks need n >= 2")

    def trial(r):
        size = n if n is not None else r.integer(2, 8)
        inst = random_instance(r, "full", size, d, params)
        return hierarchy_violation(inst.x, inst.params, r.integer(1, size), r.integer(1, size - 1))

    return _run("hierarchy_collapse", trials, 0.0, rng, trial)


def check_order_structure(n_max: int = 10, seed: int = 0) -> PropertyReport:
    """Exhaustive over n <= n_max and every window p; violation counts wrong verdicts."""
    wrong = 0
    cases = 0
    for n in range(1, n_max + 1):
        expect = [
            (verify_total_order, Causal(n), True),
            (verify_dag_of_proper_edges, Causal(n), True),
            (verify_total_order, Full(n), n == 1),
        ]
        for p in range(1, n + 1):
            expect.append((verify_dag_of_proper_edges, Strided(n, p), True))
            # any window narrower than the sequence leaves some pair incomparable
            expect.append((verify_total_order, Strided(n, p), p >= n))
        for fn, spec, want in expect:
            cases += 1
            wrong += fn(build_graph(spec)) != want
    return PropertyReport("order_structure", cases, float(wrong), 0.0, seed)


def check_gradients(mechanism: str, trials: int, rng: Rng, n=None, d=None, spec=None, p=None) -> PropertyReport:
    def trial(r):
        s = _trial_spec(r, mechanism, n, p, spec)
        inst = random_instance(r, mechanism, n, d, spec=s, bias=True)
        out = inst.attend()
        upstream = random_matrix(r, *out.h.shape)
        return gradient_violation(inst, upstream)

    return _run(f"gradient:{mechanism}", trials, GRADIENT_TOL, rng, trial)


def causal_counterexample(seed: int = 0) -> PropertyReport:
    """Negative control: causal attention under a reversal permutation.

    Causal attention only commutes with order-preserving maps, so this check
    must report a large violation.
    """
    return check_permutation_equivariance(n=4, d=2, trials=10, rng=Rng(seed), mechanism="causal")
