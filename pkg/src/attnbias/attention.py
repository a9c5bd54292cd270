"""Unified attention layer over a relational graph.

Every mechanism runs through the same path: project, score with the scaled
dot-product kernel, mask by the mechanism's graph, row-softmax, then take the
expectation of the projected values under each row's distribution. Encoder-
decoder attention stacks ``[x; y]`` into one vertex set so it shares that path;
only the decoder rows are returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from . import linalg
from .graphs import Bipartite, MechanismSpec, build_graph, graph_to_mask
from .linalg import ShapeError, matmul, transpose


@dataclass(frozen=True)
class AttentionParams:
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    b_q: Optional[np.ndarray] = None
    b_k: Optional[np.ndarray] = None
    b_v: Optional[np.ndarray] = None

    def __post_init__(self):
        d = np.shape(self.w_q)[0]
        for name in ("w_q", "w_k", "w_v"):
            w = linalg.as_matrix(getattr(self, name))
            if w.shape != (d, d):
                raise ShapeError(f"{name} must be {d}x{d}, got {w.shape}")
            object.__setattr__(self, name, w)
        for name in ("b_q", "b_k", "b_v"):
            b = getattr(self, name)
            if b is None:
                continue
            b = np.ascontiguousarray(b, dtype=np.float64)
            if b.shape != (d,):
                raise ShapeError(f"{name} must have length {d}, got shape {b.shape}")
            object.__setattr__(self, name, b)

    @property
    def d(self) -> int:
        return self.w_q.shape[0]

    @classmethod
    def identity(cls, d: int) -> "AttentionParams":
        eye = linalg.identity(d)
        return cls(eye, eye.copy(), eye.copy())

    @classmethod
    def random(cls, d: int, rng: linalg.Rng, bias: bool = False) -> "AttentionParams":
        ws = [rng.uniform(-1.0, 1.0, (d, d)) for _ in range(3)]
        bs = [rng.uniform(-1.0, 1.0, (d,)) for _ in range(3)] if bias else [None] * 3
        return cls(*ws, *bs)


@dataclass(frozen=True)
class AttentionOutput:
    h: np.ndarray
    alpha: np.ndarray


@dataclass(frozen=True)
class AttentionGrads:
    d_x: np.ndarray
    d_wq: np.ndarray
    d_wk: np.ndarray
    d_wv: np.ndarray
    d_bq: np.ndarray
    d_bk: np.ndarray
    d_bv: np.ndarray
    d_y: Optional[np.ndarray] = None


def project(x, w, b=None) -> np.ndarray:
    x = linalg.as_matrix(x)
    w = linalg.as_matrix(w)
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"entities of width {x.shape[1]} do not match projection {w.shape}")
    return linalg.add_row(matmul(x, w), b)


def score_matrix(q, k, d: int) -> np.ndarray:
    """``K[i, j] = <q_i, k_j> / sqrt(d)``; not symmetric in general."""
    q = linalg.as_matrix(q)
    k = linalg.as_matrix(k)
    if not q.shape[1] == k.shape[1] == d:
        raise ShapeError(f"queries {q.shape} and keys {k.shape} must both have width {d}")
    return matmul(q, transpose(k)) / math.sqrt(d)


def _entities(x, spec: MechanismSpec, y, d: int) -> np.ndarray:
    x = linalg.as_matrix(x)
    if isinstance(spec, Bipartite):
        if y is None:
            raise ValueError("bipartite attention requires decoder entities y")
        y = linalg.as_matrix(y)
        if x.shape[0] != spec.n_x or y.shape[0] != spec.n_y:
            raise ShapeError(
                f"bipartite spec expects {spec.n_x} encoder and {spec.n_y} decoder rows, "
                f"got {x.shape[0]} and {y.shape[0]}"
            )
        if y.shape[1] != x.shape[1]:
            raise ShapeError(f"encoder width {x.shape[1]} and decoder width {y.shape[1]} differ")
        z = np.concatenate([x, y], axis=0)
    else:
        if y is not None:
            raise ValueError("decoder entities y are only accepted by bipartite attention")
        if x.shape[0] != spec.n:
            raise ShapeError(f"mechanism has {spec.n} vertices but x has {x.shape[0]} rows")
        z = x
    if z.shape[1] != d:
        raise ShapeError(f"entities have width {z.shape[1]}, parameters expect {d}")
    return z


def _forward(x, params: AttentionParams, spec: MechanismSpec, y=None):
    d = params.d
    z = _entities(x, spec, y, d)
    mask = graph_to_mask(build_graph(spec))
    q = project(z, params.w_q, params.b_q)
    k = project(z, params.w_k, params.b_k)
    v = project(z, params.w_v, params.b_v)
    alpha = linalg.masked_row_softmax(score_matrix(q, k, d), mask)
    h = matmul(alpha, v)
    return {"z": z, "mask": mask, "q": q, "k": k, "v": v, "alpha": alpha, "h": h}


def _output_rows(spec: MechanismSpec) -> slice:
    if isinstance(spec, Bipartite):
        return slice(spec.n_x, spec.n)
    return slice(0, spec.n)


def attend(x, params: AttentionParams, spec: MechanismSpec, y=None) -> AttentionOutput:
    """Forward pass. For ``Bipartite`` returns the decoder rows and the Y-by-X weight block."""
    cache = _forward(x, params, spec, y)
    rows = _output_rows(spec)
    alpha = cache["alpha"][rows]
    if isinstance(spec, Bipartite):
        alpha = alpha[:, : spec.n_x]
    return AttentionOutput(h=np.ascontiguousarray(cache["h"][rows]), alpha=np.ascontiguousarray(alpha))


def attend_backward(x, params: AttentionParams, spec: MechanismSpec, y=None, upstream=None) -> AttentionGrads:
    """Gradients of ``<upstream, attend(...).h>`` with respect to inputs and parameters."""
    c = _forward(x, params, spec, y)
    rows = _output_rows(spec)
    upstream = linalg.as_matrix(upstream)
    n_out = rows.stop - rows.start
    if upstream.shape != (n_out, params.d):
        raise ShapeError(f"upstream {upstream.shape} does not match output ({n_out}, {params.d})")
    g = np.zeros_like(c["h"])
    g[rows] = upstream

    z, q, k, v, alpha = c["z"], c["q"], c["k"], c["v"], c["alpha"]
    scale = 1.0 / math.sqrt(params.d)
    d_alpha = matmul(g, transpose(v))
    d_v = matmul(transpose(alpha), g)
    # softmax Jacobian per row; alpha == 0 on masked entries zeroes their gradient
    row_dot = np.sum(alpha * d_alpha, axis=1, keepdims=True)
    d_scores = alpha * (d_alpha - row_dot)
    d_q = matmul(d_scores, k) * scale
    d_k = matmul(transpose(d_scores), q) * scale

    zt = transpose(z)
    d_z = (
        matmul(d_q, transpose(params.w_q))
        + matmul(d_k, transpose(params.w_k))
        + matmul(d_v, transpose(params.w_v))
    )
    grads = dict(
        d_wq=matmul(zt, d_q),
        d_wk=matmul(zt, d_k),
        d_wv=matmul(zt, d_v),
        d_bq=d_q.sum(axis=0),
        d_bk=d_k.sum(axis=0),
        d_bv=d_v.sum(axis=0),
    )
    if isinstance(spec, Bipartite):
        return AttentionGrads(d_x=d_z[: spec.n_x], d_y=d_z[spec.n_x:], **grads)
    return AttentionGrads(d_x=d_z, **grads)


def message_decomposition(
    x, params: AttentionParams, spec: MechanismSpec, y=None
) -> Tuple[Dict[Tuple[int, int], np.ndarray], np.ndarray]:
    """Split attention into per-edge messages ``alpha_ij * v_j`` and their per-vertex sums.

    Message keys are vertex indices of the graph; for bipartite attention
    only decoder rows (indices ``n_x ..``) are reported. The sums run over
    neighbors in ascending order, which reproduces ``attend(...).h`` bit for
    bit.
    """
    c = _forward(x, params, spec, y)
    alpha, v = c["alpha"], c["v"]
    rows = _output_rows(spec)
    d = params.d
    messages = {}
    agg = np.zeros((rows.stop - rows.start, d), dtype=np.float64)
    for i in range(rows.start, rows.stop):
        total = [0.0] * d
        for j in np.flatnonzero(c["mask"][i]):
            a_ij = float(alpha[i, j])
            msg = [a_ij * float(val) for val in v[j]]
            messages[(i, int(j))] = np.array(msg)
            total = [t + m for t, m in zip(total, msg)]
        agg[i - rows.start] = total
    return messages, agg
