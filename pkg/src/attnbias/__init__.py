"""Attention mechanisms as masked message-passing layers over relational graphs."""

from .attention import (
    AttentionGrads,
    AttentionOutput,
    AttentionParams,
    attend,
    attend_backward,
    message_decomposition,
    project,
    score_matrix,
)
from .graphs import (
    Bipartite,
    Causal,
    CustomGraph,
    Full,
    RelationalGraph,
    Strided,
    build_graph,
    graph_to_mask,
    verify_dag_of_proper_edges,
    verify_total_order,
)
from .linalg import (
    BACKEND,
    EmptyNeighborhoodError,
    NumericError,
    Rng,
    ShapeError,
    central_difference_grad,
    masked_row_softmax,
    matmul,
)

__version__ = "0.1.0"
