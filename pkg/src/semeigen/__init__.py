"""Out-of-core spectral analysis for large sparse graphs.

The package streams a tiled compressed sparse matrix from disk for
semi-external-memory SpMM, keeps the Krylov vector subspace in on-disk
tall-and-skinny dense matrix files, and drives a block Krylov-Schur
eigensolver over both.
"""

from .sparse_format import (
    SparseTileMatrix,
    TileDims,
    build_matrix,
    decode_tile,
    encode_tile,
    read_edges_binary,
    read_edges_text,
)
from .spmm import DenseBlockMem, conv_layout, plan_super_tiles, spmm
from .dense_store import TasMatrixFile, io_counters, tas_create, tas_open
from .dense_ops import (
    RecentBlockCache,
    clone_view,
    mv_add_mv,
    mv_dot,
    mv_norm,
    mv_random,
    mv_scale,
    mv_times_mat_add_mv,
    mv_trans_mv,
    set_block,
)
from .eigensolver import RitzPair, SolverConfig, solve

__all__ = [
    "SparseTileMatrix",
    "TileDims",
    "build_matrix",
    "encode_tile",
    "decode_tile",
    "read_edges_text",
    "read_edges_binary",
    "DenseBlockMem",
    "conv_layout",
    "plan_super_tiles",
    "spmm",
    "TasMatrixFile",
    "tas_create",
    "tas_open",
    "io_counters",
    "RecentBlockCache",
    "clone_view",
    "set_block",
    "mv_add_mv",
    "mv_dot",
    "mv_norm",
    "mv_random",
    "mv_scale",
    "mv_times_mat_add_mv",
    "mv_trans_mv",
    "RitzPair",
    "SolverConfig",
    "solve",
]

__version__ = "0.1.0"
