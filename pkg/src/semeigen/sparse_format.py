"""On-disk tiled sparse matrix format.

A matrix is cut into square power-of-two tiles and stored tile row by tile
row.  Inside a tile, rows with two or more entries use a compressed row
encoding ("SCSR"): one 16-bit header word per non-empty row (most significant
bit set, low 15 bits the local row id) followed by one 16-bit word per column
index (most significant bit clear).  Rows with exactly one entry are stored
as 16-bit (row, col) coordinate pairs behind the SCSR region.  Numeric values
(absent for binary matrices) are appended at the end of the tile in traversal
order: SCSR entries first, then coordinate pairs.

File layout (all little-endian):

    header   magic "FEM1", version u16, n_rows u64, n_cols u64,
             tile_rows u32, value_kind u8
    index    one (offset u64, length u64) pair per tile row; offsets are
             relative to the start of the data section
    data     tile rows back to back; a tile row holds every tile of that row
             in column order (an empty tile is its 12-byte count header), so
             tile column ids stay implicit

The per-tile layout is a 12-byte header of three u32 counts
{total_nnz, scsr_word_count, coo_pair_count}, then the SCSR words, then the
coordinate pairs, then the values.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .iostats import CountedFile

MAGIC = b"FEM1"
VERSION = 1

VALUE_BINARY = "binary"
VALUE_FLOAT64 = "float64"
_VALUE_CODES = {VALUE_BINARY: 0, VALUE_FLOAT64: 1}
_VALUE_NAMES = {v: k for k, v in _VALUE_CODES.items()}

_HEADER = struct.Struct("<4sHQQIB")
_INDEX_ENTRY = struct.Struct("<QQ")
_TILE_HEADER = struct.Struct("<III")

MAX_TILE = 32768  # 15-bit local indices; the high bit marks SCSR row headers
_ROW_HEADER_BIT = 0x8000


class FormatError(Exception):
    """Base error for sparse matrix format violations."""


class MalformedTile(FormatError):
    """Tile byte stream violates the SCSR/COO encoding rules."""


class CorruptMatrix(FormatError):
    """Matrix file header or index is inconsistent with the file contents."""


def _is_pow2(x: int) -> bool:
    return x > 0 and (x & (x - 1)) == 0


@dataclass(frozen=True)
class TileDims:
    """Square tile dimensions; both sides the same power of two <= 32768."""

    tile_rows: int
    tile_cols: int

    def __post_init__(self):
        if self.tile_rows != self.tile_cols:
            raise ValueError("tiles must be square")
        if not _is_pow2(self.tile_rows):
            raise ValueError("tile size must be a power of two")
        if self.tile_rows > MAX_TILE:
            raise ValueError(f"tile size {self.tile_rows} exceeds {MAX_TILE}")

    @classmethod
    def square(cls, size: int) -> "TileDims":
        return cls(size, size)


DEFAULT_TILE = TileDims.square(16384)


@dataclass
class Tile:
    """Decoded structural view of one tile's regions."""

    scsr_words: np.ndarray  # uint16
    coo_pairs: np.ndarray  # uint16, shape (P, 2)
    values: np.ndarray | None  # float64, traversal order, None for binary


@dataclass
class DecodedTile:
    """Entries of one non-empty tile, sorted by (row, col)."""

    tile_col: int
    rows: np.ndarray  # local row ids
    cols: np.ndarray  # local col ids
    values: np.ndarray  # float64; all ones for binary matrices

    def entries(self) -> list[tuple[int, int, float]]:
        return list(zip(self.rows.tolist(), self.cols.tolist(), self.values.tolist()))


def _entry_arrays(entries):
    """Normalize a triplet/pair list into (rows, cols, values-or-None)."""
    if isinstance(entries, tuple) and len(entries) in (2, 3) and not np.isscalar(entries[0]):
        rows = np.asarray(entries[0], dtype=np.int64)
        cols = np.asarray(entries[1], dtype=np.int64)
        vals = np.asarray(entries[2], dtype=np.float64) if len(entries) == 3 else None
        return rows, cols, vals
    entries = list(entries)
    if not entries:
        return np.empty(0, np.int64), np.empty(0, np.int64), None
    width = len(entries[0])
    arr = np.asarray(entries, dtype=np.float64)
    rows = arr[:, 0].astype(np.int64)
    cols = arr[:, 1].astype(np.int64)
    vals = arr[:, 2].copy() if width == 3 else None
    return rows, cols, vals


def encode_tile(entries, dims: TileDims) -> bytes:
    """Encode sorted, duplicate-free (row, col[, value]) entries as tile bytes.

    Rows with >= 2 entries are emitted in the SCSR region, single-entry rows
    as coordinate pairs.  Raises ``ValueError`` on out-of-range indices or
    duplicate (row, col) positions.
    """
    rows, cols, vals = _entry_arrays(entries)
    return _encode_tile_arrays(rows, cols, vals, dims)


def _encode_tile_arrays(rows, cols, vals, dims: TileDims) -> bytes:
    n = len(rows)
    if n:
        if rows.min() < 0 or rows.max() >= dims.tile_rows:
            raise ValueError("local row index out of tile range")
        if cols.min() < 0 or cols.max() >= dims.tile_cols:
            raise ValueError("local col index out of tile range")
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        if vals is not None:
            vals = vals[order]
        same = (rows[1:] == rows[:-1]) & (cols[1:] == cols[:-1])
        if same.any():
            raise ValueError("duplicate (row, col) entry in tile")

    # Per-entry count of its row's population decides SCSR vs COO membership.
    new_row = np.empty(n, dtype=bool)
    if n:
        new_row[0] = True
        new_row[1:] = rows[1:] != rows[:-1]
    seg_start = np.flatnonzero(new_row)
    seg_sizes = np.diff(seg_start, append=n)
    per_entry_size = np.repeat(seg_sizes, seg_sizes)
    multi = per_entry_size >= 2

    scsr_rows, scsr_cols = rows[multi], cols[multi]
    coo_rows, coo_cols = rows[~multi], cols[~multi]

    n_scsr = len(scsr_cols)
    if n_scsr:
        hdr_flag = np.empty(n_scsr, dtype=bool)
        hdr_flag[0] = True
        hdr_flag[1:] = scsr_rows[1:] != scsr_rows[:-1]
        seg_id = np.cumsum(hdr_flag) - 1
        words = np.empty(n_scsr + int(seg_id[-1]) + 1, dtype=np.uint16)
        entry_pos = np.arange(n_scsr) + seg_id + 1
        words[entry_pos] = scsr_cols
        hdr_pos = entry_pos[hdr_flag] - 1
        words[hdr_pos] = scsr_rows[hdr_flag] | _ROW_HEADER_BIT
    else:
        words = np.empty(0, dtype=np.uint16)

    pairs = np.column_stack([coo_rows, coo_cols]).astype(np.uint16)

    out = [_TILE_HEADER.pack(n, len(words), len(pairs))]
    out.append(words.astype("<u2").tobytes())
    out.append(pairs.astype("<u2").tobytes())
    if vals is not None:
        out.append(np.concatenate([vals[multi], vals[~multi]]).astype("<f8").tobytes())
    return b"".join(out)


def decode_tile(data, dims: TileDims) -> list[tuple[int, int, float]]:
    """Decode tile bytes back to the sorted (row, col, value) triplet list.

    Binary tiles decode with value 1.0 for every entry.
    """
    rows, cols, vals = _decode_tile_arrays(data, dims)
    if vals is None:
        vals = np.ones(len(rows))
    return list(zip(rows.tolist(), cols.tolist(), vals.tolist()))


def _decode_tile_arrays(data, dims: TileDims):
    """Decode to (rows, cols, values-or-None) arrays sorted by (row, col)."""
    data = memoryview(data)
    if len(data) < _TILE_HEADER.size:
        raise MalformedTile("tile shorter than its count header")
    total, n_words, n_pairs = _TILE_HEADER.unpack_from(data, 0)
    off = _TILE_HEADER.size
    body = off + 2 * n_words + 4 * n_pairs
    if body > len(data):
        raise MalformedTile("region counts exceed tile length")
    rest = len(data) - body
    if rest == 0:
        vals = None
    elif rest == 8 * total:
        vals = np.frombuffer(data, dtype="<f8", count=total, offset=body)
    else:
        raise MalformedTile("value region length inconsistent with entry count")

    words = np.frombuffer(data, dtype="<u2", count=n_words, offset=off)
    pairs = np.frombuffer(data, dtype="<u2", count=2 * n_pairs, offset=off + 2 * n_words)
    pairs = pairs.reshape(n_pairs, 2)

    is_hdr = (words & _ROW_HEADER_BIT) != 0
    if n_words and not is_hdr[0]:
        raise MalformedTile("column word before any row header")
    hdr_pos = np.flatnonzero(is_hdr)
    seg_sizes = np.diff(hdr_pos, append=n_words) - 1
    scsr_rows = np.repeat(words[hdr_pos] & ~_ROW_HEADER_BIT, seg_sizes).astype(np.int64)
    scsr_cols = words[~is_hdr].astype(np.int64)
    if total != len(scsr_cols) + n_pairs:
        raise MalformedTile("entry count inconsistent with region contents")

    hrows = (words[hdr_pos] & ~_ROW_HEADER_BIT).astype(np.int64)
    if len(hrows) > 1 and not (np.diff(hrows) > 0).all():
        raise MalformedTile("row headers not strictly increasing")

    rows = np.concatenate([scsr_rows, pairs[:, 0].astype(np.int64)])
    cols = np.concatenate([scsr_cols, pairs[:, 1].astype(np.int64)])
    if len(rows):
        if rows.max() >= dims.tile_rows or cols.max() >= dims.tile_cols:
            raise MalformedTile("local index out of tile range")
        order = np.lexsort((cols, rows))
        rows, cols = rows[order], cols[order]
        if vals is not None:
            vals = np.ascontiguousarray(vals[order])
    return rows, cols, vals


def split_tile_regions(data) -> Tile:
    """Expose the raw SCSR/COO/value regions of one tile for inspection."""
    data = memoryview(data)
    total, n_words, n_pairs = _TILE_HEADER.unpack_from(data, 0)
    off = _TILE_HEADER.size
    words = np.frombuffer(data, dtype="<u2", count=n_words, offset=off).copy()
    pairs = np.frombuffer(
        data, dtype="<u2", count=2 * n_pairs, offset=off + 2 * n_words
    ).reshape(n_pairs, 2).copy()
    body = off + 2 * n_words + 4 * n_pairs
    vals = None
    if len(data) > body:
        vals = np.frombuffer(data, dtype="<f8", count=total, offset=body).copy()
    return Tile(words, pairs, vals)


class SparseTileMatrix:
    """Read-only handle on a tiled sparse matrix file."""

    def __init__(self, path):
        self.file = CountedFile(path, "r")
        raw = self.file.pread(0, _HEADER.size)
        if len(raw) < _HEADER.size:
            raise CorruptMatrix("file shorter than header")
        magic, version, n_rows, n_cols, tile_rows, vkind = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise CorruptMatrix(f"bad magic {magic!r}")
        if version != VERSION:
            raise CorruptMatrix(f"unsupported version {version}")
        if vkind not in _VALUE_NAMES:
            raise CorruptMatrix(f"unknown value kind {vkind}")
        self.n_rows = n_rows
        self.n_cols = n_cols
        self.tile_dims = TileDims.square(tile_rows)
        self.value_kind = _VALUE_NAMES[vkind]

        self.n_tile_rows = -(-n_rows // tile_rows) if n_rows else 0
        self.n_tile_cols = -(-n_cols // tile_rows) if n_cols else 0
        idx_bytes = self.file.pread(_HEADER.size, self.n_tile_rows * _INDEX_ENTRY.size)
        if len(idx_bytes) < self.n_tile_rows * _INDEX_ENTRY.size:
            raise CorruptMatrix("file shorter than tile row index")
        self.index = np.frombuffer(idx_bytes, dtype="<u8").reshape(self.n_tile_rows, 2)
        self.data_offset = _HEADER.size + self.n_tile_rows * _INDEX_ENTRY.size

        fsize = self.file.size()
        ends = self.index[:, 0] + self.index[:, 1]
        if self.n_tile_rows:
            if (np.diff(self.index[:, 0].astype(np.int64)) < 0).any():
                raise CorruptMatrix("index offsets not nondecreasing")
            if int(ends.max()) + self.data_offset > fsize:
                raise CorruptMatrix("index points past end of file")

    # -- properties -------------------------------------------------------

    @property
    def data_section_size(self) -> int:
        if not self.n_tile_rows:
            return 0
        return int((self.index[:, 0] + self.index[:, 1]).max())

    def csr8_equivalent_bytes(self, nnz: int) -> int:
        """Size of the same matrix as CSR with 8-byte indices (and values)."""
        size = (self.n_rows + 1) * 8 + nnz * 8
        if self.value_kind == VALUE_FLOAT64:
            size += nnz * 8
        return size

    # -- tile row access ---------------------------------------------------

    def tile_row_byte_range(self, tile_row_id: int) -> tuple[int, int]:
        if not 0 <= tile_row_id < self.n_tile_rows:
            raise IndexError(f"tile row {tile_row_id} out of range")
        off, length = self.index[tile_row_id]
        return self.data_offset + int(off), int(length)

    def read_tile_row_raw(self, tile_row_id: int, buf=None):
        """One contiguous read of a tile row; returns a memoryview of it."""
        off, length = self.tile_row_byte_range(tile_row_id)
        if buf is None:
            data = self.file.pread(off, length)
            if len(data) != length:
                raise CorruptMatrix("short read of tile row")
            return memoryview(data)
        view = memoryview(buf)[:length]
        nread = self.file.pread_into(off, view)
        if nread != length:
            raise CorruptMatrix("short read of tile row")
        return view

    def read_tile_row(self, tile_row_id: int) -> list[DecodedTile]:
        """Decode a tile row; returns its non-empty tiles in column order."""
        mv = self.read_tile_row_raw(tile_row_id)
        return self._decode_tile_row(mv)

    def _decode_tile_row(self, mv) -> list[DecodedTile]:
        tiles = []
        off = 0
        for tile_col in range(self.n_tile_cols):
            if off + _TILE_HEADER.size > len(mv):
                raise CorruptMatrix("tile row shorter than expected")
            total, n_words, n_pairs = _TILE_HEADER.unpack_from(mv, off)
            size = _TILE_HEADER.size + 2 * n_words + 4 * n_pairs
            if self.value_kind == VALUE_FLOAT64:
                size += 8 * total
            if off + size > len(mv):
                raise CorruptMatrix("tile extends past its tile row")
            if total:
                rows, cols, vals = _decode_tile_arrays(mv[off : off + size], self.tile_dims)
                if vals is None:
                    vals = np.ones(len(rows))
                tiles.append(DecodedTile(tile_col, rows, cols, vals))
            off += size
        if off != len(mv):
            raise CorruptMatrix("trailing bytes after last tile in tile row")
        return tiles

    def iter_triplets(self):
        """Yield (row, col, value) arrays per tile row, global indices."""
        t = self.tile_dims.tile_rows
        for tr in range(self.n_tile_rows):
            for tile in self.read_tile_row(tr):
                yield tile.rows + tr * t, tile.cols + tile.tile_col * t, tile.values

    def triplets(self):
        """All entries as (rows, cols, values) arrays sorted by (row, col)."""
        parts = list(self.iter_triplets())
        if not parts:
            z = np.empty(0, np.int64)
            return z, z.copy(), np.empty(0, np.float64)
        rows = np.concatenate([p[0] for p in parts])
        cols = np.concatenate([p[1] for p in parts])
        vals = np.concatenate([p[2] for p in parts])
        order = np.lexsort((cols, rows))
        return rows[order], cols[order], vals[order]

    def nnz(self) -> int:
        count = 0
        for tr in range(self.n_tile_rows):
            mv = self.read_tile_row_raw(tr)
            off = 0
            for _ in range(self.n_tile_cols):
                total, n_words, n_pairs = _TILE_HEADER.unpack_from(mv, off)
                count += total
                off += _TILE_HEADER.size + 2 * n_words + 4 * n_pairs
                if self.value_kind == VALUE_FLOAT64:
                    off += 8 * total
            if off != len(mv):
                raise CorruptMatrix("trailing bytes after last tile in tile row")
        return count

    def close(self):
        self.file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def build_matrix(
    edges,
    n: int,
    out_path,
    *,
    symmetrize: bool = False,
    tile_dims: TileDims = DEFAULT_TILE,
    value_kind: str = VALUE_BINARY,
) -> SparseTileMatrix:
    """Build a tiled sparse matrix file from an edge stream.

    ``edges`` is an (E, 2) / (E, 3) array or an iterable of (src, dst[, w])
    tuples.  Duplicate edges are deduplicated for binary matrices and summed
    for float64 ones; ``symmetrize`` mirrors every edge before that step.
    """
    if value_kind not in _VALUE_CODES:
        raise ValueError(f"unknown value kind {value_kind!r}")
    src, dst, w = _edge_arrays(edges)
    if len(src) and (src.min() < 0 or dst.min() < 0 or src.max() >= n or dst.max() >= n):
        raise ValueError("vertex id out of range")
    if value_kind == VALUE_FLOAT64 and w is None:
        w = np.ones(len(src))
    if value_kind == VALUE_BINARY:
        w = None

    if symmetrize:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
        if w is not None:
            w = np.concatenate([w, w])

    t = tile_dims.tile_rows
    order = np.lexsort((dst % t, src % t, dst // t, src // t))
    src, dst = src[order], dst[order]
    if w is not None:
        w = w[order]

    if len(src):
        keep = np.empty(len(src), dtype=bool)
        keep[0] = True
        keep[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
        if w is not None:
            starts = np.flatnonzero(keep)
            w = np.add.reduceat(w, starts)
        src, dst = src[keep], dst[keep]

    n_tile_rows = -(-n // t) if n else 0
    n_tile_cols = n_tile_rows

    tr_ids = src // t
    tc_ids = dst // t
    row_starts = np.searchsorted(tr_ids, np.arange(n_tile_rows))
    row_ends = np.searchsorted(tr_ids, np.arange(n_tile_rows), side="right")

    index = np.zeros((n_tile_rows, 2), dtype=np.uint64)
    data_parts: list[bytes] = []
    data_off = 0
    for tr in range(n_tile_rows):
        lo, hi = int(row_starts[tr]), int(row_ends[tr])
        tc_slice = tc_ids[lo:hi]
        tile_bytes = []
        for tc in range(n_tile_cols):
            a = lo + int(np.searchsorted(tc_slice, tc))
            b = lo + int(np.searchsorted(tc_slice, tc, side="right"))
            vals = w[a:b] if w is not None else None
            tile_bytes.append(
                _encode_tile_arrays(src[a:b] % t, dst[a:b] % t, vals, tile_dims)
            )
        blob = b"".join(tile_bytes)
        index[tr] = (data_off, len(blob))
        data_parts.append(blob)
        data_off += len(blob)

    header = _HEADER.pack(MAGIC, VERSION, n, n, t, _VALUE_CODES[value_kind])
    with CountedFile(out_path, "w+") as f:
        f.pwrite(0, header)
        f.pwrite(_HEADER.size, index.astype("<u8").tobytes())
        f.pwrite(_HEADER.size + index.nbytes, b"".join(data_parts))
    return SparseTileMatrix(out_path)


def _edge_arrays(edges):
    if isinstance(edges, tuple) and len(edges) in (2, 3):
        src = np.asarray(edges[0], dtype=np.int64)
        dst = np.asarray(edges[1], dtype=np.int64)
        w = np.asarray(edges[2], dtype=np.float64) if len(edges) == 3 else None
        return src, dst, w
    edges = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges)
    if edges.size == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64), None
    if edges.ndim != 2 or edges.shape[1] not in (2, 3):
        raise ValueError("edges must be (E, 2) or (E, 3)")
    src = edges[:, 0].astype(np.int64)
    dst = edges[:, 1].astype(np.int64)
    w = edges[:, 2].astype(np.float64) if edges.shape[1] == 3 else None
    return src, dst, w


class EdgeParseError(FormatError):
    """Raised with the 1-based line number of the offending input line."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def read_edges_text(path):
    """Parse a whitespace-separated ``src dst [weight]`` edge list.

    Blank lines and lines starting with ``#`` are skipped.  Returns
    (src, dst, weights-or-None); weights are returned if any line carries a
    third column (missing weights default to 1.0).
    """
    srcs: list[int] = []
    dsts: list[int] = []
    weights: list[float] = []
    any_weight = False
    with open(path, "rt") as f:
        for line_no, line in enumerate(f, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) not in (2, 3):
                raise EdgeParseError(line_no, f"expected 2 or 3 fields, got {len(parts)}")
            try:
                s, d = int(parts[0]), int(parts[1])
            except ValueError:
                raise EdgeParseError(line_no, f"bad vertex id in {text!r}") from None
            wt = 1.0
            if len(parts) == 3:
                try:
                    wt = float(parts[2])
                except ValueError:
                    raise EdgeParseError(line_no, f"bad weight in {text!r}") from None
                any_weight = True
            srcs.append(s)
            dsts.append(d)
            weights.append(wt)
    src = np.asarray(srcs, dtype=np.int64)
    dst = np.asarray(dsts, dtype=np.int64)
    return src, dst, (np.asarray(weights) if any_weight else None)


def read_edges_binary(path):
    """Parse raw little-endian u64 (src, dst) pairs."""
    raw = np.fromfile(path, dtype="<u8")
    if len(raw) % 2:
        raise FormatError("binary edge file has an odd number of u64 words")
    pairs = raw.reshape(-1, 2).astype(np.int64)
    return pairs[:, 0], pairs[:, 1], None
