"""EMB1 embedding files and their msg-id companions.

Layout: magic bytes "EMB1", unsigned 32-bit little-endian row count and
dimension, then row-major 32-bit little-endian floats. Row order is given
by a companion newline-delimited msg-id manifest (<path>.ids next to the
.emb file by convention).
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .gat import EmbeddingMatrix

MAGIC = b"EMB1"


class EmbFormatError(ValueError):
    pass


def encode_embeddings(matrix: EmbeddingMatrix) -> bytes:
    values = np.ascontiguousarray(matrix.values, dtype="<f4")
    n, d = values.shape
    return MAGIC + struct.pack("<II", n, d) + values.tobytes()


def decode_embeddings(blob: bytes, msg_ids) -> EmbeddingMatrix:
    if blob[:4] != MAGIC:
        raise EmbFormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}")
    if len(blob) < 12:
        raise EmbFormatError("truncated header")
    n, d = struct.unpack("<II", blob[4:12])
    expected = 12 + 4 * n * d
    if len(blob) != expected:
        raise EmbFormatError(f"expected {expected} bytes for {n}x{d}, got {len(blob)}")
    values = np.frombuffer(blob, dtype="<f4", offset=12).reshape(n, d).copy()
    msg_ids = list(msg_ids)
    if len(msg_ids) != n:
        raise EmbFormatError(f"{len(msg_ids)} msg_ids for {n} rows")
    return EmbeddingMatrix(values=values, msg_ids=msg_ids)


def ids_path(emb_path) -> Path:
    return Path(str(emb_path) + ".ids")


def write_embeddings(emb_path, matrix: EmbeddingMatrix):
    emb_path = Path(emb_path)
    emb_path.write_bytes(encode_embeddings(matrix))
    ids_path(emb_path).write_text(
        "\n".join(matrix.msg_ids) + ("\n" if matrix.msg_ids else ""), encoding="utf-8"
    )


def read_embeddings(emb_path) -> EmbeddingMatrix:
    emb_path = Path(emb_path)
    blob = emb_path.read_bytes()
    text = ids_path(emb_path).read_text(encoding="utf-8")
    msg_ids = [line for line in text.splitlines() if line]
    return decode_embeddings(blob, msg_ids)


def align_to_nodes(matrix: EmbeddingMatrix, msg_ids) -> EmbeddingMatrix:
    """Select and order rows to match a graph's node list."""
    index = {m: i for i, m in enumerate(matrix.msg_ids)}
    missing = [m for m in msg_ids if m not in index]
    if missing:
        raise EmbFormatError(f"{len(missing)} graph nodes missing embeddings "
                             f"(first: {missing[0]!r})")
    rows = np.array([index[m] for m in msg_ids], dtype=np.int64)
    return EmbeddingMatrix(values=matrix.values[rows], msg_ids=list(msg_ids))
