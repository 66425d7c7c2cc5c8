"""Plain-text embedding tables: first line ``n d``, then ``key v1 ... vd`` per row.

Values are written with 17 significant digits so a save/load cycle is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class EmbeddingTable:
    keys: list[str]
    vectors: np.ndarray

    def __post_init__(self):
        self.keys = [str(k) for k in self.keys]
        self.vectors = np.asarray(self.vectors, dtype=float)
        if self.vectors.ndim != 2 or len(self.keys) != len(self.vectors):
            raise ValueError("keys and vectors disagree")
        if any(not k or any(c.isspace() for c in k) for k in self.keys):
            raise ValueError("embedding keys must be non-empty and whitespace-free")

    def __len__(self):
        return len(self.keys)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def index(self) -> dict[str, int]:
        return {k: i for i, k in enumerate(self.keys)}

    def replace_vectors(self, vectors) -> "EmbeddingTable":
        vectors = np.asarray(vectors, dtype=float)
        if vectors.shape[0] != len(self.keys):
            raise ValueError("row count changed")
        return EmbeddingTable(list(self.keys), vectors)


def save_embeddings(table: EmbeddingTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{len(table)} {table.dim}\n")
        for key, row in zip(table.keys, table.vectors):
            fh.write(key + " " + " ".join(format(float(v), ".17g") for v in row) + "\n")


def load_embeddings(path) -> EmbeddingTable:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: header must be 'n d'")
        n, d = int(header[0]), int(header[1])
        keys, rows = [], []
        for lineno, line in enumerate(fh, 2):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != d + 1:
                raise ValueError(f"{path}:{lineno}: expected {d + 1} fields, got {len(parts)}")
            keys.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    if len(keys) != n:
        raise ValueError(f"{path}: header says {n} rows, found {len(keys)}")
    return EmbeddingTable(keys, np.array(rows, dtype=float).reshape(n, d))
