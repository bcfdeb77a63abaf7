"""Phase spaces, product towers, and diagonal index matchings.

The base space is the plane R^{2d} or the torus R^{2d}/Z^{2d} with the
standard symplectic form.  Level n of the tower is the 2^n-fold product
carrying the alternating sign vector, and the two Lagrangian boundary
diagonals are stored purely combinatorially, as perfect matchings on the
copy indices.  All indices are 0-based in code; JSON uses 1-based pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_LEVEL = 12
DIAG_TOL = 1e-9


@dataclass(frozen=True)
class PhaseSpace:
    """Base phase space, coordinates ordered (x_1..x_d, y_1..y_d)."""

    half_dim: int
    topology: str = "torus"

    def __post_init__(self):
        if self.half_dim < 1:
            raise ValueError("half_dim must be at least 1")
        if self.topology not in ("plane", "torus"):
            raise ValueError(f"unknown topology {self.topology!r}")

    @property
    def dim(self) -> int:
        return 2 * self.half_dim

    def normalize(self, coords):
        """Canonical representative; torus coordinates land in [0, 1)."""
        coords = np.asarray(coords, dtype=float)
        if self.topology == "torus":
            out = np.mod(coords, 1.0)
            # mod of a tiny negative rounds to exactly 1.0
            return np.where(out == 1.0, 0.0, out)
        return coords

    def wrapped_difference(self, a, b):
        """Representative of a - b, componentwise in (-1/2, 1/2] on the torus."""
        d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
        if self.topology == "torus":
            return d - np.ceil(d - 0.5)
        return d


def wrapped_difference(space: PhaseSpace, a, b):
    return space.wrapped_difference(a, b)


@dataclass(frozen=True)
class LevelStructure:
    """Product level M^{2^n} with sign vector and boundary matchings.

    matching1 pairs the two halves (the level diagonal); matching0 follows
    the start-diagonal recursion.  Matched pairs always carry opposite
    signs, and the union of the two matchings is a single cycle, which is
    what forces points on both diagonals onto the total diagonal.
    """

    space: PhaseSpace
    level: int
    sign_vector: tuple[int, ...]
    matching0: tuple[tuple[int, int], ...]
    matching1: tuple[tuple[int, int], ...]

    @property
    def copies(self) -> int:
        return 2**self.level

    @property
    def signs(self) -> np.ndarray:
        return np.array(self.sign_vector, dtype=float)

    def matching(self, which) -> tuple[tuple[int, int], ...]:
        if which in (0, "0"):
            return self.matching0
        if which in (1, "1"):
            return self.matching1
        raise ValueError(f"no matching named {which!r}")

    def to_json(self) -> dict:
        return {
            "level": self.level,
            "signs": list(self.sign_vector),
            "matching0": [[a + 1, b + 1] for a, b in self.matching0],
            "matching1": [[a + 1, b + 1] for a, b in self.matching1],
        }

    @staticmethod
    def from_json(space: PhaseSpace, data: dict) -> "LevelStructure":
        return LevelStructure(
            space=space,
            level=data["level"],
            sign_vector=tuple(data["signs"]),
            matching0=tuple((a - 1, b - 1) for a, b in data["matching0"]),
            matching1=tuple((a - 1, b - 1) for a, b in data["matching1"]),
        )


@lru_cache(maxsize=None)
def build_level(space: PhaseSpace, n: int) -> LevelStructure:
    """Builds the level-n structure; n = 0 is the base space itself."""
    if n < 0:
        raise ValueError("level must be nonnegative")
    if n > MAX_LEVEL:
        raise ValueError(f"level {n} exceeds the resource guard ({MAX_LEVEL})")
    signs = (1,)
    m0: tuple[tuple[int, int], ...] = ()
    m1: tuple[tuple[int, int], ...] = ()
    for k in range(1, n + 1):
        half = 2 ** (k - 1)
        new_m1 = tuple((j, j + half) for j in range(half))
        if k == 1:
            new_m0 = ((0, 1),)
        else:
            new_m0 = m0 + tuple((a + half, b + half) for a, b in m1)
        signs = signs + tuple(-s for s in signs)
        m0, m1 = new_m0, new_m1
    return LevelStructure(space, n, signs, m0, m1)


def on_diagonal(level: LevelStructure, which, p, tol: float = DIAG_TOL) -> bool:
    """True iff every matched pair of copies coincides up to tol (sup norm).

    which is 0, 1, or "tot"; "tot" compares all copies pairwise.
    """
    p = np.asarray(p, dtype=float)
    if p.shape != (level.copies, level.space.dim):
        raise ValueError(f"expected point of shape {(level.copies, level.space.dim)}")
    if which in ("tot", "total"):
        pairs = [(0, j) for j in range(1, level.copies)]
    else:
        pairs = list(level.matching(which))
    for a, b in pairs:
        if np.max(np.abs(level.space.wrapped_difference(p[a], p[b]))) > tol:
            return False
    return True


def embed_diagonal_params(level: LevelStructure, which, params) -> np.ndarray:
    """Places one base point per matched pair onto both copies of the pair.

    params has shape (2^{n-1}, dim), ordered like the matching (which is
    sorted by smaller pair index); supports leading batch axes.
    """
    if level.level < 1:
        raise ValueError("diagonal parametrization needs level >= 1")
    params = np.asarray(params, dtype=float)
    pairs = level.matching(which)
    if params.shape[-2:] != (len(pairs), level.space.dim):
        raise ValueError(f"expected params of shape (..., {len(pairs)}, {level.space.dim})")
    out = np.empty(params.shape[:-2] + (level.copies, level.space.dim))
    for i, (a, b) in enumerate(pairs):
        out[..., a, :] = params[..., i, :]
        out[..., b, :] = params[..., i, :]
    return out


def reduce_diagonal_params(level: LevelStructure, which, p, tol: float = DIAG_TOL) -> np.ndarray:
    """Inverse of embed_diagonal_params; rejects points off the diagonal."""
    p = np.asarray(p, dtype=float)
    if not on_diagonal(level, which, p, tol=tol):
        raise ValueError(f"point is not on diagonal {which} at tol {tol}")
    pairs = level.matching(which)
    return np.stack([p[a] for a, _ in pairs])


def union_graph_is_single_cycle(level: LevelStructure) -> bool:
    """Checks that matching0 and matching1 together form one 2^n-cycle."""
    if level.level < 1:
        return False
    copies = level.copies
    adj: list[list[int]] = [[] for _ in range(copies)]
    for a, b in level.matching0 + level.matching1:
        adj[a].append(b)
        adj[b].append(a)
    if any(len(nb) != 2 for nb in adj):
        return False
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == copies
