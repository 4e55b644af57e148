"""Deterministic random streams.

All randomness in the package flows through here. Child seeds are derived
from a master seed and a path of names/indices (SHA-256 based), and variates
come from a counter-based Philox stream so that a given (seed, draw sequence)
is bit-reproducible across platforms and runs. Normals use the inverse-CDF
transform of the uniform stream rather than a rejection method.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import ndtri

_U64 = np.uint64


def derive_seed(master: int, *path) -> int:
    """Derive a 64-bit child seed from a master seed and a name path.

    Distinct paths give independent streams; the same path always gives the
    same child. Path elements are stringified, so ints and short labels mix.
    """
    h = hashlib.sha256()
    h.update(str(int(master)).encode())
    for part in path:
        h.update(b"\x1f")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:8], "little")


class Stream:
    """Seeded uniform stream with the derived variates the package needs."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=_U64(self.seed)))

    def uniforms(self, n: int) -> np.ndarray:
        return self._gen.random(int(n))

    def normals(self, n: int) -> np.ndarray:
        # ndtri(0) would be -inf; the clip is a 2^-53 corner case.
        u = np.clip(self.uniforms(n), 2.5e-17, 1.0 - 1e-16)
        return ndtri(u)

    def permutation(self, n: int) -> np.ndarray:
        # argsort of iid uniforms: reproducible without Generator.permutation
        return np.argsort(self.uniforms(n), kind="stable")

    def choice_no_replace(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), in ascending order."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} from {n} without replacement")
        return np.sort(self.permutation(n)[:k])

    def integers(self, n: int, high: int) -> np.ndarray:
        """n indices uniform on range(high), with replacement."""
        idx = (self.uniforms(n) * high).astype(np.int64)
        return np.minimum(idx, high - 1)

    def bernoulli(self, p: np.ndarray | float, n: int | None = None) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        size = p.size if n is None else int(n)
        return self.uniforms(size) < np.broadcast_to(p, (size,))


def stream(master: int, *path) -> Stream:
    """Stream seeded by ``derive_seed(master, *path)``."""
    return Stream(derive_seed(master, *path))
