"""Per-path counter-based random streams.

Each path owns a Philox stream keyed by ``(seed, path_index)``, so results do
not depend on batching, worker count or completion order.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray

_MASK64 = (1 << 64) - 1


def path_generator(seed: int, path_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & _MASK64, path_index & _MASK64]))


def brownian_increments(seed: int, paths, n_steps: int, d: int, dt: float,
                        substeps: int = 1) -> NDArray[np.float64]:
    """Brownian increments of shape (n_paths, n_steps, d).

    Each path draws ``n_steps * substeps`` standard normals per dimension and
    sums them in groups of ``substeps``. A run with ``(n, substeps=2)`` and a
    run with ``(2n, substeps=1)`` therefore see the same Brownian path.
    """
    paths = np.atleast_1d(np.asarray(paths, dtype=np.int64))
    out = np.empty((paths.size, n_steps, d))
    scale = np.sqrt(dt / substeps)
    for k, p in enumerate(paths):
        z = path_generator(seed, int(p)).standard_normal((n_steps * substeps, d))
        if substeps > 1:
            z = z.reshape(n_steps, substeps, d).sum(axis=1)
        out[k] = z * scale
    return out
