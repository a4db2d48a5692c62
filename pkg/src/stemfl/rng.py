"""Counter-based random streams.

Every random draw in a run is addressed by ``(seed, role, worker, t)`` and
served by a Philox generator whose counter encodes that address. The
minibatches of all workers at time ``t`` come from one address as an index
matrix whose row ``k`` belongs to worker ``k``, so no draw depends on how
the workers are scheduled across threads.
"""

import numpy as np

ROLE_INIT = 1
ROLE_STEP = 2
ROLE_OUTPUT = 3
ROLE_PROBE = 4

_MASK64 = (1 << 64) - 1


def stream(seed: int, role: int, worker: int = 0, t: int = 0) -> np.random.Generator:
    """Return the generator for one address.

    The address sits in the three high counter words; Philox only advances
    the low word while drawing, so distinct addresses never overlap.
    """
    key = int(seed) & _MASK64
    counter = [0, int(role) & _MASK64, int(worker) & _MASK64, int(t) & _MASK64]
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def draw_batches(seed: int, role: int, t: int, n, size: int) -> np.ndarray:
    """Index matrix of shape ``(len(n), size)``.

    Row ``k`` holds i.i.d. uniform draws with replacement from ``[0, n[k])``.
    """
    n = np.asarray(n, dtype=np.int64).reshape(-1)
    high = int(n[0]) if np.all(n == n[0]) else n[:, None]
    return stream(seed, role, 0, t).integers(0, high, size=(n.size, size))
