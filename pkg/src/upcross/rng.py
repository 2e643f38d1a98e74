"""Per-path random streams.

Path ``i`` of an experiment draws from its own generator seeded by
``SeedSequence((master_seed, stream, i))``, so its randomness does not depend
on which worker runs it or in what order.  PCG64DXSM is used for speed; the
per-path keying, not the bit generator, is what makes runs reproducible.
"""

import numpy as np


def path_stream(master_seed: int, index: int, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, int(stream), int(index)])
    return np.random.Generator(np.random.PCG64DXSM(ss))
