import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).parent))

from lesionkit import Geometry, Volume


def make_volume(arr, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0), dtype=np.float32):
    """Volume from an (nx, ny, nz) array-like indexed [x, y, z]."""
    arr = np.asarray(arr, dtype=dtype)
    g = Geometry(arr.shape, spacing, origin)
    return Volume.from_array(arr, g)


def random_prob_volume(rng, dims, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    data = rng.random(int(np.prod(dims)), dtype=np.float32)
    return Volume(Geometry(dims, spacing, origin), data)
