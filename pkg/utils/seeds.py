import zlib

import numpy as np


def stream_seed(seed: int, stream: str, index: int = 0) -> int:
    """
    64-bit seed for one named random stream.

    SeedSequence((seed, crc32(stream), index)) keeps streams such as
    "backbone", "inputs" and "shuffle" independent for the same base seed.
    """
    tag = zlib.crc32(stream.encode("utf-8"))
    state = np.random.SeedSequence((int(seed), tag, int(index))).generate_state(1, dtype=np.uint64)
    return int(state[0])
