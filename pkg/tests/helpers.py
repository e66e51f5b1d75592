"""Random instance generators shared by tests."""

import numpy as np


def random_channel(rng, Mr=2, Ms=2, Mp=2):
    from sdmc.channel import SdMcChannel

    P = rng.random((Mr, Mr, Ms, Mp)) + 0.05
    P /= P.sum(axis=0, keepdims=True)
    return SdMcChannel(np.arange(Mr, dtype=float), P)


def random_simplex(rng, n, k=None):
    return rng.dirichlet(np.ones(n), size=k)
