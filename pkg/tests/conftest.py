import numpy as np
import pytest

from tgne.events import EventList
from tgne.simulate import default_sbm_spec, sbm_generate


@pytest.fixture(scope="session")
def sbm_sample():
    """Default 60-node, 3-segment block-model fixture."""
    return sbm_generate(default_sbm_spec(seed=1))


@pytest.fixture(scope="session")
def ten_node_events():
    """Small deterministic history on 10 nodes for sampling tests."""
    return random_events(n=10, m=40, seed=7)


def random_events(n: int, m: int, seed: int, directed: bool = False) -> EventList:
    """Uniform random event history (helper shared across test modules)."""
    rng = np.random.default_rng(seed)
    src = rng.integers(0, n, size=3 * m)
    dst = rng.integers(0, n, size=3 * m)
    keep = src != dst
    src, dst = src[keep][:m], dst[keep][:m]
    if not directed:
        src, dst = np.minimum(src, dst), np.maximum(src, dst)
    t = np.sort(rng.random(src.size))
    return EventList(src=src, dst=dst, time=t, n=n, directed=directed)
