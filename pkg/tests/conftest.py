import numpy as np
import pytest

from flexsched.instance import GenParams, fig2_instance, generate_instance

# generator bounds small enough for exhaustive search in oracle tests
TINY_GEN = GenParams(j_min=2, j_max=3, m_min=2, m_max=3, o_min=1, o_max=3,
                     op_max=2, p_bar=9, d=0.3, seed=0)

DESK_GEN = GenParams(j_min=3, j_max=5, m_min=2, m_max=3, o_min=2, o_max=4,
                     op_max=3, p_bar=10, d=0.2, seed=0)


@pytest.fixture
def fig2():
    return fig2_instance()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tiny_instances(count: int, seed: int, max_ops: int = 8):
    """Instances small enough for the exhaustive enumerator."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        inst = generate_instance(TINY_GEN, rng, id=f"tiny_{len(out):03d}")
        if inst.num_operations <= max_ops:
            out.append(inst)
    return out


def desk_instances(count: int, seed: int):
    rng = np.random.default_rng(seed)
    return [generate_instance(DESK_GEN, rng, id=f"desk_{i:03d}")
            for i in range(count)]
