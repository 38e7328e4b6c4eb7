import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dense_ntp.targets import NONE, TargetSet

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_targets(rng, grid_w=None, grid_h=None, vocab=None, p_valid=0.7, p_pos=0.2):
    """A random TargetSet honoring P_i within M_i and majority in P_i."""
    gw = grid_w or int(rng.integers(1, 4))
    gh = grid_h or int(rng.integers(1, 3))
    V = vocab or int(rng.integers(2, 16))
    L = gw * gh
    validity = rng.random((L, V)) < p_valid
    positives = validity & (rng.random((L, V)) < p_pos)
    majority = np.full(L, NONE, dtype=np.int64)
    for i in range(L):
        ids = np.flatnonzero(positives[i])
        if len(ids):
            majority[i] = rng.choice(ids)
    t = TargetSet(gw, gh, positives, validity, majority)
    t.check()
    return t


def random_logits(rng, targets, scale=3.0):
    return scale * rng.standard_normal((targets.n_tokens, targets.vocab_size))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria append "PASS name: detail" / "FAIL ..." lines here
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
