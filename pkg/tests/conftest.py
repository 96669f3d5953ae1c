import numpy as np
import pytest

from mcbounds.chains import ProbitData


def random_probit(rng, n, p, prior="flat"):
    """Small random probit instance with a nonsingular Sigma."""
    if prior == "flat" and n < p:
        raise ValueError("a flat prior needs n >= p")
    while True:
        X = rng.standard_normal((n, p))
        y = (rng.random(n) < 0.5).astype(int)
        if prior == "flat":
            Q = None
            if np.linalg.matrix_rank(X) < p:
                continue
        else:
            Q = np.diag(rng.uniform(0.2, 3.0, p))
        v = rng.standard_normal(p) if prior != "flat" else None
        return ProbitData.make(X, y, Q, v)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
