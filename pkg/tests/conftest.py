import numpy as np
import pytest


def random_projection_instance(rng, n_max=4, q_max=6, allow_duplicates=True):
    """Random QP projection instance with a guaranteed-nonempty feasible set.

    The bound vector is built from a strictly interior point z0, which is
    also returned so tests can sample feasible points by interpolation.
    """
    n = int(rng.integers(1, n_max + 1))
    q = int(rng.integers(0, q_max + 1))
    z0 = 2.0 * rng.normal(size=n)
    A = rng.normal(size=(q, n))
    b = A @ z0 + np.abs(rng.normal(size=q)) + 0.05
    if allow_duplicates and q >= 2 and rng.random() < 0.25:
        i, j = rng.choice(q, size=2, replace=False)
        scale = float(rng.uniform(0.5, 2.0))
        A[j] = scale * A[i]
        b[j] = scale * b[i] + float(np.abs(rng.normal())) * 0.1
    V = np.linalg.qr(rng.normal(size=(n, n)))[0]
    W = V @ np.diag(10.0 ** rng.uniform(-2.0, 2.0, size=n)) @ V.T
    W = 0.5 * (W + W.T)
    e = 2.0 * rng.normal(size=n)
    return e, W, A, b, z0


def objective(z, e, W):
    diff = np.asarray(z) - e
    return float(diff @ W @ diff)


def feasible_sample(rng, z0, A, b):
    """Random feasible point: walk from the interior anchor toward a random
    target, stopping at 95% of the largest feasible step."""
    y = z0 + 3.0 * rng.normal(size=z0.size)
    if A.shape[0] == 0:
        return y
    step = A @ (y - z0)
    slack = b - A @ z0
    with np.errstate(divide="ignore"):
        ratios = np.where(step > 0, slack / np.where(step > 0, step, 1.0), np.inf)
    t = min(1.0, 0.95 * float(ratios.min()))
    return z0 + t * (y - z0)


@pytest.fixture
def rng():
    return np.random.default_rng(20260819)
