import math

import numpy as np
import pytest

from lyapco._backend import COMPILED_ACTIVE, kernels_for, pure_kernels


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def backend_pair():
    """(pure, compiled) kernel modules; compiled is None when unavailable."""
    pure = pure_kernels()
    compiled = kernels_for(2) if COMPILED_ACTIVE else None
    return pure, compiled


def spearman(a, b):
    ra = np.argsort(np.argsort(a)).astype(float)
    rb = np.argsort(np.argsort(b)).astype(float)
    ra -= ra.mean()
    rb -= rb.mean()
    return float(ra @ rb / np.sqrt((ra @ ra) * (rb @ rb)))


def benettin_mgs_oracle(J):
    """Independent propagated estimator: modified Gram-Schmidt recursion."""
    n, d, _ = J.shape
    q = np.eye(d)
    sums = np.zeros(d)
    for i in range(n):
        w = J[i] @ q
        for j in range(d):
            for k in range(j):
                w[:, j] -= (w[:, k] @ w[:, j]) * w[:, k]
            norm = np.linalg.norm(w[:, j])
            sums[j] += math.log(norm)
            w[:, j] /= norm
        q = w
    return sums / n
