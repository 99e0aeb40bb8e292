"""Block-tridiagonal banded solve against a dense oracle."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rslv_lab.banded import (block_tridiag_matvec, block_tridiag_to_banded,
                             solve_block_tridiag)


def dense_from_blocks(diag, lower, upper):
    m, d, _ = diag.shape
    n = m * d
    a = np.zeros((n, n))
    for j in range(m):
        a[j * d:(j + 1) * d, j * d:(j + 1) * d] = diag[j]
    for j in range(m - 1):
        a[(j + 1) * d:(j + 2) * d, j * d:(j + 1) * d] = lower[j]
        a[j * d:(j + 1) * d, (j + 1) * d:(j + 2) * d] = upper[j]
    return a


def random_system(rng, m, d):
    diag = rng.normal(size=(m, d, d))
    diag += 4.0 * d * np.eye(d)          # diagonally dominant, hence solvable
    lower = rng.normal(size=(m - 1, d, d))
    upper = rng.normal(size=(m - 1, d, d))
    rhs = rng.normal(size=(m, d))
    return diag, lower, upper, rhs


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(1, 4), st.integers(0, 10_000))
def test_solve_matches_dense(m, d, seed):
    rng = np.random.default_rng(seed)
    diag, lower, upper, rhs = random_system(rng, m, d)
    x = solve_block_tridiag(diag, lower, upper, rhs)
    ref = np.linalg.solve(dense_from_blocks(diag, lower, upper), rhs.reshape(-1))
    np.testing.assert_allclose(x.reshape(-1), ref, rtol=1e-9, atol=1e-9)


def test_matvec_matches_dense():
    rng = np.random.default_rng(5)
    diag, lower, upper, rhs = random_system(rng, 7, 3)
    out = block_tridiag_matvec(diag, lower, upper, rhs)
    ref = dense_from_blocks(diag, lower, upper) @ rhs.reshape(-1)
    np.testing.assert_allclose(out.reshape(-1), ref, rtol=1e-12, atol=1e-12)


def test_banded_layout():
    rng = np.random.default_rng(6)
    diag, lower, upper, _ = random_system(rng, 5, 2)
    ab, (kl, ku) = block_tridiag_to_banded(diag, lower, upper)
    dense = dense_from_blocks(diag, lower, upper)
    n = dense.shape[0]
    for i in range(n):
        for j in range(n):
            if abs(i - j) <= ku:
                assert ab[ku + i - j, j] == pytest.approx(dense[i, j])
            else:
                assert dense[i, j] == 0.0
