import numpy as np
import pytest

from aoed.fem import assemble
from aoed.mesh import build_structured_mesh
from aoed.whitening import WhiteningOperator


@pytest.fixture(scope="module")
def fem_small():
    return assemble(build_structured_mesh(8, holes=()))


def _isomorphism_error(fem, whit, seed, trials=10):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        x = rng.standard_normal(fem.n)
        y = rng.standard_normal(fem.n)
        lhs = fem.inner(whit.apply(x), whit.apply(y))
        rhs = x @ y
        worst = max(worst, abs(lhs - rhs) / (abs(rhs) + 1e-300))
    return worst


def test_dense_mode_isomorphism(fem_small):
    whit = WhiteningOperator(fem_small, mode="dense")
    assert _isomorphism_error(fem_small, whit, 0) < 1e-10


def _operator_defect(fem, whit):
    # ||L^T M L - I||_2 bounds the inner-product mismatch for every pair
    mat = whit.apply(np.eye(fem.n))
    return np.linalg.norm(mat.T @ (fem.M @ mat) - np.eye(fem.n), 2)


def test_iterative_mode_isomorphism(fem_small):
    whit = WhiteningOperator(fem_small, mode="iterative", degree=10)
    defect = _operator_defect(fem_small, whit)
    assert defect < 1e-5
    # the polynomial route is genuinely approximate, not dense in disguise
    assert defect > 1e-8


def test_iterative_mode_mass_product_budget(fem_small):
    whit = WhiteningOperator(fem_small, mode="iterative", degree=10)
    real_s = whit._S
    count = {"n": 0}

    class CountingMatrix:
        def __matmul__(self, other):
            count["n"] += 1
            return real_s @ other

    whit._S = CountingMatrix()
    whit.apply(np.ones(fem_small.n))
    assert count["n"] == 10


def test_transpose_is_euclidean_adjoint(fem_small):
    whit = WhiteningOperator(fem_small, mode="dense")
    rng = np.random.default_rng(2)
    x = rng.standard_normal(fem_small.n)
    z = rng.standard_normal(fem_small.n)
    assert np.isclose(whit.apply(x) @ z, x @ whit.apply_transpose(z), rtol=1e-12)


def test_auto_mode_selects_dense_below_cap(fem_small):
    small_cap = WhiteningOperator(fem_small, mode="auto", dense_cap=10)
    big_cap = WhiteningOperator(fem_small, mode="auto", dense_cap=10_000)
    # above the cap the operator falls back to the polynomial route, whose
    # isomorphism error is approximate rather than machine precision
    assert _isomorphism_error(fem_small, big_cap, 3) < 1e-10
    err_iter = _operator_defect(fem_small, small_cap)
    assert 1e-8 < err_iter < 1e-5


def test_whitened_gaussian_reproducible_and_shaped(fem_small):
    whit = WhiteningOperator(fem_small, mode="dense")
    a = whit.whitened_gaussian(seed=5, count=4)
    b = whit.whitened_gaussian(seed=5, count=4)
    c = whit.whitened_gaussian(seed=6, count=4)
    assert a.shape == (fem_small.n, 4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_whitened_gaussian_has_identity_mass_covariance(fem_small):
    # z = L g with g standard normal gives E<z, e_i>_M <z, e_j>_M = delta_ij
    whit = WhiteningOperator(fem_small, mode="dense")
    z = whit.whitened_gaussian(seed=7, count=6000)
    mz = fem_small.M @ z
    cov = (mz @ mz.T) / z.shape[1]
    # L^T M L = I implies Cov(z) = M^-1 and hence Cov(M z) = M; entrywise
    # Monte Carlo error at 6000 draws is a few percent of the max entry
    dense_m = fem_small.M.toarray()
    err = np.abs(cov - dense_m).max()
    assert err < 0.1 * np.abs(dense_m).max()
