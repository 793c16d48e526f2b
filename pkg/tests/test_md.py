import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from lloqkd.core import DomainError
from lloqkd.reconciliation.md import (bits_to_points, conj, left_matrix, llr_capacity, md_apply, md_demap,
                                      md_map, mul)

dims = st.sampled_from([1, 2, 4, 8])


def biawgn_capacity(snr):
    """Binary-input AWGN capacity by quadrature, used as an independent oracle."""
    s = 1 / np.sqrt(snr)
    f = lambda y: (np.exp(-(y - 1) ** 2 / (2 * s * s)) / np.sqrt(2 * np.pi * s * s)
                   * np.logaddexp(0, -2 * y / (s * s)) / np.log(2))
    return 1 - integrate.quad(f, 1 - 14 * s, 1 + 14 * s, limit=200)[0]


@settings(max_examples=40, deadline=None)
@given(d=dims, seed=st.integers(0, 2**32 - 1))
def test_product_is_normed(d, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(2, 16, d))
    lhs = np.linalg.norm(mul(a, b), axis=-1)
    assert np.allclose(lhs, np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1), rtol=1e-12, atol=0)


@settings(max_examples=40, deadline=None)
@given(d=dims, seed=st.integers(0, 2**32 - 1))
def test_map_is_isometry_and_hits_target(d, seed):
    rng = np.random.default_rng(seed)
    y = rng.normal(size=(32, d))
    s = bits_to_points(rng.integers(0, 2, 32 * d), d)
    m = md_map(y, s)
    M = left_matrix(m)
    assert np.max(np.abs(M @ np.swapaxes(M, -1, -2) - np.eye(d))) < 1e-12
    assert np.max(np.abs(md_apply(m, y) - s)) < 1e-12
    z = rng.normal(size=(32, d))
    assert np.allclose(np.linalg.norm(np.einsum("nij,nj->ni", M, z), axis=-1), np.linalg.norm(z, axis=-1),
                       rtol=1e-12)


def test_alternative_law_in_octonions():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 8))
    assert np.allclose(mul(mul(a, a), b), mul(a, mul(a, b)), atol=1e-12)
    c = rng.normal(size=8)
    # octonions are not associative in general
    assert not np.allclose(mul(mul(a, b), c), mul(a, mul(b, c)))
    assert np.allclose(mul(a, conj(a)), np.r_[a @ a, np.zeros(7)], atol=1e-12)


def test_points_on_unit_sphere():
    p = bits_to_points(np.array([0, 1, 1, 0, 0, 0, 1, 1]), 8)
    assert np.linalg.norm(p) == pytest.approx(1.0)
    assert np.allclose(np.abs(p), 1 / np.sqrt(8))


def test_domain_errors():
    with pytest.raises(DomainError):
        md_map(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(DomainError):
        md_map(np.zeros((1, 4)), bits_to_points(np.zeros(4), 4))
    with pytest.raises(DomainError):
        md_map(np.ones((1, 4)), np.ones((1, 8)))
    with pytest.raises(DomainError):
        md_demap(np.ones((1, 4)), np.ones((1, 4)) / 2, 0.0)


def test_no_information_at_infinite_noise():
    x = np.ones((3, 8))
    assert np.all(md_demap(x, bits_to_points(np.zeros(24), 8), np.inf) == 0)


def test_scalar_case_matches_bpsk_llr():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(1000, 1))
    y = x + rng.normal(0, 2, size=(1000, 1))
    b = rng.integers(0, 2, 1000)
    m = md_map(y, bits_to_points(b, 1))
    L = md_demap(x, m, 4.0, 1.0, np.abs(y).ravel())
    # d = 1: Bob sends sign(y) (-1)^b, Alice sees x times it
    expect = 2 * x * np.sign(y) * (1 - 2 * b[:, None]) * np.abs(y) / 4.0
    assert np.allclose(L, expect)


@pytest.mark.parametrize("snr", [0.03, 0.08])
def test_capacity_close_to_binary_awgn(snr):
    rng = np.random.default_rng(7)
    d, N = 8, 250_000
    x = rng.normal(size=(N, d))
    nv = 1 / snr
    y = x + rng.normal(0, np.sqrt(nv), size=(N, d))
    bits = rng.integers(0, 2, (N, d))
    m = md_map(y, bits_to_points(bits, d))
    c = llr_capacity(md_demap(x, m, nv, 1.0, np.linalg.norm(y, axis=-1)), bits)
    assert c == pytest.approx(biawgn_capacity(snr), rel=0.02)
    assert c < 0.5 * np.log2(1 + snr)
