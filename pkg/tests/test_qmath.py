"""Quantization and kernel tests against independent integer/float oracles."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qnmt import qmath
from qnmt.errors import InvalidInputError, ShapeError
from qnmt.qmath import (
    QuantizedMatrix,
    dequantize,
    gemm_f32,
    gemm_f32_blocked,
    qgemm,
    qgemm_panel,
    quantize,
)


def int_oracle_f32(a: QuantizedMatrix, b: QuantizedMatrix) -> np.ndarray:
    """Exact integer product converted with the documented float sequence."""
    acc = a.data.astype(np.int64) @ b.data.astype(np.int64)
    denom = np.float64(a.scale) * np.float64(b.scale)
    return (acc.astype(np.float64) / denom).astype(np.float32)


def scalar_int_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop accumulation in plain Python integers."""
    m, k = a.shape
    p = b.shape[1]
    out = np.zeros((m, p), dtype=np.int64)
    for i in range(m):
        for j in range(p):
            s = 0
            for kk in range(k):
                s += int(a[i, kk]) * int(b[kk, j])
            out[i, j] = s
    return out


def rand_q(rng, rows, cols) -> QuantizedMatrix:
    codes = rng.integers(-127, 128, (rows, cols)).astype(np.int8)
    scale = float(np.float32(rng.uniform(0.5, 200.0)))
    return QuantizedMatrix(codes, scale)


class TestQuantize:
    def test_zero_matrix(self):
        q = quantize(np.zeros((3, 3), dtype=np.float32))
        assert q.scale == 1.0
        assert np.array_equal(q.data, np.zeros((3, 3), dtype=np.int8))

    def test_single_element_scale(self):
        q = quantize(np.array([[10.0]], dtype=np.float32))
        assert q.data[0, 0] == 127
        assert q.scale == pytest.approx(12.7, abs=1e-5)

    def test_roundtrip_bound_random(self):
        rng = np.random.default_rng(7)
        m = rng.uniform(-1.0, 1.0, (8, 8)).astype(np.float32)
        q = quantize(m)
        err = np.abs(m.astype(np.float64) - dequantize(q).astype(np.float64))
        assert np.all(err <= 0.5 / q.scale + 1e-6)

    def test_range_excludes_minus_128(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            m = rng.normal(0, 10, (5, 7)).astype(np.float32)
            q = quantize(m)
            assert q.data.min() >= -127 and q.data.max() <= 127

    def test_ties_round_away_from_zero(self):
        # max 2.0 -> scale 63.5; 1.0 maps to 63.5 -> away-from-zero gives 64
        q = quantize(np.array([[2.0, 1.0, -1.0]], dtype=np.float32))
        assert q.data.tolist() == [[127, 64, -64]]

    def test_rejects_non_finite(self):
        m = np.array([[1.0, np.nan]], dtype=np.float32)
        with pytest.raises(InvalidInputError):
            quantize(m)
        with pytest.raises(InvalidInputError):
            quantize(np.array([[np.inf]], dtype=np.float32))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_symmetry_and_bound_property(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.uniform(-50, 50, (6, 5)).astype(np.float32)
        q = quantize(m)
        qn = quantize(-m)
        assert np.array_equal(qn.data, -q.data)
        assert qn.scale == q.scale
        err = np.abs(m.astype(np.float64) - dequantize(q).astype(np.float64))
        assert np.all(err <= 0.5 / q.scale + 1e-6)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_requantize_idempotent(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.normal(0, 2, (4, 9)).astype(np.float32)
        q1 = quantize(m)
        q2 = quantize(dequantize(q1))
        assert np.array_equal(q1.data, q2.data)


class TestDequantize:
    def test_inverse_of_single_element(self):
        q = QuantizedMatrix(np.array([[127]], dtype=np.int8), 12.7)
        assert dequantize(q)[0, 0] == pytest.approx(10.0, abs=1e-5)

    def test_zero(self):
        q = QuantizedMatrix(np.zeros((2, 2), dtype=np.int8), 1.0)
        assert np.array_equal(dequantize(q), np.zeros((2, 2), dtype=np.float32))


class TestQgemm:
    def test_identity_times_vector(self):
        ident = quantize(np.eye(4, dtype=np.float32))
        v = quantize(np.array([[1.0, 2.0, 3.0, 4.0]], dtype=np.float32).T)
        out = qgemm(ident, v)
        expect = np.array([[1.0, 2.0, 3.0, 4.0]]).T
        assert np.all(np.abs(out - expect) <= 2.0 / 127 + 1e-7)
        assert np.array_equal(out, int_oracle_f32(ident, v))

    def test_one_by_one(self):
        a = quantize(np.array([[2.0]], dtype=np.float32))
        b = quantize(np.array([[3.0]], dtype=np.float32))
        out = qgemm(a, b)
        assert np.array_equal(out, int_oracle_f32(a, b))
        assert out[0, 0] == pytest.approx(6.0, abs=1e-3)

    def test_zero_rhs(self):
        rng = np.random.default_rng(0)
        a = rand_q(rng, 5, 6)
        b = QuantizedMatrix(np.zeros((6, 3), dtype=np.int8), 1.0)
        assert np.all(qgemm(a, b) == 0.0)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ShapeError):
            qgemm(rand_q(rng, 3, 4), rand_q(rng, 5, 2))

    def test_scalar_oracle_agrees_with_vector_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            m, k, p = rng.integers(1, 12, 3)
            a, b = rand_q(rng, m, k), rand_q(rng, k, p)
            assert np.array_equal(
                scalar_int_oracle(a.data, b.data),
                a.data.astype(np.int64) @ b.data.astype(np.int64),
            )

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=80, deadline=None)
    def test_bit_exact_vs_oracle_property(self, seed):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(1, 65))
        k = int(rng.integers(1, 65))
        p = int(rng.integers(1, 9))
        a, b = rand_q(rng, m, k), rand_q(rng, k, p)
        expect = int_oracle_f32(a, b)
        assert np.array_equal(qgemm(a, b), expect)
        assert np.array_equal(qgemm_panel(a, b), expect)

    def test_int64_widening_beyond_safe_k(self):
        rng = np.random.default_rng(5)
        k = qmath.INT32_SAFE_K + 64
        a = QuantizedMatrix(rng.integers(-127, 128, (2, k)).astype(np.int8), 1.0)
        b = QuantizedMatrix(rng.integers(-127, 128, (k, 2)).astype(np.int8), 1.0)
        expect = int_oracle_f32(a, b)
        assert np.array_equal(qgemm(a, b), expect)
        assert np.array_equal(qgemm_panel(a, b), expect)

    def test_argmax_scale_invariance(self):
        rng = np.random.default_rng(17)
        w = rand_q(rng, 40, 32)
        v = rng.uniform(-1, 1, (32, 1)).astype(np.float32)
        base = np.argmax(qgemm(w, quantize(v)), axis=0)
        for c in (0.5, 3.0, 17.0):
            scaled = np.argmax(qgemm(w, quantize(np.float32(c) * v)), axis=0)
            assert np.array_equal(base, scaled)


class TestQgemmPanel:
    def test_equals_naive_bit_exact(self):
        rng = np.random.default_rng(2)
        for m, k, p in [(4, 8, 1), (6, 10, 5), (13, 33, 8), (64, 64, 3), (3, 5, 2)]:
            a, b = rand_q(rng, m, k), rand_q(rng, k, p)
            assert np.array_equal(qgemm_panel(a, b), qgemm(a, b))

    def test_remainder_rows(self):
        rng = np.random.default_rng(4)
        a, b = rand_q(rng, 6, 16), rand_q(rng, 16, 4)
        assert np.array_equal(qgemm_panel(a, b), int_oracle_f32(a, b))

    def test_large_matrix_vector(self):
        rng = np.random.default_rng(9)
        a, b = rand_q(rng, 64, 64), rand_q(rng, 64, 1)
        assert np.array_equal(qgemm_panel(a, b), int_oracle_f32(a, b))
        big_a, big_b = rand_q(rng, 1000, 1000), rand_q(rng, 1000, 1)
        assert np.array_equal(qgemm_panel(big_a, big_b), qgemm(big_a, big_b))

    def test_shadow_is_cached_and_reused(self):
        rng = np.random.default_rng(1)
        a, b = rand_q(rng, 8, 70), rand_q(rng, 70, 2)
        first = qgemm_panel(a, b)
        shadow = a._shadow
        second = qgemm_panel(a, b)
        assert shadow is a._shadow or shadow is None
        assert np.array_equal(first, second)


class TestGemmF32:
    def test_identity(self):
        v = np.arange(12, dtype=np.float32).reshape(4, 3)
        assert np.array_equal(gemm_f32(np.eye(4, dtype=np.float32), v), v)

    def test_one_by_one(self):
        out = gemm_f32(np.array([[2.0]], np.float32), np.array([[3.0]], np.float32))
        assert out[0, 0] == 6.0

    def test_against_scalar_loop(self):
        rng = np.random.default_rng(6)
        a = rng.normal(0, 1, (16, 16)).astype(np.float32)
        b = rng.normal(0, 1, (16, 16)).astype(np.float32)
        ref = np.zeros((16, 16), dtype=np.float64)
        for i in range(16):
            for j in range(16):
                ref[i, j] = sum(float(a[i, k]) * float(b[k, j]) for k in range(16))
        out = gemm_f32(a, b)
        assert np.allclose(out, ref, rtol=1e-5, atol=1e-6)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            gemm_f32(np.zeros((2, 3), np.float32), np.zeros((2, 3), np.float32))


class TestGemmF32Blocked:
    def test_matches_reference_within_reassociation(self):
        rng = np.random.default_rng(8)
        a = rng.normal(0, 1, (64, 64)).astype(np.float32)
        b = rng.normal(0, 1, (64, 64)).astype(np.float32)
        ref = gemm_f32(a, b)
        out = gemm_f32_blocked(a, b)
        denom = np.maximum(np.abs(ref), 1e-3)
        assert np.max(np.abs(out - ref) / denom) < 1e-4

    def test_identity_exact(self):
        v = np.arange(20, dtype=np.float32).reshape(4, 5)
        assert np.array_equal(gemm_f32_blocked(np.eye(4, dtype=np.float32), v), v)
