"""8-bit symmetric quantization and the integer GEMM kernels used for decoding.

Quantization is symmetric and per-tensor: codes live in [-127, 127] (never
-128, so negation stays exact) with scale = 127 / max|x|.  Matrix products
accumulate exactly in integers and are emitted as float32 after a single
division by the product of the two operand scales, so the kernels never need
to know the scale of their result.

Two schedules compute the same quantized product:

* ``qgemm``        -- the reference schedule: a direct triple loop, no
                      blocking and no operand copies.
* ``qgemm_panel``  -- the production schedule for matrix-times-narrow-panel
                      shapes (P below ~10, i.e. beam-sized): four output rows
                      per pass, operands repacked so the hot loop runs on
                      contiguous bytes.  On CPUs with AVX-512 VNNI the inner
                      dot product is emitted directly as ``vpdpbusd`` over an
                      unsigned shadow of the left operand (offset by +128 with
                      a column-sum correction, which is exact in modular
                      int32 arithmetic).

Both schedules produce bit-identical results: integer accumulation has no
rounding, so summation order cannot matter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from llvmlite import ir
import llvmlite.binding as _llb
from numba import njit, types
from numba.extending import intrinsic

from .errors import InvalidInputError, NumericError, ShapeError

INT8_MAX = 127

# K * 127^2 < 2^31 guarantees the plain int32 accumulator cannot overflow.
INT32_SAFE_K = 131_000


def _has_avx512_vnni() -> bool:
    try:
        feats = _llb.get_host_cpu_features()
    except RuntimeError:
        return False
    return bool(feats.get("avx512vnni", False)) and bool(feats.get("avx512f", False))


HAVE_VNNI = _has_avx512_vnni()


# ---------------------------------------------------------------------------
# quantized tensor type
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class QuantizedMatrix:
    """Signed 8-bit matrix plus the scale (quantized units per real unit)."""

    data: np.ndarray  # int8, row-major, C-contiguous
    scale: float

    # unsigned +128 shadow, built lazily for the VNNI panel kernel
    _shadow: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.data.dtype != np.int8 or self.data.ndim != 2:
            raise InvalidInputError("QuantizedMatrix requires a 2-D int8 array")
        if not (self.scale > 0 and np.isfinite(self.scale)):
            raise InvalidInputError(f"scale must be positive and finite, got {self.scale}")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def unsigned_shadow(self) -> np.ndarray:
        """Cached uint8 view of ``data + 128``, columns zero-padded to x64."""
        if self._shadow is None:
            k64 = _pad64(self.cols)
            shadow = np.full((self.rows, k64), 128, dtype=np.uint8)
            shadow[:, : self.cols] = (self.data.astype(np.int16) + 128).astype(np.uint8)
            self._shadow = shadow
        return self._shadow


@dataclass
class QuantizationStats:
    """Round-trip error record for one quantized tensor."""

    name: str
    scale: float
    max_abs: float
    rms_error: float
    max_error: float


def _pad64(k: int) -> int:
    return (k + 63) // 64 * 64


def _check_f32_matrix(m: np.ndarray, name: str) -> np.ndarray:
    m = np.ascontiguousarray(m, dtype=np.float32)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be a non-empty 2-D matrix, got shape {m.shape}")
    return m


# ---------------------------------------------------------------------------
# quantize / dequantize
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _encode_i8(x, scale, out):
    # round to nearest, ties away from zero, computed in float32
    rows, cols = x.shape
    for i in range(rows):
        for j in range(cols):
            v = x[i, j] * scale
            q = np.float32(np.floor(np.abs(v) + np.float32(0.5)))
            if v < 0:
                q = -q
            if q > 127.0:
                q = np.float32(127.0)
            elif q < -127.0:
                q = np.float32(-127.0)
            out[i, j] = np.int8(q)


def _encode(m: np.ndarray, max_abs: float) -> QuantizedMatrix:
    if max_abs == 0.0:
        return QuantizedMatrix(np.zeros(m.shape, dtype=np.int8), 1.0)
    scale32 = np.float32(127.0) / np.float32(max_abs)
    codes = np.empty(m.shape, dtype=np.int8)
    _encode_i8(m, scale32, codes)
    return QuantizedMatrix(codes, float(scale32))


def quantize(m: np.ndarray) -> QuantizedMatrix:
    """Quantize a float32 matrix to int8 codes in [-127, 127].

    scale = 127 / max|m| (1.0 for an all-zero matrix); codes are
    round-to-nearest with ties away from zero, computed in float32.
    """
    m = _check_f32_matrix(m, "input")
    if not np.isfinite(m).all():
        raise InvalidInputError("cannot quantize non-finite values")
    return _encode(m, float(np.max(np.abs(m))))


@njit(cache=True, nogil=True)
def _max_abs_scan(x):
    # single pass; the float64 sum propagates nan/inf as the finiteness probe
    rows, cols = x.shape
    m = np.float32(0.0)
    s = np.float64(0.0)
    for i in range(rows):
        for j in range(cols):
            a = np.abs(x[i, j])
            if a > m:
                m = a
            s += a
    return m, s


def quantize_activations(x: np.ndarray) -> QuantizedMatrix:
    """Per-call activation quantization for the int8 decode path.

    Same code assignment as :func:`quantize`; the finiteness check is folded
    into the max-magnitude scan since this sits on the hot path.
    """
    x = np.ascontiguousarray(x, dtype=np.float32)
    max_abs, probe = _max_abs_scan(x)
    if not np.isfinite(probe):
        raise NumericError("activations contain non-finite values")
    return _encode(x, float(max_abs))


def dequantize(q: QuantizedMatrix) -> np.ndarray:
    """Reconstruct float32 values as code / scale."""
    return q.data.astype(np.float32) / np.float32(q.scale)


def quantization_stats(name: str, m: np.ndarray, q: QuantizedMatrix) -> QuantizationStats:
    err = m.astype(np.float64) - dequantize(q).astype(np.float64)
    return QuantizationStats(
        name=name,
        scale=q.scale,
        max_abs=float(np.max(np.abs(m))),
        rms_error=float(np.sqrt(np.mean(err * err))),
        max_error=float(np.max(np.abs(err))),
    )


# ---------------------------------------------------------------------------
# integer kernels
# ---------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _gemm_i8_naive_i32(a, b, out):
    # direct schedule, no blocking, no copy; exact int32 accumulation
    M, K = a.shape
    P = b.shape[1]
    for i in range(M):
        for j in range(P):
            acc = np.int32(0)
            for k in range(K):
                acc += np.int32(a[i, k]) * np.int32(b[k, j])
            out[i, j] = acc


@njit(cache=True, nogil=True)
def _gemm_i8_naive_i64(a, b, out):
    # widened accumulator for K beyond the int32 safety bound
    M, K = a.shape
    P = b.shape[1]
    for i in range(M):
        for j in range(P):
            acc = np.int64(0)
            for k in range(K):
                acc += np.int64(a[i, k]) * np.int64(b[k, j])
            out[i, j] = acc


_V16I32 = ir.VectorType(ir.IntType(32), 16)
_I32 = ir.IntType(32)
_I64 = ir.IntType(64)


def _module_fn(module, fnty, name):
    fn = module.globals.get(name)
    if fn is None:
        fn = ir.Function(module, fnty, name)
    return fn


@intrinsic
def _vnni_dot64(typingctx, a_addr, b_addr, nblk):
    """Exact dot of nblk*64 bytes: sum over zext(u8 @a) * sext(i8 @b), mod 2^32.

    Emits one ``vpdpbusd`` per 64-byte block.  Lane sums wrap modulo 2^32;
    callers subtract the +128 offset correction in the same modular int32
    arithmetic, which recovers the exact signed dot product whenever the true
    value fits in int32.
    """
    sig = types.int32(types.intp, types.intp, types.intp)

    def codegen(context, builder, signature, args):
        a_addr, b_addr, nblk = args
        fn = builder.function
        entry = builder.block
        loop = fn.append_basic_block("vnni.loop")
        done = fn.append_basic_block("vnni.done")

        zero_vec = ir.Constant(_V16I32, None)
        dpbusd = _module_fn(
            builder.module,
            ir.FunctionType(_V16I32, [_V16I32, _V16I32, _V16I32]),
            "llvm.x86.avx512.vpdpbusd.512",
        )
        reduce_add = _module_fn(
            builder.module,
            ir.FunctionType(_I32, [_V16I32]),
            "llvm.vector.reduce.add.v16i32",
        )

        builder.cbranch(builder.icmp_signed(">", nblk, ir.Constant(_I64, 0)), loop, done)

        builder.position_at_end(loop)
        idx = builder.phi(_I64)
        acc = builder.phi(_V16I32)
        idx.add_incoming(ir.Constant(_I64, 0), entry)
        acc.add_incoming(zero_vec, entry)

        off = builder.mul(idx, ir.Constant(_I64, 64))
        a_vec = builder.load(
            builder.inttoptr(builder.add(a_addr, off), _V16I32.as_pointer()), align=1)
        b_vec = builder.load(
            builder.inttoptr(builder.add(b_addr, off), _V16I32.as_pointer()), align=1)
        acc_next = builder.call(dpbusd, [acc, a_vec, b_vec])

        idx_next = builder.add(idx, ir.Constant(_I64, 1))
        idx.add_incoming(idx_next, loop)
        acc.add_incoming(acc_next, loop)
        builder.cbranch(builder.icmp_signed("<", idx_next, nblk), loop, done)

        builder.position_at_end(done)
        res = builder.phi(_V16I32)
        res.add_incoming(zero_vec, entry)
        res.add_incoming(acc_next, loop)
        return builder.call(reduce_add, [res])

    return sig, codegen


def _make_panel_vnni():
    @njit(cache=True, nogil=True)
    def _panel_vnni(au, bt, correction, out):
        # au: [M, K64] uint8 shadow; bt: [P, K64] int8; out[i, j] int32.
        # Four output rows per pass over the panel; int32 wraparound is
        # intentional (see _vnni_dot64).
        M, K64 = au.shape
        P = bt.shape[0]
        nblk = K64 // 64
        a_base = au.ctypes.data
        b_base = bt.ctypes.data
        i = 0
        while i + 4 <= M:
            for j in range(P):
                b_addr = b_base + j * K64
                c = correction[j]
                out[i, j] = _vnni_dot64(a_base + i * K64, b_addr, nblk) - c
                out[i + 1, j] = _vnni_dot64(a_base + (i + 1) * K64, b_addr, nblk) - c
                out[i + 2, j] = _vnni_dot64(a_base + (i + 2) * K64, b_addr, nblk) - c
                out[i + 3, j] = _vnni_dot64(a_base + (i + 3) * K64, b_addr, nblk) - c
            i += 4
        while i < M:
            for j in range(P):
                out[i, j] = _vnni_dot64(a_base + i * K64, b_base + j * K64, nblk) - correction[j]
            i += 1

    return _panel_vnni


@njit(cache=True, nogil=True)
def _panel_maddw(a, bt16, out):
    # Portable panel kernel: int8 rows against an int16 copy of the panel.
    # The i16 x i16 -> i32 accumulation vectorizes to pmaddwd-class code.
    M, K = a.shape
    P = bt16.shape[0]
    i = 0
    while i + 4 <= M:
        for j in range(P):
            a0 = np.int32(0)
            a1 = np.int32(0)
            a2 = np.int32(0)
            a3 = np.int32(0)
            for k in range(K):
                a0 += np.int32(np.int16(a[i, k]) * bt16[j, k])
                a1 += np.int32(np.int16(a[i + 1, k]) * bt16[j, k])
                a2 += np.int32(np.int16(a[i + 2, k]) * bt16[j, k])
                a3 += np.int32(np.int16(a[i + 3, k]) * bt16[j, k])
            out[i, j] = a0
            out[i + 1, j] = a1
            out[i + 2, j] = a2
            out[i + 3, j] = a3
        i += 4
    while i < M:
        for j in range(P):
            acc = np.int32(0)
            for k in range(K):
                acc += np.int32(np.int16(a[i, k]) * bt16[j, k])
            out[i, j] = acc
        i += 1


_panel_vnni = _make_panel_vnni() if HAVE_VNNI else None


# ---------------------------------------------------------------------------
# public GEMM entry points
# ---------------------------------------------------------------------------

def _check_pair(a: QuantizedMatrix, b: QuantizedMatrix):
    if not isinstance(a, QuantizedMatrix) or not isinstance(b, QuantizedMatrix):
        raise InvalidInputError("qgemm operands must be QuantizedMatrix")
    if a.cols != b.rows:
        raise ShapeError(f"inner dimensions disagree: {a.rows}x{a.cols} @ {b.rows}x{b.cols}")
    if b.cols < 1:
        raise ShapeError("right-hand operand must have at least one column")


def _scale_output(acc: np.ndarray, a: QuantizedMatrix, b: QuantizedMatrix) -> np.ndarray:
    denom = np.float64(a.scale) * np.float64(b.scale)
    return (acc.astype(np.float64) / denom).astype(np.float32)


def qgemm(a: QuantizedMatrix, b: QuantizedMatrix) -> np.ndarray:
    """Quantized product with exact integer accumulation, emitted as float32.

    Entry (i, j) is (sum_k a_ik * b_kj) / (a.scale * b.scale).  The int32
    accumulator is widened to int64 when K exceeds ``INT32_SAFE_K``.
    """
    _check_pair(a, b)
    if a.cols <= INT32_SAFE_K:
        acc = np.empty((a.rows, b.cols), dtype=np.int32)
        _gemm_i8_naive_i32(a.data, b.data, acc)
    else:
        acc = np.empty((a.rows, b.cols), dtype=np.int64)
        _gemm_i8_naive_i64(a.data, b.data, acc)
    return _scale_output(acc, a, b)


def qgemm_panel(a: QuantizedMatrix, b: QuantizedMatrix, p_small: bool = True) -> np.ndarray:
    """Panel-scheduled quantized product; bit-identical to :func:`qgemm`.

    Processes four output rows per pass over ``b``.  ``p_small`` is an
    advisory hint (the schedule is tuned for P below ~10 either way).
    The left operand's unsigned shadow is cached on first use, so repeated
    products against the same weight matrix pay the repack cost once.
    """
    _check_pair(a, b)
    if a.cols > INT32_SAFE_K:
        acc = np.empty((a.rows, b.cols), dtype=np.int64)
        _gemm_i8_naive_i64(a.data, b.data, acc)
        return _scale_output(acc, a, b)

    acc = np.empty((a.rows, b.cols), dtype=np.int32)
    if _panel_vnni is not None:
        au = a.unsigned_shadow()
        k64 = au.shape[1]
        bt = np.zeros((b.cols, k64), dtype=np.int8)
        bt[:, : b.rows] = b.data.T
        # +128 offset correction, folded modulo 2^32 so wraparound stays exact
        corr = (128 * b.data.sum(axis=0, dtype=np.int64)) % (1 << 32)
        correction = corr.astype(np.uint32).view(np.int32)
        _panel_vnni(au, bt, correction, acc)
    else:
        bt16 = np.ascontiguousarray(b.data.T.astype(np.int16))
        _panel_maddw(a.data, bt16, acc)
    return _scale_output(acc, a, b)


# ---------------------------------------------------------------------------
# float32 path
# ---------------------------------------------------------------------------

def gemm_f32(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard float32 product (BLAS); the 32-bit decoding path and baseline."""
    a = _check_f32_matrix(a, "a")
    b = _check_f32_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    return a @ b


@njit(cache=True, nogil=True, fastmath=True)
def _gemm_f32_blocked(a, b, out):
    M, K = a.shape
    P = b.shape[1]
    bi, bk, bj = 64, 256, 256
    for i0 in range(0, M, bi):
        i1 = min(i0 + bi, M)
        for k0 in range(0, K, bk):
            k1 = min(k0 + bk, K)
            for j0 in range(0, P, bj):
                j1 = min(j0 + bj, P)
                for i in range(i0, i1):
                    for k in range(k0, k1):
                        av = a[i, k]
                        for j in range(j0, j1):
                            out[i, j] += av * b[k, j]


def gemm_f32_blocked(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cache-blocked float32 product for wide right-hand sides.

    Numerically equivalent to :func:`gemm_f32` up to reassociation (the
    blocked schedule sums in a different order).  Exists to let the benchmark
    harness demonstrate that blocking buys nothing for narrow panels.
    """
    a = _check_f32_matrix(a, "a")
    b = _check_f32_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]), dtype=np.float32)
    _gemm_f32_blocked(a, b, out)
    return out
