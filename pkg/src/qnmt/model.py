"""Parameter containers, the QNMT binary model format, and model generation.

File layout (all integers little-endian):

    bytes 0..3    magic ``QNMT``
    bytes 4..7    u32 format version (currently 1)
    bytes 8..15   u64 length of the JSON header
    ...           UTF-8 JSON header: dims, behaviour flags, both vocabularies,
                  and a tensor directory (name, shape, byte offset into the
                  payload, in serialization order)
    ...           payload: raw little-endian float32 tensors, C order
    last 8 bytes  u64 checksum (first 8 bytes of SHA-256 of the payload)

Quantized models are derived in memory from the float parameters; there is
no separate quantized file format, so both precision modes always load from
the same model file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParameterError, SchemaError
from .qmath import QuantizationStats, QuantizedMatrix, quantization_stats, quantize

MAGIC = b"QNMT"
VERSION = 1

PAD_ID, UNK_ID, EOS_ID = 0, 1, 2
PAD_TOKEN, UNK_TOKEN, EOS_TOKEN = "<pad>", "<unk>", "</s>"

# weight init range for generated models
DEFAULT_WEIGHT_SCALE = 0.08

_GRU_FIELDS = ("wz", "uz", "bz", "wr", "ur", "br", "wc", "uc", "bc")


@dataclass
class Dims:
    src_vocab: int
    tgt_vocab: int
    embed: int
    hidden: int
    attn: int
    readout: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(eq=False)
class GruWeights:
    """One GRU cell: input-side (w*) and state-side (u*) transforms per gate."""

    wz: object
    uz: object
    bz: np.ndarray
    wr: object
    ur: object
    br: np.ndarray
    wc: object
    uc: object
    bc: np.ndarray


@dataclass(eq=False)
class AttentionWeights:
    w_enc: object          # [attn, 2*hidden]
    b_enc: np.ndarray      # [attn]
    u_state: object        # [attn, hidden]
    v: object              # [1, attn]


@dataclass(eq=False)
class OutputWeights:
    w_state: object        # [readout, hidden]
    w_embed: object        # [readout, embed]
    w_ctx: object          # [readout, 2*hidden]
    b_readout: np.ndarray  # [readout]
    w_vocab: object        # [tgt_vocab, readout]
    b_vocab: np.ndarray    # [tgt_vocab]


@dataclass(eq=False)
class _ModelBase:
    dims: Dims
    src_embed: np.ndarray  # [src_vocab, embed], float32, never quantized
    tgt_embed: np.ndarray
    enc_fwd: GruWeights
    enc_bwd: GruWeights
    dec_r: GruWeights
    dec_q: GruWeights
    attention: AttentionWeights
    output: OutputWeights
    s0_w: object
    s0_b: np.ndarray
    src_tokens: list
    tgt_tokens: list
    s0_mode: str = "transform"          # or "zero"
    attention_query: str = "current"    # or "previous"

    def __post_init__(self):
        self._src_index = None
        self._tgt_index = None

    def src_ids(self, tokens) -> np.ndarray:
        """Map source tokens to ids; unknown tokens become UNK."""
        if self._src_index is None:
            self._src_index = {t: i for i, t in enumerate(self.src_tokens)}
        idx = self._src_index
        return np.array([idx.get(t, UNK_ID) for t in tokens], dtype=np.int64)

    def tgt_token(self, token_id: int) -> str:
        return self.tgt_tokens[token_id]


@dataclass(eq=False)
class ModelParams(_ModelBase):
    """All trained tensors in float32."""

    precision = "fp32"


@dataclass(eq=False)
class QuantizedModel(_ModelBase):
    """Same structure with every weight matrix quantized; embeddings and
    biases stay float32.  One scale and one stats record per tensor."""

    stats: dict = field(default_factory=dict)

    precision = "int8"


# ---------------------------------------------------------------------------
# tensor directory
# ---------------------------------------------------------------------------

def _gru_shapes(dims: Dims, in_dim: int):
    h = dims.hidden
    return {
        "wz": (h, in_dim), "uz": (h, h), "bz": (h,),
        "wr": (h, in_dim), "ur": (h, h), "br": (h,),
        "wc": (h, in_dim), "uc": (h, h), "bc": (h,),
    }


def tensor_specs(dims: Dims) -> list:
    """Canonical (name, shape) directory; defines serialization order."""
    specs = [
        ("src_embed", (dims.src_vocab, dims.embed)),
        ("tgt_embed", (dims.tgt_vocab, dims.embed)),
    ]
    for cell, in_dim in (
        ("enc_fwd", dims.embed), ("enc_bwd", dims.embed),
        ("dec_r", dims.embed), ("dec_q", 2 * dims.hidden),
    ):
        shapes = _gru_shapes(dims, in_dim)
        specs.extend((f"{cell}.{f}", shapes[f]) for f in _GRU_FIELDS)
    specs.extend([
        ("attn.w_enc", (dims.attn, 2 * dims.hidden)),
        ("attn.b_enc", (dims.attn,)),
        ("attn.u_state", (dims.attn, dims.hidden)),
        ("attn.v", (1, dims.attn)),
        ("out.w_state", (dims.readout, dims.hidden)),
        ("out.w_embed", (dims.readout, dims.embed)),
        ("out.w_ctx", (dims.readout, 2 * dims.hidden)),
        ("out.b_readout", (dims.readout,)),
        ("out.w_vocab", (dims.tgt_vocab, dims.readout)),
        ("out.b_vocab", (dims.tgt_vocab,)),
        ("s0.w", (dims.hidden, dims.hidden)),
        ("s0.b", (dims.hidden,)),
    ])
    return specs


def _get_tensor(model: _ModelBase, name: str) -> np.ndarray:
    if name == "src_embed":
        return model.src_embed
    if name == "tgt_embed":
        return model.tgt_embed
    if name == "s0.w":
        return model.s0_w
    if name == "s0.b":
        return model.s0_b
    group, fld = name.split(".")
    if group == "attn":
        return getattr(model.attention, fld)
    if group == "out":
        return getattr(model.output, fld)
    return getattr(getattr(model, group), fld)


def _build_params(dims: Dims, tensors: dict, src_tokens, tgt_tokens,
                  s0_mode: str, attention_query: str) -> ModelParams:
    def gru(prefix):
        return GruWeights(**{f: tensors[f"{prefix}.{f}"] for f in _GRU_FIELDS})

    return ModelParams(
        dims=dims,
        src_embed=tensors["src_embed"],
        tgt_embed=tensors["tgt_embed"],
        enc_fwd=gru("enc_fwd"),
        enc_bwd=gru("enc_bwd"),
        dec_r=gru("dec_r"),
        dec_q=gru("dec_q"),
        attention=AttentionWeights(
            w_enc=tensors["attn.w_enc"], b_enc=tensors["attn.b_enc"],
            u_state=tensors["attn.u_state"], v=tensors["attn.v"]),
        output=OutputWeights(
            w_state=tensors["out.w_state"], w_embed=tensors["out.w_embed"],
            w_ctx=tensors["out.w_ctx"], b_readout=tensors["out.b_readout"],
            w_vocab=tensors["out.w_vocab"], b_vocab=tensors["out.b_vocab"]),
        s0_w=tensors["s0.w"],
        s0_b=tensors["s0.b"],
        src_tokens=list(src_tokens),
        tgt_tokens=list(tgt_tokens),
        s0_mode=s0_mode,
        attention_query=attention_query,
    )


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _synthetic_vocab(size: int) -> list:
    return [PAD_TOKEN, UNK_TOKEN, EOS_TOKEN] + [f"w{i:04d}" for i in range(1, size - 2)]


def generate_model(src_vocab: int, tgt_vocab: int, embed: int, hidden: int, seed: int,
                   attn: int | None = None, readout: int | None = None,
                   weight_scale: float = DEFAULT_WEIGHT_SCALE,
                   s0_mode: str = "transform",
                   attention_query: str = "current") -> ModelParams:
    """Build a reproducible random model.

    Weights are drawn i.i.d. uniform in ``[-weight_scale, weight_scale)``
    from numpy's PCG64 stream seeded with ``seed``: tensors are filled in
    ``tensor_specs`` order, each via ``Generator.random(shape, float32)``
    mapped to the target range, so the same seed produces the same model on
    any platform.  Vocabulary tokens are synthetic (``w0001`` ...) after the
    reserved pad/unk/eos entries.
    """
    for name, value in (("src_vocab", src_vocab), ("tgt_vocab", tgt_vocab),
                        ("embed", embed), ("hidden", hidden)):
        if value < 1:
            raise ParameterError(f"{name} must be >= 1, got {value}")
    if src_vocab < 3 or tgt_vocab < 3:
        raise ParameterError("vocabularies must cover the reserved pad/unk/eos ids")
    if not (0 < weight_scale < 16):
        raise ParameterError(f"weight_scale out of range: {weight_scale}")
    dims = Dims(src_vocab, tgt_vocab, embed, hidden,
                attn=attn or hidden, readout=readout or embed)
    total = sum(int(np.prod(shape)) for _, shape in tensor_specs(dims))
    if total > 2**31:
        raise ParameterError(f"model of {total} parameters exceeds the supported size")

    rng = np.random.Generator(np.random.PCG64(seed))
    ws = np.float32(weight_scale)
    tensors = {}
    for name, shape in tensor_specs(dims):
        u = rng.random(shape, dtype=np.float32)
        tensors[name] = (u * np.float32(2.0) - np.float32(1.0)) * ws
    return _build_params(dims, tensors, _synthetic_vocab(src_vocab),
                         _synthetic_vocab(tgt_vocab), s0_mode, attention_query)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def save_model(params: ModelParams, path: str) -> None:
    """Write the canonical byte-exact QNMT file for this model."""
    specs = tensor_specs(params.dims)
    chunks = []
    directory = []
    offset = 0
    for name, shape in specs:
        arr = np.ascontiguousarray(_get_tensor(params, name), dtype="<f4")
        if tuple(arr.shape) != tuple(shape):
            raise SchemaError(f"tensor {name} has shape {arr.shape}, expected {shape}")
        raw = arr.tobytes()
        directory.append({"name": name, "shape": list(shape), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)

    header = {
        "dims": params.dims.as_dict(),
        "s0_mode": params.s0_mode,
        "attention_query": params.attention_query,
        "source_vocab": params.src_tokens,
        "target_vocab": params.tgt_tokens,
        "payload_bytes": len(payload),
        "tensors": directory,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    checksum = hashlib.sha256(payload).digest()[:8]

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(VERSION.to_bytes(4, "little"))
        fh.write(len(header_bytes).to_bytes(8, "little"))
        fh.write(header_bytes)
        fh.write(payload)
        fh.write(checksum)


def load_model(path: str) -> ModelParams:
    """Read and validate a QNMT model file."""
    with open(path, "rb") as fh:
        blob = fh.read()

    if len(blob) < 16:
        raise FormatError("file shorter than the fixed header", offset=len(blob))
    if blob[:4] != MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MAGIC!r}", offset=0)
    version = int.from_bytes(blob[4:8], "little")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}", offset=4)
    header_len = int.from_bytes(blob[8:16], "little")
    header_end = 16 + header_len
    if header_end + 8 > len(blob):
        raise FormatError("declared header overruns the file", offset=8)
    try:
        header = json.loads(blob[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"header is not valid JSON: {exc}", offset=16) from None

    for key in ("dims", "s0_mode", "attention_query", "source_vocab",
                "target_vocab", "payload_bytes", "tensors"):
        if key not in header:
            raise SchemaError(f"header is missing required key {key!r}", offset=16)
    try:
        dims = Dims(**header["dims"])
    except TypeError as exc:
        raise SchemaError(f"bad dims block: {exc}", offset=16) from None

    payload_start = header_end
    payload_len = int(header["payload_bytes"])
    payload_end = payload_start + payload_len
    if payload_end + 8 > len(blob):
        raise FormatError("payload truncated",
                          offset=min(len(blob), payload_end))
    payload = memoryview(blob)[payload_start:payload_end]
    checksum = blob[payload_end:payload_end + 8]
    if hashlib.sha256(payload).digest()[:8] != checksum:
        raise FormatError("payload checksum mismatch", offset=payload_end)

    if len(header["source_vocab"]) != dims.src_vocab:
        raise SchemaError(
            f"source vocabulary lists {len(header['source_vocab'])} tokens, "
            f"dims declare {dims.src_vocab}", offset=16)
    if len(header["target_vocab"]) != dims.tgt_vocab:
        raise SchemaError(
            f"target vocabulary lists {len(header['target_vocab'])} tokens, "
            f"dims declare {dims.tgt_vocab}", offset=16)

    expected = {name: tuple(shape) for name, shape in tensor_specs(dims)}
    entries = {e["name"]: e for e in header["tensors"]}
    if set(entries) != set(expected):
        missing = sorted(set(expected) - set(entries))
        extra = sorted(set(entries) - set(expected))
        raise SchemaError(f"tensor directory mismatch (missing {missing}, extra {extra})",
                          offset=16)

    tensors = {}
    for name, shape in expected.items():
        entry = entries[name]
        if tuple(entry["shape"]) != shape:
            raise SchemaError(
                f"tensor {name} declares shape {entry['shape']}, dims imply {shape}",
                offset=16)
        nbytes = int(np.prod(shape)) * 4
        off = int(entry["offset"])
        if off < 0 or off + nbytes > payload_len:
            raise SchemaError(f"tensor {name} overruns the payload",
                              offset=payload_start + max(off, 0))
        arr = np.frombuffer(payload, dtype="<f4", count=int(np.prod(shape)), offset=off)
        tensors[name] = arr.reshape(shape)

    return _build_params(dims, tensors, header["source_vocab"], header["target_vocab"],
                         header["s0_mode"], header["attention_query"])


# ---------------------------------------------------------------------------
# offline weight quantization
# ---------------------------------------------------------------------------

def quantize_model(params: ModelParams) -> QuantizedModel:
    """Quantize every weight matrix once; biases and embeddings untouched."""
    stats: dict = {}

    def q(name: str, arr: np.ndarray) -> QuantizedMatrix:
        qm = quantize(np.ascontiguousarray(arr, dtype=np.float32))
        stats[name] = quantization_stats(name, arr, qm)
        return qm

    def gru(prefix: str, g: GruWeights) -> GruWeights:
        return GruWeights(
            wz=q(f"{prefix}.wz", g.wz), uz=q(f"{prefix}.uz", g.uz), bz=g.bz,
            wr=q(f"{prefix}.wr", g.wr), ur=q(f"{prefix}.ur", g.ur), br=g.br,
            wc=q(f"{prefix}.wc", g.wc), uc=q(f"{prefix}.uc", g.uc), bc=g.bc,
        )

    return QuantizedModel(
        dims=params.dims,
        src_embed=params.src_embed,
        tgt_embed=params.tgt_embed,
        enc_fwd=gru("enc_fwd", params.enc_fwd),
        enc_bwd=gru("enc_bwd", params.enc_bwd),
        dec_r=gru("dec_r", params.dec_r),
        dec_q=gru("dec_q", params.dec_q),
        attention=AttentionWeights(
            w_enc=q("attn.w_enc", params.attention.w_enc),
            b_enc=params.attention.b_enc,
            u_state=q("attn.u_state", params.attention.u_state),
            v=q("attn.v", params.attention.v)),
        output=OutputWeights(
            w_state=q("out.w_state", params.output.w_state),
            w_embed=q("out.w_embed", params.output.w_embed),
            w_ctx=q("out.w_ctx", params.output.w_ctx),
            b_readout=params.output.b_readout,
            w_vocab=q("out.w_vocab", params.output.w_vocab),
            b_vocab=params.output.b_vocab),
        s0_w=q("s0.w", params.s0_w),
        s0_b=params.s0_b,
        src_tokens=params.src_tokens,
        tgt_tokens=params.tgt_tokens,
        s0_mode=params.s0_mode,
        attention_query=params.attention_query,
        stats=stats,
    )
