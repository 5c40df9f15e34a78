"""Network state: frozen sign-only subnets, one plastic subnet, and the bit ledger.

Every subnet is a one-hidden-layer perceptron of the same shape and no
biases.  Subnets never connect to each other: the enlarged network's logits
are the sum of every subnet's logits, followed by a softmax.

Each layer's sign-MAC result is shifted right by a per-layer amount before it
is used, so a binarized weight acts as +/-2**-shift.  With ``shift=0`` the
weights are plain +/-1, and with 784 inputs the hidden tanh units then sit
deep in saturation.  The default ("auto") shift is round(log2(fan_in) / 2),
which keeps the accumulator near unit scale.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .fixedpoint import QFormat, binarize_array, dequantize_array, quantize_array
from .linalg import SignMatrix, sign_matmul

INPUT_DIM = 784
OUTPUT_DIM = 10
# intermediate activations/gradients on the fixed backend: 32 bits, 24 fractional
INTERMEDIATE = QFormat(32, 24)

MAGIC = b"RBNN"
VERSION = 1
_HEADER = struct.Struct("<4sB7I")


class BudgetExhausted(Exception):
    """No plastic bits left to recycle under the configured minimum width."""


class ModelFormatError(ValueError):
    pass


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class TruncatedModelError(ModelFormatError):
    pass


class RawOutOfRangeError(ModelFormatError):
    pass


def tanh_opt(x):
    return 1.7159 * np.tanh(2.0 / 3.0 * x)


def tanh_opt_grad(x):
    t = np.tanh(2.0 / 3.0 * x)
    return 1.7159 * 2.0 / 3.0 * (1.0 - t * t)


def tanh_grad(x):
    t = np.tanh(x)
    return 1.0 - t * t


ACTIVATIONS = {
    "tanh_opt": (tanh_opt, tanh_opt_grad),
    "tanh": (np.tanh, tanh_grad),
}


def auto_shifts(input_dim: int, hidden_units: int) -> tuple[int, int]:
    """Right shifts for the hidden and output accumulators: round(log2(fan_in) / 2)."""
    return tuple(int(np.floor(np.log2(n) / 2 + 0.5)) for n in (input_dim, hidden_units))


def resolve_shifts(shifts, input_dim: int, hidden_units: int) -> tuple[int, int]:
    if shifts == "auto":
        return auto_shifts(input_dim, hidden_units)
    if shifts == "none":
        return (0, 0)
    s1, s2 = shifts
    if s1 < 0 or s2 < 0:
        raise ValueError("layer shifts must be non-negative")
    return (int(s1), int(s2))


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class BitLedger:
    """Storage budget: ``slot_count`` synapse slots of ``initial_bits`` bits each.

    After ``recursion_index`` freeze/recycle cycles each slot holds that many
    sign bits and ``plastic_bits`` = initial_bits - recursion_index bits of
    the current plastic weight.
    """

    slot_count: int
    initial_bits: int
    recursion_index: int = 0

    def __post_init__(self) -> None:
        if self.slot_count < 0:
            raise ValueError("slot_count must be non-negative")
        if not 0 <= self.recursion_index <= self.initial_bits:
            raise ValueError("recursion_index outside [0, initial_bits]")

    @property
    def plastic_bits(self) -> int:
        return self.initial_bits - self.recursion_index

    @property
    def total_bits(self) -> int:
        return self.slot_count * self.initial_bits

    def can_recycle(self, min_plastic_bits: int = 2) -> bool:
        return self.plastic_bits - 1 >= min_plastic_bits

    def recycled(self) -> BitLedger:
        return replace(self, recursion_index=self.recursion_index + 1)


@dataclass(frozen=True)
class FrozenSubnet:
    w1: SignMatrix  # hidden x input
    w2: SignMatrix  # output x hidden

    def to_bytes(self) -> bytes:
        return self.w1.bits + self.w2.bits


@dataclass(frozen=True, eq=False)
class PlasticSubnet:
    """Trainable subnet; weights are raws in Q1.(bits-1)."""

    w1: np.ndarray
    w2: np.ndarray
    fmt: QFormat

    def __post_init__(self) -> None:
        if not self.fmt.is_weight_format:
            raise ValueError(f"plastic weights must use a Q1.f format, got {self.fmt}")
        for w in (self.w1, self.w2):
            if w.size and (w.min() < self.fmt.min_raw or w.max() > self.fmt.max_raw):
                raise ValueError(f"plastic raw outside {self.fmt}")

    @property
    def bits(self) -> int:
        return self.fmt.total_bits

    @property
    def real_w1(self) -> np.ndarray:
        return dequantize_array(self.w1, self.fmt)

    @property
    def real_w2(self) -> np.ndarray:
        return dequantize_array(self.w2, self.fmt)

    def binarized(self) -> FrozenSubnet:
        return FrozenSubnet(SignMatrix.from_signs(binarize_array(self.w1)),
                            SignMatrix.from_signs(binarize_array(self.w2)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PlasticSubnet):
            return NotImplemented
        return (self.fmt == other.fmt and np.array_equal(self.w1, other.w1)
                and np.array_equal(self.w2, other.w2))


@dataclass
class RbnnModel:
    hidden_units: int
    ledger: BitLedger
    frozen: list[FrozenSubnet] = field(default_factory=list)
    plastic: PlasticSubnet | None = None
    input_dim: int = INPUT_DIM
    output_dim: int = OUTPUT_DIM
    seed: int = 0
    activation: str = "tanh_opt"
    # "binary": the plastic output layer MACs with sign bits; "real" uses the stored values
    plastic_output: str = "binary"
    # right shift of each layer's accumulator; "auto", "none" or (s1, s2)
    layer_shifts: tuple[int, int] | str = "auto"

    def __post_init__(self) -> None:
        self.layer_shifts = resolve_shifts(self.layer_shifts, self.input_dim, self.hidden_units)
        if len(self.frozen) != self.ledger.recursion_index:
            raise ValueError("number of frozen subnets must equal the ledger's recursion index")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.plastic_output not in ("binary", "real"):
            raise ValueError(f"unknown plastic_output {self.plastic_output!r}")

    @property
    def scales(self) -> tuple[float, float]:
        """Value of one sign step in each layer, 2**-shift."""
        return (2.0 ** -self.layer_shifts[0], 2.0 ** -self.layer_shifts[1])

    @property
    def subnet_count(self) -> int:
        return len(self.frozen) + (self.plastic is not None)

    @property
    def total_hidden(self) -> int:
        return self.hidden_units * self.subnet_count

    @property
    def total_synapses(self) -> int:
        return self.ledger.slot_count * self.subnet_count


def slot_count(hidden_units: int, input_dim: int = INPUT_DIM, output_dim: int = OUTPUT_DIM) -> int:
    return hidden_units * (input_dim + output_dim)


def init_plastic(hidden_units: int, bits: int, rng: np.random.Generator,
                 input_dim: int = INPUT_DIM, output_dim: int = OUTPUT_DIM) -> PlasticSubnet:
    """Scaled uniform init, r = sqrt(6 / (fan_in + fan_out)), truncated into Q1.(bits-1)."""
    fmt = QFormat.weight(bits)
    r1 = np.sqrt(6.0 / (input_dim + hidden_units))
    r2 = np.sqrt(6.0 / (hidden_units + output_dim))
    w1 = rng.uniform(-r1, r1, size=(hidden_units, input_dim))
    w2 = rng.uniform(-r2, r2, size=(output_dim, hidden_units))
    return PlasticSubnet(quantize_array(w1, fmt), quantize_array(w2, fmt), fmt)


def new_model(hidden_units: int, bits: int, seed: int = 0, *, input_dim: int = INPUT_DIM,
              output_dim: int = OUTPUT_DIM, activation: str = "tanh_opt",
              plastic_output: str = "binary", layer_shifts="auto") -> RbnnModel:
    if hidden_units < 1 or input_dim < 1 or output_dim < 1:
        raise ValueError("dimensions must be positive")
    if not 2 <= bits <= 32:
        raise ValueError(f"initial bits must be in [2, 32], got {bits}")
    ledger = BitLedger(slot_count(hidden_units, input_dim, output_dim), bits)
    rng = np.random.default_rng([seed, 0])
    plastic = init_plastic(hidden_units, bits, rng, input_dim, output_dim)
    return RbnnModel(hidden_units, ledger, [], plastic, input_dim, output_dim, seed,
                     activation, plastic_output, layer_shifts)


def freeze_and_recycle(m: RbnnModel, min_plastic_bits: int = 2) -> RbnnModel:
    """Keep the plastic subnet's sign bits as a new frozen subnet and grow a
    fresh plastic subnet in the freed storage, one bit narrower."""
    if m.plastic is None:
        raise ValueError("model has no plastic subnet to freeze")
    if not m.ledger.can_recycle(min_plastic_bits):
        raise BudgetExhausted(
            f"budget exhausted: {m.ledger.plastic_bits} plastic bits, minimum is {min_plastic_bits}")
    ledger = m.ledger.recycled()
    rng = np.random.default_rng([m.seed, ledger.recursion_index])
    plastic = init_plastic(m.hidden_units, ledger.plastic_bits, rng, m.input_dim, m.output_dim)
    return replace(m, ledger=ledger, frozen=[*m.frozen, m.plastic.binarized()], plastic=plastic)


# -- forward pass -------------------------------------------------------------

def to_intermediate(x: np.ndarray) -> np.ndarray:
    """Truncate to the 32-bit/24-fraction intermediate grid (kept as float64 carriers)."""
    return dequantize_array(quantize_array(x, INTERMEDIATE), INTERMEDIATE)


@dataclass
class Forward:
    output: np.ndarray
    logits: np.ndarray
    frozen_logits: np.ndarray
    plastic_logits: np.ndarray
    frozen_hidden: list[np.ndarray]
    plastic_hidden: np.ndarray | None
    plastic_preact: np.ndarray | None
    inputs: np.ndarray  # as seen by the MACs (truncated on the fixed backend)


def _check_backend(backend: str) -> None:
    if backend not in ("real", "fixed"):
        raise ValueError(f"unknown backend {backend!r}")


def prepare_inputs(m: RbnnModel, x: np.ndarray, backend: str = "real") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m.input_dim:
        raise ValueError(f"expected inputs of width {m.input_dim}, got shape {x.shape}")
    return to_intermediate(x) if backend == "fixed" else x


def frozen_forward(m: RbnnModel, x: np.ndarray, backend: str = "real") -> tuple[np.ndarray, list[np.ndarray]]:
    """Summed logits and per-subnet hidden activations of the frozen subnets.

    ``x`` must already be prepared (see :func:`prepare_inputs`).
    """
    act, _ = ACTIVATIONS[m.activation]
    q = to_intermediate if backend == "fixed" else (lambda v: v)
    c1, c2 = m.scales
    logits = np.zeros((x.shape[0], m.output_dim))
    hidden = []
    for sub in m.frozen:
        h = q(act(q(c1 * sign_matmul(sub.w1, x))))
        hidden.append(h)
        logits = logits + q(c2 * sign_matmul(sub.w2, h))
    return q(logits), hidden


def plastic_weights(m: RbnnModel, binarize: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Weight values the plastic MACs use, layer scale included.

    Signs times 2**-shift normally; the stored values times 2**-shift when
    ``binarize`` is off (and for the output layer under ``plastic_output="real"``).
    """
    p = m.plastic
    c1, c2 = m.scales
    if binarize:
        w1 = np.where(p.w1 < 0, -c1, c1)
    else:
        w1 = c1 * p.real_w1
    if binarize and m.plastic_output == "binary":
        w2 = np.where(p.w2 < 0, -c2, c2)
    else:
        w2 = c2 * p.real_w2
    return w1, w2


def plastic_forward(w1: np.ndarray, w2: np.ndarray, x: np.ndarray, activation: str = "tanh_opt",
                    backend: str = "real") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(preactivation, hidden, logits) of one subnet given dense weight values."""
    act, _ = ACTIVATIONS[activation]
    q = to_intermediate if backend == "fixed" else (lambda v: v)
    pre = q(x @ w1.T)
    hidden = q(act(pre))
    return pre, hidden, q(hidden @ w2.T)


def forward(m: RbnnModel, x: np.ndarray, *, backend: str = "real", binarize: bool = True,
            frozen_logits: np.ndarray | None = None) -> Forward:
    """Forward pass of the enlarged network on a batch (or single vector) ``x``.

    ``binarize=False`` is a debug switch that runs the plastic MACs on the
    stored multi-bit values.  Callers that already know the frozen logits for
    ``x`` (they never change during training) can pass them in.
    """
    _check_backend(backend)
    single = np.ndim(x) == 1
    xs = prepare_inputs(m, np.atleast_2d(x), backend)
    if frozen_logits is None:
        f_logits, f_hidden = frozen_forward(m, xs, backend)
    else:
        f_logits, f_hidden = np.asarray(frozen_logits, dtype=np.float64).reshape(xs.shape[0], -1), []
    if m.plastic is not None:
        w1, w2 = plastic_weights(m, binarize)
        pre, hidden, p_logits = plastic_forward(w1, w2, xs, m.activation, backend)
    else:
        pre = hidden = None
        p_logits = np.zeros_like(f_logits)
    logits = f_logits + p_logits
    output = softmax(logits)
    if backend == "fixed":
        logits = to_intermediate(logits)
        output = to_intermediate(softmax(logits))
    res = Forward(output, logits, f_logits, p_logits, f_hidden, hidden, pre, xs)
    if single:
        res.output, res.logits = res.output[0], res.logits[0]
        res.frozen_logits, res.plastic_logits = res.frozen_logits[0], res.plastic_logits[0]
    return res


def predict(m: RbnnModel, x: np.ndarray, *, backend: str = "real") -> np.ndarray | int:
    """Arg-max class; ties go to the lowest index."""
    logits = forward(m, x, backend=backend).logits
    if logits.ndim == 1:
        return int(np.argmax(logits))
    return np.argmax(logits, axis=1)


# -- serialisation ------------------------------------------------------------

def serialize(m: RbnnModel) -> bytes:
    """Little-endian: header, packed frozen sign bits, then plastic raws as int16."""
    if m.plastic is not None and m.plastic.bits > 16:
        raise ValueError(f"plastic width {m.plastic.bits} does not fit the 16-bit raw field")
    if not 0 <= m.seed < 2 ** 32:
        raise ValueError("seed must fit in 32 unsigned bits")
    parts = [_HEADER.pack(MAGIC, VERSION, m.hidden_units, m.ledger.initial_bits,
                          m.ledger.recursion_index, m.input_dim, m.output_dim,
                          int(m.plastic is not None), m.seed)]
    parts.extend(sub.to_bytes() for sub in m.frozen)
    if m.plastic is not None:
        parts.append(m.plastic.w1.astype("<i2").tobytes())
        parts.append(m.plastic.w2.astype("<i2").tobytes())
    return b"".join(parts)


def deserialize(data: bytes, *, activation: str = "tanh_opt", plastic_output: str = "binary",
                layer_shifts="auto") -> RbnnModel:
    """Inverse of :func:`serialize`.

    The file does not record activation, output mode or layer shifts; pass
    the values the model was trained with.
    """
    if len(data) < 5:
        raise TruncatedModelError("model file shorter than its magic and version")
    if data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {data[:4]!r}")
    if data[4] != VERSION:
        raise VersionMismatchError(f"unsupported model version {data[4]}")
    if len(data) < _HEADER.size:
        raise TruncatedModelError("header truncated")
    _, _, h0, bits, k, n_in, n_out, has_plastic, seed = _HEADER.unpack_from(data, 0)
    if has_plastic not in (0, 1) or h0 < 1 or not 2 <= bits <= 32 or k > bits:
        raise ModelFormatError("inconsistent header fields")
    n1, n2 = h0 * n_in, n_out * h0
    b1, b2 = -(-n1 // 8), -(-n2 // 8)
    expected = _HEADER.size + k * (b1 + b2) + has_plastic * 2 * (n1 + n2)
    if len(data) < expected:
        raise TruncatedModelError(f"expected {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise ModelFormatError(f"{len(data) - expected} trailing bytes")
    off = _HEADER.size
    frozen = []
    for _ in range(k):
        w1 = SignMatrix(h0, n_in, data[off:off + b1])
        w2 = SignMatrix(n_out, h0, data[off + b1:off + b1 + b2])
        frozen.append(FrozenSubnet(w1, w2))
        off += b1 + b2
    plastic = None
    if has_plastic:
        fmt = QFormat.weight(bits - k)
        raws = np.frombuffer(data, dtype="<i2", count=n1 + n2, offset=off).astype(np.int64)
        if raws.size and (raws.min() < fmt.min_raw or raws.max() > fmt.max_raw):
            raise RawOutOfRangeError(f"plastic raw exceeds {fmt.total_bits} bits")
        plastic = PlasticSubnet(raws[:n1].reshape(h0, n_in), raws[n1:].reshape(n_out, h0), fmt)
    return RbnnModel(h0, BitLedger(h0 * (n_in + n_out), bits, k), frozen, plastic, n_in, n_out,
                     seed, activation, plastic_output, layer_shifts)


def save(m: RbnnModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(m))


def load(path, **kwargs) -> RbnnModel:
    with open(path, "rb") as fh:
        return deserialize(fh.read(), **kwargs)
