"""Numeric encodings for secret shares.

Two interchangeable backends:

* ``real`` — shares are IEEE float64 values and masks are uniform draws
  from ``[-mask_bound, +mask_bound]``.  Arithmetic is ordinary real
  arithmetic, so reconstructed protocol outputs agree with plaintext
  oracles up to float rounding.  Masking is only statistically hiding;
  this backend exists for oracle-equivalence testing and evaluation runs.

* ``ring`` — shares are unsigned 64-bit ring elements interpreted in
  two's complement, values encoded in fixed point with ``frac_bits``
  fractional bits.  Masks are uniform over the whole ring, so a single
  share is information-theoretically hiding.  Products of encoded values
  carry twice the fixed-point scale and must be rescaled; the local
  rescaling helpers here are exact arithmetic shifts, while rescaling of
  *shared* products is a small protocol (see :mod:`stv.sharing`).

All operations are pure functions of immutable inputs.  Every operation
accepts ``None`` payloads and returns ``None``: cost-accounting sessions
run the full protocols with shape-only messages and no numeric work.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EncodingRangeError

RING_BITS = 64
RING_MODULUS = 2**64

#: Bytes transmitted per matrix element, identical for both backends so
#: that communication totals can be compared across backends.
ELEMENT_BYTES = 8

#: Headroom (in bits) reserved above the double-scale fixed-point range
#: when rescaling shared products.  Bounds the magnitude of decoded
#: products at ``2**TRUNC_HEADROOM_BITS``.
TRUNC_HEADROOM_BITS = 12


@dataclass(frozen=True)
class Backend:
    """Numeric backend configuration for one session.

    Parameters
    ----------
    kind:
        ``"real"`` or ``"ring"``.
    frac_bits:
        Fixed-point fractional bits (ring only), in ``[8, 40]``.
    mask_bound:
        Half-width of the uniform masking interval (real only).  Kept
        within a few times the unit data scale: widening it degrades the
        float64 accuracy of masked sums faster than it improves hiding,
        and the real backend is a testing backend, not a security one.
    """

    kind: str = "real"
    frac_bits: int = 20
    mask_bound: float = 4.0

    def __post_init__(self):
        if self.kind not in ("real", "ring"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if not 8 <= self.frac_bits <= 40:
            raise ConfigError("frac_bits must lie in [8, 40]")
        if not self.mask_bound > 0:
            raise ConfigError("mask_bound must be positive")

    # -- derived constants -------------------------------------------------

    @property
    def is_ring(self) -> bool:
        return self.kind == "ring"

    @property
    def scale(self) -> int:
        """Fixed-point scale ``2**frac_bits``."""
        return 1 << self.frac_bits

    @property
    def max_abs_value(self) -> float:
        """Largest encodable magnitude, ``2**(63 - frac_bits)``."""
        return float(2 ** (63 - self.frac_bits))

    @property
    def trunc_bound_bits(self) -> int:
        """Magnitude bound (bits) assumed for double-scale shared products."""
        return 2 * self.frac_bits + TRUNC_HEADROOM_BITS

    @property
    def trunc_mask_bits(self) -> int:
        """Statistical-masking bits available to the rescaling protocol."""
        return 63 - self.trunc_bound_bits

    def tolerance(self) -> float:
        """Per-element reconstruction tolerance for tests."""
        return 2.0 ** (-self.frac_bits) if self.is_ring else 1e-9

    # -- encode / decode ---------------------------------------------------

    def encode(self, values):
        """Map plaintext reals to backend representation.

        Real: identity (as float64).  Ring: ``round(v * 2**frac_bits)``
        modulo ``2**64``; raises :class:`EncodingRangeError` when any
        value falls outside the representable range.
        """
        if values is None:
            return None
        arr = np.asarray(values, dtype=np.float64)
        if not self.is_ring:
            return arr.copy()
        if arr.size and np.max(np.abs(arr)) >= self.max_abs_value:
            raise EncodingRangeError(
                f"value exceeds ring range ±2^{63 - self.frac_bits}"
            )
        scaled = np.rint(arr * self.scale).astype(np.int64)
        return scaled.astype(np.uint64)

    def decode(self, data):
        """Inverse of :meth:`encode`; ring elements are read as two's complement."""
        if data is None:
            return None
        if not self.is_ring:
            return np.asarray(data, dtype=np.float64)
        signed = np.ascontiguousarray(data, dtype=np.uint64).view(np.int64)
        return signed.astype(np.float64) / self.scale

    # -- local share arithmetic (exact in both backends) --------------------

    def zeros(self, shape):
        dtype = np.uint64 if self.is_ring else np.float64
        return np.zeros(shape, dtype=dtype)

    def add(self, x, y):
        if x is None or y is None:
            return None
        return x + y

    def sub(self, x, y):
        if x is None or y is None:
            return None
        return x - y

    def neg(self, x):
        if x is None:
            return None
        if self.is_ring:
            return np.uint64(0) - x
        return -x

    def mul_raw(self, x, y):
        """Element-wise product without rescaling.

        In the ring backend the result carries scale ``2**(2*frac_bits)``
        and must be rescaled before further use.
        """
        if x is None or y is None:
            return None
        return x * y

    def sum(self, x, axis=None, keepdims=False):
        if x is None:
            return None
        return np.sum(x, axis=axis, keepdims=keepdims)

    def scale_real(self, x, factor: float):
        """Multiply a real-backend share by a public real factor (local)."""
        if self.is_ring:
            raise ConfigError(
                "non-integer public scaling of ring shares needs a protocol round"
            )
        if x is None:
            return None
        return x * factor

    def local_trunc(self, x, divisor: int | None = None):
        """Exact rescale of a locally held double-scale value.

        Arithmetic (sign-preserving) integer division by ``divisor``
        (default ``2**frac_bits``).  Identity on the real backend.
        """
        if x is None:
            return None
        if not self.is_ring:
            return x
        signed = np.ascontiguousarray(x, dtype=np.uint64).view(np.int64)
        if divisor is None:
            shifted = signed >> np.int64(self.frac_bits)
        else:
            shifted = np.floor_divide(signed, np.int64(divisor))
        return shifted.astype(np.uint64)

    # -- randomness ---------------------------------------------------------

    def uniform_mask(self, shape, rng: np.random.Generator):
        """One additive mask: uniform over the ring, or over the real interval."""
        if self.is_ring:
            return rng.integers(0, RING_MODULUS, size=shape, dtype=np.uint64)
        return rng.uniform(-self.mask_bound, self.mask_bound, size=shape)


def ring_mul_truncate(x, y, backend: Backend):
    """Fixed-point product of two locally held encoded values.

    Multiplies and rescales by ``2**frac_bits`` with an exact arithmetic
    shift.  Raises :class:`EncodingRangeError` when the double-scale
    intermediate would overflow the signed 64-bit range.  On the real
    backend this is a plain product.
    """
    if not backend.is_ring:
        return x * y
    vx, vy = backend.decode(x), backend.decode(y)
    if np.any(np.abs(vx * vy) >= 2.0 ** (63 - 2 * backend.frac_bits)):
        raise EncodingRangeError("fixed-point product exceeds representable range")
    return backend.local_trunc(backend.mul_raw(x, y))


def backend_from_config(name: str, frac_bits: int = 20, mask_bound: float = 4.0) -> Backend:
    """Build a :class:`Backend` from config-file / CLI values."""
    return Backend(kind=name, frac_bits=frac_bits, mask_bound=mask_bound)
