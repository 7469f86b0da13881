"""Additive secret sharing and the multiplication protocol.

A secret matrix ``V`` held by one party is split into ``K`` additive
shares: the owner draws ``K-1`` uniform masks, ships one to every other
party, and keeps ``V`` minus their sum.  Addition and subtraction of
shared values are local; element-wise multiplication consumes one
coordinator-issued Beaver triple ``(a, b, c)`` with ``c = a * b``:

* every party computes ``e_k = x_k - a_k`` and ``f_k = y_k - b_k`` and
  sends both to the active party,
* the active party reconstructs ``e`` and ``f`` and broadcasts them,
* every party outputs ``f*a_k + e*b_k + c_k``; the active party adds
  ``e*f`` to its own share.

On the ring backend the combined output carries twice the fixed-point
scale and is rescaled in place by a one-round masked-divide: alongside
each triple the coordinator deals shares of a bounded uniform ``r``
together with ``r // divisor``; parties mask their double-scale shares
with ``r``, the active party opens the masked sum (uniform up to
``2**-trunc_mask_bits`` statistical distance), divides it publicly and
re-shares by subtracting ``r // divisor``.  The result is exact up to
two units in the last fixed-point place for any number of parties.  A
purely local per-share rescale is *not* sound for more than two parties
(the wrap count of the share sum is unknown), which is why the ring
backend pays this extra round; the real backend needs no rescaling and
its multiplication cost is exactly ``(7K - 4)`` elements per value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .backend import Backend
from .errors import ProtocolError, ShareMismatchError
from .runtime import COORDINATOR, Session


@dataclass
class ShareMatrix:
    """One party's additive share of a secret matrix."""

    owner: int
    shape: tuple
    data: np.ndarray | None
    tag: str
    backend: Backend

    @property
    def rows(self) -> int:
        return self.shape[0]

    @property
    def cols(self) -> int:
        return self.shape[1]


class SharedArray:
    """Driver-side handle bundling all K parties' shares of one secret."""

    def __init__(self, shares: dict[int, ShareMatrix], backend: Backend):
        self.shares = shares
        self.backend = backend
        first = next(iter(shares.values()))
        self.shape = first.shape
        self.tag = first.tag

    def share_of(self, k: int) -> ShareMatrix:
        return self.shares[k]

    def data_of(self, k: int):
        return self.shares[k].data

    @property
    def parties(self) -> list[int]:
        return sorted(self.shares)

    def map_local(self, fn, shape, session: Session) -> "SharedArray":
        """Apply the same local transformation to every party's share."""
        tag = session.next_tag()
        out = {
            k: ShareMatrix(k, tuple(shape), None if s.data is None else fn(s.data),
                           tag, self.backend)
            for k, s in self.shares.items()
        }
        return SharedArray(out, self.backend)


# ---------------------------------------------------------------------------
# sharing and reconstruction
# ---------------------------------------------------------------------------


def share(session: Session, owner: int, values=None, *, shape=None,
          phase: str = "share.input", encoded: bool = False) -> SharedArray:
    """Secret-share ``values`` held in plaintext by ``owner``.

    ``values`` are plaintext reals unless ``encoded=True`` (already in
    backend representation).  In dry-run sessions pass ``shape`` instead
    of values.  The K-1 mask shares are drawn from the owner's stream
    and shipped out (ledgered under ``phase``); the owner keeps the
    balance.
    """
    bk = session.backend
    if session.dry_run or values is None:
        if shape is None:
            raise ProtocolError("share() needs values or a shape")
        enc = None
        shape = tuple(shape)
    else:
        enc = values if encoded else bk.encode(np.asarray(values, dtype=np.float64))
        shape = tuple(enc.shape)
    if len(shape) != 2:
        raise ShareMismatchError(f"shares must be matrices, got shape {shape}")

    tag = session.next_tag()
    elements = int(np.prod(shape))
    rng = session.party_rng(owner)
    shares: dict[int, ShareMatrix] = {}
    mask_sum = None
    for k in sorted(session.parties):
        if k == owner:
            continue
        mask = None if enc is None else bk.uniform_mask(shape, rng)
        session.send(owner, k, phase, mask, elements=elements)
        msg = session.recv(k, owner, phase)
        shares[k] = ShareMatrix(k, shape, msg.payload, tag, bk)
        if mask is not None:
            mask_sum = mask if mask_sum is None else bk.add(mask_sum, mask)
    own = None if enc is None else (enc if mask_sum is None else bk.sub(enc, mask_sum))
    shares[owner] = ShareMatrix(owner, shape, own, tag, bk)
    return SharedArray(shares, bk)


def zeros_shared(session: Session, shape) -> SharedArray:
    """All-zero sharing (every party's share is the zero matrix); no traffic."""
    bk = session.backend
    tag = session.next_tag()
    shape = tuple(shape)
    data = None if session.dry_run else bk.zeros(shape)
    shares = {
        k: ShareMatrix(k, shape, None if data is None else data.copy(), tag, bk)
        for k in session.parties
    }
    return SharedArray(shares, bk)


def reconstruct(shares: Sequence[ShareMatrix]) -> np.ndarray:
    """Combine all K shares of one secret back into plaintext.

    Raises :class:`ShareMismatchError` when tags or dimensions disagree.
    """
    shares = list(shares)
    if not shares:
        raise ShareMismatchError("no shares to reconstruct")
    tag, shape = shares[0].tag, shares[0].shape
    for s in shares[1:]:
        if s.tag != tag:
            raise ShareMismatchError(f"mixed share tags {tag!r} and {s.tag!r}")
        if s.shape != shape:
            raise ShareMismatchError(f"mixed share shapes {shape} and {s.shape}")
    bk = shares[0].backend
    total = shares[0].data
    for s in shares[1:]:
        total = bk.add(total, s.data)
    return bk.decode(total)


def audit_reconstruct(session: Session, shared: SharedArray):
    """Harness-side reconstruction for oracle checks (audit mode only).

    This is test instrumentation, not a party action: nothing is sent
    and no transcript entry is recorded.
    """
    if not session.audit:
        raise ProtocolError("audit_reconstruct requires an audit-mode session")
    if session.dry_run:
        return None
    return reconstruct([shared.share_of(k) for k in session.parties])


def open_at(session: Session, shared: SharedArray, at: int, phase: str):
    """Protocol reconstruction of a shared value at one party.

    Every other party ships its share to ``at``; the receiving party
    combines, decodes and logs the materialisation in its transcript.
    The combination runs in ascending party order so the result does not
    depend on which party aggregates.
    """
    bk = session.backend
    elements = int(np.prod(shared.shape))
    received: dict[int, np.ndarray | None] = {at: shared.data_of(at)}
    for k in sorted(session.parties):
        if k == at:
            continue
        session.send(k, at, phase, shared.data_of(k), elements=elements)
        msg = session.recv(at, k, phase)
        received[k] = msg.payload
    session.materialize(at, phase, shared.shape)
    total = None
    for k in sorted(received):
        if received[k] is None:
            return None
        total = received[k] if total is None else bk.add(total, received[k])
    return bk.decode(total)


# ---------------------------------------------------------------------------
# local linear share algebra
# ---------------------------------------------------------------------------


def _check_pair(x: SharedArray, y: SharedArray):
    if x.shape != y.shape:
        raise ShareMismatchError(f"shape mismatch {x.shape} vs {y.shape}")


def add_local(x: ShareMatrix, y: ShareMatrix) -> ShareMatrix:
    """Element-wise share addition at one party."""
    if x.owner != y.owner:
        raise ShareMismatchError("shares belong to different parties")
    if x.shape != y.shape:
        raise ShareMismatchError(f"shape mismatch {x.shape} vs {y.shape}")
    bk = x.backend
    data = None if x.data is None or y.data is None else bk.add(x.data, y.data)
    return ShareMatrix(x.owner, x.shape, data, f"{x.tag}+{y.tag}", bk)


def sub_local(x: ShareMatrix, y: ShareMatrix) -> ShareMatrix:
    if x.owner != y.owner:
        raise ShareMismatchError("shares belong to different parties")
    if x.shape != y.shape:
        raise ShareMismatchError(f"shape mismatch {x.shape} vs {y.shape}")
    bk = x.backend
    data = None if x.data is None or y.data is None else bk.sub(x.data, y.data)
    return ShareMatrix(x.owner, x.shape, data, f"{x.tag}-{y.tag}", bk)


def add_shared(session: Session, x: SharedArray, y: SharedArray) -> SharedArray:
    """Local addition performed by every party; reconstructs to X + Y."""
    _check_pair(x, y)
    bk = session.backend
    tag = session.next_tag()
    shares = {}
    for k in session.parties:
        xd, yd = x.data_of(k), y.data_of(k)
        data = None if xd is None or yd is None else bk.add(xd, yd)
        shares[k] = ShareMatrix(k, x.shape, data, tag, bk)
    return SharedArray(shares, bk)


def sub_shared(session: Session, x: SharedArray, y: SharedArray) -> SharedArray:
    _check_pair(x, y)
    bk = session.backend
    tag = session.next_tag()
    shares = {}
    for k in session.parties:
        xd, yd = x.data_of(k), y.data_of(k)
        data = None if xd is None or yd is None else bk.sub(xd, yd)
        shares[k] = ShareMatrix(k, x.shape, data, tag, bk)
    return SharedArray(shares, bk)


def scale_shared(session: Session, x: SharedArray, factor) -> SharedArray:
    """Multiply a shared value by a public scalar, locally at every party.

    Real backend: any real factor.  Ring backend: integer factors only
    (non-integer public scaling needs a protocol round; the iterative
    trainer folds such factors into the multiplication rescale instead).
    """
    bk = session.backend
    if bk.is_ring:
        if float(factor) != int(factor):
            raise ProtocolError(
                "ring shares only support local scaling by integers"
            )
        const = np.uint64(int(factor) % (2**64))
        fn = lambda d: bk.mul_raw(d, const)
    else:
        fn = lambda d: d * float(factor)
    return x.map_local(fn, x.shape, session)


def add_public(session: Session, x: SharedArray, public) -> SharedArray:
    """Add a public plaintext matrix: only the active party adjusts its share."""
    bk = session.backend
    tag = session.next_tag()
    enc = None if session.dry_run else bk.encode(np.asarray(public, dtype=np.float64))
    shares = {}
    for k in session.parties:
        data = x.data_of(k)
        if data is not None:
            data = bk.add(data, enc) if k == session.active else data.copy()
        shares[k] = ShareMatrix(k, x.shape, data, tag, bk)
    return SharedArray(shares, bk)


def hstack_shared(session: Session, blocks: Sequence[SharedArray]) -> SharedArray:
    """Column-wise concatenation; local at every party."""
    rows = blocks[0].shape[0]
    for b in blocks:
        if b.shape[0] != rows:
            raise ShareMismatchError("row count mismatch in hstack")
    cols = sum(b.shape[1] for b in blocks)
    bk = session.backend
    tag = session.next_tag()
    shares = {}
    for k in session.parties:
        parts = [b.data_of(k) for b in blocks]
        data = None if any(p is None for p in parts) else np.hstack(parts)
        shares[k] = ShareMatrix(k, (rows, cols), data, tag, bk)
    return SharedArray(shares, bk)


def vstack_shared(session: Session, blocks: Sequence[SharedArray]) -> SharedArray:
    """Row-wise concatenation; local at every party."""
    cols = blocks[0].shape[1]
    for b in blocks:
        if b.shape[1] != cols:
            raise ShareMismatchError("column count mismatch in vstack")
    rows = sum(b.shape[0] for b in blocks)
    bk = session.backend
    tag = session.next_tag()
    shares = {}
    for k in session.parties:
        parts = [b.data_of(k) for b in blocks]
        data = None if any(p is None for p in parts) else np.vstack(parts)
        shares[k] = ShareMatrix(k, (rows, cols), data, tag, bk)
    return SharedArray(shares, bk)


def take_rows_shared(session: Session, x: SharedArray, row_index: np.ndarray,
                     zero_mask: np.ndarray) -> SharedArray:
    """Re-index rows of a shared column vector, zeroing masked rows.

    The index pattern is public structure (a deterministic function of the
    lag layout), so every party applies the same reindexing locally.
    """
    n = len(row_index)
    bk = session.backend
    tag = session.next_tag()
    shares = {}
    for k in session.parties:
        data = x.data_of(k)
        if data is not None:
            data = data[row_index, :].copy()
            data[zero_mask, :] = bk.zeros((int(zero_mask.sum()), x.shape[1]))
        shares[k] = ShareMatrix(k, (n, x.shape[1]), data, tag, bk)
    return SharedArray(shares, bk)


# ---------------------------------------------------------------------------
# Beaver triples
# ---------------------------------------------------------------------------


@dataclass
class BeaverTriple:
    """Per-party shares of (a, b, c = a*b), plus ring rescale randomness."""

    a: SharedArray
    b: SharedArray
    c: SharedArray
    divisor: int | None = None
    trunc_r: SharedArray | None = None
    trunc_rhi: SharedArray | None = None
    consumed: bool = field(default=False)

    @property
    def shape(self):
        return self.a.shape

    def consume(self):
        if self.consumed:
            raise ProtocolError("Beaver triple reuse: triples are one-time use")
        self.consumed = True


def _deal(session: Session, plain, shape, rng) -> dict[int, np.ndarray | None]:
    """Split a coordinator-held value into K uniform-masked shares."""
    bk = session.backend
    out: dict[int, np.ndarray | None] = {}
    if plain is None:
        return {k: None for k in session.parties}
    acc = None
    parties = sorted(session.parties)
    for k in parties[1:]:
        mask = bk.uniform_mask(shape, rng)
        out[k] = mask
        acc = mask if acc is None else bk.add(acc, mask)
    out[parties[0]] = plain if acc is None else bk.sub(plain, acc)
    return out


def issue_triple(session: Session, shape, divisor: int | None = None) -> BeaverTriple:
    """Coordinator-side generation and delivery of one Beaver triple.

    Ring triples are uniform ring elements with ``c = a*b`` modulo
    ``2**64`` and carry a rescale pair ``(r, r // divisor)``; real
    triples are bounded uniform reals with exact ``c = a*b``.  Each
    party receives its bundle in one ``triples``-phase message.
    """
    bk = session.backend
    shape = tuple(shape)
    rng = session.coordinator.rng
    elements = int(np.prod(shape))
    dry = session.dry_run

    if bk.is_ring:
        if divisor is None:
            divisor = bk.scale
        if bk.trunc_mask_bits < 1:
            raise ProtocolError(
                f"frac_bits={bk.frac_bits} leaves no masking room for the "
                f"multiplication rescale"
            )
        if dry:
            a = b = c = r = rhi = None
        else:
            a = bk.uniform_mask(shape, rng)
            b = bk.uniform_mask(shape, rng)
            c = bk.mul_raw(a, b)
            r = rng.integers(0, 2 ** (bk.trunc_bound_bits + bk.trunc_mask_bits),
                             size=shape, dtype=np.uint64)
            rhi = np.floor_divide(r, np.uint64(divisor))
        values = [a, b, c, r, rhi]
        per_party = 5 * elements
    else:
        if dry:
            a = b = c = None
        else:
            a = rng.uniform(-bk.mask_bound, bk.mask_bound, size=shape)
            b = rng.uniform(-bk.mask_bound, bk.mask_bound, size=shape)
            c = a * b
        values = [a, b, c]
        per_party = 3 * elements

    dealt = [_deal(session, v, shape, rng) for v in values]
    per_party_payload: dict[int, np.ndarray | None] = {}
    for k in sorted(session.parties):
        pieces = [d[k] for d in dealt]
        payload = None if any(p is None for p in pieces) else np.vstack(pieces)
        session.send(COORDINATOR, k, "triples", payload, elements=per_party)
        session.recv(k, COORDINATOR, "triples")
        per_party_payload[k] = payload

    def collect(i: int) -> SharedArray:
        tag = session.next_tag()
        shares = {}
        rows = shape[0]
        for k in session.parties:
            payload = per_party_payload[k]
            piece = None if payload is None else payload[i * rows:(i + 1) * rows, :]
            shares[k] = ShareMatrix(k, shape, piece, tag, bk)
        return SharedArray(shares, bk)

    triple = BeaverTriple(a=collect(0), b=collect(1), c=collect(2), divisor=divisor)
    if bk.is_ring:
        triple.trunc_r = collect(3)
        triple.trunc_rhi = collect(4)
    return triple


def coordinator_issue_triples(session: Session, shape, count: int,
                              divisor: int | None = None) -> list[BeaverTriple]:
    """Issue a batch of triples sized for an upcoming protocol phase."""
    return [issue_triple(session, shape, divisor=divisor) for _ in range(count)]


# ---------------------------------------------------------------------------
# multiplication
# ---------------------------------------------------------------------------


def _rescale_shared_product(session: Session, z: dict[int, np.ndarray | None],
                            shape, triple: BeaverTriple) -> dict[int, np.ndarray | None]:
    """One-round masked divide of double-scale ring shares (see module doc)."""
    bk = session.backend
    divisor = triple.divisor
    elements = int(np.prod(shape))
    offset = np.uint64(1) << np.uint64(bk.trunc_bound_bits)
    offset_hi = np.uint64((1 << bk.trunc_bound_bits) // divisor)

    masked: dict[int, np.ndarray | None] = {}
    for k in session.parties:
        zk, rk = z[k], triple.trunc_r.data_of(k)
        if zk is None or rk is None:
            masked[k] = None
        else:
            w = bk.add(zk, rk)
            if k == session.active:
                w = bk.add(w, np.full(shape, offset, dtype=np.uint64))
            masked[k] = w

    active = session.active
    total = masked[active]
    for k in sorted(session.parties):
        if k == active:
            continue
        session.send(k, active, "beaver.trunc", masked[k], elements=elements)
        msg = session.recv(active, k, "beaver.trunc")
        if msg.payload is not None:
            total = bk.add(total, msg.payload)
    session.materialize(active, "beaver.trunc", shape)

    out: dict[int, np.ndarray | None] = {}
    for k in session.parties:
        rhi = triple.trunc_rhi.data_of(k)
        if rhi is None:
            out[k] = None
        elif k == active:
            public_quot = np.floor_divide(total, np.uint64(divisor))
            out[k] = bk.sub(bk.sub(public_quot, np.full(shape, offset_hi,
                                                        dtype=np.uint64)), rhi)
        else:
            out[k] = bk.neg(rhi)
    return out


def beaver_mul(session: Session, x: SharedArray, y: SharedArray,
               triple: BeaverTriple | None = None,
               divisor: int | None = None) -> SharedArray:
    """Element-wise product of two shared matrices.

    Consumes one same-shaped triple (auto-requested from the coordinator
    when not supplied).  The only plaintext values materialised are the
    masked differences ``e`` and ``f`` (real backend); the ring backend
    additionally opens one bounded-uniform masked sum at the active
    party for the fixed-point rescale.  A custom ring ``divisor`` folds
    an extra public down-scaling into that rescale for free.
    """
    _check_pair(x, y)
    if triple is None:
        triple = issue_triple(session, x.shape, divisor=divisor)
    if triple.shape != x.shape:
        raise ShareMismatchError(
            f"triple shape {triple.shape} does not match operands {x.shape}"
        )
    triple.consume()

    bk = session.backend
    shape = x.shape
    elements = int(np.prod(shape))
    active = session.active

    # local masked differences
    ef: dict[int, tuple] = {}
    for k in session.parties:
        xd, yd = x.data_of(k), y.data_of(k)
        ad, bd = triple.a.data_of(k), triple.b.data_of(k)
        if xd is None or ad is None:
            ef[k] = (None, None)
        else:
            ef[k] = (bk.sub(xd, ad), bk.sub(yd, bd))

    # passive parties ship their e/f shares to the active party
    e_total, f_total = ef[active]
    for k in sorted(session.parties):
        if k == active:
            continue
        ek, fk = ef[k]
        payload = None if ek is None else np.vstack([ek, fk])
        session.send(k, active, "beaver.ef", payload, elements=2 * elements)
        msg = session.recv(active, k, "beaver.ef")
        if msg.payload is not None:
            rows = shape[0]
            e_total = bk.add(e_total, msg.payload[:rows, :])
            f_total = bk.add(f_total, msg.payload[rows:, :])
    session.materialize(active, "beaver.ef", shape)

    # broadcast the reconstructed e and f
    bcast = None if e_total is None else np.vstack([e_total, f_total])
    for k in sorted(session.parties):
        if k == active:
            continue
        session.send(active, k, "beaver.ef.bcast", bcast, elements=2 * elements)
        session.recv(k, active, "beaver.ef.bcast")
        session.materialize(k, "beaver.ef", shape)

    # local combination: f*a_k + e*b_k + c_k (+ e*f at the active party)
    z: dict[int, np.ndarray | None] = {}
    for k in session.parties:
        ad, bd, cd = (triple.a.data_of(k), triple.b.data_of(k),
                      triple.c.data_of(k))
        if e_total is None or ad is None:
            z[k] = None
            continue
        zk = bk.add(bk.add(bk.mul_raw(f_total, ad), bk.mul_raw(e_total, bd)), cd)
        if k == active:
            zk = bk.add(zk, bk.mul_raw(e_total, f_total))
        z[k] = zk

    if bk.is_ring:
        z = _rescale_shared_product(session, z, shape, triple)

    tag = session.next_tag()
    shares = {k: ShareMatrix(k, shape, z[k], tag, bk) for k in session.parties}
    return SharedArray(shares, bk)
