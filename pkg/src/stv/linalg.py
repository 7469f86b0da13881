"""N-party matrix protocols on secret-shared operands.

Multiplication views every output element as the scalar product of a row
of ``A`` with a column of ``B``: all ``m*p`` row/column pairs are laid
out side by side and multiplied element-wise in a single batched Beaver
round (one length-``n`` triple per output element), followed by a local
sum.  Batching changes the number of messages, never the element counts,
and keeps the per-channel ordering deterministic.

Inversion of a shared ``U`` uses a multiplicative mask: the active party
samples a well-conditioned perturbation ``P`` and shares it, the parties
compute ``U @ P`` securely, a designated passive party (the lowest-index
one) reconstructs the product — which reveals nothing about ``U``
because it does not know ``P`` — inverts it locally in plaintext and
shares the result back, and a final secure multiplication forms
``P @ (U P)^-1 = U^-1``.

Transposition commutes with additive sharing, so it is a purely local
reindexing at every party.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalError, ShareMismatchError, SingularMatrixError
from .runtime import Session
from .sharing import SharedArray, beaver_mul, open_at, share

#: Condition-number ceiling for accepted perturbation matrices.
PERTURBATION_COND_LIMIT = 1e6
#: Resampling budget for the perturbation matrix.
PERTURBATION_MAX_TRIES = 16
#: Reciprocal-condition floor below which the masked product counts as singular.
SINGULARITY_RCOND = 1e-12


def secure_transpose(session: Session, x: SharedArray) -> SharedArray:
    """Transpose a shared matrix; local at every party."""
    rows, cols = x.shape
    return x.map_local(lambda d: np.ascontiguousarray(d.T), (cols, rows), session)


def secure_matmul(session: Session, a: SharedArray, b: SharedArray,
                  divisor: int | None = None) -> SharedArray:
    """Matrix product of shared ``a`` (m x n) and ``b`` (n x p).

    Consumes one length-``n`` vector triple per output element, batched
    into a single multiplication round.  ``divisor`` folds an extra
    public down-scaling into the ring rescale (see
    :func:`stv.sharing.beaver_mul`).
    """
    m, n = a.shape
    n2, p = b.shape
    if n != n2:
        raise ShareMismatchError(
            f"inner dimensions disagree: {a.shape} x {b.shape}"
        )
    bk = session.backend

    rows = a.map_local(
        lambda d: np.broadcast_to(d[:, None, :], (m, p, n)).reshape(m * p, n),
        (m * p, n), session)
    cols = b.map_local(
        lambda d: np.broadcast_to(np.ascontiguousarray(d.T)[None, :, :],
                                  (m, p, n)).reshape(m * p, n),
        (m * p, n), session)

    products = beaver_mul(session, rows, cols, divisor=divisor)
    return products.map_local(
        lambda d: bk.sum(d.reshape(m, p, n), axis=2), (m, p), session)


def _sample_perturbation(session: Session, n: int) -> np.ndarray:
    """Draw a non-singular, well-conditioned perturbation at the active party."""
    rng = session.party_rng(session.active)
    for _ in range(PERTURBATION_MAX_TRIES):
        candidate = rng.uniform(-1.0, 1.0, size=(n, n))
        if np.linalg.cond(candidate) < PERTURBATION_COND_LIMIT:
            return candidate
    raise NumericalError(
        f"no acceptable perturbation matrix after {PERTURBATION_MAX_TRIES} draws"
    )


def secure_inverse(session: Session, u: SharedArray) -> SharedArray:
    """Invert a shared square matrix via a multiplicative perturbation.

    The designated passive aggregator materialises exactly the masked
    product ``U @ P`` and never ``U`` or ``P``.  Raises
    :class:`SingularMatrixError` when the masked product's reciprocal
    condition estimate falls below ``SINGULARITY_RCOND`` (a singular
    ``U`` always trips this, since ``P`` is well conditioned).
    """
    n, n2 = u.shape
    if n != n2:
        raise ShareMismatchError(f"inverse needs a square matrix, got {u.shape}")

    if session.dry_run:
        p_shared = share(session, session.active, shape=(n, n),
                         phase="inverse.share-p")
    else:
        perturbation = _sample_perturbation(session, n)
        p_shared = share(session, session.active, perturbation,
                         phase="inverse.share-p")

    masked = secure_matmul(session, u, p_shared)
    aggregator = session.inverse_aggregator
    masked_plain = open_at(session, masked, aggregator, "inverse.aggregate-up")

    if session.dry_run:
        inv_shared = share(session, aggregator, shape=(n, n),
                           phase="inverse.share-upinv")
    else:
        cond = np.linalg.cond(masked_plain)
        if not np.isfinite(cond) or 1.0 / cond < SINGULARITY_RCOND:
            raise SingularMatrixError(
                f"shared matrix is numerically singular (rcond < {SINGULARITY_RCOND})"
            )
        inv_plain = np.linalg.inv(masked_plain)
        inv_shared = share(session, aggregator, inv_plain,
                           phase="inverse.share-upinv")

    return secure_matmul(session, p_shared, inv_shared)
