"""Secret-shared linear forecaster training and inference.

Training runs entirely on shares through the secure matrix protocols:

* direct: ``A = (X'X + ridge*I)^-1 X'y`` via secure transpose, two
  secure multiplications and the perturbation inverse — no party ever
  materialises plaintext ``X`` or ``y``;
* iterative: ``A := A - (lr/N) X'(XA - y)`` for a fixed number of
  full-batch iterations, two secure multiplications per iteration plus
  local share updates (the public factor ``lr/N`` is applied locally on
  the real backend and folded into the multiplication rescale divisor
  on the ring backend, so no extra round is spent).

The two-pass fit first trains with residual columns at zero, estimates
residuals on shares as ``phi_y - phi_x @ A``, splices them into the
residual columns (a local reindex of shares) and refits.

Inference is serverless: each forecast step exists as a distributed
share until the requesting party aggregates it.  The aggregated value is
routed to the active party, which owns the lag history and the series
transform, appends it for the next step's autoregressive features, and
returns the original-scale value to the requester.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError
from .linalg import secure_inverse, secure_matmul, secure_transpose
from .runtime import Session
from .sharing import (SharedArray, add_public, audit_reconstruct, hstack_shared,
                      open_at, scale_shared, share, sub_shared, take_rows_shared,
                      zeros_shared)
from .timeseries import (Column, ExoColumn, PolynomialSpec, col_values,
                         design_columns, residual_lag_indexing, SeriesTransform)


@dataclass
class FitConfig:
    """Least-squares fit configuration.

    ``method`` selects the direct normal-equation solve (``"ne"``) or
    iterative gradient descent (``"gd"``) with learning rate ``lr`` for
    ``iters`` full-batch iterations.  ``ridge`` is added to the Gram
    diagonal before inversion (public constant; keeps zero residual
    columns and small windows solvable — set 0 to disable).  ``passes``
    counts total fits in the two-step regression.  ``audit_every``
    enables reconstruction checkpoints in audit sessions.
    """

    method: str = "ne"
    lr: float = 0.1
    iters: int = 100
    ridge: float = 1e-6
    passes: int = 2
    init: str = "zeros"
    audit_every: int = 10

    def __post_init__(self):
        if self.method not in ("ne", "gd"):
            raise ConfigError(f"unknown fit method {self.method!r}")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.iters < 1:
            raise ConfigError("iteration count must be positive")
        if self.ridge < 0:
            raise ConfigError("ridge must be non-negative")
        if self.init not in ("zeros", "random"):
            raise ConfigError(f"unknown initialisation {self.init!r}")


@dataclass
class SharedDesign:
    """Secret-shared lagged design: features, targets, column roles."""

    phi_x: SharedArray
    phi_y: SharedArray
    columns: tuple[Column, ...]
    maxlag: int

    @property
    def n_rows(self) -> int:
        return self.phi_x.shape[0]

    @property
    def n_cols(self) -> int:
        return self.phi_x.shape[1]


@dataclass
class CoefficientShares:
    """Per-party shares of the coefficient vector."""

    coef: SharedArray
    spec: PolynomialSpec | None
    columns: tuple[Column, ...]


@dataclass
class FitResult:
    coefficients: CoefficientShares
    design: SharedDesign
    residual_shares: SharedArray | None = None
    #: audit-mode reconstruction after selected iterations: (iteration, A)
    trace: list = field(default_factory=list)


def share_design(session: Session, y: np.ndarray | None, exo: list[ExoColumn],
                 spec: PolynomialSpec,
                 residual_shares: SharedArray | None = None,
                 n_obs: int | None = None) -> SharedDesign:
    """Assemble the shared design matrix at the session boundary.

    The active party shares the lagged-target block and the targets;
    each exogenous owner shares its own (already scaled) column;
    residual columns are public zeros on the first pass (no traffic) or
    local reindexings of the supplied residual shares.
    """
    if y is not None:
        y = np.asarray(y, dtype=np.float64).ravel()
        n_obs = len(y)
    if n_obs is None:
        raise ConfigError("share_design needs the series or its length")
    maxlag = spec.maxlag
    n_eff = n_obs - maxlag
    if n_eff <= 0:
        raise ConfigError(
            f"series of length {n_obs} is too short for maximum lag {maxlag}"
        )
    columns = design_columns(spec)

    blocks: list[SharedArray] = []
    pending_target: list[np.ndarray] = []

    def flush_target_block():
        if not pending_target:
            return
        block = np.column_stack(pending_target)
        blocks.append(share(session, session.active, block,
                            phase="share.input"))
        pending_target.clear()

    for col in columns:
        if col.kind in ("ar", "sar"):
            if session.dry_run:
                blocks.append(share(session, session.active,
                                    shape=(n_eff, 1), phase="share.input"))
            else:
                pending_target.append(y[maxlag - col.lag: n_obs - col.lag])
        elif col.kind in ("ma", "sma"):
            flush_target_block()
            if residual_shares is None:
                blocks.append(zeros_shared(session, (n_eff, 1)))
            else:
                idx, zero_mask = residual_lag_indexing(n_eff, col.lag)
                blocks.append(take_rows_shared(session, residual_shares,
                                               idx, zero_mask))
        else:
            flush_target_block()
            if session.dry_run:
                blocks.append(share(session, col.party, shape=(n_eff, 1),
                                    phase="share.input"))
            else:
                values = np.asarray(col_values(exo, col), dtype=np.float64)
                blocks.append(share(session, col.party,
                                    values[maxlag:].reshape(-1, 1),
                                    phase="share.input"))
    flush_target_block()

    phi_x = hstack_shared(session, blocks) if blocks else zeros_shared(
        session, (n_eff, 0))
    if session.dry_run:
        phi_y = share(session, session.active, shape=(n_eff, 1),
                      phase="share.input")
    else:
        phi_y = share(session, session.active, y[maxlag:].reshape(-1, 1),
                      phase="share.input")
    return SharedDesign(phi_x=phi_x, phi_y=phi_y, columns=columns,
                        maxlag=maxlag)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def fit_direct(session: Session, design: SharedDesign,
               cfg: FitConfig | None = None) -> FitResult:
    """Normal-equation solve on shares."""
    cfg = cfg or FitConfig()
    m = design.n_cols
    xt = secure_transpose(session, design.phi_x)
    gram = secure_matmul(session, xt, design.phi_x)
    if cfg.ridge > 0:
        gram = add_public(session, gram, cfg.ridge * np.eye(m))
    xty = secure_matmul(session, xt, design.phi_y)
    gram_inv = secure_inverse(session, gram)
    coef = secure_matmul(session, gram_inv, xty)
    return FitResult(
        coefficients=CoefficientShares(coef, None, design.columns),
        design=design)


def fit_iterative(session: Session, design: SharedDesign,
                  cfg: FitConfig) -> FitResult:
    """Gradient-descent fit on shares, ``cfg.iters`` lock-step iterations."""
    m, n = design.n_cols, design.n_rows
    bk = session.backend

    if cfg.init == "random" and not session.dry_run:
        start = session.party_rng(session.active).uniform(-0.5, 0.5, size=(m, 1))
        coef = share(session, session.active, start, phase="share.init")
    else:
        coef = zeros_shared(session, (m, 1))

    xt = secure_transpose(session, design.phi_x)
    divisor = None
    if bk.is_ring:
        divisor = max(1, round(bk.scale * n / cfg.lr))

    if session.audit and not session.dry_run:
        x_plain = audit_reconstruct(session, design.phi_x)
        top_eig = float(np.linalg.eigvalsh(x_plain.T @ x_plain)[-1])
        if cfg.lr * top_eig / n >= 2.0:
            warnings.warn(
                f"learning rate {cfg.lr} exceeds the stability bound "
                f"{2.0 * n / top_eig:.3g}; gradient descent may diverge",
                RuntimeWarning, stacklevel=2)

    trace: list = []
    for i in range(cfg.iters):
        pred = secure_matmul(session, design.phi_x, coef)
        resid = sub_shared(session, pred, design.phi_y)
        if bk.is_ring:
            step = secure_matmul(session, xt, resid, divisor=divisor)
        else:
            grad = secure_matmul(session, xt, resid)
            step = scale_shared(session, grad, cfg.lr / n)
        coef = sub_shared(session, coef, step)

        if (session.audit and not session.dry_run and cfg.audit_every
                and (i + 1) % cfg.audit_every == 0):
            snapshot = audit_reconstruct(session, coef)
            if not np.all(np.isfinite(snapshot)):
                raise DivergenceError(
                    f"non-finite coefficients at iteration {i + 1}"
                )
            trace.append((i + 1, snapshot))

    return FitResult(
        coefficients=CoefficientShares(coef, None, design.columns),
        design=design, trace=trace)


def _fit(session: Session, design: SharedDesign, cfg: FitConfig) -> FitResult:
    if cfg.method == "ne":
        return fit_direct(session, design, cfg)
    return fit_iterative(session, design, cfg)


def two_step_fit(session: Session, y: np.ndarray | None, exo: list[ExoColumn],
                 spec: PolynomialSpec, cfg: FitConfig | None = None,
                 n_obs: int | None = None) -> FitResult:
    """Train the linear forecaster with the two-pass residual regression.

    Residual estimation happens on shares (one secure multiplication and
    a local subtraction); the refit sees the estimates through a local
    reindex of the residual shares.  Without residual terms this is a
    single fit.
    """
    cfg = cfg or FitConfig()
    design = share_design(session, y, exo, spec, n_obs=n_obs)
    result = _fit(session, design, cfg)
    residual_shares = None
    if spec.has_ma_terms and cfg.passes >= 2:
        for _ in range(cfg.passes - 1):
            pred = secure_matmul(session, design.phi_x, result.coefficients.coef)
            residual_shares = sub_shared(session, design.phi_y, pred)
            design = share_design(session, y, exo, spec,
                                  residual_shares=residual_shares, n_obs=n_obs)
            result = _fit(session, design, cfg)
    coef = CoefficientShares(result.coefficients.coef, spec, design.columns)
    return FitResult(coefficients=coef, design=design,
                     residual_shares=residual_shares, trace=result.trace)


# ---------------------------------------------------------------------------
# serverless inference
# ---------------------------------------------------------------------------


@dataclass
class LinearForecaster:
    """Trained model state needed to forecast.

    The coefficient and residual shares are jointly held; the transform
    and lag history are the active party's private state; each
    exogenous owner scales its own future columns.
    """

    coefficients: CoefficientShares
    spec: PolynomialSpec
    transform: SeriesTransform
    history: np.ndarray
    residual_shares: SharedArray | None = None


def forecast_linear(session: Session, model: LinearForecaster,
                    exo_future: list[ExoColumn], horizon: int,
                    requester: int | None = None) -> np.ndarray:
    """Recursive multi-step forecast aggregated at ``requester``.

    Each step's prediction is a secure row-by-coefficients product whose
    shares are summed at the requester; the transformed value is routed
    to the active party for the next step's lags and the original-scale
    value returned.  The output is identical for every requester.
    """
    if horizon < 1:
        raise ConfigError("forecast horizon must be at least 1")
    requester = session.active if requester is None else requester
    if requester not in session.parties:
        raise ConfigError(f"unknown requesting party {requester}")

    spec = model.spec
    columns = model.coefficients.columns
    maxlag = spec.maxlag
    bk = session.backend
    history = list(np.asarray(model.history, dtype=np.float64).ravel())
    n0 = len(history)

    transformed = []
    for h in range(horizon):
        t = n0 + h
        segments: list[SharedArray] = []
        pending_active: list[float] = []

        def flush_active():
            if not pending_active:
                return
            row = np.asarray(pending_active, dtype=np.float64).reshape(1, -1)
            segments.append(share(session, session.active, row,
                                  phase="forecast.share-features"))
            pending_active.clear()

        for col in columns:
            if col.kind in ("ar", "sar"):
                pending_active.append(history[t - col.lag])
            elif col.kind in ("ma", "sma"):
                flush_active()
                src = t - col.lag
                if (model.residual_shares is not None
                        and maxlag <= src < n0):
                    row_idx = np.asarray([src - maxlag])
                    segments.append(take_rows_shared(
                        session, model.residual_shares, row_idx,
                        np.asarray([False])))
                else:
                    segments.append(zeros_shared(session, (1, 1)))
            else:
                flush_active()
                value = np.asarray([[col_values(exo_future, col)[h]]])
                segments.append(share(session, col.party, value,
                                      phase="forecast.share-features"))
        flush_active()

        row_shared = hstack_shared(session, segments)
        pred = secure_matmul(session, row_shared, model.coefficients.coef)
        value = open_at(session, pred, requester, "forecast.aggregate")
        value = float(value[0, 0])

        # route to the active party for the next step's lags
        if requester != session.active:
            session.send(requester, session.active, "forecast.route",
                         None if session.dry_run else np.asarray([[value]]),
                         elements=1)
            session.recv(session.active, requester, "forecast.route")
        history.append(value)
        transformed.append(value)

    # the active party inverts the transform and returns original-scale
    # values to the requester (one element per step)
    restored = model.transform.invert(np.asarray(history))
    out = restored[-horizon:]
    if requester != session.active:
        payload = None if session.dry_run else out.reshape(-1, 1)
        session.send(session.active, requester, "forecast.value", payload,
                     elements=horizon)
        session.recv(requester, session.active, "forecast.value")
    return out
