"""Series preprocessing and lagged design-matrix construction.

The forecast target is modelled as a linear combination of its own lags,
lagged residuals, seasonal counterparts of both, and contemporaneous
exogenous columns.  Training data is rearranged into a design matrix
whose row for time ``t`` holds ``[y(t-1) .. y(t-p), y(t-s) .., e(t-1) ..
e(t-q), e(t-s) .., x_1(t) .. x_J(t)]`` with target ``y(t)``; residual
columns start at zero and are filled in by the two-step fit.

Everything here is plaintext and runs at the party that owns the data:
the active party differences and scales its target, each feature owner
scales its own columns.  Sharing happens at the session boundary (see
:mod:`stv.linear`), and the same builders back the centralized oracles,
so the plaintext and shared paths are structurally identical.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError


@dataclass(frozen=True)
class PolynomialSpec:
    """Model structure: lag orders, differencing, seasonality, exogenous bindings."""

    p: int = 0
    d: int = 0
    q: int = 0
    P: int = 0
    D: int = 0
    Q: int = 0
    s: int = 0
    exo_bindings: tuple = ()

    def __post_init__(self):
        for name in ("p", "d", "q", "P", "D", "Q", "s"):
            if getattr(self, name) < 0:
                raise ConfigError(f"order {name} must be non-negative")
        if (self.P > 0 or self.D > 0 or self.Q > 0) and self.s < 2:
            raise ConfigError("seasonal orders require a period s >= 2")

    @property
    def num_coefficients(self) -> int:
        return self.p + self.q + self.P + self.Q + len(self.exo_bindings)

    @property
    def maxlag(self) -> int:
        """Rows lost at the front of the (differenced) series."""
        return max(self.p, self.q, self.s * self.P, self.s * self.Q, 0)

    @property
    def has_ma_terms(self) -> bool:
        return self.q > 0 or self.Q > 0

    def without_ma(self) -> "PolynomialSpec":
        return PolynomialSpec(p=self.p, d=self.d, q=0, P=self.P, D=self.D,
                              Q=0, s=self.s, exo_bindings=self.exo_bindings)


@dataclass(frozen=True)
class Column:
    """Role of one design-matrix column."""

    kind: str              # "ar" | "sar" | "ma" | "sma" | "exo"
    lag: int = 0           # lag in steps for ar/sar/ma/sma
    party: int = 1         # owning party (active owns target-derived columns)
    name: str = ""         # exogenous column name

    @property
    def is_residual(self) -> bool:
        return self.kind in ("ma", "sma")


@dataclass(frozen=True)
class ExoColumn:
    """One exogenous regressor: owner, name and (scaled) values."""

    party: int
    name: str
    values: np.ndarray


@dataclass
class DesignMatrix:
    """Plaintext lagged design: features, targets and column roles."""

    phi_x: np.ndarray
    phi_y: np.ndarray
    columns: tuple[Column, ...]
    maxlag: int

    @property
    def n_rows(self) -> int:
        return self.phi_x.shape[0]

    @property
    def n_cols(self) -> int:
        return self.phi_x.shape[1]


def design_columns(spec: PolynomialSpec) -> tuple[Column, ...]:
    """Column layout for a spec: AR, seasonal AR, MA, seasonal MA, exogenous."""
    cols = [Column("ar", lag=i) for i in range(1, spec.p + 1)]
    cols += [Column("sar", lag=spec.s * i) for i in range(1, spec.P + 1)]
    cols += [Column("ma", lag=i) for i in range(1, spec.q + 1)]
    cols += [Column("sma", lag=spec.s * i) for i in range(1, spec.Q + 1)]
    cols += [Column("exo", party=party, name=name)
             for party, name in spec.exo_bindings]
    return tuple(cols)


def residual_lag_indexing(n_rows: int, lag: int):
    """Row mapping that shifts a residual column down by ``lag`` rows.

    Returns ``(index, zero_mask)``: rows with no earlier estimate stay at
    their initial value of zero.  The mapping is public structure and is
    applied identically to plaintext vectors and to shares.
    """
    idx = np.arange(n_rows) - lag
    zero_mask = idx < 0
    return np.clip(idx, 0, None), zero_mask


def build_design(y: np.ndarray, exo: list[ExoColumn], spec: PolynomialSpec,
                 residuals: np.ndarray | None = None) -> DesignMatrix:
    """Assemble the lagged design matrix for a (transformed) target series.

    ``residuals`` holds estimates for the design rows (time ``maxlag``
    onward); residual columns are zero wherever no estimate exists,
    including the whole column when ``residuals`` is omitted.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    n = len(y)
    maxlag = spec.maxlag
    n_eff = n - maxlag
    if n_eff <= 0:
        raise ConfigError(
            f"series of length {n} is too short for maximum lag {maxlag}"
        )
    if spec.exo_bindings and len(spec.exo_bindings) != len(exo):
        raise ConfigError("exogenous columns do not match the spec bindings")

    columns = design_columns(spec)
    blocks = []
    for col in columns:
        if col.kind in ("ar", "sar"):
            blocks.append(y[maxlag - col.lag: n - col.lag])
        elif col.kind in ("ma", "sma"):
            if residuals is None:
                blocks.append(np.zeros(n_eff))
            else:
                resid = np.asarray(residuals, dtype=np.float64).ravel()
                if len(resid) != n_eff:
                    raise ConfigError("residual estimates must cover the design rows")
                idx, zero_mask = residual_lag_indexing(n_eff, col.lag)
                shifted = resid[idx].copy()
                shifted[zero_mask] = 0.0
                blocks.append(shifted)
        else:
            values = np.asarray(col_values(exo, col), dtype=np.float64).ravel()
            if len(values) != n:
                raise ConfigError(
                    f"exogenous column {col.name!r} has {len(values)} rows, "
                    f"expected {n}"
                )
            blocks.append(values[maxlag:])
    phi_x = np.column_stack(blocks) if blocks else np.zeros((n_eff, 0))
    phi_y = y[maxlag:].reshape(-1, 1)
    return DesignMatrix(phi_x, phi_y, columns, maxlag)


def col_values(exo: list[ExoColumn], col: Column) -> np.ndarray:
    for candidate in exo:
        if candidate.party == col.party and candidate.name == col.name:
            return candidate.values
    raise ConfigError(f"missing exogenous column {col.name!r} of party {col.party}")


# ---------------------------------------------------------------------------
# correlation analysis and order suggestion
# ---------------------------------------------------------------------------


def acf_pacf(y: np.ndarray, max_lag: int):
    """Autocorrelations and partial autocorrelations up to ``max_lag``.

    ACF uses the standard biased autocovariance ratio; PACF comes from
    the Durbin-Levinson recursion on the ACF.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    n = len(y)
    if n <= max_lag + 1:
        raise ConfigError(f"series of length {n} is too short for lag {max_lag}")
    centered = y - y.mean()
    denom = float(np.dot(centered, centered))
    if denom < 1e-300 * n or np.isclose(denom / n, 0.0, atol=1e-30):
        raise NumericalError("series variance is degenerate (constant series)")

    acf = np.empty(max_lag + 1)
    acf[0] = 1.0
    for k in range(1, max_lag + 1):
        acf[k] = float(np.dot(centered[:-k], centered[k:])) / denom

    pacf = np.empty(max_lag + 1)
    pacf[0] = 1.0
    phi_prev = np.zeros(0)
    for k in range(1, max_lag + 1):
        if k == 1:
            phi_kk = acf[1]
            phi = np.array([phi_kk])
        else:
            num = acf[k] - float(np.dot(phi_prev, acf[k - 1:0:-1]))
            den = 1.0 - float(np.dot(phi_prev, acf[1:k]))
            phi_kk = num / den if abs(den) > 1e-12 else 0.0
            phi = np.empty(k)
            phi[:-1] = phi_prev - phi_kk * phi_prev[::-1]
            phi[-1] = phi_kk
        pacf[k] = phi_kk
        phi_prev = phi
    return acf, pacf


def suggest_orders(y: np.ndarray, period: int | None = None,
                   max_order: int = 5, max_d: int = 2) -> PolynomialSpec:
    """Heuristic order suggestion from correlation band tests.

    Differencing increases while it strictly reduces variance (up to
    ``max_d``); the AR and MA orders are the last lags whose PACF/ACF
    exceed the 1.96/sqrt(n) band, capped at ``max_order``.  Seasonal
    orders stay zero unless a ``period`` is supplied, in which case the
    band test runs on seasonal lags.  A manual spec always wins over
    this heuristic.
    """
    y = np.asarray(y, dtype=np.float64).ravel()
    if len(y) < 20:
        raise ConfigError(f"need at least 20 observations, got {len(y)}")

    d = 0
    work = y
    for _ in range(max_d):
        differenced = np.diff(work)
        if np.var(differenced) < np.var(work):
            d += 1
            work = differenced
        else:
            break

    n = len(work)
    band = 1.96 / np.sqrt(n)
    max_lag = min(max_order, n - 2)
    acf, pacf = acf_pacf(work, max_lag)
    above_pacf = [k for k in range(1, max_lag + 1) if abs(pacf[k]) > band]
    above_acf = [k for k in range(1, max_lag + 1) if abs(acf[k]) > band]
    p = max(above_pacf) if above_pacf else 0
    q = max(above_acf) if above_acf else 0

    P = Q = D = 0
    s = 0
    if period is not None and period >= 2 and n > 2 * period + 2:
        sacf, spacf = acf_pacf(work, 2 * period)
        sp = [i for i in (1, 2) if abs(spacf[i * period]) > band]
        sq = [i for i in (1, 2) if abs(sacf[i * period]) > band]
        P = max(sp) if sp else 0
        Q = max(sq) if sq else 0
        s = period if (P or Q or D) else 0
    return PolynomialSpec(p=p, d=d, q=q, P=P, D=D, Q=Q, s=s)


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------


@dataclass
class ColumnScaler:
    """Min-max scaler for one feature column, fitted on training rows."""

    low: float
    high: float

    @classmethod
    def fit(cls, values: np.ndarray) -> "ColumnScaler":
        values = np.asarray(values, dtype=np.float64)
        low, high = float(values.min()), float(values.max())
        if high == low:
            raise NumericalError("cannot scale a constant column")
        return cls(low, high)

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (np.asarray(values, dtype=np.float64) - self.low) / (self.high - self.low)

    def invert(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values, dtype=np.float64) * (self.high - self.low) + self.low


@dataclass
class SeriesTransform:
    """Target transform: min-max to [0, 1], then differencing.

    ``d`` regular differences followed by ``D`` seasonal differences of
    period ``s``; the pre-difference heads consumed at each stage are
    stored so that the inverse is exact.
    """

    d: int
    D: int
    s: int
    scaler: ColumnScaler
    heads: list = field(default_factory=list)

    @classmethod
    def fit(cls, y: np.ndarray, d: int, D: int = 0, s: int = 0):
        """Fit on a series and return ``(transform, transformed_series)``."""
        y = np.asarray(y, dtype=np.float64).ravel()
        scaler = ColumnScaler.fit(y)
        work = scaler.apply(y)
        heads = []
        for _ in range(d):
            if len(work) < 2:
                raise ConfigError("series too short to difference")
            heads.append(work[:1].copy())
            work = np.diff(work)
        for _ in range(D):
            if len(work) < s + 1:
                raise ConfigError("series too short for seasonal differencing")
            heads.append(work[:s].copy())
            work = work[s:] - work[:-s]
        return cls(d=d, D=D, s=s, scaler=scaler, heads=heads), work

    def invert(self, transformed: np.ndarray) -> np.ndarray:
        """Map a (possibly extended) transformed series back to the original scale."""
        work = np.asarray(transformed, dtype=np.float64).ravel()
        for head in reversed(self.heads):
            if len(head) == 1:  # regular difference
                work = np.concatenate([head, head[0] + np.cumsum(work)])
            else:  # seasonal difference
                restored = np.empty(len(work) + self.s)
                restored[: self.s] = head
                for i in range(len(work)):
                    restored[i + self.s] = restored[i] + work[i]
                work = restored
        return self.scaler.invert(work)


def transform(y: np.ndarray, d: int, D: int = 0, s: int = 0):
    """Functional form of :meth:`SeriesTransform.fit`."""
    return SeriesTransform.fit(y, d, D=D, s=s)


def inverse_transform(transformed: np.ndarray, meta: SeriesTransform) -> np.ndarray:
    """Functional form of :meth:`SeriesTransform.invert`."""
    return meta.invert(transformed)
