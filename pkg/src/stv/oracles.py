"""Centralized plaintext reference implementations.

These run the same mathematics as the distributed protocols on plain
numpy arrays: normal-equation and gradient-descent least squares, the
two-pass residual regression, the recursive forecaster, and a small
gradient-boosted regression tree learner.  Equivalence tests reconstruct
distributed results and compare against these oracles.

The least-squares solvers are independent of the protocol code (numpy
linear algebra).  The boosted-tree oracle intentionally shares the
split-scoring and candidate-enumeration helpers with the distributed
trainer so that both paths grow identical trees; the scoring formulas
themselves are validated separately against brute-force objective
enumeration in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularMatrixError
from .timeseries import (DesignMatrix, ExoColumn, PolynomialSpec, build_design,
                         col_values, design_columns)

# ---------------------------------------------------------------------------
# linear solvers
# ---------------------------------------------------------------------------


def solve_normal_equation(phi_x: np.ndarray, phi_y: np.ndarray,
                          ridge: float = 0.0) -> np.ndarray:
    """Least-squares coefficients via the normal equations.

    Solves ``(X'X + ridge*I) A = X'y``; raises
    :class:`SingularMatrixError` for singular systems when ridge is 0.
    """
    x = np.asarray(phi_x, dtype=np.float64)
    y = np.asarray(phi_y, dtype=np.float64).reshape(-1, 1)
    gram = x.T @ x + ridge * np.eye(x.shape[1])
    rhs = x.T @ y
    cond = np.linalg.cond(gram) if gram.size else 0.0
    if not np.isfinite(cond) or (cond and 1.0 / cond < 1e-12):
        raise SingularMatrixError("normal-equation system is singular")
    return np.linalg.inv(gram) @ rhs


def gradient_descent(phi_x: np.ndarray, phi_y: np.ndarray, lr: float,
                     iters: int, init: np.ndarray | None = None,
                     callback=None) -> np.ndarray:
    """Full-batch gradient descent on the mean-squared error.

    Repeats ``A := A - (lr/N) * X'(XA - y)`` for ``iters`` iterations
    from ``init`` (zeros by default).  ``callback(i, A)`` observes the
    coefficients after each update.
    """
    x = np.asarray(phi_x, dtype=np.float64)
    y = np.asarray(phi_y, dtype=np.float64).reshape(-1, 1)
    n = x.shape[0]
    coef = np.zeros((x.shape[1], 1)) if init is None else np.array(init, dtype=np.float64).reshape(-1, 1)
    for i in range(iters):
        grad = x.T @ (x @ coef - y)
        coef = coef - (lr / n) * grad
        if callback is not None:
            callback(i, coef.copy())
    return coef


@dataclass
class TwoStepPlain:
    """Result of the plaintext two-pass regression."""

    coef: np.ndarray
    design: DesignMatrix
    residuals: np.ndarray | None
    first_pass_coef: np.ndarray
    first_pass_mse: float
    final_mse: float


def _fit_plain(design: DesignMatrix, method: str, lr: float, iters: int,
               ridge: float) -> np.ndarray:
    if method == "ne":
        return solve_normal_equation(design.phi_x, design.phi_y, ridge=ridge)
    return gradient_descent(design.phi_x, design.phi_y, lr, iters)


def two_step_plain(y: np.ndarray, exo: list[ExoColumn], spec: PolynomialSpec,
                   method: str = "ne", lr: float = 0.1, iters: int = 100,
                   ridge: float = 1e-6, passes: int = 2) -> TwoStepPlain:
    """Two-pass residual regression on a (transformed) series.

    First pass fits with residual columns held at zero, then residuals
    are estimated as ``phi_y - phi_x @ A`` and substituted into the
    residual columns for a refit.  Without residual terms this reduces
    to a single fit.
    """
    design = build_design(y, exo, spec, residuals=None)
    coef = _fit_plain(design, method, lr, iters, ridge)
    first_coef = coef.copy()
    first_mse = float(np.mean((design.phi_x @ coef - design.phi_y) ** 2))
    residuals = None
    if spec.has_ma_terms and passes >= 2:
        for _ in range(passes - 1):
            residuals = (design.phi_y - design.phi_x @ coef).ravel()
            design = build_design(y, exo, spec, residuals=residuals)
            coef = _fit_plain(design, method, lr, iters, ridge)
    final_mse = float(np.mean((design.phi_x @ coef - design.phi_y) ** 2))
    return TwoStepPlain(coef=coef, design=design, residuals=residuals,
                        first_pass_coef=first_coef, first_pass_mse=first_mse,
                        final_mse=final_mse)


def forecast_linear_plain(coef: np.ndarray, spec: PolynomialSpec,
                          history: np.ndarray, exo_future: list[ExoColumn],
                          residuals: np.ndarray | None, horizon: int) -> np.ndarray:
    """Recursive multi-step forecast in transformed space.

    Earlier forecasts feed the autoregressive lags of later steps;
    residual regressors use in-sample estimates where available and zero
    for future steps.
    """
    coef = np.asarray(coef, dtype=np.float64).ravel()
    history = list(np.asarray(history, dtype=np.float64).ravel())
    n0 = len(history)
    maxlag = spec.maxlag
    columns = design_columns(spec)
    out = []
    for h in range(horizon):
        t = n0 + h
        row = []
        for col in columns:
            if col.kind in ("ar", "sar"):
                row.append(history[t - col.lag])
            elif col.kind in ("ma", "sma"):
                src = t - col.lag
                if residuals is not None and maxlag <= src < n0:
                    row.append(residuals[src - maxlag])
                else:
                    row.append(0.0)
            else:
                row.append(col_values(exo_future, col)[h])
        value = float(np.dot(np.asarray(row), coef))
        history.append(value)
        out.append(value)
    return np.asarray(out)


# ---------------------------------------------------------------------------
# gradient-boosted regression trees (centralized)
# ---------------------------------------------------------------------------


@dataclass
class OracleNode:
    node_id: int
    depth: int
    is_leaf: bool = False
    weight: float = 0.0
    candidate: int = -1         # registry index of the chosen split
    column: int = -1            # design-column index of the split feature
    threshold: float = np.nan
    left: int = -1
    right: int = -1


@dataclass
class OracleTree:
    nodes: list[OracleNode] = field(default_factory=list)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.empty(x.shape[0])
        for i, row in enumerate(x):
            node = self.nodes[0]
            while not node.is_leaf:
                node = self.nodes[node.left if row[node.column] < node.threshold
                                  else node.right]
            out[i] = node.weight
        return out


@dataclass
class OracleEnsemble:
    trees: list[OracleTree]
    base_score: float
    eta: float

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        total = np.full(x.shape[0], self.base_score)
        for tree in self.trees:
            total = total + self.eta * tree.predict(x)
        return total


def fit_boosted_trees(phi_x: np.ndarray, y: np.ndarray, params,
                      registry, thresholds) -> OracleEnsemble:
    """Centralized booster mirroring the distributed trainer.

    ``registry`` lists split candidates as ``(party, column, k)`` tuples
    and ``thresholds`` the matching threshold values; both come from
    :func:`stv.tree.enumerate_candidates` so the candidate order — and
    therefore tie-breaking — is identical in both paths.
    """
    from .tree import choose_split, leaf_weight  # shared scoring code

    x = np.asarray(phi_x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n = x.shape[0]
    columns = np.asarray([c for (_, c, _) in registry], dtype=np.intp)
    indicator = np.empty((len(registry), n))
    for j, (_, col, _) in enumerate(registry):
        indicator[j] = (x[:, col] < thresholds[j]).astype(np.float64)

    current = np.full(n, params.base_score)
    trees = []
    for _ in range(params.n_trees):
        g = current - y
        h = np.ones(n)
        tree = OracleTree()
        # breadth-first construction, mirroring the secure builder
        queue = [(np.ones(n), float(g.sum()), float(h.sum()), 0)]
        tree.nodes.append(OracleNode(node_id=0, depth=0))
        while queue:
            s, g_node, h_node, node_id = queue.pop(0)
            node = tree.nodes[node_id]
            if node.depth >= params.max_depth or h_node < 0.5:
                node.is_leaf = True
                node.weight = leaf_weight(g_node, h_node, params.lam)
                continue
            weighted_g = s * g
            weighted_h = s * h
            g_left = indicator @ weighted_g
            h_left = indicator @ weighted_h
            best, _ = choose_split(g_left, h_left, g_node, h_node,
                                   params.lam, params.gamma)
            if best is None:
                node.is_leaf = True
                node.weight = leaf_weight(g_node, h_node, params.lam)
                continue
            node.candidate = best
            node.column = int(columns[best])
            node.threshold = float(thresholds[best])
            s_left = s * indicator[best]
            s_right = s - s_left
            node.left = len(tree.nodes)
            tree.nodes.append(OracleNode(node_id=node.left, depth=node.depth + 1))
            queue.append((s_left, float(g_left[best]), float(h_left[best]),
                          node.left))
            node.right = len(tree.nodes)
            tree.nodes.append(OracleNode(node_id=node.right, depth=node.depth + 1))
            queue.append((s_right, g_node - float(g_left[best]),
                          h_node - float(h_left[best]), node.right))
        trees.append(tree)
        current = current + params.eta * tree.predict(x)
    return OracleEnsemble(trees=trees, base_score=params.base_score,
                          eta=params.eta)


def forecast_tree_plain(ensemble: OracleEnsemble, spec: PolynomialSpec,
                        history: np.ndarray, exo_future: list[ExoColumn],
                        horizon: int) -> np.ndarray:
    """Recursive multi-step forecast with a centralized tree ensemble."""
    history = list(np.asarray(history, dtype=np.float64).ravel())
    n0 = len(history)
    columns = design_columns(spec)
    out = []
    for h in range(horizon):
        t = n0 + h
        row = []
        for col in columns:
            if col.kind in ("ar", "sar"):
                row.append(history[t - col.lag])
            elif col.kind in ("ma", "sma"):
                row.append(0.0)
            else:
                row.append(col_values(exo_future, col)[h])
        value = float(ensemble.predict(np.asarray(row)[None, :])[0])
        history.append(value)
        out.append(value)
    return np.asarray(out)


# ---------------------------------------------------------------------------
# simulators for consistency tests
# ---------------------------------------------------------------------------


def simulate_arma(n: int, ar=(), ma=(), noise: float = 1.0,
                  rng: np.random.Generator | None = None,
                  burn_in: int = 200) -> np.ndarray:
    """Simulate a stationary ARMA process for solver consistency checks."""
    rng = rng or np.random.default_rng(0)
    ar = np.asarray(ar, dtype=np.float64)
    ma = np.asarray(ma, dtype=np.float64)
    total = n + burn_in
    eps = rng.normal(0.0, noise, size=total)
    y = np.zeros(total)
    for t in range(total):
        value = eps[t]
        for i, a in enumerate(ar, start=1):
            if t - i >= 0:
                value += a * y[t - i]
        for j, b in enumerate(ma, start=1):
            if t - j >= 0:
                value += b * eps[t - j]
        y[t] = value
    return y[burn_in:]
