"""Secret-shared autoregressive gradient-boosted trees.

Boosting runs tree by tree: after each tree the parties' prediction
shares are aggregated at the active party, which computes first- and
second-order gradients of the squared loss (``g = yhat - y``, ``h = 1``)
in plaintext and secret-shares them for the next round.

Tree construction works on shared gradient and indicator vectors.  Each
party proposes up to ``max_candidates`` quantile thresholds per feature
column it owns (it legitimately knows its own plaintext columns),
builds the corresponding 0/1 indicator vectors locally and shares them
once per fit.  Per node, the candidate statistics ``G_j = s' g`` and
``H_j = s' h`` are secure inner products of shared vectors; the
aggregated pairs are revealed only to the active party, which scores
them with the boosting objective, picks the split and announces
``(owner, column, candidate-rank)`` — the threshold value itself never
leaves its owner.  Child indicators are one shared element-wise product
(left) and a local subtraction (right), so reconstructed children always
partition their parent.  Leaf weights ``w = -G/(H + lambda)`` are
computed by the active party and secret-shared: every party ends up
holding a weight share per leaf, and the per-party trees sum to the
centralized ensemble.

Inference is serverless: split owners evaluate their thresholds on their
own plaintext feature values and broadcast one routing bit per split
encountered; every party sums its weight shares along the routed path
over all trees and the requesting party aggregates.

Known disclosures, by design: the active party learns per-candidate
(G, H) pairs during training, all parties learn tree topology,
candidate ranks and inference routing bits.  Message counts for tree
training depend on the learned structure, unlike the linear trainer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ProtocolError
from .linalg import secure_matmul, secure_transpose
from .runtime import Session
from .sharing import (SharedArray, add_shared, beaver_mul, open_at, share,
                      sub_shared, vstack_shared, zeros_shared)
from .timeseries import Column, ExoColumn, PolynomialSpec, col_values, design_columns
from .timeseries import SeriesTransform


@dataclass
class TreeParams:
    """Boosting hyper-parameters (XGBoost-style defaults)."""

    n_trees: int = 10
    max_depth: int = 3
    lam: float = 1.0
    gamma: float = 0.0
    eta: float = 0.3
    max_candidates: int = 16
    base_score: float = 0.0

    def __post_init__(self):
        if self.n_trees < 0 or self.max_depth < 0:
            raise ConfigError("tree count and depth must be non-negative")
        if self.lam < 0 or self.gamma < 0:
            raise ConfigError("regularisers must be non-negative")
        if self.max_candidates < 1:
            raise ConfigError("need at least one split candidate per column")


# ---------------------------------------------------------------------------
# scoring (shared verbatim with the centralized oracle)
# ---------------------------------------------------------------------------


def leaf_weight(g: float, h: float, lam: float) -> float:
    """Optimal leaf weight ``-G / (H + lambda)``."""
    return -g / (h + lam)


def node_objective(g: float, h: float, lam: float) -> float:
    """One node's contribution to the regularised training objective."""
    return -0.5 * g * g / (h + lam)


def split_gain(g_left, h_left, g: float, h: float, lam: float,
               gamma: float):
    """Objective reduction of splitting (G, H) into left/right children."""
    g_left = np.asarray(g_left, dtype=np.float64)
    h_left = np.asarray(h_left, dtype=np.float64)
    g_right = g - g_left
    h_right = h - h_left
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = 0.5 * (g_left ** 2 / (h_left + lam)
                      + g_right ** 2 / (h_right + lam)
                      - g * g / (h + lam)) - gamma
    return np.where(np.isfinite(gain), gain, -np.inf)


def choose_split(g_lefts, h_lefts, g: float, h: float, lam: float,
                 gamma: float):
    """Best candidate index with strictly positive gain, or ``None``.

    Ties resolve to the lowest candidate index, so any two
    implementations scoring the same candidates pick the same split.
    """
    gains = split_gain(g_lefts, h_lefts, g, h, lam, gamma)
    if gains.size == 0:
        return None, gains
    best = int(np.argmax(gains))
    if gains[best] <= 0.0:
        return None, gains
    return best, gains


def quantile_thresholds(values: np.ndarray, max_candidates: int) -> np.ndarray:
    """Deduplicated quantile split thresholds for one feature column."""
    values = np.asarray(values, dtype=np.float64)
    qs = np.arange(1, max_candidates + 1) / (max_candidates + 1)
    return np.unique(np.quantile(values, qs))


def enumerate_candidates(columns: tuple[Column, ...], phi_x: np.ndarray,
                         max_candidates: int):
    """Candidate registry in canonical order.

    Parties ascending, then the party's columns in design order, then
    thresholds ascending.  Returns ``(registry, thresholds)`` where the
    registry lists ``(party, column_index, rank)`` tuples; threshold
    values are private to the owning party (column ``j`` of ``phi_x`` is
    read only on behalf of its owner).
    """
    registry: list[tuple[int, int, int]] = []
    thresholds: list[float] = []
    parties = sorted({c.party for c in columns})
    for party in parties:
        for j, col in enumerate(columns):
            if col.party != party:
                continue
            for rank, threshold in enumerate(
                    quantile_thresholds(phi_x[:, j], max_candidates)):
                registry.append((party, j, rank))
                thresholds.append(float(threshold))
    return registry, thresholds


# ---------------------------------------------------------------------------
# distributed model containers
# ---------------------------------------------------------------------------


@dataclass
class SplitNode:
    node_id: int
    depth: int
    is_leaf: bool = False
    candidate: int = -1      # registry index of the chosen split
    owner: int = -1          # party evaluating this split at inference
    column: int = -1         # design-column index (public)
    left: int = -1
    right: int = -1


@dataclass
class DistributedTree:
    """Tree topology plus per-party leaf-weight shares."""

    nodes: list[SplitNode] = field(default_factory=list)
    leaf_weights: dict[int, SharedArray] = field(default_factory=dict)
    #: training-time leaf indicator shares, kept for prediction shares
    leaf_indicators: dict[int, SharedArray] = field(default_factory=dict)


@dataclass
class DistributedEnsemble:
    trees: list[DistributedTree]
    params: TreeParams
    columns: tuple[Column, ...]
    registry: list[tuple[int, int, int]]
    #: candidate thresholds, held per owning party
    owner_thresholds: dict[int, dict[int, float]]


def _threshold_map(registry, thresholds) -> dict[int, dict[int, float]]:
    out: dict[int, dict[int, float]] = {}
    for idx, ((party, _, _), thr) in enumerate(zip(registry, thresholds)):
        out.setdefault(party, {})[idx] = thr
    return out


def _ensure_tree_design(columns: tuple[Column, ...]):
    if any(c.is_residual for c in columns):
        raise ConfigError(
            "autoregressive trees use no residual terms; build the design "
            "with q = Q = 0"
        )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def _reveal_scalar(session: Session, value: SharedArray) -> float:
    plain = open_at(session, value, session.active, "tree.reveal-gh")
    return float(plain[0, 0])


def _broadcast_decision(session: Session, is_leaf: bool, candidate: int):
    payload = None
    if not session.dry_run:
        payload = np.asarray([[1.0 if is_leaf else 0.0, float(candidate)]])
    session.broadcast(session.active, "tree.split-decision", payload, elements=2)
    for k in session.passive_parties():
        session.recv(k, session.active, "tree.split-decision")


def secure_build(session: Session, g: SharedArray, h: SharedArray,
                 s: SharedArray, indicators: SharedArray, registry,
                 params: TreeParams) -> DistributedTree:
    """Grow one tree on shared gradients (breadth-first).

    ``indicators`` stacks every candidate's 0/1 vector (shared), in
    registry order.  Candidate statistics are revealed to the active
    party only; split decisions are broadcast as (leaf-flag, candidate
    rank) pairs.
    """
    if session.dry_run:
        raise ProtocolError("tree training needs data; dry-run is cost-only")
    n = g.shape[0]
    tree = DistributedTree()
    tree.nodes.append(SplitNode(node_id=0, depth=0))

    g_total = _reveal_scalar(session, secure_matmul(
        session, secure_transpose(session, s), g))
    h_total = _reveal_scalar(session, secure_matmul(
        session, secure_transpose(session, s), h))

    queue = [(0, s, g_total, h_total)]
    while queue:
        node_id, s_node, g_node, h_node, = queue.pop(0)
        node = tree.nodes[node_id]

        if node.depth >= params.max_depth or h_node < 0.5:
            _make_leaf(session, tree, node, s_node, g_node, h_node, params)
            continue

        weighted_g = beaver_mul(session, s_node, g)
        weighted_h = beaver_mul(session, s_node, h)
        g_left_sh = secure_matmul(session, indicators, weighted_g)
        h_left_sh = secure_matmul(session, indicators, weighted_h)
        g_lefts = open_at(session, g_left_sh, session.active,
                          "tree.reveal-gh").ravel()
        h_lefts = open_at(session, h_left_sh, session.active,
                          "tree.reveal-gh").ravel()

        best, _ = choose_split(g_lefts, h_lefts, g_node, h_node,
                               params.lam, params.gamma)
        if best is None:
            _make_leaf(session, tree, node, s_node, g_node, h_node, params)
            continue

        _broadcast_decision(session, False, best)
        owner, column, _ = registry[best]
        node.candidate, node.owner, node.column = best, owner, column

        row = indicators.map_local(
            lambda d: np.ascontiguousarray(d[best:best + 1, :].T), (n, 1),
            session)
        s_left = beaver_mul(session, s_node, row)
        s_right = sub_shared(session, s_node, s_left)

        node.left = len(tree.nodes)
        tree.nodes.append(SplitNode(node_id=node.left, depth=node.depth + 1))
        queue.append((node.left, s_left, float(g_lefts[best]),
                      float(h_lefts[best])))
        node.right = len(tree.nodes)
        tree.nodes.append(SplitNode(node_id=node.right, depth=node.depth + 1))
        queue.append((node.right, s_right, g_node - float(g_lefts[best]),
                      h_node - float(h_lefts[best])))
    return tree


def _make_leaf(session: Session, tree: DistributedTree, node: SplitNode,
               s_node: SharedArray, g_node: float, h_node: float,
               params: TreeParams):
    _broadcast_decision(session, True, -1)
    node.is_leaf = True
    weight = leaf_weight(g_node, h_node, params.lam)
    tree.leaf_weights[node.node_id] = share(
        session, session.active, np.asarray([[weight]]),
        phase="tree.share-weight")
    tree.leaf_indicators[node.node_id] = s_node


def _tree_prediction_shares(session: Session, tree: DistributedTree,
                            n: int) -> SharedArray:
    """Shared per-sample predictions of one tree: sum of w_leaf * s_leaf."""
    total = zeros_shared(session, (n, 1))
    for node_id, weight in tree.leaf_weights.items():
        tiled = weight.map_local(
            lambda d: np.broadcast_to(d, (n, 1)).copy(), (n, 1), session)
        term = beaver_mul(session, tiled, tree.leaf_indicators[node_id])
        total = add_shared(session, total, term)
    return total


def fit_art_ensemble(session: Session, design, y: np.ndarray,
                     plain_phi_x: np.ndarray,
                     params: TreeParams | None = None) -> DistributedEnsemble:
    """Train the boosted autoregressive ensemble on a shared design.

    ``y`` are the plaintext targets at the active party (aligned to the
    design rows).  ``plain_phi_x`` provides each design column in
    plaintext — column ``j`` is read only on behalf of its owning party,
    for candidate thresholds and indicator vectors.
    """
    params = params or TreeParams()
    _ensure_tree_design(design.columns)
    if session.dry_run:
        raise ProtocolError("tree training needs data; dry-run is cost-only")
    y = np.asarray(y, dtype=np.float64).ravel()
    n = design.n_rows
    if len(y) != n:
        raise ConfigError("targets must align with the design rows")

    registry, thresholds = enumerate_candidates(
        design.columns, plain_phi_x, params.max_candidates)

    # each party shares the indicator rows for its own candidates
    blocks = []
    start = 0
    while start < len(registry):
        party = registry[start][0]
        stop = start
        while stop < len(registry) and registry[stop][0] == party:
            stop += 1
        rows = np.empty((stop - start, n))
        for i in range(start, stop):
            _, column, _ = registry[i]
            rows[i - start] = (plain_phi_x[:, column] < thresholds[i])
        blocks.append(share(session, party, rows,
                            phase="tree.share-indicators"))
        start = stop
    indicators = vstack_shared(session, blocks) if blocks else None
    if indicators is None:
        raise ConfigError("tree training needs at least one feature column")

    current = np.full(n, params.base_score)
    trees = []
    for _ in range(params.n_trees):
        g = (current - y).reshape(-1, 1)
        h = np.ones((n, 1))
        g_sh = share(session, session.active, g, phase="tree.share-grad")
        h_sh = share(session, session.active, h, phase="tree.share-grad")
        s_root = share(session, session.active, np.ones((n, 1)),
                       phase="tree.share-grad")
        tree = secure_build(session, g_sh, h_sh, s_root, indicators,
                            registry, params)
        pred_sh = _tree_prediction_shares(session, tree, n)
        pred = open_at(session, pred_sh, session.active,
                       "tree.aggregate-pred").ravel()
        current = current + params.eta * pred
        trees.append(tree)

    return DistributedEnsemble(trees=trees, params=params,
                               columns=design.columns, registry=registry,
                               owner_thresholds=_threshold_map(registry,
                                                               thresholds))


# ---------------------------------------------------------------------------
# serverless inference
# ---------------------------------------------------------------------------


@dataclass
class TreeForecaster:
    """Trained ensemble plus the active party's series state."""

    ensemble: DistributedEnsemble
    spec: PolynomialSpec
    transform: SeriesTransform
    history: np.ndarray


def _route_bit(session: Session, owner: int, bit: bool):
    payload = None if session.dry_run else np.asarray([[1.0 if bit else 0.0]])
    session.broadcast(owner, "tree.route", payload, elements=1)
    for k in session.parties:
        if k != owner:
            session.recv(k, owner, "tree.route")


def predict_art(session: Session, ensemble: DistributedEnsemble,
                feature_values: dict[int, float], requester: int) -> float:
    """One serverless ensemble prediction.

    ``feature_values`` maps design-column index to the query value; each
    entry is read only by the column's owner, which evaluates its
    thresholds and broadcasts one routing bit per split encountered.
    """
    acc = zeros_shared(session, (1, 1))
    for tree in ensemble.trees:
        node = tree.nodes[0]
        while not node.is_leaf:
            if node.candidate not in ensemble.owner_thresholds.get(node.owner, {}):
                raise ProtocolError("routing bit unavailable: unknown split owner")
            threshold = ensemble.owner_thresholds[node.owner][node.candidate]
            bit = feature_values[node.column] < threshold
            _route_bit(session, node.owner, bit)
            node = tree.nodes[node.left if bit else node.right]
        acc = add_shared(session, acc, tree.leaf_weights[node.node_id])
    total = open_at(session, acc, requester, "forecast.aggregate")
    params = ensemble.params
    return params.base_score + params.eta * float(total[0, 0])


def forecast_tree(session: Session, model: TreeForecaster,
                  exo_future: list[ExoColumn], horizon: int,
                  requester: int | None = None) -> np.ndarray:
    """Recursive multi-step forecast with the distributed ensemble."""
    if horizon < 1:
        raise ConfigError("forecast horizon must be at least 1")
    requester = session.active if requester is None else requester
    if requester not in session.parties:
        raise ConfigError(f"unknown requesting party {requester}")

    columns = model.ensemble.columns
    history = list(np.asarray(model.history, dtype=np.float64).ravel())
    n0 = len(history)
    out_transformed = []
    for h in range(horizon):
        t = n0 + h
        features: dict[int, float] = {}
        for j, col in enumerate(columns):
            if col.kind in ("ar", "sar"):
                features[j] = history[t - col.lag]
            elif col.kind == "exo":
                features[j] = float(col_values(exo_future, col)[h])
        value = predict_art(session, model.ensemble, features, requester)
        if requester != session.active:
            session.send(requester, session.active, "forecast.route",
                         None if session.dry_run else np.asarray([[value]]),
                         elements=1)
            session.recv(session.active, requester, "forecast.route")
        history.append(value)
        out_transformed.append(value)

    restored = model.transform.invert(np.asarray(history))
    out = restored[-horizon:]
    if requester != session.active:
        payload = None if session.dry_run else out.reshape(-1, 1)
        session.send(session.active, requester, "forecast.value", payload,
                     elements=horizon)
        session.recv(requester, session.active, "forecast.value")
    return out
