"""Prequential evaluation and the communication-scaling benchmark.

Evaluation partitions a series into consecutive fixed-size windows, each
split 80/20 into train and test; the model is retrained inside every
window, forecasts the test split recursively, and the squared error is
averaged per window, per window size, and overall.  All data is min-max
scaled to [0, 1] beforehand, so reported errors are normalized MSE.

The same driver runs either the distributed protocols or the plaintext
oracles over identical window slicing, orders and schedules, which is
what the equivalence tests compare.

The scaling benchmark measures total communication for direct
(normal-equation) versus iterative (gradient-descent) training across a
grid of party counts, per-party feature counts and sample counts.  Costs
are data independent, so the grid runs in shape-only sessions; tests
separately pin shape-only ledgers to real executions on small cells.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .backend import Backend
from .errors import ConfigError
from .linear import (FitConfig, LinearForecaster, forecast_linear, share_design,
                     fit_direct, fit_iterative, two_step_fit)
from .oracles import (fit_boosted_trees, forecast_linear_plain,
                      forecast_tree_plain, two_step_plain)
from .runtime import Session, spawn_session
from .sharing import audit_reconstruct, share
from .timeseries import (ColumnScaler, ExoColumn, PolynomialSpec, SeriesTransform,
                         build_design, suggest_orders)
from .tree import TreeForecaster, TreeParams, enumerate_candidates, fit_art_ensemble, forecast_tree
from .datasets import Dataset


@dataclass
class SessionConfig:
    """How to spawn the per-window sessions."""

    parties: int = 2
    backend: str = "real"
    frac_bits: int = 20
    mask_bound: float = 4.0
    seed: int = 0
    audit: bool = False

    def make_backend(self) -> Backend:
        return Backend(kind=self.backend, frac_bits=self.frac_bits,
                       mask_bound=self.mask_bound)

    def spawn(self, seed: int) -> Session:
        return spawn_session(self.parties, self.make_backend(), seed,
                             audit=self.audit)


@dataclass
class PrequentialPlan:
    """Consecutive same-size windows, each split train/test."""

    window_size: int
    split_ratio: float = 0.8
    windows: list[tuple[int, int, int]] = field(default_factory=list)
    # each entry: (start, train_end, stop)

    @classmethod
    def build(cls, n: int, window_size: int, split_ratio: float = 0.8):
        if window_size < 2 or window_size > n:
            raise ConfigError(
                f"window size {window_size} does not fit a series of length {n}"
            )
        plan = cls(window_size=window_size, split_ratio=split_ratio)
        train_len = int(round(window_size * split_ratio))
        if train_len <= 0 or train_len >= window_size:
            raise ConfigError("split ratio leaves an empty train or test part")
        for i in range(n // window_size):
            start = i * window_size
            plan.windows.append((start, start + train_len, start + window_size))
        return plan


@dataclass
class WindowResult:
    window_size: int
    index: int
    mse: float
    forecasts: np.ndarray
    truths: np.ndarray
    orders: PolynomialSpec
    coefficients: np.ndarray | None = None


@dataclass
class MetricsReport:
    model: str
    results: list[WindowResult]
    size_averages: dict[int, float]
    overall_average: float
    ledger_elements: int = 0
    ledger_bytes: int = 0
    ledger_elements_ex_triples: int = 0

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "overall_average_nmse": self.overall_average,
            "per_window_size": {
                str(size): avg for size, avg in sorted(self.size_averages.items())
            },
            "windows": [
                {
                    "window_size": r.window_size,
                    "index": r.index,
                    "nmse": r.mse,
                    "orders": {
                        "p": r.orders.p, "d": r.orders.d, "q": r.orders.q,
                        "P": r.orders.P, "D": r.orders.D, "Q": r.orders.Q,
                        "s": r.orders.s,
                    },
                }
                for r in self.results
            ],
            "ledger": {
                "elements": self.ledger_elements,
                "bytes": self.ledger_bytes,
                "elements_excluding_triples": self.ledger_elements_ex_triples,
            },
        }


@dataclass
class _WindowData:
    """Everything one window run needs, sliced and scaled."""

    spec: PolynomialSpec
    transform: SeriesTransform
    y_t: np.ndarray                 # transformed train target
    exo_design: list[ExoColumn]     # aligned to the transformed train series
    exo_future: list[ExoColumn]     # aligned to forecast steps
    truths: np.ndarray
    horizon: int


def _window_seed(seed: int, size: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, size, index]).generate_state(1)[0])


def _prepare_window(dataset: Dataset, owners: dict[str, int],
                    start: int, train_end: int, stop: int,
                    orders: PolynomialSpec | None, period: int | None,
                    for_tree: bool) -> _WindowData:
    y_window = dataset.target_values()[start:stop]
    y_train = y_window[: train_end - start]
    horizon = stop - train_end

    if orders is None:
        spec = suggest_orders(y_train, period=period)
    else:
        spec = orders
    if for_tree:
        spec = spec.without_ma()
    bindings = tuple((owners[name], name) for name in dataset.exo_names)
    spec = PolynomialSpec(p=spec.p, d=spec.d, q=spec.q, P=spec.P, D=spec.D,
                          Q=spec.Q, s=spec.s, exo_bindings=bindings)
    if spec.num_coefficients == 0:
        spec = PolynomialSpec(p=1, d=spec.d, exo_bindings=bindings)
    if stop - start < spec.maxlag + 5:
        raise ConfigError(
            f"window size {stop - start} is smaller than maxlag+5 "
            f"({spec.maxlag + 5})"
        )

    transform, y_t = SeriesTransform.fit(y_train, spec.d, D=spec.D, s=spec.s)
    offset = len(y_train) - len(y_t)

    exo_design, exo_future = [], []
    for name in dataset.exo_names:
        values = dataset.frame[name].to_numpy(dtype=np.float64)[start:stop]
        scaler = ColumnScaler.fit(values[: train_end - start])
        scaled = scaler.apply(values)
        exo_design.append(ExoColumn(owners[name], name,
                                    scaled[offset: train_end - start]))
        exo_future.append(ExoColumn(owners[name], name,
                                    scaled[train_end - start:]))
    truths = y_window[train_end - start:]
    return _WindowData(spec=spec, transform=transform, y_t=y_t,
                       exo_design=exo_design, exo_future=exo_future,
                       truths=truths, horizon=horizon)


def _run_window_distributed(data: _WindowData, session: Session,
                            model: str, fit_cfg: FitConfig,
                            tree_params: TreeParams, requester: int):
    if model == "linear":
        result = two_step_fit(session, data.y_t, data.exo_design, data.spec,
                              fit_cfg)
        forecaster = LinearForecaster(
            coefficients=result.coefficients, spec=data.spec,
            transform=data.transform, history=data.y_t,
            residual_shares=result.residual_shares)
        forecasts = forecast_linear(session, forecaster, data.exo_future,
                                    data.horizon, requester)
        coef = (audit_reconstruct(session, result.coefficients.coef)
                if session.audit else None)
        return forecasts, coef
    if model == "tree":
        plain = build_design(data.y_t, data.exo_design, data.spec)
        design = share_design(session, data.y_t, data.exo_design, data.spec)
        ensemble = fit_art_ensemble(session, design, plain.phi_y.ravel(),
                                    plain.phi_x, tree_params)
        forecaster = TreeForecaster(ensemble=ensemble, spec=data.spec,
                                    transform=data.transform,
                                    history=data.y_t)
        forecasts = forecast_tree(session, forecaster, data.exo_future,
                                  data.horizon, requester)
        return forecasts, None
    raise ConfigError(f"unknown model {model!r}")


def _run_window_oracle(data: _WindowData, model: str, fit_cfg: FitConfig,
                       tree_params: TreeParams):
    if model == "linear":
        fitted = two_step_plain(data.y_t, data.exo_design, data.spec,
                                method=fit_cfg.method, lr=fit_cfg.lr,
                                iters=fit_cfg.iters, ridge=fit_cfg.ridge,
                                passes=fit_cfg.passes)
        transformed = forecast_linear_plain(fitted.coef, data.spec, data.y_t,
                                            data.exo_future, fitted.residuals,
                                            data.horizon)
        restored = data.transform.invert(
            np.concatenate([data.y_t, transformed]))
        return restored[-data.horizon:], fitted.coef.ravel()
    if model == "tree":
        design = build_design(data.y_t, data.exo_design, data.spec)
        registry, thresholds = enumerate_candidates(
            design.columns, design.phi_x, tree_params.max_candidates)
        ensemble = fit_boosted_trees(design.phi_x, design.phi_y.ravel(),
                                     tree_params, registry, thresholds)
        transformed = forecast_tree_plain(ensemble, data.spec, data.y_t,
                                          data.exo_future, data.horizon)
        restored = data.transform.invert(
            np.concatenate([data.y_t, transformed]))
        return restored[-data.horizon:], None
    raise ConfigError(f"unknown model {model!r}")


def run_eval(dataset: Dataset, model: str = "linear",
             window_sizes: Sequence[int] = (50, 100),
             session_cfg: SessionConfig | None = None,
             fit_cfg: FitConfig | None = None,
             tree_params: TreeParams | None = None,
             orders: PolynomialSpec | None = None,
             period: int | None = None,
             requester: int | None = None,
             oracle: bool = False) -> MetricsReport:
    """Prequential evaluation of one model over several window sizes.

    With ``oracle=True`` the plaintext reference pipeline runs instead of
    the distributed protocols, over identical windows and orders.
    """
    session_cfg = session_cfg or SessionConfig()
    fit_cfg = fit_cfg or FitConfig()
    tree_params = tree_params or TreeParams()
    owners = dataset.assign_parties(session_cfg.parties)

    results: list[WindowResult] = []
    total_elements = total_ex = 0
    for size in window_sizes:
        plan = PrequentialPlan.build(dataset.n_rows, size)
        for index, (start, train_end, stop) in enumerate(plan.windows):
            data = _prepare_window(dataset, owners, start, train_end, stop,
                                   orders, period, for_tree=(model == "tree"))
            if oracle:
                forecasts, coef = _run_window_oracle(data, model, fit_cfg,
                                                     tree_params)
            else:
                session = session_cfg.spawn(
                    _window_seed(session_cfg.seed, size, index))
                req = requester if requester is not None else session.active
                forecasts, coef = _run_window_distributed(
                    data, session, model, fit_cfg, tree_params, req)
                elements, _ = session.ledger.total()
                ex, _ = session.ledger.total(exclude="triples")
                total_elements += elements
                total_ex += ex
            mse = float(np.mean((forecasts - data.truths) ** 2))
            results.append(WindowResult(window_size=size, index=index,
                                        mse=mse, forecasts=forecasts,
                                        truths=data.truths, orders=data.spec,
                                        coefficients=coef))

    size_averages = {
        size: float(np.mean([r.mse for r in results if r.window_size == size]))
        for size in window_sizes
    }
    overall = float(np.mean(list(size_averages.values())))
    return MetricsReport(model=model, results=results,
                         size_averages=size_averages, overall_average=overall,
                         ledger_elements=total_elements,
                         ledger_bytes=total_elements * 8,
                         ledger_elements_ex_triples=total_ex)


# ---------------------------------------------------------------------------
# communication-scaling benchmark
# ---------------------------------------------------------------------------


@dataclass
class ScaleCell:
    parties: int
    features_per_party: int
    samples: int
    method: str
    elements: int
    bytes: int
    elements_ex_triples: int
    messages: int


@dataclass
class ScalingReport:
    cells: list[ScaleCell]
    iters: tuple[int, ...]

    def methods(self) -> list[str]:
        return ["ne"] + [f"gd{e}" for e in self.iters]

    def _average(self, group_key, value="elements") -> dict:
        groups: dict = {}
        for cell in self.cells:
            key = group_key(cell)
            groups.setdefault(key, {}).setdefault(cell.method, []).append(
                getattr(cell, value))
        return {
            key: {m: float(np.mean(v)) for m, v in methods.items()}
            for key, methods in groups.items()
        }

    def party_scaling(self, value="elements") -> dict:
        """Average totals per party count, across feature/sample combos."""
        return self._average(lambda c: c.parties, value)

    def feature_scaling(self, value="elements") -> dict:
        return self._average(lambda c: c.features_per_party, value)

    def sample_scaling(self, value="elements") -> dict:
        return self._average(lambda c: c.samples, value)

    def to_dict(self) -> dict:
        return {
            "cells": [vars(c) for c in self.cells],
            "party_scaling": {str(k): v for k, v in self.party_scaling().items()},
            "feature_scaling": {str(k): v for k, v in self.feature_scaling().items()},
            "sample_scaling": {str(k): v for k, v in self.sample_scaling().items()},
            "party_scaling_excluding_triples": {
                str(k): v
                for k, v in self.party_scaling("elements_ex_triples").items()
            },
        }


def bench_design(session: Session, features_per_party: int, samples: int):
    """Share a synthetic design: every party owns ``features_per_party`` columns."""
    blocks = []
    for k in sorted(session.parties):
        if session.dry_run:
            blocks.append(share(session, k, shape=(samples, features_per_party),
                                phase="share.input"))
        else:
            values = session.party_rng(k).uniform(
                0.0, 1.0, size=(samples, features_per_party))
            blocks.append(share(session, k, values, phase="share.input"))
    from .sharing import hstack_shared
    from .linear import SharedDesign
    from .timeseries import Column
    phi_x = hstack_shared(session, blocks)
    if session.dry_run:
        phi_y = share(session, session.active, shape=(samples, 1),
                      phase="share.input")
    else:
        phi_y = share(session, session.active,
                      session.party_rng(session.active).uniform(
                          0.0, 1.0, size=(samples, 1)),
                      phase="share.input")
    columns = tuple(
        Column("exo", party=k, name=f"f{k}_{j}")
        for k in sorted(session.parties) for j in range(features_per_party)
    )
    return SharedDesign(phi_x=phi_x, phi_y=phi_y, columns=columns, maxlag=0)


def run_scalability(parties: Sequence[int] = (2, 4, 8),
                    features: Sequence[int] = (10, 100),
                    samples: Sequence[int] = (10, 100, 1000),
                    iters: Sequence[int] = (10, 100, 1000),
                    seed: int = 0, backend: Backend | None = None,
                    dry_run: bool = True) -> ScalingReport:
    """Total communication of direct vs iterative training over the grid.

    Every party contributes ``features`` random columns (costs depend on
    dimensions only), subject to ``features <= samples``.  Totals are
    recorded with and without the coordinator's randomness deliveries.
    """
    backend = backend or Backend()
    cells: list[ScaleCell] = []
    for k in parties:
        for f in features:
            for s in samples:
                if f > s:
                    continue
                for method in ["ne"] + [f"gd{e}" for e in iters]:
                    session = spawn_session(k, backend, seed, dry_run=dry_run)
                    design = bench_design(session, f, s)
                    if method == "ne":
                        fit_direct(session, design, FitConfig(ridge=1e-6))
                    else:
                        e = int(method[2:])
                        fit_iterative(session, design,
                                      FitConfig(method="gd", lr=0.1, iters=e))
                    elements, nbytes = session.ledger.total()
                    ex, _ = session.ledger.total(exclude="triples")
                    cells.append(ScaleCell(
                        parties=k, features_per_party=f, samples=s,
                        method=method, elements=elements, bytes=nbytes,
                        elements_ex_triples=ex,
                        messages=session.ledger.message_count()))
    return ScalingReport(cells=cells, iters=tuple(iters))
