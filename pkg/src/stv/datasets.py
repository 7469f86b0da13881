"""Dataset ingestion: per-party CSV files and named cleaning recipes.

Input convention: the first CSV column is a timestamp (ISO-8601 or an
integer index) and the remaining columns are features; the active
party's file contains the target column.  When several files are given,
file ``i`` belongs to party ``i+1`` and rows are aligned on the
timestamp column (entity alignment is assumed to have happened
upstream, so timestamps must match exactly).

Recipes bundle the dataset-specific cleaning steps — drop rows with
missing values, drop duplicates, drop identifier and degenerate
columns — and finish with a global min-max scale of every column to
[0, 1] so that reported errors are normalized MSE.  This dataset-level
scaling is separate from the per-window transform applied during
evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np
import pandas as pd

from .errors import ConfigError

RECIPES = {}


def recipe(name):
    def register(fn):
        RECIPES[name] = fn
        return fn
    return register


@dataclass
class Dataset:
    """Cleaned, globally scaled dataset ready for evaluation."""

    frame: pd.DataFrame          # scaled feature/target columns
    target: str
    exo_names: list[str]

    @property
    def n_rows(self) -> int:
        return len(self.frame)

    def target_values(self) -> np.ndarray:
        return self.frame[self.target].to_numpy(dtype=np.float64)

    def assign_parties(self, parties: int) -> dict[str, int]:
        """Round-robin exogenous columns over parties 1..K, in column order."""
        owners = {}
        for i, name in enumerate(self.exo_names):
            owners[name] = (i % parties) + 1
        return owners


def _minmax_scale(frame: pd.DataFrame) -> pd.DataFrame:
    scaled = {}
    for name in frame.columns:
        col = frame[name].to_numpy(dtype=np.float64)
        low, high = col.min(), col.max()
        if high == low:
            raise ConfigError(f"column {name!r} is constant after cleaning")
        scaled[name] = (col - low) / (high - low)
    return pd.DataFrame(scaled, index=frame.index)


def _finalise(frame: pd.DataFrame, target: str) -> Dataset:
    if target not in frame.columns:
        raise ConfigError(f"target column {target!r} not found")
    numeric = frame.select_dtypes(include=[np.number])
    if target not in numeric.columns:
        raise ConfigError(f"target column {target!r} is not numeric")
    scaled = _minmax_scale(numeric)
    exo = [c for c in scaled.columns if c != target]
    return Dataset(frame=scaled, target=target, exo_names=exo)


def load_frames(paths: list[str]) -> pd.DataFrame:
    """Load one or more per-party CSVs and align them on the timestamp."""
    frames = []
    for path in paths:
        frame = pd.read_csv(path)
        if frame.shape[1] < 2:
            raise ConfigError(f"{path}: need a timestamp column plus features")
        stamp = frame.columns[0]
        frame = frame.set_index(stamp)
        frames.append(frame)
    merged = frames[0]
    for other in frames[1:]:
        if not merged.index.equals(other.index):
            joined = merged.join(other, how="inner", rsuffix="_dup")
            if len(joined) != len(merged) or len(joined) != len(other):
                raise ConfigError(
                    "party files do not align on the timestamp column"
                )
            merged = joined
        else:
            merged = merged.join(other, rsuffix="_dup")
    return merged.reset_index()


def load_airline_frame() -> pd.DataFrame:
    """Bundled monthly airline passenger counts (144 observations)."""
    with resources.files("stv.data").joinpath("airline_passengers.csv").open() as fh:
        return pd.read_csv(fh)


def _derive_year_month(frame: pd.DataFrame, stamp: str) -> pd.DataFrame:
    parsed = pd.to_datetime(frame[stamp], errors="coerce")
    if parsed.notna().all():
        frame = frame.assign(year=parsed.dt.year, month=parsed.dt.month)
    return frame


@recipe("airline")
def airline_recipe(frame: pd.DataFrame | None = None, target: str | None = None) -> Dataset:
    """Airline passengers: predict monthly counts from year and month."""
    frame = load_airline_frame() if frame is None else frame.copy()
    stamp = frame.columns[0]
    if "year" not in frame.columns or "month" not in frame.columns:
        frame = _derive_year_month(frame, stamp)
    frame = frame.drop(columns=[stamp], errors="ignore")
    frame = frame.dropna().drop_duplicates()
    return _finalise(frame, target or "passengers")


@recipe("air_quality")
def air_quality_recipe(frame: pd.DataFrame, target: str | None = None) -> Dataset:
    """Hourly gas-sensor data: -200 marks missing values in the source."""
    frame = frame.copy()
    stamp = frame.columns[0]
    frame = frame.drop(columns=[stamp])
    frame = frame.replace(-200, np.nan).replace(-200.0, np.nan)
    frame = frame.dropna().drop_duplicates()
    return _finalise(frame, target or "CO(GT)")


@recipe("sml2010")
def sml2010_recipe(frame: pd.DataFrame, target: str | None = None) -> Dataset:
    """Domotic-house monitoring: predict indoor temperature."""
    frame = frame.copy()
    stamp = frame.columns[0]
    frame = frame.drop(columns=[stamp])
    frame = frame.dropna().drop_duplicates()
    return _finalise(frame, target or "indoor_temperature")


@recipe("pv_power")
def pv_power_recipe(frame: pd.DataFrame, target: str | None = None) -> Dataset:
    """Solar generation: drop identifiers and columns collinear with the target."""
    frame = frame.copy()
    stamp = frame.columns[0]
    drop = [stamp] + [c for c in frame.columns
                      if c.lower() in ("plant_id", "source_key", "dc_power",
                                       "total_yield")]
    frame = frame.drop(columns=[c for c in drop if c in frame.columns])
    frame = frame.dropna(axis=1, how="all").dropna().drop_duplicates()
    return _finalise(frame, target or "ac_power")


@recipe("rossman")
def rossman_recipe(frame: pd.DataFrame, target: str | None = None) -> Dataset:
    """Store sales: restrict to store 1 and drop the identifier."""
    frame = frame.copy()
    stamp = frame.columns[0]
    if "Store" in frame.columns:
        frame = frame[frame["Store"] == 1].drop(columns=["Store"])
    frame = frame.drop(columns=[stamp])
    frame = frame.dropna().drop_duplicates()
    return _finalise(frame, target or "Sales")


@recipe("generic")
def generic_recipe(frame: pd.DataFrame, target: str | None = None) -> Dataset:
    """Plain ingestion: drop the timestamp, missing rows and duplicates."""
    frame = frame.copy()
    stamp = frame.columns[0]
    frame = frame.drop(columns=[stamp])
    frame = frame.dropna().drop_duplicates()
    if target is None:
        raise ConfigError("the generic recipe needs an explicit target column")
    return _finalise(frame, target)


def load_dataset(paths: list[str] | None, recipe_name: str,
                 target: str | None = None) -> Dataset:
    """Apply a named recipe to user files (or the bundled data)."""
    if recipe_name not in RECIPES:
        raise ConfigError(
            f"unknown recipe {recipe_name!r}; known: {sorted(RECIPES)}"
        )
    if recipe_name == "airline" and not paths:
        return RECIPES["airline"](None, target)
    if not paths:
        raise ConfigError(f"recipe {recipe_name!r} needs --dataset file(s)")
    frame = load_frames(paths)
    return RECIPES[recipe_name](frame, target)
