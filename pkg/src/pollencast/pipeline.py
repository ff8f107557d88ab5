"""Three-stage forecasting pipeline.

Stage 1 fits a gradient-boosted model that predicts the countdown (days
remaining until the season boundary) from rolling-window weather features.
Stage 2 fits a second model on held-out Stage-1 residuals to predict the
uncertainty of each countdown estimate.  Stage 3 (see :mod:`.wls`) fuses a
run of consecutive-day predictions into one final date with an error bar.

This module builds the two training sets, fits and serializes the models,
and turns a fitted pair plus fresh data into a ForecastSeries.
"""

from __future__ import annotations

import calendar
import datetime as dt
import json
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from . import gbm
from .data import Dataset, SeasonDefinition, label_season
from .errors import (
    HorizonOutOfRangeError,
    IndexOutOfRangeError,
    InvalidRecordError,
    MissingLabelError,
    TooFewYearsError,
    WindowUnavailableError,
)
from .features import (
    CATALOG_VERSION,
    SERIES_NAMES,
    FeatureMatrix,
    build_feature_matrix,
    flatten_all,
)
from .wls import ForecastSeries, PredictionPoint

__all__ = [
    "DEFAULT_HORIZON",
    "U_FLOOR",
    "BUNDLE_FORMAT",
    "Stage1TrainingSet",
    "Stage2TrainingSet",
    "Stage1Model",
    "Stage2Model",
    "Forecaster",
    "PredictionPoint",
    "ForecastSeries",
    "series_references",
    "build_s1",
    "fit_stage1",
    "build_s2",
    "fit_stage2",
    "train_forecaster",
    "predict_series",
    "forecaster_to_json",
    "forecaster_from_json",
    "save_forecaster",
    "load_forecaster",
]

#: Default prediction horizon: training rows start H days before the boundary.
DEFAULT_HORIZON = 59

#: Lower clamp for Stage-2 uncertainty estimates, in days.  Keeps Stage-3
#: weights 1/u^2 finite when the residual model predicts ~0.
U_FLOOR = 0.25

BUNDLE_FORMAT = "forecaster-json-v1"

#: Model-fitting hook used for the internal Stage-1 fits; replaceable for
#: alternative learners or exact-model tests.
FitFn = Callable[[np.ndarray, np.ndarray, gbm.GBMConfig], gbm.FitResult]


@dataclass(frozen=True)
class Stage1TrainingSet:
    """Countdown-regression rows: one per (year, day z) within the horizon.

    ``features[i]`` is the flattened window-feature vector for day z of a
    training year and ``targets[i] = boundary_day - z``; ``provenance[i]``
    records which (year, z) the row came from.
    """

    features: np.ndarray
    targets: np.ndarray
    provenance: tuple[tuple[int, int], ...]
    boundary: str
    horizon: int
    references: tuple[float, ...]
    include_doy: bool
    years: tuple[int, ...]

    def __post_init__(self) -> None:
        if not (
            self.features.shape[0] == self.targets.shape[0] == len(self.provenance)
        ):
            raise InvalidRecordError("features, targets, provenance must align")
        if self.targets.size and (
            self.targets.min() < 0 or self.targets.max() > self.horizon
        ):
            raise HorizonOutOfRangeError(
                f"targets must lie in [0, {self.horizon}]"
            )

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class Stage2TrainingSet:
    """Uncertainty-regression rows built from held-out Stage-1 residuals.

    ``features[i]`` is ``[y_hat, *window_features]`` (the Stage-1 prediction
    at column 0) and ``targets[i] = |y_hat - true countdown|``.  The model
    that produced ``y_hat`` for a row was never fitted on that row's year;
    ``scorer_train_years`` records the exact training years per scored year
    and the constructor enforces the exclusion.
    """

    features: np.ndarray
    targets: np.ndarray
    provenance: tuple[tuple[int, int], ...]
    scorer_train_years: tuple[tuple[int, tuple[int, ...]], ...]
    boundary: str
    horizon: int
    references: tuple[float, ...]
    include_doy: bool
    protocol: str
    years: tuple[int, ...]

    def __post_init__(self) -> None:
        if not (
            self.features.shape[0] == self.targets.shape[0] == len(self.provenance)
        ):
            raise InvalidRecordError("features, targets, provenance must align")
        if self.targets.size and self.targets.min() < 0:
            raise InvalidRecordError("residual-size targets must be >= 0")
        trained_on = dict(self.scorer_train_years)
        for year, _z in self.provenance:
            if year not in trained_on:
                raise InvalidRecordError(f"no scorer recorded for year {year}")
            if year in trained_on[year]:
                raise InvalidRecordError(
                    f"leakage: scorer for year {year} was trained on it"
                )

    def __len__(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class Stage1Model:
    """Fitted countdown model plus everything needed to featurize new data."""

    model: gbm.GBMModel
    boundary: str
    horizon: int
    references: tuple[float, ...]
    include_doy: bool
    train_years: tuple[int, ...]
    curve: tuple[float, ...] | None = field(default=None, compare=False)


@dataclass(frozen=True)
class Stage2Model:
    """Fitted uncertainty model; predictions are clamped below at u_floor."""

    model: gbm.GBMModel
    u_floor: float
    protocol: str
    train_years: tuple[int, ...]
    curve: tuple[float, ...] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.u_floor <= 0:
            raise InvalidRecordError("u_floor must be > 0")


@dataclass(frozen=True)
class Forecaster:
    """A trained Stage-1/Stage-2 pair ready to forecast new years."""

    stage1: Stage1Model
    stage2: Stage2Model

    def predict_series(
        self, data: Dataset, year: int, z_range: tuple[int, int]
    ) -> ForecastSeries:
        return predict_series(self.stage1, self.stage2, data, year, z_range)


# ---------------------------------------------------------------------------
# Training-set construction
# ---------------------------------------------------------------------------


def series_references(
    data: Dataset, definition: SeasonDefinition, years: Iterable[int]
) -> tuple[float, ...]:
    """Per-series count-feature references, leak-free.

    Pollen uses the season concentration threshold; each covariate uses its
    mean over the given (training) years only, so rows built for later years
    never see future statistics.
    """
    ys = set(years)
    if not ys:
        raise TooFewYearsError("need at least one reference year")
    rec_years = np.array([r.date.year for r in data.records])
    mask = np.isin(rec_years, sorted(ys))
    if not mask.any():
        raise MissingLabelError(f"dataset has no days in years {sorted(ys)}")
    matrix = data.series_matrix()
    refs = [definition.delta_c]
    refs.extend(float(matrix[mask, s].mean()) for s in range(1, len(SERIES_NAMES)))
    return tuple(refs)


def _days_in_year(year: int) -> int:
    return 366 if calendar.isleap(year) else 365


def _doy_date(year: int, z: int) -> dt.date:
    return dt.date(year, 1, 1) + dt.timedelta(days=z - 1)


def _year_rows(
    fm: FeatureMatrix,
    flat: np.ndarray,
    data: Dataset,
    definition: SeasonDefinition,
    year: int,
    boundary: str,
    horizon: int,
) -> tuple[np.ndarray, np.ndarray, list[tuple[int, int]]]:
    """Feature rows and countdown targets for one labeled year."""
    label = label_season(data, definition, year)
    if not label.present:
        raise MissingLabelError(
            f"year {year} has no season under delta_c={definition.delta_c}, "
            f"delta_n={definition.delta_n}"
        )
    b = label.boundary(boundary)
    z_lo = b - horizon
    if z_lo < 1:
        raise HorizonOutOfRangeError(
            f"year {year}: horizon {horizon} reaches before day 1 "
            f"(boundary day {b})"
        )
    rows = []
    for z in range(z_lo, b + 1):
        try:
            rows.append(fm.row_for_date(_doy_date(year, z)))
        except IndexOutOfRangeError as exc:
            raise HorizonOutOfRangeError(
                f"year {year}, day {z}: no feature window ({exc})"
            ) from exc
    x = flat[np.array(rows, dtype=np.intp)]
    t = np.array([float(b - z) for z in range(z_lo, b + 1)])
    prov = [(year, z) for z in range(z_lo, b + 1)]
    return x, t, prov


def build_s1(
    data: Dataset,
    definition: SeasonDefinition,
    years: Iterable[int],
    boundary: str = "start",
    horizon: int = DEFAULT_HORIZON,
    references: Sequence[float] | None = None,
    include_doy: bool = True,
    matrix: FeatureMatrix | None = None,
) -> Stage1TrainingSet:
    """Stage-1 training set: one row per (year, z), z in [boundary-H, boundary].

    ``references`` and ``matrix`` can be supplied to reuse a prebuilt feature
    matrix; by default both are derived from ``years`` so nothing outside the
    training years influences the count-feature references.
    """
    if boundary not in ("start", "end"):
        raise InvalidRecordError(f"boundary must be 'start' or 'end', got {boundary!r}")
    if horizon < 1:
        raise HorizonOutOfRangeError(f"horizon must be >= 1, got {horizon}")
    ys = tuple(sorted(set(years)))
    if not ys:
        raise TooFewYearsError("need at least one training year")
    refs = (
        tuple(float(r) for r in references)
        if references is not None
        else series_references(data, definition, ys)
    )
    fm = matrix if matrix is not None else build_feature_matrix(data, refs)
    flat = flatten_all(fm, include_doy)

    xs, ts, prov = [], [], []
    for year in ys:
        x, t, p = _year_rows(fm, flat, data, definition, year, boundary, horizon)
        xs.append(x)
        ts.append(t)
        prov.extend(p)
    return Stage1TrainingSet(
        features=np.concatenate(xs, axis=0),
        targets=np.concatenate(ts),
        provenance=tuple(prov),
        boundary=boundary,
        horizon=horizon,
        references=refs,
        include_doy=include_doy,
        years=ys,
    )


def fit_stage1(
    training: Stage1TrainingSet, cfg: gbm.GBMConfig | None = None
) -> Stage1Model:
    """Fit the countdown model on a Stage-1 training set."""
    result = gbm.fit(training.features, training.targets, cfg)
    model = gbm.GBMModel(
        base_prediction=result.model.base_prediction,
        trees=result.model.trees,
        learning_rate=result.model.learning_rate,
        feature_count=result.model.feature_count,
        config=result.model.config,
        catalog_version=CATALOG_VERSION,
    )
    return Stage1Model(
        model=model,
        boundary=training.boundary,
        horizon=training.horizon,
        references=training.references,
        include_doy=training.include_doy,
        train_years=training.years,
        curve=tuple(float(v) for v in result.curve),
    )


def _protocol_folds(
    years: tuple[int, ...], protocol: str
) -> list[tuple[tuple[int, ...], tuple[int, ...]]]:
    """(train_years, scored_years) folds for the Stage-2 protocol."""
    if protocol == "loyo":
        return [
            (tuple(y for y in years if y != held), (held,)) for held in years
        ]
    if protocol == "holdout":
        cut = max(1, len(years) // 2)
        return [(years[:cut], years[cut:])]
    raise InvalidRecordError(f"unknown stage-2 protocol {protocol!r}")


def build_s2(
    data: Dataset,
    definition: SeasonDefinition,
    years: Iterable[int],
    boundary: str = "start",
    horizon: int = DEFAULT_HORIZON,
    protocol: str = "loyo",
    stage1_cfg: gbm.GBMConfig | None = None,
    references: Sequence[float] | None = None,
    include_doy: bool = True,
    matrix: FeatureMatrix | None = None,
    stage1_fit: FitFn = gbm.fit,
) -> Stage2TrainingSet:
    """Stage-2 training set of held-out residual sizes.

    Default protocol ``loyo``: for each year Y a Stage-1 model is fitted on
    the remaining years and scores Y's rows, so every y_hat is an honest
    out-of-year prediction.  Protocol ``holdout`` instead fits one model on
    the first half of the years and scores the second half.  Rows are
    ``[y_hat, *features]`` with target ``|y_hat - true countdown|``.
    """
    ys = tuple(sorted(set(years)))
    if len(ys) < 2:
        raise TooFewYearsError(
            f"stage-2 residuals need >= 2 years, got {len(ys)}"
        )
    cfg = stage1_cfg if stage1_cfg is not None else gbm.GBMConfig()
    refs = (
        tuple(float(r) for r in references)
        if references is not None
        else series_references(data, definition, ys)
    )
    fm = matrix if matrix is not None else build_feature_matrix(data, refs)
    flat = flatten_all(fm, include_doy)

    xs, ts, prov, scorers = [], [], [], []
    for train_ys, scored_ys in _protocol_folds(ys, protocol):
        fold = build_s1(
            data, definition, train_ys, boundary, horizon,
            references=refs, include_doy=include_doy, matrix=fm,
        )
        model = stage1_fit(fold.features, fold.targets, cfg).model
        for year in scored_ys:
            x, t, p = _year_rows(
                fm, flat, data, definition, year, boundary, horizon
            )
            y_hat = gbm.predict_batch(model, x)
            xs.append(np.concatenate([y_hat[:, None], x], axis=1))
            ts.append(np.abs(y_hat - t))
            prov.extend(p)
            scorers.append((year, train_ys))
    return Stage2TrainingSet(
        features=np.concatenate(xs, axis=0),
        targets=np.concatenate(ts),
        provenance=tuple(prov),
        scorer_train_years=tuple(scorers),
        boundary=boundary,
        horizon=horizon,
        references=refs,
        include_doy=include_doy,
        protocol=protocol,
        years=ys,
    )


def fit_stage2(
    training: Stage2TrainingSet,
    cfg: gbm.GBMConfig | None = None,
    u_floor: float = U_FLOOR,
) -> Stage2Model:
    """Fit the uncertainty model on a Stage-2 training set."""
    result = gbm.fit(training.features, training.targets, cfg)
    return Stage2Model(
        model=result.model,
        u_floor=u_floor,
        protocol=training.protocol,
        train_years=training.years,
        curve=tuple(float(v) for v in result.curve),
    )


def train_forecaster(
    data: Dataset,
    definition: SeasonDefinition,
    years: Iterable[int],
    boundary: str = "start",
    horizon: int = DEFAULT_HORIZON,
    stage1_cfg: gbm.GBMConfig | None = None,
    stage2_cfg: gbm.GBMConfig | None = None,
    protocol: str = "loyo",
    include_doy: bool = True,
) -> Forecaster:
    """Train both stages on the given years and return the bundled pair."""
    ys = tuple(sorted(set(years)))
    refs = series_references(data, definition, ys)
    fm = build_feature_matrix(data, refs)
    s1 = build_s1(
        data, definition, ys, boundary, horizon,
        references=refs, include_doy=include_doy, matrix=fm,
    )
    stage1 = fit_stage1(s1, stage1_cfg)
    s2 = build_s2(
        data, definition, ys, boundary, horizon,
        protocol=protocol, stage1_cfg=stage1_cfg,
        references=refs, include_doy=include_doy, matrix=fm,
    )
    stage2 = fit_stage2(s2, stage2_cfg)
    return Forecaster(stage1=stage1, stage2=stage2)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def predict_series(
    s1m: Stage1Model,
    s2m: Stage2Model,
    data: Dataset,
    year: int,
    z_range: tuple[int, int],
) -> ForecastSeries:
    """Per-day forecasts for one year over an inclusive day range.

    For each day z: ``y_hat = stage1(features(z))`` and
    ``u_hat = max(stage2([y_hat, *features(z)]), u_floor)``.  Features use
    only data dated at or before z (trailing windows), so each point is a
    forecast that could have been made on that day.
    """
    z_lo, z_hi = int(z_range[0]), int(z_range[1])
    if z_lo > z_hi:
        raise InvalidRecordError(f"empty z_range {z_range}")
    if z_lo < 1 or z_hi > _days_in_year(year):
        raise WindowUnavailableError(
            f"z_range {z_range} leaves year {year} (1..{_days_in_year(year)})"
        )
    fm = build_feature_matrix(data, s1m.references)
    flat = flatten_all(fm, s1m.include_doy)
    rows = []
    for z in range(z_lo, z_hi + 1):
        try:
            rows.append(fm.row_for_date(_doy_date(year, z)))
        except IndexOutOfRangeError as exc:
            raise WindowUnavailableError(
                f"year {year}, day {z}: no feature window ({exc})"
            ) from exc
    x = flat[np.array(rows, dtype=np.intp)]
    y_hat = gbm.predict_batch(s1m.model, x)
    u_raw = gbm.predict_batch(
        s2m.model, np.concatenate([y_hat[:, None], x], axis=1)
    )
    u_hat = np.maximum(u_raw, s2m.u_floor)
    points = tuple(
        PredictionPoint(z=float(z), y_hat=float(y), u_hat=float(u))
        for z, y, u in zip(range(z_lo, z_hi + 1), y_hat, u_hat)
    )
    return ForecastSeries(points=points, boundary=s1m.boundary, year=year)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def forecaster_to_json(fc: Forecaster) -> str:
    """Serialize a trained forecaster pair to a deterministic JSON document."""
    obj = {
        "format": BUNDLE_FORMAT,
        "boundary": fc.stage1.boundary,
        "horizon": fc.stage1.horizon,
        "references": list(fc.stage1.references),
        "include_doy": fc.stage1.include_doy,
        "train_years": list(fc.stage1.train_years),
        "u_floor": fc.stage2.u_floor,
        "stage2_protocol": fc.stage2.protocol,
        "stage1_model": json.loads(gbm.to_json(fc.stage1.model)),
        "stage2_model": json.loads(gbm.to_json(fc.stage2.model)),
    }
    return json.dumps(obj, sort_keys=True, indent=2)


def forecaster_from_json(text: str) -> Forecaster:
    """Inverse of :func:`forecaster_to_json` (training curves are not kept)."""
    obj = json.loads(text)
    if obj.get("format") != BUNDLE_FORMAT:
        raise InvalidRecordError(
            f"expected format {BUNDLE_FORMAT!r}, got {obj.get('format')!r}"
        )
    train_years = tuple(int(y) for y in obj["train_years"])
    stage1 = Stage1Model(
        model=gbm.from_json(json.dumps(obj["stage1_model"])),
        boundary=obj["boundary"],
        horizon=int(obj["horizon"]),
        references=tuple(float(r) for r in obj["references"]),
        include_doy=bool(obj["include_doy"]),
        train_years=train_years,
    )
    stage2 = Stage2Model(
        model=gbm.from_json(json.dumps(obj["stage2_model"])),
        u_floor=float(obj["u_floor"]),
        protocol=obj["stage2_protocol"],
        train_years=train_years,
    )
    return Forecaster(stage1=stage1, stage2=stage2)


def save_forecaster(fc: Forecaster, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(forecaster_to_json(fc))
        fh.write("\n")


def load_forecaster(path: str) -> Forecaster:
    with open(path, encoding="utf-8") as fh:
        return forecaster_from_json(fh.read())
