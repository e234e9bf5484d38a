import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import settings
from ..models.dataset import (
    Dataset,
    ResamplingKind,
    ResamplingScheme,
    ResponseKind,
    ResponseVector,
    Scaling,
)
from ..models.errors import DataError

logger = logging.getLogger(__name__)

MISSING_POLICIES = ("reject", "median")


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator; the algorithm id is `settings.RNG_ALGORITHM`."""
    return np.random.Generator(np.random.PCG64(seed))


def _parse_numeric(frame: pd.DataFrame, column: str, allow_missing: bool) -> np.ndarray:
    raw = frame[column].str.strip()
    blank = raw == ""
    parsed = pd.to_numeric(raw.where(~blank, None), errors="coerce")
    bad = parsed.isna() & ~blank
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise DataError(
            f"Unparseable cell at row {row + 1}, column '{column}': '{frame[column].iloc[row]}'"
        )
    if blank.any() and not allow_missing:
        row = int(np.flatnonzero(blank.to_numpy())[0])
        raise DataError(f"Missing value at row {row + 1}, column '{column}'")
    return parsed.to_numpy(dtype=float)


def _binary_response(raw: pd.Series, column: str,
                     positive_label: Optional[str]) -> ResponseVector:
    values = raw.str.strip()
    if (values == "").any():
        row = int(np.flatnonzero((values == "").to_numpy())[0])
        raise DataError(f"Missing value at row {row + 1}, column '{column}'")
    labels = sorted(values.unique())
    if len(labels) > 2:
        raise DataError(
            f"Binary response required: '{column}' has {len(labels)} distinct labels, "
            f"e.g. {labels[:5]}"
        )
    if positive_label is None:
        positive_label = labels[-1]
    elif positive_label not in labels:
        raise DataError(f"Positive label '{positive_label}' does not occur in '{column}'")
    others = [label for label in labels if label != positive_label]
    negative_label = others[0] if others else ""
    coded = np.where(values.to_numpy() == positive_label, 1.0, -1.0)
    logger.info(f"Binary response '{column}': '{positive_label}' -> +1, '{negative_label}' -> -1")
    return ResponseVector.binary(coded, labels={"+1": positive_label, "-1": negative_label})


def _read_frame(path: Path) -> pd.DataFrame:
    if not path.is_file():
        raise DataError(f"CSV file not found: {path}")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        logger.error(f"Error reading CSV {path}: {str(e)}")
        raise DataError(f"Could not parse CSV {path}: {e}")
    frame.columns = [str(c).strip() for c in frame.columns]
    return frame


def _predictor_column(frame: pd.DataFrame, name: str, missing: str) -> np.ndarray:
    values = _parse_numeric(frame, name, allow_missing=(missing == "median"))
    holes = np.isnan(values)
    if holes.any():
        if holes.all():
            raise DataError(f"Column '{name}' has no observed values to impute from")
        values[holes] = np.median(values[~holes])
        logger.warning(f"Imputed {int(holes.sum())} missing cells of '{name}' by the median")
    return values


def load_csv(
    path: Union[str, Path],
    response: Union[str, Sequence[str]],
    variant: Union[ResponseKind, str] = ResponseKind.CONTINUOUS,
    missing: str = "reject",
    drop: Iterable[str] = (),
    unpenalized: Iterable[str] = (),
    positive_label: Optional[str] = None,
) -> Dataset:
    """Read a CSV file with a header row into a Dataset.

    `response` names one column (continuous, binary) or two columns
    `time,status` (survival). Every other column, minus `drop`, becomes a
    predictor in file order. Missing predictor cells are rejected or
    replaced by the column median depending on `missing`.
    """
    variant = ResponseKind(variant)
    if missing not in MISSING_POLICIES:
        raise DataError(f"Unknown missing-value policy '{missing}'")
    path = Path(path)
    frame = _read_frame(path)

    response_columns = [response] if isinstance(response, str) else list(response)
    if variant is ResponseKind.SURVIVAL and len(response_columns) != 2:
        raise DataError("Survival response needs two columns: time,status")
    if variant is not ResponseKind.SURVIVAL and len(response_columns) != 1:
        raise DataError(f"{variant.value} response needs exactly one column")
    drop = list(drop)
    for column in response_columns + drop:
        if column not in frame.columns:
            raise DataError(f"Column '{column}' not found in {path}")

    if variant is ResponseKind.CONTINUOUS:
        y = ResponseVector.continuous(_parse_numeric(frame, response_columns[0], False))
    elif variant is ResponseKind.BINARY:
        y = _binary_response(frame[response_columns[0]], response_columns[0], positive_label)
    else:
        time = _parse_numeric(frame, response_columns[0], False)
        status = _parse_numeric(frame, response_columns[1], False)
        if np.any(time <= 0):
            row = int(np.flatnonzero(time <= 0)[0])
            raise DataError(f"Survival time must be positive (row {row + 1}, "
                            f"column '{response_columns[0]}')")
        y = ResponseVector.survival(time, status)

    names = [c for c in frame.columns if c not in response_columns and c not in drop]
    if not names:
        raise DataError(f"No predictor columns left in {path}")
    columns = [_predictor_column(frame, name, missing) for name in names]

    unpenalized = list(unpenalized)
    for name in unpenalized:
        if name not in names:
            raise DataError(f"Unpenalized column '{name}' is not a predictor")
    dataset = Dataset(
        predictors=np.column_stack(columns),
        names=tuple(names),
        response=y,
        unpenalized=frozenset(names.index(name) for name in unpenalized),
    )
    logger.info(f"Loaded {path}: n={dataset.n}, p={dataset.p}, response={variant.value}")
    return dataset


def standardize(d: Dataset, ddof: int = 1) -> Tuple[Dataset, Scaling]:
    """Center every column to mean 0 and scale to standard deviation 1.

    The boosting engines pass ddof=0: every column then has x'x = n, and a
    linear likelihood-boosting step with nu matches a gradient step with step
    length nu.
    """
    if d.n < 2:
        raise DataError("Standardization needs at least two observations")
    means = d.predictors.mean(axis=0)
    sds = d.predictors.std(axis=0, ddof=ddof)
    for j, sd in enumerate(sds):
        if not sd > 0.0:
            raise DataError(f"Constant column '{d.names[j]}' cannot be standardized")
    scaling = Scaling(means=means, sds=sds)
    return d.with_predictors(scaling.apply(d.predictors)), scaling


def _strata_groups(strata: np.ndarray) -> List[np.ndarray]:
    labels = np.unique(strata)
    return [np.flatnonzero(strata == label) for label in labels]


def resample_indices(
    scheme: ResamplingScheme,
    n: int,
    strata: Optional[Sequence] = None,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Generate (train, test) index pairs (0-based) for a resampling scheme.

    k-fold test sets partition range(n); bootstrap test sets hold the
    out-of-bag observations; subsampling tests on the complement of the
    drawn subsample. With strata, draws are made within each stratum.
    """
    if scheme.kind is ResamplingKind.KFOLD and n < scheme.folds:
        raise DataError(f"k-fold needs n >= K, got n={n}, K={scheme.folds}")
    if strata is not None:
        strata = np.asarray(strata)
        if strata.shape != (n,):
            raise DataError(f"Strata must have length {n}, got {strata.shape}")
        groups = _strata_groups(strata)
    else:
        groups = [np.arange(n)]
    if any(group.size == 0 for group in groups):
        raise DataError("Empty stratum")

    rng = make_rng(scheme.seed)
    everything = np.arange(n)
    pairs = []

    if scheme.kind is ResamplingKind.KFOLD:
        fold_of = np.empty(n, dtype=int)
        offset = 0
        for group in groups:
            shuffled = rng.permutation(group)
            fold_of[shuffled] = (offset + np.arange(shuffled.size)) % scheme.folds
            offset += shuffled.size
        for k in range(scheme.folds):
            test = np.flatnonzero(fold_of == k)
            pairs.append((np.flatnonzero(fold_of != k), test))
        return pairs

    for _ in range(scheme.folds):
        if scheme.kind is ResamplingKind.BOOTSTRAP:
            train = np.concatenate([rng.choice(group, size=group.size, replace=True)
                                    for group in groups])
        else:
            draws = []
            for group in groups:
                size = int(round(scheme.fraction * group.size))
                if size < 1:
                    raise DataError("Empty stratum in subsample; increase the fraction")
                draws.append(rng.choice(group, size=size, replace=False))
            train = np.concatenate(draws)
        test = np.setdiff1d(everything, train)
        pairs.append((np.sort(train), test))
    return pairs


def default_strata(d: Dataset) -> np.ndarray:
    """Labels used when stratified resampling is requested without explicit strata."""
    if d.response.kind is ResponseKind.SURVIVAL:
        return d.response.status
    if d.response.kind is ResponseKind.BINARY:
        return d.response.values
    raise DataError("Stratified resampling of a continuous response needs explicit strata")


def write_table(path: Union[str, Path], table: pd.DataFrame,
                invocation: Optional[str] = None) -> Path:
    """Write a TSV table, optionally preceded by a `# invocation:` line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        if invocation:
            handle.write(f"# invocation: {invocation}\n")
        table.to_csv(handle, sep="\t", index=False, lineterminator="\n")
    logger.debug(f"Wrote {len(table)} rows to {path}")
    return path


def provenance(extra: Optional[Dict[str, object]] = None) -> Dict[str, object]:
    """Metadata block embedded in model files and reports."""
    info: Dict[str, object] = {
        "tool": settings.PROJECT_NAME,
        "version": settings.VERSION,
        "rng": settings.RNG_ALGORITHM,
    }
    if extra:
        info.update(extra)
    return info


def load_predictors(path: Union[str, Path], names: Sequence[str], missing: str = "reject") -> np.ndarray:
    """Predictor matrix for new data, columns in the order of `names`; other columns are ignored."""
    if missing not in MISSING_POLICIES:
        raise DataError(f"Unknown missing-value policy '{missing}'")
    path = Path(path)
    frame = _read_frame(path)
    absent = [name for name in names if name not in frame.columns]
    if absent:
        raise DataError(f"Column '{absent[0]}' required by the model is missing from {path}")
    return np.column_stack([_predictor_column(frame, name, missing) for name in names])
