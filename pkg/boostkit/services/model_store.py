import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from pydantic import ValidationError

from config import settings
from ..models.dataset import Scaling
from ..models.errors import DataError, ModelError
from ..models.schemas import (
    AdaBoostPayload,
    GradientPayload,
    LikelihoodPayload,
    LikStepRecord,
    ModelFile,
    PathRecord,
    RoundRecord,
    ScalingRecord,
)
from ..utils.helpers import provenance
from .adaboost import AdaBoostModel, AdaRound
from .baselearners import Stump, learner_from_spec
from .gradboost import BoostModel, PathEntry
from .likboost import LikBoostModel, LikStep
from .losses import family_from_id

logger = logging.getLogger(__name__)

FittedModel = Union[BoostModel, LikBoostModel, AdaBoostModel]


def _array(values) -> np.ndarray:
    return np.asarray(values, dtype=float)


class ModelStore:
    """Reads and writes fitted models as JSON envelopes."""

    def __init__(self, format_version: int = settings.MODEL_FORMAT_VERSION):
        self.format_version = format_version

    def to_record(self, model: FittedModel, created_with: Optional[Dict[str, Any]] = None) -> ModelFile:
        names = list(model.names)
        if isinstance(model, BoostModel):
            family = model.family.describe()
            scaling = model.scaling
            payload = GradientPayload(
                step_length=model.step_length,
                offset=model.offset,
                learners=[None if learner is None else learner.spec() for learner in model.learners],
                design_means=[None if means is None else [float(v) for v in means]
                              for means in model.design_means],
                path=[PathRecord(component=names[e.component], params=[float(v) for v in e.params])
                      for e in model.path],
                risk=[float(v) for v in model.risk],
                skipped=list(model.skipped),
            )
        elif isinstance(model, LikBoostModel):
            family = model.family
            scaling = model.scaling
            payload = LikelihoodPayload(
                lam=model.lam,
                nu=model.nu,
                centers=[float(v) for v in model.centers],
                unpenalized=[names[j] for j in model.unpenalized],
                path=[LikStepRecord(component=names[s.component], gamma=s.gamma,
                                    params=None if s.params is None else [float(v) for v in s.params])
                      for s in model.path],
                block_path=model.block_path.tolist(),
                criterion=[float(v) for v in model.criterion],
                df=None if model.df is None else [float(v) for v in model.df],
                param_cov=None if model.param_cov is None else model.param_cov.tolist(),
                dispersion=model.dispersion,
                learners=[None if learner is None else learner.spec() for learner in model.learners],
                design_means=[None if means is None else [float(v) for v in means]
                              for means in model.design_means],
            )
        elif isinstance(model, AdaBoostModel):
            family = "exponential"
            scaling = Scaling.identity(model.p)
            payload = AdaBoostPayload(
                rounds=[RoundRecord(component=names[r.stump.component], threshold=r.stump.threshold,
                                    polarity=r.stump.polarity, alpha=r.alpha, epsilon=r.epsilon)
                        for r in model.rounds],
                terminated_early=model.terminated_early,
                reason=model.reason,
                labels=None if model.labels is None else list(model.labels),
                requested_rounds=model.requested_rounds,
            )
        else:
            raise ModelError(f"Cannot serialize object of type {type(model).__name__}")
        return ModelFile(
            format_version=self.format_version,
            engine=model.engine,
            family=family,
            names=names,
            created_with=provenance(created_with),
            scaling=ScalingRecord(means=[float(v) for v in scaling.means],
                                  sds=[float(v) for v in scaling.sds]),
            payload=payload,
        )

    def from_record(self, record: ModelFile) -> FittedModel:
        if record.format_version != self.format_version:
            raise ModelError(f"Unsupported model format version {record.format_version} "
                             f"(expected {self.format_version})")
        names = tuple(record.names)
        index = {name: j for j, name in enumerate(names)}
        try:
            scaling = Scaling(means=_array(record.scaling.means), sds=_array(record.scaling.sds))
            payload = record.payload
            if isinstance(payload, GradientPayload):
                return BoostModel(
                    family=family_from_id(record.family),
                    step_length=payload.step_length,
                    offset=payload.offset,
                    names=names,
                    learners=tuple(None if spec is None else learner_from_spec(j, spec)
                                   for j, spec in enumerate(payload.learners)),
                    design_means=tuple(None if means is None else _array(means)
                                       for means in payload.design_means),
                    path=tuple(PathEntry(component=index[e.component], params=_array(e.params))
                               for e in payload.path),
                    risk=_array(payload.risk),
                    scaling=scaling,
                    skipped=tuple(payload.skipped),
                )
            if isinstance(payload, LikelihoodPayload):
                return LikBoostModel(
                    engine=record.engine,
                    family=record.family,
                    lam=payload.lam,
                    names=names,
                    centers=_array(payload.centers),
                    unpenalized=tuple(index[name] for name in payload.unpenalized),
                    path=tuple(LikStep(component=index[s.component], gamma=s.gamma,
                                       params=None if s.params is None else _array(s.params))
                               for s in payload.path),
                    block_path=_array(payload.block_path).reshape(
                        len(payload.block_path), len(payload.block_path[0])),
                    criterion=_array(payload.criterion),
                    scaling=scaling,
                    df=None if payload.df is None else _array(payload.df),
                    param_cov=None if payload.param_cov is None else _array(payload.param_cov),
                    dispersion=payload.dispersion,
                    nu=payload.nu,
                    learners=tuple(None if spec is None else learner_from_spec(j, spec)
                                   for j, spec in enumerate(payload.learners)),
                    design_means=tuple(None if means is None else _array(means)
                                       for means in payload.design_means),
                )
            return AdaBoostModel(
                names=names,
                rounds=tuple(AdaRound(stump=Stump(component=index[r.component], threshold=r.threshold,
                                                  polarity=r.polarity),
                                      alpha=r.alpha, epsilon=r.epsilon)
                             for r in payload.rounds),
                terminated_early=payload.terminated_early,
                reason=payload.reason,
                labels=None if payload.labels is None else tuple(payload.labels),
                requested_rounds=payload.requested_rounds,
            )
        except KeyError as e:
            raise ModelError(f"Model file refers to unknown component {e}")

    def save(self, model: FittedModel, path: Union[str, Path],
             created_with: Optional[Dict[str, Any]] = None) -> Path:
        """Write the model as JSON to `path`."""
        path = Path(path)
        try:
            logger.info(f"Saving {type(model).__name__} to {path}")
            record = self.to_record(model, created_with)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(record.model_dump_json(indent=2), encoding="utf-8")
            return path
        except Exception as e:
            logger.error(f"Error saving model to {path}: {str(e)}")
            raise

    def load(self, path: Union[str, Path]) -> FittedModel:
        """Read a model written by `save`."""
        path = Path(path)
        if not path.is_file():
            raise DataError(f"Model file not found: {path}")
        try:
            record = ModelFile.model_validate_json(path.read_text(encoding="utf-8"))
        except ValidationError as e:
            logger.error(f"Error loading model from {path}: {str(e)}")
            raise ModelError(f"Invalid model file {path}: {e.error_count()} validation error(s)")
        model = self.from_record(record)
        logger.info(f"Loaded {record.engine} model from {path}")
        return model
