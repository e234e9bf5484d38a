from typing import Annotated, Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field


class _Record(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants", extra="forbid")


class ScalingRecord(_Record):
    means: List[float]
    sds: List[float]


class PathRecord(_Record):
    component: str
    params: List[float]


class GradientPayload(_Record):
    kind: Literal["gradient"] = "gradient"
    step_length: float
    offset: float
    learners: List[Optional[Dict[str, Any]]]
    design_means: List[Optional[List[float]]]
    path: List[PathRecord]
    risk: List[float]
    skipped: List[str] = []


class LikStepRecord(_Record):
    component: str
    gamma: float
    params: Optional[List[float]] = None


class LikelihoodPayload(_Record):
    kind: Literal["likelihood"] = "likelihood"
    lam: float
    nu: Optional[float] = None
    centers: List[float]
    unpenalized: List[str]
    path: List[LikStepRecord]
    block_path: List[List[float]]
    criterion: List[float]
    df: Optional[List[float]] = None
    param_cov: Optional[List[List[float]]] = None
    dispersion: float = 1.0
    learners: List[Optional[Dict[str, Any]]] = []
    design_means: List[Optional[List[float]]] = []


class RoundRecord(_Record):
    component: str
    threshold: float
    polarity: int
    alpha: float
    epsilon: float


class AdaBoostPayload(_Record):
    kind: Literal["adaboost"] = "adaboost"
    rounds: List[RoundRecord]
    terminated_early: bool = False
    reason: str = ""
    labels: Optional[List[str]] = None
    requested_rounds: int = 0


Payload = Annotated[Union[GradientPayload, LikelihoodPayload, AdaBoostPayload], Field(discriminator="kind")]


class ModelFile(_Record):
    format_version: int
    engine: str
    family: str
    names: List[str]
    created_with: Dict[str, Any] = {}
    scaling: ScalingRecord
    payload: Payload


class FitReport(_Record):
    engine: str
    family: str
    m_stop: int
    selected: List[str]
    selection_frequencies: Dict[str, float] = {}
    final_risk: Optional[float] = None
    terminated_early: bool = False
    reason: str = ""
