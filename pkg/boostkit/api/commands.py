import functools
import logging
from enum import Enum
from pathlib import Path
from typing import Annotated, Callable, Dict, List, Optional, TypeVar

import numpy as np
import pandas as pd
import typer
from threadpoolctl import threadpool_limits

from config import settings
from ..models.dataset import Dataset, ResamplingScheme, ResponseKind
from ..models.errors import BoostkitError, DataError, ModelError
from ..models.schemas import FitReport
from ..services import adaboost, gradboost, likboost, stopping
from ..services.baselearners import parse_learners
from ..services.losses import L2Loss, family_from_id
from ..services.model_store import ModelStore
from ..utils import simulate as simulators
from ..utils.helpers import load_csv, load_predictors, write_table

logger = logging.getLogger(__name__)

app = typer.Typer(
    name=settings.PROJECT_NAME,
    help="Component-wise boosting: gradient, likelihood (GLM, Cox) and AdaBoost.",
    add_completion=False,
    no_args_is_help=True,
)

# Initialize services
model_store = ModelStore()

EFFECT_POINTS = 100
T = TypeVar("T")


class Engine(str, Enum):
    gradient = "gradient"
    glm = "glm"
    cox = "cox"
    adaboost = "adaboost"


class Learner(str, Enum):
    linear = "linear"
    pspline = "pspline"


class Missing(str, Enum):
    reject = "reject"
    median = "median"


class Scale(str, Enum):
    link = "link"
    response = "response"


class SimulationKind(str, Enum):
    appendix = "appendix"
    gaussian = "gaussian"
    survival = "survival"


DataOpt = Annotated[Path, typer.Option("--data", help="Input CSV with a header row.")]
ResponseOpt = Annotated[str, typer.Option("--response", help="Response column, or time,status for survival.")]
EngineOpt = Annotated[Engine, typer.Option("--engine", help="Boosting engine.")]
FamilyOpt = Annotated[Optional[str], typer.Option(
    "--family", help="Loss family (gradient: l2, laplace, huber[:delta], exponential, logistic, gamma; "
                     "glm: gaussian, binomial, poisson).")]
ResponseTypeOpt = Annotated[Optional[ResponseKind], typer.Option(
    "--response-type", help="Override the response type implied by engine and family.")]
LearnerOpt = Annotated[Learner, typer.Option("--learner", help="Default base-learner for every component.")]
LearnerForOpt = Annotated[Optional[List[str]], typer.Option(
    "--learner-for", help="Per-component override as column:learner; repeatable.")]
DfOpt = Annotated[float, typer.Option("--df", help="Target degrees of freedom of P-spline learners.")]
MstopOpt = Annotated[int, typer.Option("--mstop", min=0, help="Number of boosting iterations.")]
StepOpt = Annotated[float, typer.Option("--step-length", help="Step length of gradient boosting.")]
LambdaOpt = Annotated[Optional[float], typer.Option("--lambda", help="Penalty of likelihood boosting.")]
NuOpt = Annotated[Optional[float], typer.Option(
    "--nu", help="Step size of likelihood boosting, converted to a penalty (default 0.1).")]
UnpenalizedOpt = Annotated[Optional[List[str]], typer.Option(
    "--unpenalized", help="Mandatory covariate of likelihood boosting; repeatable.")]
DropOpt = Annotated[Optional[List[str]], typer.Option("--drop", help="Column to ignore; repeatable.")]
MissingOpt = Annotated[Missing, typer.Option("--missing", help="Policy for missing predictor cells.")]
PositiveOpt = Annotated[Optional[str], typer.Option("--positive-label", help="Label coded as +1.")]
StandardizeOpt = Annotated[bool, typer.Option("--standardize", help="Center and scale predictors.")]
OutOpt = Annotated[Path, typer.Option("--out", help="Output directory.")]
ThreadsOpt = Annotated[int, typer.Option(
    "--threads", min=1, envvar="BOOSTKIT_THREADS", help="Worker threads (cv folds, learner setup).")]


def handle_errors(command):
    """Map library errors to exit codes: data 3, numeric 4, model 3."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            # single-threaded BLAS keeps results independent of --threads
            with threadpool_limits(limits=1):
                return command(*args, **kwargs)
        except BoostkitError as e:
            logger.error(f"{type(e).__name__}: {str(e)}")
            typer.echo(f"error: {e}", err=True)
            raise typer.Exit(code=e.exit_code)

    return wrapper


def _invocation(ctx: typer.Context) -> str:
    """Command line rebuilt from parsed options, without --threads and --out."""
    parts = [settings.PROJECT_NAME, ctx.info_name]
    for param in sorted(ctx.command.params, key=lambda p: p.name):
        value = ctx.params.get(param.name)
        skip = param.name in ("threads", "out") or not param.opts
        if skip or value is None or value is False or value == []:
            continue
        flag = max(param.opts, key=len)
        values = value if isinstance(value, (list, tuple)) else [value]
        for item in values:
            item = item.value if isinstance(item, Enum) else item
            parts.append(flag if item is True else f"{flag} {item}")
    return " ".join(parts)


def _response_kind(engine: Engine, family: Optional[str], override: Optional[ResponseKind]) -> ResponseKind:
    if override is not None:
        return ResponseKind(override)
    if engine is Engine.adaboost:
        return ResponseKind.BINARY
    if engine is Engine.cox:
        return ResponseKind.SURVIVAL
    name = (family or "").split(":")[0].lower()
    if name in ("exponential", "logistic", "binomial"):
        return ResponseKind.BINARY
    return ResponseKind.CONTINUOUS


def _load_training(data: Path, response: str, kind: ResponseKind, missing: Missing,
                   drop: Optional[List[str]], unpenalized: Optional[List[str]],
                   positive_label: Optional[str]) -> Dataset:
    columns = [c.strip() for c in response.split(",")] if kind is ResponseKind.SURVIVAL else response
    return load_csv(data, columns, kind, missing.value, drop or (), unpenalized or (), positive_label)


def _option_value(flag: str, parse: Callable[..., T], *args) -> T:
    """Parse a flag value; a DataError becomes a usage error naming the flag (exit 2)."""
    try:
        return parse(*args)
    except DataError as e:
        raise typer.BadParameter(str(e), param_hint=f"'{flag}'")


def _fit_config(d: Dataset, engine: Engine, family: Optional[str], learner: Learner,
                learner_for: Optional[List[str]], df: float, step_length: float,
                lam: Optional[float], nu: Optional[float], standardize: bool) -> stopping.FitConfig:
    if engine is Engine.adaboost:
        return stopping.FitConfig(engine="adaboost")
    specs = tuple(_option_value("--learner-for", parse_learners, learner.value, d.names, learner_for or (), df))
    if engine is Engine.gradient:
        loss = _option_value("--family", family_from_id, family or "l2")
        return stopping.FitConfig(engine="gradient", family=loss, learners=specs, step_length=step_length,
                                  standardize=standardize)
    if engine is Engine.cox and any(spec.kind != "linear" for spec in specs):
        raise typer.BadParameter("P-spline components are available for the gradient and glm engines only",
                                 param_hint="'--learner'")
    if lam is not None and nu is not None:
        raise typer.BadParameter("Give either --lambda or --nu, not both", param_hint="'--lambda' / '--nu'")
    if lam is not None:
        penalty = _option_value("--lambda", likboost.PenaltySpec, lam)
    else:
        penalty = _option_value("--nu", likboost.PenaltySpec, None, settings.DEFAULT_NU if nu is None else nu)
    glm_family = "gaussian"
    if engine is Engine.glm:
        glm_family = _option_value("--family", likboost.glm_family, family or "gaussian").name
    return stopping.FitConfig(engine=engine.value, glm_family=glm_family, penalty=penalty,
                              learners=specs if engine is Engine.glm else None, standardize=standardize)


def _selected_names(model) -> List[str]:
    if isinstance(model, adaboost.AdaBoostModel):
        return [model.names[r.stump.component] for r in model.rounds]
    components = [e.component for e in model.path]
    return [model.names[j] for j in components]


def _coefficient_table(intercept: Optional[float], coefficients: np.ndarray, names) -> pd.DataFrame:
    terms, estimates = [], []
    if intercept is not None:
        terms.append("(Intercept)")
        estimates.append(float(intercept))
    for j in np.flatnonzero(coefficients):
        terms.append(names[j])
        estimates.append(float(coefficients[j]))
    return pd.DataFrame({"term": terms, "estimate": estimates})


def _grid_for(column: np.ndarray, points: int) -> np.ndarray:
    return np.linspace(column.min(), column.max(), points)


def _write_gradient(model: gradboost.BoostModel, d: Dataset, out: Path, invocation: str,
                    criteria: bool) -> Dict[str, object]:
    write_table(out / "risk_path.tsv", pd.DataFrame({"m": np.arange(model.m_stop + 1), "risk": model.risk}),
                invocation)
    if not gradboost.has_splines(model):
        intercept, coefficients = gradboost.aggregate_coefficients(model)
        write_table(out / "coefficients.tsv", _coefficient_table(intercept, coefficients, model.names),
                    invocation)
        write_table(out / "coefficient_path.tsv", gradboost.coefficient_path(model), invocation)
    else:
        for j in sorted({e.component for e in model.path}):
            effect = gradboost.partial_effect(model, j, _grid_for(d.column(j), EFFECT_POINTS))
            write_table(out / "effects" / f"{model.names[j]}.tsv", effect.to_frame(), invocation)
    extra: Dict[str, object] = {}
    if criteria:
        if not isinstance(model.family, L2Loss):
            raise ModelError("--criteria needs the l2 family; use cv for other families")
        for name, compute in (("aicc", stopping.aic_corrected), ("bic", stopping.bic)):
            path = compute(model, d)
            write_table(out / f"{name}.tsv", path.to_frame(), invocation)
            typer.echo(f"{name}_mstop={path.selected}")
            extra[f"{name}_mstop"] = path.selected
    return extra


def _write_likelihood(model: likboost.LikBoostModel, d: Dataset, out: Path, invocation: str) -> Dict[str, object]:
    summary = likboost.summary_lik(model, d.n)
    write_table(out / "risk_path.tsv", summary["table"], invocation)
    if model.has_splines:
        for j in model.active():
            band = likboost.confidence_bands(model, j, _grid_for(d.column(j), EFFECT_POINTS))
            write_table(out / "effects" / f"{model.names[j]}.tsv", band.to_frame(), invocation)
    else:
        intercept, coefficients = likboost.coefficients_lik(model)
        write_table(out / "coefficients.tsv", _coefficient_table(intercept, coefficients, model.names),
                    invocation)
    typer.echo(f"{model.m_stop} boosting steps resulting in {summary['nonzero']} non-zero coefficients "
               f"({len(model.unpenalized)} mandatory)")
    return {key: summary[key] for key in ("aicc_m", "bic_m") if key in summary}


def _write_adaboost(model: adaboost.AdaBoostModel, d: Dataset, out: Path, invocation: str) -> None:
    if model.m_stop == 0:
        risk = pd.DataFrame({"m": [0], "exponential_risk": [1.0]})
    else:
        risk = pd.DataFrame({
            "m": np.arange(model.m_stop + 1),
            "exponential_risk": adaboost.exponential_risk_path(model, d),
            "training_error": np.r_[np.mean(d.y != 1.0), adaboost.training_error_path(model, d)],
        })
    write_table(out / "risk_path.tsv", risk, invocation)
    rounds = pd.DataFrame({
        "round": np.arange(1, model.m_stop + 1),
        "component": [model.names[r.stump.component] for r in model.rounds],
        "threshold": [r.stump.threshold for r in model.rounds],
        "polarity": [r.stump.polarity for r in model.rounds],
        "alpha": [r.alpha for r in model.rounds],
        "epsilon": [r.epsilon for r in model.rounds],
    })
    write_table(out / "rounds.tsv", rounds, invocation)
    if model.terminated_early:
        typer.echo(f"terminated early: {model.reason}")


def _write_fit_outputs(model, d: Dataset, out: Path, invocation: str, trace: bool,
                       criteria: bool = False) -> None:
    out.mkdir(parents=True, exist_ok=True)
    selected = _selected_names(model)
    if trace:
        for m, name in enumerate(selected, start=1):
            typer.echo(f"step {m}: {name}")
    report = FitReport(engine=model.engine, family="", m_stop=model.m_stop, selected=sorted(set(selected)))
    if isinstance(model, gradboost.BoostModel):
        extra = _write_gradient(model, d, out, invocation, criteria)
        report.family = model.family.describe()
        report.final_risk = float(model.risk[-1])
        report.selection_frequencies = gradboost.selection_frequencies(model)
    elif isinstance(model, likboost.LikBoostModel):
        extra = _write_likelihood(model, d, out, invocation)
        report.family = model.family
        report.final_risk = float(model.criterion[-1])
    else:
        _write_adaboost(model, d, out, invocation)
        extra = {}
        report.family = "exponential"
        report.terminated_early = model.terminated_early
        report.reason = model.reason
    model_store.save(model, out / "model.json", created_with={"invocation": invocation, **extra})
    (out / "report.json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Fit outputs written to {out}")


@app.callback()
def main_callback(
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Log at DEBUG level.")] = False,
):
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


@app.command()
@handle_errors
def fit(
    ctx: typer.Context,
    data: DataOpt,
    response: ResponseOpt,
    out: OutOpt = Path("boostkit-out"),
    engine: EngineOpt = Engine.gradient,
    family: FamilyOpt = None,
    response_type: ResponseTypeOpt = None,
    learner: LearnerOpt = Learner.linear,
    learner_for: LearnerForOpt = None,
    df: DfOpt = settings.DEFAULT_DF,
    mstop: MstopOpt = settings.DEFAULT_MSTOP,
    step_length: StepOpt = settings.DEFAULT_STEP_LENGTH,
    lam: LambdaOpt = None,
    nu: NuOpt = None,
    unpenalized: UnpenalizedOpt = None,
    drop: DropOpt = None,
    missing: MissingOpt = Missing.reject,
    positive_label: PositiveOpt = None,
    standardize: StandardizeOpt = False,
    trace: Annotated[bool, typer.Option("--trace", help="Print the component selected in every step.")] = False,
    criteria: Annotated[bool, typer.Option("--criteria", help="Write AICc and BIC paths (l2 only).")] = False,
    threads: ThreadsOpt = settings.THREADS,
):
    """Fit a boosting model and write the model file and fit tables."""
    invocation = _invocation(ctx)
    d = _load_training(data, response, _response_kind(engine, family, response_type), missing, drop,
                       unpenalized, positive_label)
    config = _fit_config(d, engine, family, learner, learner_for, df, step_length, lam, nu, standardize)
    if engine is Engine.gradient:
        model = gradboost.fit(d, config.family, config.learners, mstop, step_length, standardize, threads)
    else:
        model = config.fit(d, mstop)
    _write_fit_outputs(model, d, out, invocation, trace, criteria)


@app.command()
@handle_errors
def predict(
    model: Annotated[Path, typer.Option("--model", help="Model file written by fit.")],
    data: DataOpt,
    out: Annotated[Optional[Path], typer.Option("--out", help="Output CSV (default: stdout).")] = None,
    at_m: Annotated[Optional[int], typer.Option("--at-m", min=0, help="Iteration to predict at.")] = None,
    scale: Annotated[Scale, typer.Option("--scale", help="Link or response scale.")] = Scale.link,
    missing: MissingOpt = Missing.reject,
):
    """Predict new observations with a saved model."""
    fitted = model_store.load(model)
    X = load_predictors(data, fitted.names, missing.value)
    if isinstance(fitted, adaboost.AdaBoostModel):
        labels, margin = adaboost.predict_adaboost(fitted, X, at_m)
        frame = pd.DataFrame({"prediction": labels.astype(int), "margin": margin})
        if fitted.labels is not None:
            frame["label"] = np.where(labels > 0, fitted.labels[0], fitted.labels[1])
    elif isinstance(fitted, likboost.LikBoostModel):
        frame = pd.DataFrame({"prediction": likboost.predict_lik(fitted, X, at_m, scale.value)})
        if fitted.has_splines:
            frame["extrapolated"] = likboost.extrapolation_flags(fitted, X)
    else:
        frame = pd.DataFrame({"prediction": gradboost.predict(fitted, X, at_m, scale.value)})
        if gradboost.has_splines(fitted):
            frame["extrapolated"] = gradboost.extrapolation_flags(fitted, X)
    if out is None:
        typer.echo(frame.to_csv(index=False, lineterminator="\n"), nl=False)
    else:
        out.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(out, index=False, lineterminator="\n")
        logger.info(f"Wrote {len(frame)} predictions to {out}")


@app.command()
@handle_errors
def cv(
    ctx: typer.Context,
    data: DataOpt,
    response: ResponseOpt,
    out: OutOpt = Path("boostkit-out"),
    engine: EngineOpt = Engine.gradient,
    family: FamilyOpt = None,
    response_type: ResponseTypeOpt = None,
    learner: LearnerOpt = Learner.linear,
    learner_for: LearnerForOpt = None,
    df: DfOpt = settings.DEFAULT_DF,
    mstop: MstopOpt = settings.DEFAULT_MSTOP,
    step_length: StepOpt = settings.DEFAULT_STEP_LENGTH,
    lam: LambdaOpt = None,
    nu: NuOpt = None,
    unpenalized: UnpenalizedOpt = None,
    drop: DropOpt = None,
    missing: MissingOpt = Missing.reject,
    positive_label: PositiveOpt = None,
    standardize: StandardizeOpt = False,
    scheme: Annotated[str, typer.Option(
        "--scheme", help="kfold:K, bootstrap:B or subsample:B:fraction.")] = f"bootstrap:{settings.DEFAULT_BOOTSTRAP}",
    grid: Annotated[Optional[str], typer.Option(
        "--grid", help="Iterations to evaluate, a:b[:stride] (default 1:mstop).")] = None,
    seed: Annotated[int, typer.Option("--seed", help="Seed of the resampling draws.")] = settings.SEED,
    stratified: Annotated[bool, typer.Option("--stratified", help="Resample within classes/status.")] = False,
    refit: Annotated[bool, typer.Option("--refit", help="Refit on all data at the selected m.")] = False,
    threads: ThreadsOpt = settings.THREADS,
):
    """Choose the stopping iteration by resampling."""
    invocation = _invocation(ctx)
    resampling = _option_value("--scheme", ResamplingScheme.parse, scheme, seed, stratified)
    iterations = _option_value("--grid", stopping.parse_grid, grid or f"1:{mstop}")
    d = _load_training(data, response, _response_kind(engine, family, response_type), missing, drop,
                       unpenalized, positive_label)
    config = _fit_config(d, engine, family, learner, learner_for, df, step_length, lam, nu, standardize)
    report = stopping.cv_risk(d, config, resampling, iterations, threads)

    out.mkdir(parents=True, exist_ok=True)
    write_table(out / "cv_risk.tsv", report.to_frame(), invocation)
    write_table(out / "cv_mean.tsv", report.mean_frame(), invocation)
    if report.skipped:
        typer.echo(f"skipped_resamples={','.join(str(k + 1) for k in report.skipped)}")
    typer.echo(f"selected_mstop={report.selected}")
    if refit:
        model = config.fit(d, report.selected)
        _write_fit_outputs(model, d, out, invocation, trace=False)


@app.command()
@handle_errors
def effects(
    model: Annotated[Path, typer.Option("--model", help="Model file written by fit.")],
    data: DataOpt,
    out: OutOpt = Path("boostkit-out"),
    component: Annotated[Optional[List[str]], typer.Option(
        "--component", help="Component to evaluate; repeatable (default: all selected).")] = None,
    at_m: Annotated[Optional[int], typer.Option("--at-m", min=0, help="Iteration (gradient only).")] = None,
    points: Annotated[int, typer.Option("--points", min=2, help="Grid points per component.")] = EFFECT_POINTS,
    missing: MissingOpt = Missing.reject,
):
    """Write partial effects (gradient) or effects with 95% bands (glm)."""
    fitted = model_store.load(model)
    if isinstance(fitted, adaboost.AdaBoostModel) or getattr(fitted, "engine", "") == likboost.ENGINE_COX:
        raise ModelError("Effects are available for gradient and glm models only")
    X = load_predictors(data, fitted.names, missing.value)
    names = component or sorted({fitted.names[e.component] for e in fitted.path})
    for name in names:
        if name not in fitted.names:
            raise DataError(f"Unknown component '{name}'")
        j = fitted.names.index(name)
        grid_values = _grid_for(X[:, j], points)
        if isinstance(fitted, gradboost.BoostModel):
            frame = gradboost.partial_effect(fitted, j, grid_values, at_m).to_frame()
        else:
            if at_m is not None and at_m != fitted.m_stop:
                raise ModelError("Confidence bands are computed at the fitted m_stop only")
            frame = likboost.confidence_bands(fitted, j, grid_values).to_frame()
        write_table(out / "effects" / f"{name}.tsv", frame)
    typer.echo(f"wrote {len(names)} effect table(s) to {out / 'effects'}")


@app.command()
@handle_errors
def simulate(
    out: Annotated[Path, typer.Option("--out", help="Output CSV.")],
    kind: Annotated[SimulationKind, typer.Option("--kind", help="Generator.")] = SimulationKind.appendix,
    n: Annotated[Optional[int], typer.Option("--n", min=1, help="Number of observations.")] = None,
    p: Annotated[Optional[int], typer.Option("--p", min=1, help="Number of predictors.")] = None,
    seed: Annotated[int, typer.Option("--seed", help="Generator seed.")] = settings.SEED,
    truth: Annotated[Optional[Path], typer.Option("--truth", help="Also write the true signal here.")] = None,
):
    """Write a synthetic dataset with known truth."""
    if kind is SimulationKind.appendix:
        d, signal = simulators.simulate_appendix(n or 150, seed)
    elif kind is SimulationKind.gaussian:
        d, signal = simulators.simulate_gaussian(n or 100, p or 5, seed=seed)
    else:
        d, signal = simulators.simulate_survival(n or 60, p or 100, seed=seed)
    frame = pd.DataFrame(d.predictors, columns=list(d.names))
    if kind is SimulationKind.survival:
        frame["time"] = d.response.time
        frame["status"] = d.response.status.astype(int)
    else:
        frame["y"] = d.y
    out.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(out, index=False, lineterminator="\n")
    if truth is not None:
        pd.DataFrame({"truth": signal}).to_csv(truth, index=False, lineterminator="\n")
    logger.info(f"Simulated {kind.value} data (n={d.n}, p={d.p}, seed={seed}) written to {out}")
