"""
Run Configuration Module
Strict JSON run configuration and the report row type
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from config import (
    DEFAULT_LADDER,
    DIRECT_TUPLE_CAP,
    EXACT_N_CAP,
    MAX_COUPLING_ENTRIES,
    MOMENT_TUPLE_CAP,
    P_MAX,
    QUADRATURE_POINTS,
    REPORT_COLUMNS,
)
from errors import ConfigError
from exact import OverlapMonomial
from identities import Budgets, ClippedPolynomial, ConstantFunction, MonomialFunction
from model import ModelParameters
from sampler import Schedule, TemperingLadder

logger = logging.getLogger(__name__)

EXPERIMENTS = ("exact-eval", "mc-run", "gg-scan", "concentration-scan", "fe-curve", "proof-checks")

# experiment -> the section it requires
EXPERIMENT_SECTIONS = {
    "gg-scan": "gg",
    "concentration-scan": "concentration",
    "fe-curve": "fe_curve",
    "proof-checks": "proof",
}


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TermSpec(StrictModel):
    p: int = Field(ge=1, le=P_MAX)
    beta: float


class ModelSpec(StrictModel):
    N: int = Field(ge=1)
    terms: list[TermSpec]
    h: float


class LadderSpec(StrictModel):
    k: int = Field(DEFAULT_LADDER["k"], ge=2)
    s_min: float = Field(DEFAULT_LADDER["s_min"], gt=0.0, lt=1.0)
    s_max: float = Field(DEFAULT_LADDER["s_max"], ge=1.0, le=1.0)


class ScheduleSpec(StrictModel):
    burn_in: int = Field(ge=0)
    thinning: Optional[int] = Field(None, ge=1)
    sweeps: int = Field(ge=1)
    ladder: Optional[LadderSpec] = None
    n_replicas: int = Field(2, ge=2)

    def to_schedule(self):
        ladder = None
        if self.ladder is not None:
            ladder = TemperingLadder.geometric(self.ladder.k, self.ladder.s_min, self.ladder.s_max)
        return Schedule(self.burn_in, self.thinning, self.sweeps, ladder)


class BudgetSpec(StrictModel):
    exact_n_cap: int = Field(EXACT_N_CAP, ge=1)
    direct_cap: int = Field(DIRECT_TUPLE_CAP, ge=1)
    moment_cap: int = Field(MOMENT_TUPLE_CAP, ge=1)
    max_coupling_entries: int = Field(MAX_COUPLING_ENTRIES, ge=1)


# [l, l2, q]: R_{l,l2}^q, 0-based replicas
Factor = tuple[int, int, int]


def _monomial(n, factors):
    return OverlapMonomial(n, [((l, l2), q) for l, l2, q in factors])


class ClippedTermSpec(StrictModel):
    coef: float
    factors: list[Factor]


class FunctionSpec(StrictModel):
    """A bounded test function of the replica overlaps"""
    kind: Literal["constant", "monomial", "clipped"]
    factors: list[Factor] = []
    terms: list[ClippedTermSpec] = []

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind == "monomial" and not self.factors:
            raise ValueError("a monomial function needs 'factors'")
        if self.kind == "clipped" and not self.terms:
            raise ValueError("a clipped function needs 'terms'")
        if self.kind != "monomial" and self.factors:
            raise ValueError(f"'factors' is only valid for kind 'monomial', not {self.kind!r}")
        if self.kind != "clipped" and self.terms:
            raise ValueError(f"'terms' is only valid for kind 'clipped', not {self.kind!r}")
        return self

    def build(self, n):
        if self.kind == "constant":
            return ConstantFunction(n)
        if self.kind == "monomial":
            return MonomialFunction(_monomial(n, self.factors))
        return ClippedPolynomial(n, [(t.coef, _monomial(n, t.factors)) for t in self.terms])


class GGScanSpec(StrictModel):
    N_list: list[int] = Field(min_length=1)
    p_list: list[int] = Field(min_length=1)
    n_list: list[int] = Field(min_length=1)
    functions: list[FunctionSpec] = Field(min_length=1)


class ConcentrationSpec(StrictModel):
    p: int = Field(ge=1, le=P_MAX)
    N_list: list[int] = Field(min_length=1)


class CurveSpec(StrictModel):
    p: int = Field(ge=1, le=P_MAX)
    x_grid: list[float] = Field(min_length=3)


class ProofSpec(StrictModel):
    p: int = Field(ge=1, le=P_MAX)
    intervals: list[tuple[float, float]] = Field(min_length=1)
    gammas: list[float] = []
    quadrature_points: int = Field(QUADRATURE_POINTS, ge=2)


class RunConfig(StrictModel):
    experiment: Literal[EXPERIMENTS]
    description: str = ""
    mode: Literal["exact", "mc"]
    model: ModelSpec
    master_seed: int = Field(ge=0, lt=2 ** 64)
    n_disorder: int = Field(ge=2)
    output: str
    format: Literal["csv", "jsonl"] = "csv"
    workers: int = Field(1, ge=1)
    schedule: Optional[ScheduleSpec] = None
    budgets: BudgetSpec = BudgetSpec()
    gg: Optional[GGScanSpec] = None
    concentration: Optional[ConcentrationSpec] = None
    fe_curve: Optional[CurveSpec] = None
    proof: Optional[ProofSpec] = None

    @model_validator(mode="after")
    def _check_sections(self):
        if self.mode == "mc" and self.schedule is None:
            raise ValueError("mode 'mc' requires a 'schedule' section")
        if self.experiment == "mc-run" and self.mode != "mc":
            raise ValueError("experiment 'mc-run' requires mode 'mc'")
        if self.experiment == "exact-eval" and self.mode != "exact":
            raise ValueError("experiment 'exact-eval' requires mode 'exact'")
        wanted = EXPERIMENT_SECTIONS.get(self.experiment)
        for section in EXPERIMENT_SECTIONS.values():
            present = getattr(self, section) is not None
            if section == wanted and not present:
                raise ValueError(f"experiment {self.experiment!r} requires a {section!r} section")
            if section != wanted and present:
                raise ValueError(f"section {section!r} does not apply to experiment {self.experiment!r}")
        degrees = [t.p for t in self.model.terms]
        if self.concentration is not None and self.concentration.p not in degrees:
            raise ValueError(f"concentration.p={self.concentration.p} is not among the model degrees {degrees}")
        return self

    def model_parameters(self):
        return ModelParameters(self.model.N, tuple((t.p, t.beta) for t in self.model.terms), self.model.h)

    def budgets_for(self):
        return Budgets(
            n_disorder=self.n_disorder,
            master_seed=self.master_seed,
            workers=self.workers,
            schedule=self.schedule.to_schedule() if self.schedule else None,
            n_replicas=self.schedule.n_replicas if self.schedule else 2,
            exact_n_cap=self.budgets.exact_n_cap,
            direct_cap=self.budgets.direct_cap,
            moment_cap=self.budgets.moment_cap,
            max_coupling_entries=self.budgets.max_coupling_entries,
            quadrature_points=self.proof.quadrature_points if self.proof else QUADRATURE_POINTS,
        )

    def with_overrides(self, **overrides):
        """Copy with CLI overrides applied (None values ignored), validated again"""
        data = self.model_dump()
        data.update({key: value for key, value in overrides.items() if value is not None})
        return validate_run_config(data)


def _describe(error):
    first = error.errors()[0]
    location = ".".join(str(part) for part in first["loc"]) or "<root>"
    return f"{location}: {first['msg']}"


def validate_run_config(data):
    try:
        if isinstance(data, (str, bytes)):
            return RunConfig.model_validate_json(data)
        return RunConfig.model_validate(data)
    except ValidationError as error:
        raise ConfigError(f"invalid run configuration: {_describe(error)}") from error


def load_run_config(path):
    """Read and validate a JSON run configuration"""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as error:
        raise ConfigError(f"cannot read config {path}: {error}") from error
    config = validate_run_config(text)
    logger.info(f"Loaded {config.experiment} config from {path} ({config.mode} mode)")
    return config


@dataclass(frozen=True)
class ReportRow:
    """One reported quantity with every input needed to reproduce it"""
    experiment: str
    N: int
    p: Optional[int]
    n: Optional[int]
    betas: tuple
    h: float
    mode: str
    quantity: str
    mean: float
    std_error: float
    n_samples: int
    seed: int

    @classmethod
    def build(cls, experiment, params, mode, quantity, estimate, seed, p=None, n=None):
        coefficients = params.coefficients()
        betas = tuple(coefficients.get(degree, math.nan) for degree in range(1, P_MAX + 1))
        return cls(
            experiment, params.N, p, n, betas, params.h, mode, quantity,
            float(estimate.mean), float(estimate.std_error), int(estimate.n_samples), int(seed),
        )

    def as_record(self):
        record = {
            "experiment": self.experiment, "N": self.N, "p": self.p, "n": self.n,
            "h": self.h, "mode": self.mode, "quantity": self.quantity, "mean": self.mean,
            "std_error": self.std_error, "n_samples": self.n_samples, "seed": self.seed,
        }
        for degree, beta in enumerate(self.betas, start=1):
            record[f"beta_{degree}"] = beta
        return {column: record[column] for column in REPORT_COLUMNS}

    @classmethod
    def from_record(cls, record):
        missing = [column for column in REPORT_COLUMNS if column not in record]
        if missing:
            raise ConfigError(f"report record lacks {missing}")

        def real(value):
            return math.nan if value is None else float(value)

        return cls(
            experiment=record["experiment"],
            N=int(record["N"]),
            p=record["p"],
            n=record["n"],
            betas=tuple(real(record[f"beta_{degree}"]) for degree in range(1, P_MAX + 1)),
            h=real(record["h"]),
            mode=record["mode"],
            quantity=record["quantity"],
            mean=real(record["mean"]),
            std_error=real(record["std_error"]),
            n_samples=int(record["n_samples"]),
            seed=int(record["seed"]),
        )
