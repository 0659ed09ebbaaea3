"""Validated run configurations for the command-line front end."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

SCHEMA_VERSION = "kdsm-config/1"

Method = Literal["dsm", "sm", "finite_k", "taylor", "nystrom", "exact"]
MetricName = Literal["fisher", "fisher_train", "loglik", "fssd", "w1"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class KernelConfig(_Strict):
    family: Literal["rbf", "arccos"] = "rbf"
    lengthscales: Optional[list[float]] = None  # one value is broadcast to every dimension

    @field_validator("lengthscales")
    @classmethod
    def _positive(cls, v):
        if v is not None and (len(v) == 0 or any(x <= 0 for x in v)):
            raise ValueError("lengthscales must be positive")
        return v


class Q0Config(_Strict):
    kind: Literal["uniform_box", "gaussian", "gmm"] = "gaussian"
    k: int = Field(1, ge=1)


class TuneSection(_Strict):
    enabled: bool = False
    iterations: int = Field(60, ge=1)
    learning_rate: float = Field(0.1, gt=0)
    batch_size: int = Field(512, ge=4)
    optimizer: Literal["adam", "grid"] = "adam"
    lam_grid: list[float] = []
    sigma_grid: list[float] = []
    lengthscale_grid: list[float] = []
    tune_lengthscales: bool = True


class MalaSection(_Strict):
    step_size: float = Field(0.1, gt=0)
    chain_length: int = Field(10_000, ge=2)
    burn_in: int = Field(5_000, ge=0)
    n_chains: int = Field(4, ge=1)
    n_samples: int = Field(1000, ge=1)

    @model_validator(mode="after")
    def _burn(self):
        if self.burn_in >= self.chain_length:
            raise ValueError("burn_in must be smaller than chain_length")
        return self


class MethodConfig(_Strict):
    method: Method = "dsm"
    kernel: KernelConfig = KernelConfig(lengthscales=[1.0])
    M: int = Field(512, ge=1)
    lam: float = Field(1e-3, gt=0)
    sigma: float = Field(0.1, ge=0)
    q0: Q0Config = Q0Config()
    tune: TuneSection = TuneSection()
    M_inducing: int = Field(300, ge=1)
    K: int = Field(1000, ge=1)
    n_z: int = Field(10_000, ge=1)
    normalize: bool = True


class FitConfigFile(_Strict):
    schema_version: Literal["kdsm-config/1"] = SCHEMA_VERSION
    data: str
    model_out: str
    report_out: str
    fit: MethodConfig = MethodConfig()
    validation_fraction: float = Field(0.2, ge=0, lt=1)
    standardize: bool = False
    seed: int = 0


class EvalConfigFile(_Strict):
    schema_version: Literal["kdsm-config/1"] = SCHEMA_VERSION
    model: str
    data: str
    out: str
    metrics: list[MetricName] = []
    family: Optional[str] = None
    family_params: dict = {}
    seed: int = 0
    mala: MalaSection = MalaSection()
    n_bootstrap: int = Field(1000, ge=1)


class DatasetConfig(_Strict):
    name: str
    family: Optional[str] = None
    params: dict = {}
    path: Optional[str] = None
    n: int = Field(1000, ge=2)
    n_test: int = Field(2000, ge=10)

    @model_validator(mode="after")
    def _source(self):
        if (self.family is None) == (self.path is None):
            raise ValueError("dataset needs exactly one of family or path")
        return self


class NamedMethod(MethodConfig):
    name: str


class PairConfig(_Strict):
    dataset: str
    method: str


class BenchConfigFile(_Strict):
    schema_version: Literal["kdsm-config/1"] = SCHEMA_VERSION
    datasets: list[DatasetConfig]
    methods: list[NamedMethod]
    pairs: list[PairConfig]
    seeds: int = Field(1, ge=1)
    seed: int = 0
    metrics: list[MetricName] = ["fisher"]
    out: str
    normalize_across_methods: bool = False
    mala: MalaSection = MalaSection()
    n_bootstrap: int = Field(200, ge=1)

    @model_validator(mode="after")
    def _refs(self):
        ds = {d.name for d in self.datasets}
        ms = {m.name for m in self.methods}
        for p in self.pairs:
            if p.dataset not in ds:
                raise ValueError(f"pair references unknown dataset {p.dataset!r}")
            if p.method not in ms:
                raise ValueError(f"pair references unknown method {p.method!r}")
        return self
