"""Experiment configuration (JSON, strict schema)."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

TABLE1 = {
    "kl": [16, 40, 100, 250],
    "wavelet": [64, 256, 500, 1400],
    "las": [64, 256, 1024, 4096],
}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DomainConfig(_Strict):
    dx: float = 4.0
    dy: float = 1.0


class MaternConfig(_Strict):
    sigma2: float = 1.0
    lam: float = 0.5
    nu: float = 1.5


class TransformConfig(_Strict):
    kappa: float = 10.0
    mu: Optional[float] = None  # None: chosen so that E(g=0) equals `median`
    median: float = 26.1e9


class LoadConfig(_Strict):
    magnitude: float = 1000.0
    x0: float = 4.0 / 3.0
    x1: float = 8.0 / 3.0


class MaterialConfig(_Strict):
    poisson: float = Field(0.25, gt=0.0, lt=0.5)
    density: float = 2500.0
    gravity: bool = True
    plane: Literal["stress", "strain"] = "stress"


class NoiseConfig(_Strict):
    sigma_f: float = Field(1e-8, gt=0.0)
    seed: int = 1


class TruthConfig(_Strict):
    kind: Literal["piecewise-constant", "prior-sampled-wavelet"] = "piecewise-constant"
    outside: float = 47e9
    inside: float = 12e9
    region: tuple[float, float, float, float] = (4.0 / 3.0, 8.0 / 3.0, 0.0, 0.5)
    n_coeffs: int = 5000
    seed: int = 0


class HierarchyConfig(_Strict):
    n_levels: int = Field(4, ge=1)
    coarse_nx: int = 16
    coarse_ny: int = 4
    truncations: dict[str, list[int]] = Field(default_factory=lambda: {k: list(v) for k, v in TABLE1.items()})
    tau: list[int] = Field(default_factory=lambda: [1, 100, 5, 5])
    n_coarse: int = 200_000
    n_samples: Optional[list[int]] = None  # explicit N_l overrides the derived lengths
    burn_in_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    beta: list[float] = Field(default_factory=lambda: [0.1, 0.1, 0.1, 0.1])
    proposal: Literal["pcn", "random-walk"] = "pcn"

    @model_validator(mode="after")
    def _check(self):
        L = self.n_levels
        for name in ("tau", "beta"):
            if len(getattr(self, name)) < L:
                raise ValueError(f"hierarchy.{name} needs {L} entries")
        for method, ms in self.truncations.items():
            if len(ms) < L:
                raise ValueError(f"truncations[{method}] needs {L} entries")
            if any(b <= a for a, b in zip(ms[:L], ms[1:L])):
                raise ValueError(f"truncations[{method}] must increase strictly")
        if self.n_samples is not None and len(self.n_samples) < L:
            raise ValueError(f"hierarchy.n_samples needs {L} entries")
        if any(t < 1 for t in self.tau[:L]):
            raise ValueError("tau must be >= 1")
        return self


class WaveletConfig(_Strict):
    fft_resolution: Union[int, Literal["auto"]] = "auto"
    gamma_factor: float = 1.25


class LASConfig(_Strict):
    unbiased: bool = False


class ExperimentConfig(_Strict):
    domain: DomainConfig = DomainConfig()
    hierarchy: HierarchyConfig = HierarchyConfig()
    matern: MaternConfig = MaternConfig()
    transform: TransformConfig = TransformConfig()
    representation: Literal["kl", "wavelet", "las"] = "kl"
    load: LoadConfig = LoadConfig()
    material: MaterialConfig = MaterialConfig()
    noise: NoiseConfig = NoiseConfig()
    truth: TruthConfig = TruthConfig()
    data_refinement: int = Field(2, ge=2)
    normalize_likelihood: bool = True
    wavelet: WaveletConfig = WaveletConfig()
    las: LASConfig = LASConfig()
    seed: int = Field(0, ge=0)
    replicas: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)
    output: str = "out"
    store_coeffs: bool = False

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls.model_validate_json(Path(path).read_text())

    def dumps(self) -> str:
        return self.model_dump_json(indent=2)

    def save(self, path):
        Path(path).write_text(self.dumps())

    def content_hash(self) -> str:
        import hashlib

        return hashlib.sha256(json.dumps(self.model_dump(mode="json"), sort_keys=True).encode()).hexdigest()[:16]
