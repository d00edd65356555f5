"""Pipeline configuration: a flat file of dotted ``section.key = value`` lines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .errors import FormatError, InvalidArgument


def _positive(v: float) -> bool:
    return v > 0 and math.isfinite(v)


@dataclass(frozen=True)
class FeatureConfig:
    provider: str = "baseline"  # baseline | file
    keypoint_budget: int = 128
    local_radius: float = 2.0
    gem_p: float = 3.0


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 1
    recall_k: int = 25
    revisit_radius: float = 3.0


@dataclass(frozen=True)
class RegistrationConfig:
    lowe_ratio: float = 0.95
    inlier_threshold: float = 0.5
    max_iters: int = 10_000
    confidence: float = 0.99
    icp_resolution: float = 0.4
    icp_max_corr_dist: float = 1.0
    icp_max_iters: int = 50
    icp_tolerance: float = 1e-6
    rot_tol: float = 5.0
    trans_tol: float = 2.0


@dataclass(frozen=True)
class VerificationConfig:
    provider: str = "baseline"  # baseline | file
    superpixels: int = 250
    compactness: float = 10.0
    slic_iterations: int = 10
    feature_dim: int = 64
    colour_sigma: float = 0.15
    min_depth: float = 0.1
    top_k: int = 5
    svc_c: float = 1.0
    svc_gamma: float = 1.0
    svc_coef0: float = 1.0


# (predicate, human-readable range) per key
_RANGES: dict[str, tuple[Any, str]] = {
    "features.provider": (lambda v: v in ("baseline", "file"), "baseline | file"),
    "features.keypoint_budget": (lambda v: v >= 1, ">= 1"),
    "features.local_radius": (_positive, "> 0"),
    "features.gem_p": (lambda v: v >= 1 and math.isfinite(v), ">= 1"),
    "retrieval.k": (lambda v: v >= 1, ">= 1"),
    "retrieval.recall_k": (lambda v: v >= 1, ">= 1"),
    "retrieval.revisit_radius": (_positive, "> 0"),
    "registration.lowe_ratio": (lambda v: 0 < v <= 1, "(0, 1]"),
    "registration.inlier_threshold": (_positive, "> 0"),
    "registration.max_iters": (lambda v: v >= 1, ">= 1"),
    "registration.confidence": (lambda v: 0 < v < 1, "(0, 1)"),
    "registration.icp_resolution": (_positive, "> 0"),
    "registration.icp_max_corr_dist": (_positive, "> 0"),
    "registration.icp_max_iters": (lambda v: v >= 0, ">= 0"),
    "registration.icp_tolerance": (lambda v: v >= 0 and math.isfinite(v), ">= 0"),
    "registration.rot_tol": (_positive, "> 0"),
    "registration.trans_tol": (_positive, "> 0"),
    "verification.provider": (lambda v: v in ("baseline", "file"), "baseline | file"),
    "verification.superpixels": (lambda v: 1 <= v <= 250, "[1, 250]"),
    "verification.compactness": (_positive, "> 0"),
    "verification.slic_iterations": (lambda v: v >= 1, ">= 1"),
    "verification.feature_dim": (lambda v: v >= 8 and round(v ** (1 / 3)) ** 3 == v, "a cube >= 8"),
    "verification.colour_sigma": (_positive, "> 0"),
    "verification.min_depth": (lambda v: v >= 0 and math.isfinite(v), ">= 0"),
    "verification.top_k": (lambda v: v >= 1, ">= 1"),
    "verification.svc_c": (_positive, "> 0"),
    "verification.svc_gamma": (_positive, "> 0"),
    "verification.svc_coef0": (lambda v: math.isfinite(v), "finite"),
}


@dataclass(frozen=True)
class PipelineConfig:
    features: FeatureConfig = field(default_factory=FeatureConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    registration: RegistrationConfig = field(default_factory=RegistrationConfig)
    verification: VerificationConfig = field(default_factory=VerificationConfig)

    @classmethod
    def from_pairs(cls, pairs: dict[str, str], source: str = "<config>") -> PipelineConfig:
        cfg = cls()
        sections: dict[str, dict[str, Any]] = {}
        for key, raw in pairs.items():
            if key not in _RANGES:
                raise FormatError(f"unknown config key {key!r}", source)
            section, name = key.split(".", 1)
            sub = getattr(cfg, section)
            typ = type(getattr(sub, name))
            try:
                value: Any = typ(raw) if typ is str else typ(float(raw)) if typ is float else int(raw)
            except ValueError:
                raise FormatError(f"{key}: cannot parse {raw!r} as {typ.__name__}", source) from None
            ok, rng = _RANGES[key]
            if not ok(value):
                raise InvalidArgument(f"{key} = {raw} is outside the allowed range {rng}")
            sections.setdefault(section, {})[name] = value
        return replace(cfg, **{s: replace(getattr(cfg, s), **kv) for s, kv in sections.items()})

    @classmethod
    def load(cls, path: str | Path | None) -> PipelineConfig:
        if path is None:
            return cls()
        p = str(path)
        pairs: dict[str, str] = {}
        for lineno, raw in enumerate(Path(p).read_text().splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError("expected 'section.key = value'", p, lineno)
            k, v = (t.strip() for t in line.split("=", 1))
            if k in pairs:
                raise FormatError(f"duplicate key {k!r}", p, lineno)
            pairs[k] = v
        return cls.from_pairs(pairs, p)

    def dump(self) -> str:
        lines = []
        for section in ("features", "retrieval", "registration", "verification"):
            sub = getattr(self, section)
            for f in fields(sub):
                lines.append(f"{section}.{f.name} = {getattr(sub, f.name)}")
        return "\n".join(lines) + "\n"
