"""Shared JSON configuration for every command.

Parsing is strict: unknown keys anywhere are rejected.  Rationals in the
finite-market section may be written as ``"num/den"`` strings, decimal strings
or plain numbers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema
import numpy as np

from . import affine_engine as ae
from . import arbitrage as arb
from . import finite_space as fs
from . import products as pr
from .stopping_times import COPULA_KINDS, Copula2

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    """The configuration does not match the schema."""


_rational = {
    "oneOf": [
        {"type": "number"},
        {"type": "string", "pattern": r"^\s*-?\d+(\.\d+)?(\s*/\s*\d+)?\s*$"},
    ]
}
_vector = {"type": "array", "items": {"type": "number"}}
_matrix = {"type": "array", "items": _vector}
_intensity = {
    "type": "object",
    "additionalProperties": False,
    "required": ["b", "c"],
    "properties": {"b": _vector, "c": _vector, "b0": {"type": "number"}},
}
_labels = {"type": "array", "items": {"type": "string"}, "minItems": 1}
_partition = {"type": "array", "items": _labels, "minItems": 1}
_product = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind"],
    "properties": {
        "kind": {"enum": ["survival", "surrender_option", "va_surrender", "scheduled", "longevity"]},
        "t": {"type": "integer", "minimum": 0},
        "T": {"type": "integer", "minimum": 1},
        "mode": {"enum": ["strict", "lagged"]},
        "method": {"enum": ["affine", "mc"]},
        "n": {"type": "integer", "minimum": 2},
        "benefit": {"enum": ["survival", "none"]},
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dates", "amounts"],
            "properties": {
                "dates": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "amounts": {"type": "array", "items": {"type": "number", "minimum": 0}},
            },
        },
        "curves": _matrix,
        "weights": _vector,
        "observations": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 2, "maxItems": 2},
        },
    },
}
_benefit = {
    "oneOf": [
        {"type": "array", "items": _rational},
        {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "indicator": _labels,
                "call": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["asset", "time", "strike"],
                    "properties": {
                        "asset": {"type": "integer", "minimum": 0},
                        "time": {"type": "integer", "minimum": 0},
                        "strike": _rational,
                    },
                },
            },
        },
    ]
}

SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "model": {
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind"],
                    "properties": {"kind": {"const": "default"}},
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["kind", "d1", "d2", "mu", "mu_q", "theta", "sigma", "z0"],
                    "properties": {
                        "kind": {"const": "gaussian"},
                        "d1": {"type": "integer", "minimum": 0},
                        "d2": {"type": "integer", "minimum": 1},
                        "mu": _vector,
                        "mu_q": _vector,
                        "theta": _matrix,
                        "sigma": _matrix,
                        "z0": _vector,
                    },
                },
            ]
        },
        "stock": {
            "type": "object",
            "additionalProperties": False,
            "required": ["a0", "a"],
            "properties": {"a0": {"type": "number"}, "a": _vector},
        },
        "intensity": _intensity,
        "intensity2": _intensity,
        "copula": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {"kind": {"enum": list(COPULA_KINDS)}, "theta": {"type": "number"}},
        },
        "product": {"oneOf": [_product, {"type": "array", "items": _product, "minItems": 1}]},
        "market": {
            "type": "object",
            "additionalProperties": False,
            "required": ["outcomes", "reference", "filtration", "prices"],
            "properties": {
                "outcomes": _labels,
                "reference": {"type": "array", "items": _rational},
                "filtration": {"type": "array", "items": _partition, "minItems": 2},
                "private": {"type": "array", "items": _partition, "minItems": 2},
                "prices": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "array", "items": _rational}},
                },
            },
        },
        "premiums": {
            "type": "object",
            "additionalProperties": False,
            "patternProperties": {r"^\d+$": {"oneOf": [_rational, {"type": "array", "items": _rational}]}},
        },
        "benefits": {
            "type": "object",
            "additionalProperties": False,
            "patternProperties": {r"^\d+$": _benefit},
        },
        "validation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n": {"type": "integer", "minimum": 2},
                "T": {"type": "integer", "minimum": 2},
                "s": {"type": "integer", "minimum": 0},
                "antithetic": {"type": "boolean"},
            },
        },
        "tolerances": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "z_max": {"type": "number", "exclusiveMinimum": 0},
                "min_validation_n": {"type": "integer", "minimum": 2},
                "violation_rate": {"type": "number", "minimum": 0},
            },
        },
    },
}

DEFAULT_TOLERANCES = {"z_max": 3.0, "min_validation_n": 1000, "violation_rate": 1e-3}
DEFAULT_VALIDATION = {"n": 200_000, "T": 12, "s": 6, "antithetic": False}


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def validate(raw: Any) -> dict:
    """Check ``raw`` against the schema and return it."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"{where}: {exc.message}") from None
    return raw


def load(path: str | Path) -> "Config":
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SchemaError(f"cannot read config: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from None
    return Config(validate(raw))


def default_config() -> "Config":
    text = resources.files("qpval").joinpath("data/default_config.json").read_text()
    return Config(validate(json.loads(text)))


@dataclass(frozen=True)
class ModelBundle:
    model: ae.GaussianFactorModel
    stock: ae.StockSpec
    intensity: ae.IntensitySpec
    intensity2: ae.IntensitySpec
    copula: Copula2


@dataclass(frozen=True)
class ProductRequest:
    spec: Any
    method: str
    n: int


@dataclass(frozen=True)
class Config:
    raw: dict

    @property
    def seed(self) -> int | None:
        return self.raw.get("seed")

    @property
    def tolerances(self) -> dict:
        return {**DEFAULT_TOLERANCES, **self.raw.get("tolerances", {})}

    @property
    def validation(self) -> dict:
        return {**DEFAULT_VALIDATION, **self.raw.get("validation", {})}

    # -- affine model ------------------------------------------------------

    def model_bundle(self) -> ModelBundle:
        spec = self.raw.get("model")
        if spec is None:
            raise SchemaError("config has no model section")
        model, stock, int1, int2 = ae.default_model()
        if spec["kind"] == "gaussian":
            model = ae.GaussianFactorModel.from_dict(spec)
            stock = ae.StockSpec(0.0, np.zeros(model.d2))
            int1 = int2 = ae.IntensitySpec.zero(model.d1, model.d2)
        if "stock" in self.raw:
            stock = ae.StockSpec(self.raw["stock"]["a0"], self.raw["stock"]["a"])
        if "intensity" in self.raw:
            int1 = _intensity_from(self.raw["intensity"])
        if "intensity2" in self.raw:
            int2 = _intensity_from(self.raw["intensity2"])
        for name, it in (("intensity", int1), ("intensity2", int2)):
            if it.b.size != model.d1 or it.c.size != model.d2:
                raise ae.ConfigError(f"{name} loadings do not match the factor dimensions")
        if stock.a.size != model.d2:
            raise ae.ConfigError("stock loading does not match the public factor dimension")
        copula = Copula2.from_dict(self.raw.get("copula", {"kind": "independence"}))
        return ModelBundle(model, stock, int1, int2, copula)

    def product_requests(self) -> list[ProductRequest]:
        items = self.raw.get("product")
        if items is None:
            raise SchemaError("config has no product section")
        if isinstance(items, dict):
            items = [items]
        bundle = None
        out = []
        for p in items:
            if p["kind"] != "longevity" and bundle is None:
                bundle = self.model_bundle()
            out.append(_product_from(p, bundle))
        return out

    # -- finite market -----------------------------------------------------

    def insurance_market(self) -> arb.InsuranceMarket:
        spec = self.raw.get("market")
        if spec is None:
            raise SchemaError("config has no market section")
        space = fs.FiniteOutcomeSpace(tuple(spec["outcomes"]))
        P = fs.FiniteMeasure(space, tuple(_rationals(spec["reference"], space, "reference")))
        filtration = fs.FiniteFiltration(
            tuple(fs.FinitePartition.from_labels(space, blocks) for blocks in spec["filtration"])
        )
        horizon = filtration.horizon
        if len(spec["prices"]) != horizon + 1:
            raise SchemaError(f"prices must list {horizon + 1} dates")
        prices = tuple(
            tuple(fs.FiniteRV(space, tuple(_rationals(v, space, f"prices[{t}]"))) for v in row)
            for t, row in enumerate(spec["prices"])
        )
        market = fs.FiniteMarket(filtration, prices, P)
        if "private" in spec:
            private = tuple(fs.FinitePartition.from_labels(space, blocks) for blocks in spec["private"])
        else:
            private = filtration.partitions
        premiums = {}
        for key, value in self.raw.get("premiums", {}).items():
            if isinstance(value, list):
                premiums[int(key)] = fs.FiniteRV(space, tuple(_rationals(value, space, f"premiums[{key}]")))
            else:
                premiums[int(key)] = fs.FiniteRV.constant(space, fs.as_fraction(value))
        benefits = {
            int(key): _benefit_from(value, space, prices, f"benefits[{key}]")
            for key, value in self.raw.get("benefits", {}).items()
        }
        return arb.InsuranceMarket(market, private, benefits, premiums)


def _intensity_from(spec: dict) -> ae.IntensitySpec:
    return ae.IntensitySpec(spec["b"], spec["c"], spec.get("b0"))


def _rationals(values: list, space: fs.FiniteOutcomeSpace, where: str) -> list[Fraction]:
    if len(values) != space.size:
        raise SchemaError(f"{where}: expected {space.size} entries, got {len(values)}")
    return [fs.as_fraction(v) for v in values]


def _benefit_from(spec, space, prices, where: str) -> fs.FiniteRV:
    if isinstance(spec, list):
        X = fs.FiniteRV(space, tuple(_rationals(spec, space, where)))
    else:
        X = fs.FiniteRV.constant(space, 1)
        if "indicator" in spec:
            X = X * fs.FiniteRV.indicator(space, spec["indicator"])
        if "call" in spec:
            c = spec["call"]
            try:
                S = prices[c["time"]][c["asset"]]
            except IndexError:
                raise SchemaError(f"{where}: no asset {c['asset']} at time {c['time']}") from None
            K = fs.as_fraction(c["strike"])
            X = X * S.map(lambda v: max(v - K, 0))
    if any(v < 0 for v in X.values):
        raise SchemaError(f"{where}: benefits must be non-negative")
    return X


def _product_from(p: dict, b: ModelBundle | None) -> ProductRequest:
    kind = p["kind"]
    t, T = p.get("t", 0), p.get("T", 12)
    method = p.get("method", "affine")
    n = p.get("n", 200_000)
    if kind == "survival":
        spec = pr.SurvivalClaimSpec(b.model, b.stock, b.intensity, t, T, p.get("mode", "strict"))
    elif kind == "surrender_option":
        spec = pr.SurrenderOptionSpec(b.model, b.stock, b.intensity, t, T)
    elif kind == "va_surrender":
        spec = pr.VASurrenderSpec(b.model, b.stock, b.intensity, b.intensity2, t, T, b.copula)
    elif kind == "scheduled":
        sched = p.get("schedule")
        if sched is None:
            raise SchemaError("scheduled product needs a schedule")
        spec = pr.ScheduledContract(
            b.model, b.stock, b.intensity,
            pr.PaymentSchedule(tuple(sched["dates"]), tuple(sched["amounts"])),
            t, T, p.get("benefit", "survival"),
        )
    else:
        if "curves" not in p or "weights" not in p:
            raise SchemaError("longevity product needs curves and weights")
        spec = LongevitySpec(
            pr.LongevityMixture(p["curves"], p["weights"]),
            tuple(tuple(o) for o in p.get("observations", [])),
            t,
            T,
        )
    return ProductRequest(spec, method, n)


@dataclass(frozen=True)
class LongevitySpec:
    """Survival probability from ``t`` to ``T`` under the Bayes-updated mixture."""

    mixture: pr.LongevityMixture
    observations: tuple
    t: int
    T: int

    kind = "longevity"

    def value(self) -> float:
        upd = pr.mixture_update(self.mixture, self.observations)
        if self.T > self.mixture.curves.shape[1]:
            raise SchemaError("longevity curves are shorter than the horizon")
        w = upd.weights[min(self.t, upd.weights.shape[0] - 1)]
        survival = np.exp(-self.mixture.curves[:, self.t:self.T].sum(axis=1))
        return float(np.dot(w, survival))
