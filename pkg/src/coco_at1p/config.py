"""Flat ``key = value`` run configuration and parameter files."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from datetime import date
from fractions import Fraction
from pathlib import Path
from typing import Mapping

from .at1p import At1pParams, VolTermStructure
from .bonds import BondSpec, CocoSpec
from .capital import CapitalRatioModel
from .engine import SimConfig
from .errors import ParseError, ValidationError
from .market import MarketSnapshot, load_cds_quotes

DEFAULTS: dict[str, str] = {
    "r": "0.0054",
    "q": "0",
    "recovery_R": "0.4",
    "rating_class": "C",
    "eta": "1",
    "trigger_cbar": "0.05",
    "std_mode": "profile",
    "coco_coupon_rate": "0.1104",
    "coco_frequency": "2",
    "conversion_price": "0.59",
    "pdb_frequency": "1",
    "pdb_recovery_R": "0",
    "stripped_recovery_R": "0",
    "calibration": "full",
    "seed": "0",
    "dt": "1/500",
    "n_paths": "100000",
    "antithetic": "false",
    "threads": "1",
    "accrue_on_event": "false",
    "compounding": "continuous",
    "price_basis": "clean",
    "cds_refinement": "1",
    "stress_pcts": "0.1, 0.3",
    "grid_q_multiples": "3, 2, 1, 0, -1",
    "grid_eta": "0, 0.25, 0.5, 0.75, 1",
    "sampling_dts": "1/2, 1/10, 1/20, 1/500",
    "profile_v_min": "0.5",
    "profile_v_max": "1.5",
    "profile_points": "41",
    "profile_mc_paths": "200000",
    "anneal_temps": "150",
    "anneal_proposals": "200",
}

# Keys that only change how work is scheduled, never the numbers.
EXECUTION_KEYS = frozenset({"threads", "parallel_scenarios"})

PATH_KEYS = frozenset({"cds_quotes", "balance_sheet", "params"})


def parse_kv_text(text: str, source: str = "<text>") -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, blank lines are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}: expected 'key = value'", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError(f"{source}: empty key", lineno)
        if key in out:
            raise ParseError(f"{source}: duplicate key {key!r}", lineno)
        out[key] = value
    return out


def parse_real(text: str, key: str = "value") -> float:
    """Decimal or ``a/b`` fraction."""
    try:
        return float(Fraction(text.strip())) if "/" in text else float(text)
    except (ValueError, ZeroDivisionError):
        raise ValidationError(f"{key}: not a number: {text!r}") from None


def parse_bool(text: str, key: str = "value") -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValidationError(f"{key}: not a boolean: {text!r}")


def parse_date(text: str, key: str = "value") -> date:
    try:
        return date.fromisoformat(text.strip())
    except ValueError:
        raise ValidationError(f"{key}: not an ISO date: {text!r}") from None


def file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunConfig:
    values: dict[str, str]
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def load(cls, path=None, overrides: Mapping[str, str] | None = None) -> "RunConfig":
        values = dict(DEFAULTS)
        base = Path.cwd()
        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise ValidationError(f"config file not found: {path}")
            values.update(parse_kv_text(path.read_text(), str(path)))
            base = path.resolve().parent
        for k, v in (overrides or {}).items():
            if v is not None:
                values[k] = str(v)
        return cls(values, base)

    def has(self, key: str) -> bool:
        return key in self.values and self.values[key] != ""

    def raw(self, key: str) -> str:
        if not self.has(key):
            raise ValidationError(f"missing config key {key!r}")
        return self.values[key]

    def real(self, key: str) -> float:
        return parse_real(self.raw(key), key)

    def integer(self, key: str) -> int:
        v = self.real(key)
        if v != int(v):
            raise ValidationError(f"{key}: expected an integer, got {self.raw(key)!r}")
        return int(v)

    def flag(self, key: str) -> bool:
        return parse_bool(self.raw(key), key)

    def day(self, key: str) -> date:
        return parse_date(self.raw(key), key)

    def reals(self, key: str) -> list[float]:
        return [parse_real(s, key) for s in self.raw(key).split(",") if s.strip()]

    def path(self, key: str) -> Path:
        p = Path(self.raw(key))
        p = p if p.is_absolute() else self.base_dir / p
        if not p.is_file():
            raise ValidationError(f"{key}: file not found: {p}")
        return p

    def optional_real(self, key: str) -> float | None:
        return self.real(key) if self.has(key) else None

    # domain objects

    def snapshot(self) -> MarketSnapshot:
        return MarketSnapshot(
            valuation_date=self.day("valuation_date"),
            r=self.real("r"),
            cds_quotes=load_cds_quotes(self.path("cds_quotes")),
            equity_observable=self.optional_real("equity_observable"),
            share_price=self.optional_real("share_price"),
            reported_capital_ratio=self.optional_real("reported_capital_ratio"),
            recovery_R=self.real("recovery_R"),
        )

    def capital_model(self) -> CapitalRatioModel:
        return CapitalRatioModel(
            rating_class=self.raw("rating_class"),
            alpha_bar=self.real("alpha_bar"),
            beta_bar=self.real("beta_bar"),
            eta=self.real("eta"),
            trigger_cbar=self.real("trigger_cbar"),
            std_mode=self.raw("std_mode"),
        )

    def coco(self) -> CocoSpec:
        return CocoSpec(
            issue_date=self.day("coco_issue_date") if self.has("coco_issue_date") else None,
            maturity_date=self.day("coco_maturity_date"),
            coupon_rate=self.real("coco_coupon_rate"),
            frequency=self.integer("coco_frequency"),
            conversion_price=self.real("conversion_price"),
            trigger_cbar=self.real("trigger_cbar"),
        )

    def pdb(self) -> BondSpec:
        return BondSpec(
            maturity_date=self.day("pdb_maturity_date"),
            coupon_rate=self.real("pdb_coupon_rate"),
            frequency=self.integer("pdb_frequency"),
            recovery_R=self.real("pdb_recovery_R"),
            issue_date=self.day("pdb_issue_date") if self.has("pdb_issue_date") else None,
        )

    def sim(self, dt: float | None = None) -> SimConfig:
        return SimConfig(
            dt=self.real("dt") if dt is None else dt,
            n_paths=self.integer("n_paths"),
            seed=self.integer("seed"),
            antithetic=self.flag("antithetic"),
            threads=self.integer("threads"),
            accrue_on_event=self.flag("accrue_on_event"),
            compounding=self.raw("compounding"),
            price_basis=self.raw("price_basis"),
        )

    def fixed_params(self) -> dict[str, float]:
        out = {}
        for name in ("B", "H"):
            key = f"fix_{name}"
            if self.has(key):
                out[name] = self.real(key)
        return out

    def anneal_options(self) -> dict:
        return {"n_temps": self.integer("anneal_temps"), "proposals_per_temp": self.integer("anneal_proposals")}

    def recorded(self) -> dict[str, str]:
        """Settings that determine results, for the run manifest."""
        return {k: self.values[k] for k in sorted(self.values) if k not in EXECUTION_KEYS}


def format_params(params: At1pParams) -> str:
    lines = [
        f"B = {params.B!r}",
        f"H = {params.H!r}",
        f"V0 = {params.V0!r}",
        f"r = {params.r!r}",
        f"q = {params.q!r}",
        "node_times = " + ", ".join(repr(t) for t in params.vol.node_times),
        "sigmas = " + ", ".join(repr(s) for s in params.vol.sigmas),
    ]
    return "\n".join(lines) + "\n"


def parse_params(text: str, source: str = "<params>") -> At1pParams:
    kv = parse_kv_text(text, source)
    need = ("B", "H", "V0", "r", "q", "node_times", "sigmas")
    missing = [k for k in need if k not in kv]
    if missing:
        raise ValidationError(f"{source}: missing parameter(s) {', '.join(missing)}")
    vol = VolTermStructure(
        tuple(parse_real(s, "node_times") for s in kv["node_times"].split(",")),
        tuple(parse_real(s, "sigmas") for s in kv["sigmas"].split(",")),
    )
    return At1pParams(B=parse_real(kv["B"], "B"), H=parse_real(kv["H"], "H"), vol=vol,
                      V0=parse_real(kv["V0"], "V0"), r=parse_real(kv["r"], "r"), q=parse_real(kv["q"], "q"))


def load_params(path) -> At1pParams:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"parameter file not found: {path}")
    return parse_params(path.read_text(), str(path))
