"""Strict TOML experiment configuration.

Every section and key is whitelisted.  Validation collects all violations
before raising, so one run reports every typo at once.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import tomli

from .rates import InvalidRateSpec, RateSpec

TASKS = ("sample-gibbs", "run-walk", "estimate", "fock-check", "gsc-threshold", "full-verify")


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = list(errors)


SCHEMA = {
    "": {"task": str},
    "model": {"gamma": float, "r_coeffs": list, "s_coeffs": list, "c": float, "interaction": bool},
    "lattice": {"d": int, "L": int},
    "run": {"T": float, "sample_times": list, "replicas": int, "seed": int, "init": str, "snapshots": bool},
    "output": {"dir": str},
    "mcmc": {"sweeps": int, "burn_in": int, "proposal_scale": float, "chains": int},
    "fock": {"L": int, "d": int, "n_max": int, "norm_L": int},
    "gsc": {"r": int, "kappa": float, "C": float, "grid": int},
    "estimate": {"input": str, "t_grid": list, "clt_times": list, "stationarity_t": float, "yaglom_t": float},
    "verify": {"gff_samples": int, "ks_draws": int, "bl_lambdas": list},
}
REQUIRED = {"model": ("gamma",), "lattice": ("d", "L"), "run": ("T", "replicas", "seed")}


@dataclass
class ExperimentConfig:
    model: dict
    lattice: dict
    run: dict
    output: dict = field(default_factory=lambda: {"dir": "out"})
    mcmc: dict = field(default_factory=dict)
    fock: dict = field(default_factory=dict)
    gsc: dict = field(default_factory=dict)
    estimate: dict = field(default_factory=dict)
    verify: dict = field(default_factory=dict)
    task: str | None = None

    @property
    def spec(self) -> RateSpec:
        m = self.model
        return RateSpec(
            gamma=m["gamma"],
            r_coeffs=tuple(m.get("r_coeffs", (0.0, 1.0))),
            s_coeffs=tuple(m.get("s_coeffs", (0.0,))),
            c=m.get("c", 1.0),
            interaction=m.get("interaction", True),
        )

    @property
    def seed(self) -> int:
        return int(self.run["seed"])

    @property
    def sample_times(self) -> list:
        st = self.run.get("sample_times")
        if st:
            return [float(v) for v in st]
        T = float(self.run["T"])
        return [T * k / 4 for k in range(1, 5)]

    def physics_dict(self) -> dict:
        """Everything that determines results (output location excluded)."""
        d = asdict(self)
        d.pop("output")
        return d

    def hash(self) -> str:
        text = json.dumps(self.physics_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def with_overrides(self, seed: int | None = None, out: str | None = None) -> "ExperimentConfig":
        cfg = ExperimentConfig(**{k: (dict(v) if isinstance(v, dict) else v) for k, v in asdict(self).items()})
        if seed is not None:
            cfg.run["seed"] = int(seed)
        if out is not None:
            cfg.output["dir"] = out
        return cfg


def _type_ok(value, typ) -> bool:
    if typ is float:
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if typ is int:
        return isinstance(value, int) and not isinstance(value, bool)
    return isinstance(value, typ)


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"syntax: {exc}"]) from None
    return config_from_dict(raw)


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ConfigError([f"config is not UTF-8: {exc}"]) from None
    return parse_config(text)


def config_from_dict(raw: dict) -> ExperimentConfig:
    errors: list[str] = []
    sections: dict = {name: {} for name in SCHEMA if name}
    top = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in SCHEMA or not key:
                errors.append(f"unknown section [{key}]")
                continue
            sections[key] = value
        else:
            top[key] = value
    for name, body in [("", top), *sections.items()]:
        allowed = SCHEMA[name]
        label = f"[{name}]" if name else "top level"
        for key, value in body.items():
            if key not in allowed:
                errors.append(f"unknown key {key!r} in {label}")
            elif not _type_ok(value, allowed[key]):
                errors.append(f"{label} {key} must be {allowed[key].__name__}, got {type(value).__name__}")
    for name, keys in REQUIRED.items():
        for key in keys:
            if key not in sections[name]:
                errors.append(f"missing required key {key!r} in [{name}]")
    if errors:
        raise ConfigError(errors)

    model, lattice, run = sections["model"], sections["lattice"], sections["run"]
    for key in ("r_coeffs", "s_coeffs"):
        if key in model and not all(_type_ok(v, float) for v in model[key]):
            errors.append(f"[model] {key} must be a list of numbers")
    if "task" in top and top["task"] not in TASKS:
        errors.append(f"task must be one of {', '.join(TASKS)}")
    if lattice["d"] < 1:
        errors.append("[lattice] d must be >= 1")
    if lattice["L"] < 2:
        errors.append("[lattice] L must be >= 2")
    if run["replicas"] < 1:
        errors.append("[run] replicas must be >= 1")
    if not (math.isfinite(run["T"]) and run["T"] > 0):
        errors.append("[run] T must be positive")
    st = run.get("sample_times")
    if st is not None:
        if not all(_type_ok(v, float) for v in st):
            errors.append("[run] sample_times must be numbers")
        elif any(b <= a for a, b in zip(st, st[1:])) or (st and (st[0] < 0 or st[-1] > run["T"])):
            errors.append("[run] sample_times must be strictly increasing inside [0, T]")
    if run.get("init", "stationary") not in ("stationary", "flat"):
        errors.append("[run] init must be 'stationary' or 'flat'")
    if run["seed"] < 0:
        errors.append("[run] seed must be non-negative")
    mc = sections["mcmc"]
    if mc.get("proposal_scale", 1.0) < 1.0:
        errors.append("[mcmc] proposal_scale must be >= 1")
    if "burn_in" in mc and mc["burn_in"] >= mc.get("sweeps", 200):
        errors.append("[mcmc] burn_in must be smaller than sweeps")
    gsc = sections["gsc"]
    if gsc.get("r", 4) < 1:
        errors.append("[gsc] r must be >= 1")
    if gsc.get("kappa", 2.0) < 2:
        errors.append("[gsc] kappa must be >= 2")
    if gsc.get("C", 0.0) < 0:
        errors.append("[gsc] C must be >= 0")
    if not errors:
        try:
            RateSpec(gamma=model["gamma"], r_coeffs=tuple(model.get("r_coeffs", (0.0, 1.0))),
                     s_coeffs=tuple(model.get("s_coeffs", (0.0,))), c=model.get("c", 1.0),
                     interaction=model.get("interaction", True))
        except InvalidRateSpec as exc:
            errors.append(f"[model] {exc}")
    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        model=model, lattice=lattice, run=run,
        output=sections["output"] or {"dir": "out"},
        mcmc=mc, fock=sections["fock"], gsc=gsc,
        estimate=sections["estimate"], verify=sections["verify"], task=top.get("task"),
    )
