"""Scenario configuration files.

A scenario is a JSON document with ``"klap_config": 1`` at the top level.
Unknown keys are rejected everywhere so a typo in a sweep axis fails
loudly instead of silently running the default. Errors carry the line of
the offending key when it can be located in the source text.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from . import kernels as K
from .core import FiniteDistribution
from .errors import ConfigurationError, KlapError
from .matrix_io import load_kernel
from .solver import SolverConfig, lambda_from_weight

CONFIG_VERSION = 1

_num = {"type": "number"}
_int = {"type": "integer"}
_vec = {"type": "array", "items": _num, "minItems": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


KERNEL_SCHEMAS = {
    "identity": _obj({"size": _int}, ["size"]),
    "constant": _obj({"input_size": _int, "output_size": _int, "index": _int},
                     ["input_size", "output_size"]),
    "additive_noise": _obj({"size": _int, "pmf": _vec, "center": _int,
                            "boundary": {"enum": ["cyclic", "clipped"]}}, ["size", "pmf"]),
    "blur": _obj({"size": _int, "stencil": _vec, "center": _int,
                  "boundary": {"enum": ["cyclic", "clipped"]}}, ["size", "stencil"]),
    "dropout": _obj({"coordinates": _int, "levels": _int, "mask_prob": _num},
                    ["coordinates", "levels", "mask_prob"]),
    "deterministic_map": _obj({"map": {"type": "array", "items": _int, "minItems": 1},
                               "output_size": _int}, ["map"]),
    "grayscale": _obj({"shades": _int, "colors": _int}, ["shades", "colors"]),
    "poisson": _obj({"levels": _int, "photon_budget": _num, "truncation": _int},
                    ["levels", "photon_budget"]),
    "matrix": _obj({"rows": {"type": "array", "items": _vec, "minItems": 1}}, ["rows"]),
    "file": _obj({"path": {"type": "string"}}, ["path"]),
}

SCHEMA = _obj({
    "klap_config": {"const": CONFIG_VERSION},
    "kernel": {"type": "object", "required": ["type"],
               "properties": {"type": {"enum": sorted(KERNEL_SCHEMAS)}}},
    "p_data": {"type": "object"},
    "prior": {"type": ["object", "null"]},
    "observations": _obj({"mode": {"enum": ["exact", "samples"]}, "count": _int,
                          "smoothing": _num}, ["mode"]),
    "solver": _obj({"lambda": _num, "weight": _num, "gamma": _num,
                    "max_iterations": _int, "tolerance": _num, "record_every": _int,
                    "seed": _int, "init": {"enum": ["auto", "prior", "uniform"]}}),
    "sweep": _obj({"weights": _vec, "gammas": _vec,
                   "clean_counts": {"type": "array", "items": _int},
                   "noisy_count": _int, "floor": _num}),
    "sample": _obj({"count": _int, "smoothing": _num,
                    "source": {"enum": ["corrupted", "clean"]}}, ["count"]),
    "outputs": _obj({"trajectory": {"type": "string"}, "summary": {"type": "string"},
                     "report": {"type": "string"}, "empirical": {"type": "string"}}),
}, ["klap_config", "kernel"])

P_DATA_SCHEMA = {"oneOf": [
    _obj({"weights": _vec}, ["weights"]),
    _obj({"family": {"const": "uniform"}, "size": _int}, ["family", "size"]),
    _obj({"family": {"const": "dirichlet"}, "size": _int, "concentration": _num,
          "seed": _int}, ["family", "size"]),
]}

PRIOR_SCHEMA = {"oneOf": [
    _obj({"weights": _vec}, ["weights"]),
    _obj({"clean_samples": _int, "smoothing": _num}, ["clean_samples"]),
]}


class ConfigError(ConfigurationError):
    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = f"{source or '<config>'}:{line}: " if line else f"{source or '<config>'}: "
        super().__init__(where + message)


@dataclass
class Scenario:
    kernel_spec: dict
    kernel: K.CorruptionKernel
    p_data: FiniteDistribution | None
    prior_spec: dict | None
    observations: dict
    solver: SolverConfig
    weight_given: bool
    init: str
    sweep: dict | None
    sample: dict | None
    outputs: dict
    base_dir: str = "."
    raw: dict = field(default_factory=dict)


def _locate(text, path):
    keys = [p for p in path if isinstance(p, str)]
    if not keys or text is None:
        return None
    needle = f'"{keys[-1]}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


def _validate(instance, schema, text, source, prefix=()):
    try:
        jsonschema.validate(instance, schema)
    except jsonschema.ValidationError as exc:
        err = jsonschema.exceptions.best_match([exc]) or exc
        path = list(prefix) + list(err.absolute_path)
        if err.validator == "additionalProperties":
            extra = [k for k in err.instance if k not in err.schema.get("properties", {})]
            path = path + extra[:1]
            msg = f"unknown key {extra[0]!r}" + (f" in {'.'.join(map(str, path[:-1]))}" if len(path) > 1 else "")
        else:
            loc = ".".join(map(str, path)) or "top level"
            msg = f"{loc}: {err.message}"
        raise ConfigError(msg, _locate(text, path), source) from None


def build_kernel(spec: dict, base_dir: str = ".") -> K.CorruptionKernel:
    spec = dict(spec)
    kind = spec.pop("type")
    floor = spec.pop("floor", None)
    jsonschema.validate(spec, KERNEL_SCHEMAS[kind])
    if kind == "identity":
        k = K.identity_kernel(spec["size"])
    elif kind == "constant":
        k = K.constant_kernel(spec["input_size"], spec["output_size"], spec.get("index", 0))
    elif kind == "additive_noise":
        k = K.additive_noise_kernel(spec["size"], spec["pmf"], spec.get("boundary", "cyclic"),
                                    spec.get("center"))
    elif kind == "blur":
        k = K.blur_kernel(spec["size"], spec["stencil"], spec.get("boundary", "cyclic"),
                          spec.get("center"))
    elif kind == "dropout":
        k = K.dropout_kernel(spec["coordinates"], spec["levels"], spec["mask_prob"])
    elif kind == "deterministic_map":
        k = K.deterministic_map_kernel(spec["map"], spec.get("output_size"))
    elif kind == "grayscale":
        k = K.grayscale_kernel(spec["shades"], spec["colors"])
    elif kind == "poisson":
        k = K.poisson_kernel(spec["levels"], spec["photon_budget"], spec.get("truncation"))
    elif kind == "matrix":
        k = K.CorruptionKernel(np.array(spec["rows"], dtype=float), label="matrix")
    else:
        path = spec["path"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        k = load_kernel(path)
    if floor is not None:
        k = K.support_floor(k, floor)
    return k


def build_p_data(spec: dict, n: int) -> FiniteDistribution:
    if "weights" in spec:
        p = FiniteDistribution(spec["weights"])
    elif spec["family"] == "uniform":
        p = FiniteDistribution.uniform(spec["size"])
    else:
        rng = np.random.default_rng(spec.get("seed", 0))
        a = spec.get("concentration", 1.0)
        p = FiniteDistribution(rng.dirichlet(np.full(spec["size"], float(a))))
    if p.alphabet_size != n:
        raise ConfigurationError(f"p_data has {p.alphabet_size} symbols, kernel expects {n}")
    return p


def parse(text: str, source: str | None = None, base_dir: str = ".") -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", exc.lineno, source) from None
    _validate(raw, SCHEMA, text, source)
    kspec = raw["kernel"]
    kind = kspec["type"]
    kbody = {k: v for k, v in kspec.items() if k not in ("type", "floor")}
    _validate(kbody, KERNEL_SCHEMAS[kind], text, source, ("kernel",))
    if "floor" in kspec and not isinstance(kspec["floor"], (int, float)):
        raise ConfigError("kernel.floor must be a number", _locate(text, ["floor"]), source)
    if raw.get("p_data") is not None:
        _validate(raw["p_data"], P_DATA_SCHEMA, text, source, ("p_data",))
    if raw.get("prior") is not None:
        _validate(raw["prior"], PRIOR_SCHEMA, text, source, ("prior",))

    solver = raw.get("solver", {})
    if "lambda" in solver and "weight" in solver:
        raise ConfigError("give exactly one of solver.lambda or solver.weight",
                          _locate(text, ["weight"]), source)
    try:
        kernel = build_kernel(kspec, base_dir)
        p_data = build_p_data(raw["p_data"], kernel.input_size) if raw.get("p_data") else None
        lam = lambda_from_weight(solver["weight"]) if "weight" in solver else solver.get("lambda", 0.0)
        cfg = SolverConfig(lam=float(lam), gamma=float(solver.get("gamma", 1.0)),
                           max_iterations=int(solver.get("max_iterations", 100_000)),
                           fixed_point_tolerance=float(solver.get("tolerance", 1e-10)),
                           record_every=int(solver.get("record_every", 1)),
                           seed=int(solver.get("seed", 0)))
    except (KlapError, jsonschema.ValidationError, OSError) as exc:
        msg = getattr(exc, "message", None) or str(exc)
        raise ConfigError(msg, None, source) from None
    prior = raw.get("prior")
    if prior is not None and "weights" in prior and len(prior["weights"]) != kernel.input_size:
        raise ConfigError("prior weights do not match the kernel input size",
                          _locate(text, ["prior"]), source)
    obs = raw.get("observations", {"mode": "exact"})
    if obs["mode"] == "samples" and "count" not in obs:
        raise ConfigError("observations.count is required for sampled observations",
                          _locate(text, ["observations"]), source)
    return Scenario(kspec, kernel, p_data, prior, obs, cfg, "weight" in solver,
                    solver.get("init", "auto"), raw.get("sweep"), raw.get("sample"),
                    raw.get("outputs", {}), base_dir, raw)


def load(path) -> Scenario:
    path = os.fspath(path)
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from None
    return parse(text, path, os.path.dirname(os.path.abspath(path)))
