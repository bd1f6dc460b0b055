"""Scenario configuration: a single JSON file with one section per
subsystem. Paths inside the file resolve relative to the file's directory.

Schema (defaults in parentheses; `null` means "not set"):

    seed                  int (0)
    dt                    float (0.0333...)
    max_frames            int (450)
    model_path            str, required
    n_keypoints           int (8)
    intrinsics            {fx, fy, cx, cy, width, height}, required
    sensing               {sigma_px, anisotropy, dropout_prob, outlier_prob,
                           outlier_px, covariance_fidelity, fidelity_scale,
                           blackout_frames: [start, stop] | null,
                           occluder_half: str | null}
    filter_noise          {sigma_vp, sigma_vw}, required
    control               {lambda, entropy_threshold: float | null (= inf),
                           reduced_scale, v_max, w_max}
    actuation             {sigma_v, sigma_w} (0, 0)
    initial_pose          {height, translation_var, rotation_max_deg}, required
    desired_pose          {height, translation_var, rotation_max_deg}, required
    init_prior            {sigma_t, sigma_phi} (0, 0)
    convergence           {v_eps, k_hold} (1e-3, 10)
    gate_level            float (0.999)
    z_min                 float (1e-3)
    propagation_variant   "left" | "mixed-jr" ("left")
    uncertainty_policy    bool (true)
    variant               "coupled-ekf" | "pbvs-perframe" | "none"
"""
from __future__ import annotations

import json
import math
from pathlib import Path

from .camera import Intrinsics
from .control import ControlConfig
from .ekf import NoiseParams
from .keypoints import SensingProfile, load_object_points
from .simulator import PoseSampler, Scenario


class ConfigError(ValueError):
    """Malformed or invalid scenario configuration."""


def load_scenario(path) -> Scenario:
    """Parse and validate a scenario file, loading the object model."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return scenario_from_dict(raw, base_dir=path.parent, label=str(path))


def scenario_from_dict(raw: dict, base_dir=".", label: str = "<config>") -> Scenario:
    ctx = _Reader(raw, label)
    model_path = Path(base_dir) / ctx.require("model_path", str)
    try:
        model = load_object_points(model_path)
    except OSError as exc:
        raise ConfigError(f"{label}: model_path: cannot read {model_path}: "
                          f"{exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"{label}: model_path: {exc}") from exc

    intr = ctx.section("intrinsics", required=True)
    sensing = ctx.section("sensing")
    noise = ctx.section("filter_noise", required=True)
    control = ctx.section("control")
    actuation = ctx.section("actuation")
    initial = ctx.section("initial_pose", required=True)
    desired = ctx.section("desired_pose", required=True)
    prior = ctx.section("init_prior")
    conv = ctx.section("convergence")

    blackout = sensing.optional("blackout_frames", list, None)
    if blackout is not None:
        if len(blackout) != 2:
            raise ConfigError(f"{label}: sensing.blackout_frames: expected "
                              "[start, stop]")
        blackout = (int(blackout[0]), int(blackout[1]))

    threshold = control.optional("entropy_threshold", (int, float), None)
    try:
        scenario = Scenario(
            intrinsics=Intrinsics(
                fx=intr.require("fx", (int, float)),
                fy=intr.require("fy", (int, float)),
                cx=intr.require("cx", (int, float)),
                cy=intr.require("cy", (int, float)),
                width=intr.require("width", int),
                height=intr.require("height", int),
            ),
            model=model,
            sensing=SensingProfile(
                sigma_px=sensing.optional("sigma_px", (int, float), 1.0),
                anisotropy=sensing.optional("anisotropy", (int, float), 1.0),
                dropout_prob=sensing.optional("dropout_prob", (int, float), 0.0),
                outlier_prob=sensing.optional("outlier_prob", (int, float), 0.0),
                outlier_px=sensing.optional("outlier_px", (int, float), 40.0),
                covariance_fidelity=sensing.optional(
                    "covariance_fidelity", str, "honest"),
                fidelity_scale=sensing.optional(
                    "fidelity_scale", (int, float), 1.0),
                blackout_frames=blackout,
                occluder_half=sensing.optional("occluder_half", str, None),
            ),
            filter_noise=NoiseParams(
                sigma_vp=noise.require("sigma_vp", (int, float)),
                sigma_vw=noise.require("sigma_vw", (int, float)),
            ),
            control=ControlConfig(
                lam=control.optional("lambda", (int, float), 0.5),
                entropy_threshold=math.inf if threshold is None else float(threshold),
                reduced_scale=control.optional("reduced_scale", (int, float), 0.1),
                v_max=control.optional("v_max", (int, float), 0.25),
                w_max=control.optional("w_max", (int, float), 0.5),
            ),
            initial_pose=PoseSampler(
                height=initial.require("height", (int, float)),
                translation_var=initial.optional(
                    "translation_var", (int, float), 0.0),
                rotation_max_deg=initial.optional(
                    "rotation_max_deg", (int, float), 0.0),
            ),
            desired_pose=PoseSampler(
                height=desired.require("height", (int, float)),
                translation_var=desired.optional(
                    "translation_var", (int, float), 0.0),
                rotation_max_deg=desired.optional(
                    "rotation_max_deg", (int, float), 0.0),
            ),
            n_keypoints=ctx.optional("n_keypoints", int, 8),
            dt=ctx.optional("dt", (int, float), 1.0 / 30.0),
            max_frames=ctx.optional("max_frames", int, 450),
            actuation_sigma_v=actuation.optional("sigma_v", (int, float), 0.0),
            actuation_sigma_w=actuation.optional("sigma_w", (int, float), 0.0),
            init_sigma_t=prior.optional("sigma_t", (int, float), 0.0),
            init_sigma_phi=prior.optional("sigma_phi", (int, float), 0.0),
            v_eps=conv.optional("v_eps", (int, float), 1e-3),
            k_hold=conv.optional("k_hold", int, 10),
            gate_level=ctx.optional("gate_level", (int, float), 0.999),
            z_min=ctx.optional("z_min", (int, float), 1e-3),
            propagation_variant=ctx.optional("propagation_variant", str, "left"),
            uncertainty_policy=ctx.optional("uncertainty_policy", bool, True),
            variant=ctx.optional("variant", str, "coupled-ekf"),
            seed=ctx.optional("seed", int, 0),
        )
    except ValueError as exc:
        raise ConfigError(f"{label}: {exc}") from exc
    return scenario


class _Reader:
    """Field access with path-qualified error messages."""

    def __init__(self, data: dict, label: str, prefix: str = ""):
        self.data = data
        self.label = label
        self.prefix = prefix

    def _path(self, key: str) -> str:
        return f"{self.prefix}{key}"

    def require(self, key: str, types):
        if key not in self.data:
            raise ConfigError(
                f"{self.label}: missing required field {self._path(key)}")
        return self._typed(key, types)

    def optional(self, key: str, types, default):
        if key not in self.data or self.data[key] is None:
            return default
        return self._typed(key, types)

    def _typed(self, key: str, types):
        value = self.data[key]
        if types is int and isinstance(value, bool):
            raise ConfigError(
                f"{self.label}: field {self._path(key)} must be an integer")
        if not isinstance(value, types):
            name = getattr(types, "__name__", None) or "/".join(
                t.__name__ for t in types)
            raise ConfigError(
                f"{self.label}: field {self._path(key)} must be {name}")
        return value

    def section(self, key: str, required: bool = False) -> "_Reader":
        if key not in self.data:
            if required:
                raise ConfigError(
                    f"{self.label}: missing required section {key}")
            return _Reader({}, self.label, prefix=f"{key}.")
        value = self.data[key]
        if not isinstance(value, dict):
            raise ConfigError(f"{self.label}: section {key} must be an object")
        return _Reader(value, self.label, prefix=f"{key}.")
