"""Scene configuration files.

A config is a YAML mapping with the sections ``scene``, ``gains``, ``robots``,
``control``, ``points`` and ``trajectory``; see ``data/default_scene.yaml`` for
the documented default. Floats are written with ``repr`` precision, so
load -> dump -> load returns identical values.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import yaml

from .geomvfi import VfiGains
from .kinematics import DHRow, PRISMATIC, REVOLUTE, SerialManipulator
from .scene import EyeScene

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass
class SimConfig:
    scene: EyeScene
    models: Tuple[SerialManipulator, SerialManipulator]
    q0: np.ndarray
    control: dict = field(default_factory=dict)
    points: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    trajectory: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def default_config_path() -> Path:
    return Path(str(resources.files("shadowpos").joinpath("data/default_scene.yaml")))


def _floats(v, n=None, what="value"):
    try:
        out = [float(x) for x in v]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: expected a list of numbers") from exc
    if n is not None and len(out) != n:
        raise ConfigError(f"{what}: expected {n} numbers, got {len(out)}")
    return out


def _dh_rows(rows, what):
    out = []
    for i, r in enumerate(rows or []):
        if isinstance(r, dict):
            kind = r.get("kind", REVOLUTE)
            vals = [r.get("theta", 0.0), r.get("d", 0.0), r.get("a", 0.0), r.get("alpha", 0.0)]
        else:
            r = list(r)
            kind = r[4] if len(r) > 4 else REVOLUTE
            vals = r[:4]
        if kind not in (REVOLUTE, PRISMATIC):
            raise ConfigError(f"{what}[{i}]: unknown joint kind {kind!r}")
        t, d, a, al = _floats(vals, 4, f"{what}[{i}]")
        out.append(DHRow(t, d, a, al, kind))
    return tuple(out)


def _robot(spec: dict, idx: int) -> Tuple[SerialManipulator, np.ndarray]:
    what = f"robots[{idx}]"
    try:
        joints = _dh_rows(spec["dh"], f"{what}.dh")
        model = SerialManipulator(
            joints=joints,
            q_min=_floats(spec["q_min"], len(joints), f"{what}.q_min"),
            q_max=_floats(spec["q_max"], len(joints), f"{what}.q_max"),
            base_rotation=tuple(_floats(spec.get("base_rotation", [1, 0, 0, 0]), 4, f"{what}.base_rotation")),
            base_translation=tuple(_floats(spec.get("base_translation", [0, 0, 0]), 3, f"{what}.base_translation")),
            tool=_dh_rows(spec.get("tool", []), f"{what}.tool"),
            name=str(spec.get("name", f"arm{idx + 1}")),
        )
        q0 = np.array(_floats(spec["q0"], len(joints), f"{what}.q0"))
    except KeyError as exc:
        raise ConfigError(f"{what}: missing key {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{what}: {exc}") from exc
    return model, q0


def from_dict(raw: dict) -> SimConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    version = raw.get("schema", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {version}")
    try:
        sc = raw["scene"]
        gains_raw = raw.get("gains", {}) or {}
        known = {f.name for f in dataclasses.fields(VfiGains)}
        unknown = set(gains_raw) - known
        if unknown:
            raise ConfigError(f"unknown gains: {sorted(unknown)}")
        gains = VfiGains(**{k: float(v) for k, v in gains_raw.items()})
        planes = tuple(
            (tuple(_floats(p["normal"], 3, "robot_planes.normal")), float(p.get("offset", 0.0)))
            for p in sc["robot_planes"]
        )
        scene = EyeScene(
            eye_center=tuple(_floats(sc["eye_center"], 3, "scene.eye_center")),
            retina_plane_z=float(sc.get("retina_plane_z", 0.0)),
            view_center=tuple(_floats(sc.get("view_center", [0, 0, 0]), 3, "scene.view_center")),
            r_ws=float(sc["r_ws"]),
            rcm_R1=tuple(_floats(sc["rcm_R1"], 3, "scene.rcm_R1")),
            rcm_R2=tuple(_floats(sc["rcm_R2"], 3, "scene.rcm_R2")),
            robot_planes=planes,
            theta_c2_safe=float(sc.get("theta_c2_safe", 0.5)),
            gains=gains,
            workspace_diameter=float(sc.get("workspace_diameter", 7.0)),
        )
        robots = raw["robots"]
        if not isinstance(robots, list) or len(robots) != 2:
            raise ConfigError("exactly two robots (instrument, light guide) are required")
        (m1, q1), (m2, q2) = (_robot(r, i) for i, r in enumerate(robots))
    except KeyError as exc:
        raise ConfigError(f"missing key {exc}") from exc
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    points = {str(k): tuple(_floats(v, 2, f"points.{k}")) for k, v in (raw.get("points") or {}).items()}
    return SimConfig(
        scene=scene, models=(m1, m2), q0=np.concatenate((q1, q2)),
        control=dict(raw.get("control") or {}), points=points,
        trajectory=dict(raw.get("trajectory") or {}), raw=copy.deepcopy(raw),
    )


def load_config(path=None) -> SimConfig:
    p = default_config_path() if path is None else Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: {exc}") from exc
    return from_dict(raw)


class _Dumper(yaml.SafeDumper):
    def ignore_aliases(self, data):
        return True


def dump_config(raw: dict) -> str:
    return yaml.dump(raw, Dumper=_Dumper, sort_keys=False, default_flow_style=None)


def save_config(cfg: SimConfig, path) -> None:
    Path(path).write_text(dump_config(cfg.raw))
