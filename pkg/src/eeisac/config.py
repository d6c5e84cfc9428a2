"""
Scenario loading from YAML presets or user files.

A scenario bundles the system constants for one architecture, the radar
scene, the channel parameters and the sensing settings. Powers in files are
given in milliwatts; the transmit budget follows from the communication SNR.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .channel import AngleGrid, ClusterParams, Target, TargetScene
from .radar import CFARConfig
from .system_model import SystemConfig

PRESETS = ("setup1", "setup2")


@dataclass(frozen=True)
class Scenario:
    cfg: SystemConfig
    scene: TargetScene
    cluster: ClusterParams
    grid: AngleGrid
    cfar: CFARConfig
    sensing_snr_db: float
    raw: dict

    @property
    def target_gain(self) -> float:
        """Magnitude of the target reflection coefficient."""
        return float(np.sqrt(10 ** (self.sensing_snr_db / 10) * self.cfg.noise_var_sen))

    def scene_for_trial(self, rng) -> TargetScene:
        """Scene with the configured gain and a uniformly random phase per target."""
        ph = rng.uniform(0, 2 * np.pi, len(self.scene))
        return self.scene.with_gains(self.target_gain * np.exp(1j * ph))

    def with_pth(self, p_th: float) -> "Scenario":
        from dataclasses import replace
        return replace(self, cfg=self.cfg.replace(p_th=float(p_th)))


def _read(source) -> dict:
    if isinstance(source, dict):
        return copy.deepcopy(source)
    if source in PRESETS:
        text = resources.files("eeisac.presets").joinpath(f"{source}.yaml").read_text()
    else:
        text = Path(source).read_text()
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ValueError("configuration must be a mapping")
    return data


def _parse_value(text: str):
    return yaml.safe_load(text)


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings or a ``{dotted: value}`` mapping."""
    items = overrides.items() if isinstance(overrides, dict) else (
        o.split("=", 1) for o in overrides)
    for key, val in items:
        if isinstance(val, str):
            val = _parse_value(val)
        node = data
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    return data


def _coerce(values: dict) -> dict:
    """Cast entries to the numeric types of the matching config fields."""
    types = {f.name: type(f.default) for f in fields(SystemConfig)}
    out = {}
    for k, v in values.items():
        if k not in types:
            raise ValueError(f"unknown system key {k!r}")
        t = types[k]
        out[k] = t(v) if t in (int, float) else v
    return out


def load_config(source="setup1", arch: str = "fd", overrides=None) -> Scenario:
    """Build a :class:`Scenario` for architecture ``arch``."""
    data = _read(source)
    if overrides:
        data = apply_overrides(data, overrides)
    try:
        sysd = dict(data["system"])
        archd = dict(data["architectures"][arch])
    except KeyError as exc:
        raise ValueError(f"configuration lacks section {exc}") from exc
    except TypeError as exc:
        raise ValueError(f"malformed section for architecture {arch!r}") from exc
    targets = data.get("targets", []) or []
    tlist = []
    for t in targets:
        ang = t["angle_rad"] if "angle_rad" in t else np.deg2rad(t["angle_deg"])
        tlist.append(Target(float(ang), float(t["range_m"]), float(t["velocity_mps"])))
    scene = TargetScene(tuple(tlist))
    snr = float(sysd.pop("comm_snr_db", 10.0))
    noise = float(sysd.get("noise_var_comm", 1.0))
    p_tx = float(sysd.pop("p_tx_w", noise * 10 ** (snr / 10)))
    for name in ("p_rf", "p_bb", "p_ps"):
        if f"{name}_mw" in sysd:
            sysd[f"{name}_w"] = float(sysd.pop(f"{name}_mw")) / 1000.0
    sensing_snr = float(archd.pop("sensing_snr_db", -15.0))
    sysd.update(archd)
    sysd = _coerce(sysd)
    cfg = SystemConfig(p_tx_w=p_tx, architecture=arch,
                       theta_targets=scene.angles, **sysd)
    ch = data.get("channel", {}) or {}
    cluster = ClusterParams(int(ch.get("n_clusters", 3)), int(ch.get("rays_per_cluster", 4)),
                            float(np.deg2rad(float(ch.get("angle_spread_deg", 5.0)))),
                            float(ch.get("delay_spread_s", 50e-9)))
    sen = data.get("sensing", {}) or {}
    grid = AngleGrid.uniform(float(sen.get("angle_min_deg", -60.0)),
                             float(sen.get("angle_max_deg", 60.0)),
                             float(sen.get("angle_step_deg", 3.0)))
    scale = sen.get("cfar_scale")
    cfar = CFARConfig(int(sen.get("n_train", 8)), int(sen.get("n_guard", 2)), cfg.p_fa,
                      None if scale is None else float(scale))
    return Scenario(cfg, scene, cluster, grid, cfar, sensing_snr, data)


def snapshot(scn: Scenario) -> str:
    """YAML text of the configuration a scenario was built from."""
    return yaml.safe_dump(scn.raw, sort_keys=True)
