"""Run configuration: JSON in, every default resolved, unknown keys rejected."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace

from .augment import CONSISTENCY_MODES, AugmentationSpec
from .losses import MASK_MODES, AblationToggles
from .optim import DEFAULT_MILESTONES
from .synth import PRESETS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WeightsConfig:
    omega: float = 0.01
    beta: float = 0.01
    gamma: float = 0.001
    alpha: float = 0.85


@dataclass(frozen=True)
class TogglesConfig:
    pair_training: bool = False
    semi_warp_image: bool = False
    semi_warp_pose: bool = False
    pseudo_depth: bool = False
    pseudo_pose: bool = False


@dataclass(frozen=True)
class AugmentationConfig:
    pool: tuple = ()  # spec dicts; empty pool means no augmented branch
    consistency: str = "scene_consistent"


@dataclass(frozen=True)
class SceneConfig:
    preset: str = "ground_and_walls"
    height: int = 128
    width: int = 192
    count: int = 1


@dataclass(frozen=True)
class AblationEntry:
    name: str
    toggles: TogglesConfig = TogglesConfig()
    augmented: bool = True


# rows mirror the incremental ablation: baseline, naive, then one component at a time
DEFAULT_ABLATION = (
    AblationEntry("baseline", TogglesConfig(), augmented=False),
    AblationEntry("naive", TogglesConfig()),
    AblationEntry("pair", TogglesConfig(pair_training=True)),
    AblationEntry("pair_semi_image", TogglesConfig(pair_training=True, semi_warp_image=True)),
    AblationEntry("pair_semi", TogglesConfig(pair_training=True, semi_warp_image=True, semi_warp_pose=True)),
    AblationEntry("pair_semi_ps", TogglesConfig(True, True, True, True, False)),
    AblationEntry("full", TogglesConfig(True, True, True, True, True)),
)


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    steps: int = 2000
    lr: float = 1e-4
    lr_milestones: tuple = DEFAULT_MILESTONES
    lr_decay: float = 0.1
    pyramid_levels: int = 1
    pose_jitter: float = 0.01
    pose_lr_scale: float = 1.0
    rotation_lr_scale: float = 1.0
    mask_mode: str = "unaug"
    d_min: float = 0.1
    d_max: float = 100.0
    median_scale: bool = True
    weights: WeightsConfig = WeightsConfig()
    toggles: TogglesConfig = TogglesConfig()
    augmentation: AugmentationConfig = AugmentationConfig()
    scene: SceneConfig = SceneConfig()
    ablation: tuple = DEFAULT_ABLATION
    gradcheck_trials: int = 20
    gradcheck_tolerance: float = 1e-4

    def validate(self) -> "RunConfig":
        if self.steps < 0:
            raise ConfigError("steps must be non-negative")
        if not self.lr > 0:
            raise ConfigError("lr must be positive")
        if not (self.pose_lr_scale > 0 and self.rotation_lr_scale > 0):
            raise ConfigError("pose_lr_scale and rotation_lr_scale must be positive")
        if self.pose_jitter < 0:
            raise ConfigError("pose_jitter must be non-negative")
        if not 0 < self.d_min < self.d_max:
            raise ConfigError("need 0 < d_min < d_max")
        if not 1 <= self.pyramid_levels <= 4:
            raise ConfigError("pyramid_levels must lie in [1, 4]")
        if self.mask_mode not in MASK_MODES:
            raise ConfigError(f"mask_mode must be one of {MASK_MODES}")
        if self.augmentation.consistency not in CONSISTENCY_MODES:
            raise ConfigError(f"consistency must be one of {CONSISTENCY_MODES}")
        if self.scene.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {PRESETS}")
        if self.scene.count < 1 or self.scene.height < 4 or self.scene.width < 4:
            raise ConfigError("scene needs count >= 1 and a raster of at least 4x4")
        for name in ("omega", "beta", "gamma"):
            if getattr(self.weights, name) < 0:
                raise ConfigError(f"weight {name} must be non-negative")
        if not 0 <= self.weights.alpha <= 1:
            raise ConfigError("alpha must lie in [0, 1]")
        if self.gradcheck_trials < 0:
            raise ConfigError("gradcheck_trials must be non-negative")
        try:
            specs = self.pool_specs()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad augmentation spec: {exc}") from exc
        for s in specs:
            if s.is_positional:
                raise ConfigError(f"positional augmentation {s.kind!r} changes geometry; not usable for optimisation")
        names = [e.name for e in self.ablation]
        if len(set(names)) != len(names):
            raise ConfigError("ablation entry names must be unique")
        return self

    def pool_specs(self) -> list[AugmentationSpec]:
        return [AugmentationSpec.from_dict(d) for d in self.augmentation.pool]

    @property
    def ablation_toggles(self) -> AblationToggles:
        return AblationToggles(**asdict(self.toggles))

    def estimator_params(self, toggles: TogglesConfig | None = None) -> dict:
        t = self.toggles if toggles is None else toggles
        return dict(
            steps=self.steps, lr=self.lr, lr_milestones=tuple(self.lr_milestones), lr_decay=self.lr_decay,
            pyramid_levels=self.pyramid_levels, alpha=self.weights.alpha, omega=self.weights.omega,
            beta=self.weights.beta, gamma=self.weights.gamma, mask_mode=self.mask_mode,
            pose_jitter=self.pose_jitter, pose_lr_scale=self.pose_lr_scale,
            rotation_lr_scale=self.rotation_lr_scale, d_min=self.d_min, d_max=self.d_max,
            random_state=self.seed, **asdict(t),
        )

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return _to_jsonable(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _to_jsonable(obj):
    if is_dataclass(obj):
        return {f.name: _to_jsonable(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(x) for x in obj]
    return obj


_NUMERIC = {int: (int,), float: (int, float)}


def _coerce(name: str, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be a boolean")
        return value
    for typ, accepted in _NUMERIC.items():
        if isinstance(default, typ) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, accepted):
                raise ConfigError(f"{name} must be {typ.__name__}")
            return typ(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string")
        return value
    return value


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys at {path or 'top level'}: {unknown}")
    defaults = cls() if cls is not AblationEntry else None
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if cls is AblationEntry:
            default = {"name": "", "toggles": TogglesConfig(), "augmented": True}[key]
        else:
            default = getattr(defaults, key)
        if is_dataclass(default):
            kwargs[key] = _build(type(default), value, sub)
        elif key == "ablation":
            if not isinstance(value, list):
                raise ConfigError("ablation must be a list")
            entries = []
            for i, e in enumerate(value):
                if not isinstance(e, dict) or "name" not in e:
                    raise ConfigError(f"ablation[{i}] needs a name")
                entries.append(_build(AblationEntry, e, f"ablation[{i}]"))
            kwargs[key] = tuple(entries)
        elif key in ("pool", "lr_milestones"):
            if not isinstance(value, list):
                raise ConfigError(f"{sub} must be a list")
            kwargs[key] = tuple(float(v) for v in value) if key == "lr_milestones" else tuple(value)
        else:
            kwargs[key] = _coerce(sub, value, default)
    return cls(**kwargs)


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def load_config(path: str | None) -> RunConfig:
    """Read a JSON config; ``None`` gives the all-defaults config."""
    if path is None:
        return RunConfig().validate()
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)
