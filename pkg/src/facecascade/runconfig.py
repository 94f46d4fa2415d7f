"""Run configuration: every module knob in one place, read from ``key = value`` text.

Keys are ``section.field`` (for example ``cascade.n_stages = 6`` or
``render.height = 64``) plus the top-level ``seed``, ``threads``, ``mode`` and
``preset``. Values are parsed according to the type of the field's default.
"""

import dataclasses
from dataclasses import dataclass, field

from facecascade.cascade import CascadeConfig
from facecascade.errors import ConfigurationError
from facecascade.init_fit import FitConfig
from facecascade.synthscene import MotionConfig, RenderConfig, ToyModelSpec


@dataclass(frozen=True)
class DataConfig:
    train_frames: int = 400
    sequences: int = 10
    length: int = 200
    landmark_noise: float = 0.0  # pixels, added to the first frame's detected landmarks


#: the full-size budgets of the original tracker (stages, depth, ferns per
#: modality, feature points, initialisations)
PAPER_PRESET = {
    "cascade.n_stages": "10",
    "cascade.depth": "5",
    "cascade.ferns_per_group": "80",
    "cascade.n_points": "600",
    "cascade.n_inits": "20",
}

_SECTIONS = ("toy", "render", "motion", "cascade", "noise", "fit", "data")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: int = 1
    mode: str = "gombf"
    toy: ToyModelSpec = field(default_factory=ToyModelSpec)
    render: RenderConfig = field(default_factory=RenderConfig)
    motion: MotionConfig = field(default_factory=MotionConfig)
    cascade: CascadeConfig = field(default_factory=CascadeConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def cascade_config(self, mode: str = None) -> CascadeConfig:
        """The cascade settings with the top-level seed, threads and mode applied."""
        return dataclasses.replace(self.cascade, seed=self.seed, threads=self.threads, mode=mode or self.mode)

    def validate(self) -> "RunConfig":
        if self.threads < 1:
            raise ConfigurationError("threads must be at least 1")
        if self.mode not in ("gombf", "monolithic"):
            raise ConfigurationError(f"unknown mode {self.mode!r} (expected gombf or monolithic)")
        self.toy.validate()
        self.cascade_config().validate()
        r = self.render
        if not (8 <= r.height <= 450 and 8 <= r.width <= 450):
            raise ConfigurationError("image size must be between 8 and 450 pixels per side")
        if r.kernel_sigma <= 0 or r.warp_radius <= 0 or r.pixel_noise < 0:
            raise ConfigurationError("render kernel and warp radius must be positive, noise non-negative")
        m = self.motion
        if m.t_z - m.t_z_range <= 0:
            raise ConfigurationError("sampled depths must stay in front of the camera")
        if min(m.delta_max, m.theta_max, m.D_max) < 0 or m.delta_max > 1:
            raise ConfigurationError("motion ranges must be non-negative and delta_max <= 1")
        d = self.data
        if d.train_frames < 2 or d.sequences < 0 or d.length < 1 or d.landmark_noise < 0:
            raise ConfigurationError("need train_frames >= 2, sequences >= 0, length >= 1, landmark_noise >= 0")
        return self

    def as_pairs(self):
        """Flattened ``(key, value)`` pairs, for manifests and reports."""
        out = [("seed", self.seed), ("threads", self.threads), ("mode", self.mode)]
        for section in _SECTIONS:
            obj = self.cascade.noise if section == "noise" else getattr(self, section)
            for f in dataclasses.fields(obj):
                if section == "cascade" and f.name in ("noise", "seed", "threads", "mode"):
                    continue
                out.append((f"{section}.{f.name}", getattr(obj, f.name)))
        return out


def _coerce(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float) or default is None:
            if default is None and raw.lower() in ("none", ""):
                return None
            return float(raw)
        if isinstance(default, tuple):
            return tuple(type(default[0])(x) for x in raw.replace(",", " ").split())
        return raw
    except ValueError:
        raise ConfigurationError(f"config key {key!r}: cannot parse {raw!r}") from None


def parse_pairs(text: str, source: str = "<config>"):
    pairs = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        pairs.append((key.strip(), value.strip()))
    return pairs


def apply_pairs(config: RunConfig, pairs) -> RunConfig:
    """Apply ``(key, raw value)`` pairs in order; a ``preset`` key expands first."""
    expanded = []
    for key, value in pairs:
        if key == "preset":
            if value != "paper":
                raise ConfigurationError(f"unknown preset {value!r} (only 'paper' is defined)")
            expanded.extend(PAPER_PRESET.items())
        else:
            expanded.append((key, value))
    top, sections = {}, {s: {} for s in _SECTIONS}
    for key, value in expanded:
        section, dot, name = key.partition(".")
        if not dot:
            if key not in ("seed", "threads", "mode"):
                raise ConfigurationError(f"unknown config key {key!r}")
            top[key] = _coerce(value, getattr(config, key), key)
            continue
        if section not in sections:
            raise ConfigurationError(f"unknown config section in {key!r}")
        target = config.cascade.noise if section == "noise" else getattr(config, section)
        names = {f.name for f in dataclasses.fields(target)}
        if name not in names or (section == "cascade" and name in ("noise", "seed", "threads", "mode")):
            raise ConfigurationError(f"unknown config key {key!r}")
        sections[section][name] = _coerce(value, getattr(target, name), key)
    try:
        noise = dataclasses.replace(config.cascade.noise, **sections.pop("noise"))
        cascade = dataclasses.replace(config.cascade, noise=noise, **sections.pop("cascade"))
        updates = {s: dataclasses.replace(getattr(config, s), **kv) for s, kv in sections.items()}
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from exc
    return dataclasses.replace(config, cascade=cascade, **updates, **top)


def load_config(path=None, overrides=None) -> RunConfig:
    """Defaults, then the file's pairs, then ``overrides`` (flags win); validated."""
    config = RunConfig()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        config = apply_pairs(config, parse_pairs(text, str(path)))
    if overrides:
        config = apply_pairs(config, [(k, str(v)) for k, v in overrides.items() if v is not None])
    return config.validate()

