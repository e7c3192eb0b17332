"""Run configuration: a strict ``key = value`` file with ``[section]`` headers.

Unknown sections or keys are errors. Lists are comma separated; mixture
centers are ``;``-separated vectors, e.g. ``centers = 0.5,0; -0.5,0``.
Blank lines and lines starting with ``#`` are ignored.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace

from .exceptions import ValidationError


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _vectors(text):
    return tuple(_floats(v) for v in text.split(";") if v.strip())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text.strip().lower() in ("", "none") else float(text)


_PARSERS = {
    "int": int, "float": float, "str": lambda s: s.strip(), "bool": _bool,
    "ints": _ints, "floats": _floats, "vectors": _vectors, "opt_float": _opt_float,
}


def _field(default, kind):
    return field(default=default, metadata={"kind": kind})


@dataclass(frozen=True)
class RunSection:
    seed: int = _field(0, "int")
    output_dir: str = _field("bridgegen_out", "str")


@dataclass(frozen=True)
class TargetSection:
    kind: str = _field("embedded_manifold", "str")
    d: int = _field(3, "int")
    d_star: int = _field(2, "int")
    centers: tuple = _field((), "vectors")
    std: float = _field(0.3, "float")
    shift: float = _field(0.0, "float")
    embedding_seed: int = _field(0, "int")


@dataclass(frozen=True)
class SizesSection:
    n: int = _field(256, "int")
    M: int = _field(1024, "int")
    eval_count: int = _field(256, "int")
    chains: int = _field(256, "int")


@dataclass(frozen=True)
class PretrainSection:
    encoder_hidden: tuple = _field((32, 32), "ints")
    decoder_hidden: tuple = _field((32, 32), "ints")
    epochs: int = _field(100, "int")
    lr: float = _field(1e-3, "float")
    batch_size: int = _field(64, "int")


@dataclass(frozen=True)
class ScoreSection:
    hidden: tuple = _field((64, 64, 64), "ints")
    steps: int = _field(2000, "int")
    batch_size: int = _field(256, "int")
    lr: float = _field(1e-3, "float")
    T: float = _field(None, "opt_float")


@dataclass(frozen=True)
class ScheduleSection:
    sigma: float = _field(1.0, "float")
    K: int = _field(256, "int")
    T: float = _field(0.97, "float")
    L: float = _field(None, "opt_float")
    beta: float = _field(1.0, "float")
    use_derived_schedule: bool = _field(False, "bool")
    noise_scale: str = _field("em", "str")
    T_sweep: tuple = _field((), "floats")


_SECTIONS = {
    "run": RunSection, "target": TargetSection, "sizes": SizesSection,
    "pretrain": PretrainSection, "score": ScoreSection, "schedule": ScheduleSection,
}


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    target: TargetSection = field(default_factory=TargetSection)
    sizes: SizesSection = field(default_factory=SizesSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    score: ScoreSection = field(default_factory=ScoreSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)

    def __post_init__(self):
        validate(self)

    @property
    def seed(self):
        return self.run.seed

    def with_overrides(self, seed=None, output_dir=None):
        run = self.run
        if seed is not None:
            run = replace(run, seed=int(seed))
        if output_dir is not None:
            run = replace(run, output_dir=output_dir)
        return replace(self, run=run)

    def canonical(self):
        """Config as a plain dict without ``output_dir`` (which does not affect results)."""
        doc = asdict(self)
        doc["run"].pop("output_dir")
        return doc

    def run_id(self):
        text = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def validate(cfg):
    t, s, sch = cfg.target, cfg.sizes, cfg.schedule
    if t.d < 1 or t.d_star < 1 or t.d_star > t.d:
        raise ValidationError(f"need 1 <= d_star <= d, got d={t.d}, d_star={t.d_star}")
    for c in t.centers:
        if len(c) != (t.d_star if t.kind == "embedded_manifold" else t.d):
            raise ValidationError(f"center {c} has the wrong dimension")
    if min(s.n, s.M) < 1 or min(s.eval_count, s.chains) < 0:
        raise ValidationError("sizes n and M must be >= 1, eval_count and chains >= 0")
    if cfg.score.T is not None and not 0 < cfg.score.T < 1:
        raise ValidationError(f"score T override must lie in (0, 1), got {cfg.score.T}")
    if not 0 < sch.T < 1 or any(not 0 < v < 1 for v in sch.T_sweep):
        raise ValidationError("schedule T and T_sweep values must lie in (0, 1)")
    if sch.sigma <= 0 or sch.K < 1 or sch.beta <= 0:
        raise ValidationError("sigma and beta must be positive and K >= 1")
    if sch.noise_scale not in ("em", "algorithm1"):
        raise ValidationError(f"noise_scale must be 'em' or 'algorithm1', got {sch.noise_scale!r}")


def parse_config(text):
    values = {name: {} for name in _SECTIONS}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ValidationError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'key = value'")
        if section is None:
            raise ValidationError(f"line {lineno}: key outside of any section")
        key, value = (part.strip() for part in line.split("=", 1))
        spec = {f.name: f for f in fields(_SECTIONS[section])}
        if key not in spec:
            raise ValidationError(f"line {lineno}: unknown key {key!r} in [{section}]")
        if key in values[section]:
            raise ValidationError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[section][key] = _PARSERS[spec[key].metadata["kind"]](value)
        except ValueError as exc:
            raise ValidationError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return RunConfig(**{name: cls(**values[name]) for name, cls in _SECTIONS.items()})


def load_config(path):
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def format_config(cfg):
    """Render a config back to the file format (round-trips through :func:`parse_config`)."""
    def fmt(value, kind):
        if value is None:
            return "none"
        if kind in ("ints", "floats"):
            return ",".join(repr(v) for v in value)
        if kind == "vectors":
            return "; ".join(",".join(repr(x) for x in v) for v in value)
        if kind == "bool":
            return "true" if value else "false"
        return str(value) if kind == "str" else repr(value)

    lines = []
    for name in _SECTIONS:
        sec = getattr(cfg, name)
        lines.append(f"[{name}]")
        lines += [f"{f.name} = {fmt(getattr(sec, f.name), f.metadata['kind'])}" for f in fields(sec)]
        lines.append("")
    return "\n".join(lines)
