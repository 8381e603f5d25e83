"""Alarm class registry: declarative spectro-temporal definitions of alarm classes."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import yaml

REGISTRY_FORMAT = 1


class RegistryError(ValueError):
    """Invalid registry document; the message names the offending field."""


@dataclass(frozen=True)
class ToneSpec:
    frequencies: tuple[float, ...]
    relative_amplitudes: tuple[float, ...]
    duration_s: float

    def __post_init__(self):
        freqs = tuple(float(f) for f in self.frequencies)
        amps = tuple(float(a) for a in self.relative_amplitudes) or (1.0,) * len(freqs)
        if not freqs:
            raise RegistryError("frequencies: must be non-empty")
        if any(f <= 0 for f in freqs):
            raise RegistryError("frequencies: must be positive")
        if len(amps) != len(freqs):
            raise RegistryError("relative_amplitudes: length differs from frequencies")
        if any(a <= 0 for a in amps):
            raise RegistryError("relative_amplitudes: must be positive")
        if not self.duration_s > 0:
            raise RegistryError("duration_s: must be > 0")
        total = sum(amps)
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "relative_amplitudes", tuple(a / total for a in amps))
        object.__setattr__(self, "duration_s", float(self.duration_s))


@dataclass(frozen=True)
class AlarmVersionSpec:
    tones: tuple[ToneSpec, ...]
    silence_s: float
    f0: float | None = None

    def __post_init__(self):
        if not self.tones:
            raise RegistryError("tones: must be non-empty")
        if not self.silence_s > 0:
            raise RegistryError("silence_s: must be > 0")
        object.__setattr__(self, "tones", tuple(self.tones))
        object.__setattr__(self, "silence_s", float(self.silence_s))
        if self.f0 is None:
            object.__setattr__(self, "f0", min(self.tones[0].frequencies))

    @property
    def signal_s(self) -> float:
        return sum(t.duration_s for t in self.tones)

    @property
    def period_s(self) -> float:
        return self.signal_s + self.silence_s

    @property
    def frequencies(self) -> list[float]:
        return sorted({f for t in self.tones for f in t.frequencies})


@dataclass(frozen=True)
class AlarmClassSpec:
    class_id: str
    versions: tuple[AlarmVersionSpec, ...]

    def __post_init__(self):
        if not self.class_id:
            raise RegistryError("class_id: must be non-empty")
        if not self.versions:
            raise RegistryError("versions: must be non-empty")
        object.__setattr__(self, "versions", tuple(self.versions))

    @property
    def specific_frequencies(self) -> list[float]:
        """Union of component frequencies over every version, deduplicated."""
        return sorted({f for v in self.versions for f in v.frequencies})

    @property
    def min_period_s(self) -> float:
        return min(v.period_s for v in self.versions)

    def check_nyquist(self, sample_rate: int) -> None:
        for vi, v in enumerate(self.versions):
            for ti, t in enumerate(v.tones):
                if max(t.frequencies) >= sample_rate / 2:
                    raise RegistryError(
                        f"{self.class_id}.versions[{vi}].tones[{ti}].frequencies: "
                        f"{max(t.frequencies)} Hz is not below Nyquist ({sample_rate / 2} Hz)")


@dataclass(frozen=True)
class Registry:
    classes: tuple[AlarmClassSpec, ...]
    sample_rate: int = 24000
    synthetic: bool = True

    def __getitem__(self, class_id: str) -> AlarmClassSpec:
        for c in self.classes:
            if c.class_id == class_id:
                return c
        raise KeyError(class_id)

    @property
    def class_ids(self) -> list[str]:
        return [c.class_id for c in self.classes]


def _field(doc, key, where, kind=None):
    if not isinstance(doc, dict) or key not in doc:
        raise RegistryError(f"{where}.{key}: missing")
    val = doc[key]
    if kind is list and not isinstance(val, list):
        raise RegistryError(f"{where}.{key}: expected a list")
    return val


def registry_from_dict(doc: dict) -> Registry:
    if not isinstance(doc, dict):
        raise RegistryError("registry: expected a mapping at top level")
    fmt = doc.get("format_version", REGISTRY_FORMAT)
    if fmt != REGISTRY_FORMAT:
        raise RegistryError(f"format_version: unsupported value {fmt!r}")
    sr = int(doc.get("sample_rate", 24000))
    classes = []
    seen = set()
    for ci, cdoc in enumerate(_field(doc, "classes", "registry", list)):
        where = f"classes[{ci}]"
        cid = str(_field(cdoc, "class_id", where))
        if cid in seen:
            raise RegistryError(f"{where}.class_id: duplicate {cid!r}")
        seen.add(cid)
        versions = []
        for vi, vdoc in enumerate(_field(cdoc, "versions", where, list)):
            vwhere = f"{where}.versions[{vi}]"
            tones = []
            for ti, tdoc in enumerate(_field(vdoc, "tones", vwhere, list)):
                twhere = f"{vwhere}.tones[{ti}]"
                try:
                    tones.append(ToneSpec(
                        tuple(_field(tdoc, "frequencies", twhere, list)),
                        tuple(tdoc.get("relative_amplitudes") or ()),
                        _field(tdoc, "duration_s", twhere),
                    ))
                except (TypeError, ValueError) as exc:
                    raise RegistryError(f"{twhere}.{exc}") from exc
            try:
                versions.append(AlarmVersionSpec(tuple(tones), _field(vdoc, "silence_s", vwhere), vdoc.get("f0")))
            except (TypeError, ValueError) as exc:
                if isinstance(exc, RegistryError) and str(exc).startswith(vwhere):
                    raise
                raise RegistryError(f"{vwhere}.{exc}") from exc
        try:
            spec = AlarmClassSpec(cid, tuple(versions))
        except RegistryError as exc:
            raise RegistryError(f"{where}.{exc}") from exc
        spec.check_nyquist(sr)
        classes.append(spec)
    if not classes:
        raise RegistryError("classes: must be non-empty")
    return Registry(tuple(classes), sr, bool(doc.get("synthetic", True)))


def registry_to_dict(reg: Registry) -> dict:
    return {
        "format_version": REGISTRY_FORMAT,
        "synthetic": reg.synthetic,
        "sample_rate": reg.sample_rate,
        "classes": [
            {
                "class_id": c.class_id,
                "versions": [
                    {
                        "silence_s": v.silence_s,
                        "f0": v.f0,
                        "tones": [
                            {
                                "frequencies": list(t.frequencies),
                                "relative_amplitudes": list(t.relative_amplitudes),
                                "duration_s": t.duration_s,
                            }
                            for t in v.tones
                        ],
                    }
                    for v in c.versions
                ],
            }
            for c in reg.classes
        ],
    }


def load_registry(path=None) -> Registry:
    """Load a registry YAML file; ``None`` loads the bundled synthetic registry."""
    if path is None:
        text = resources.files("alarmdet.data").joinpath("default_registry.yaml").read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise RegistryError(f"registry: not valid YAML ({exc})") from exc
    return registry_from_dict(doc)


def default_registry() -> Registry:
    return load_registry(None)


def merged_frequencies(specs: Sequence[AlarmClassSpec]) -> list[float]:
    return sorted({f for s in specs for f in s.specific_frequencies})
