"""The eight benchmark scenarios and run settings.

Settings come from built-in defaults, then an optional INI-style config
file, then command-line flags. The config file mirrors the flags::

    [run]
    duration = 60
    repetitions = 3
    seed = 42
    sim_time = true

    [scenario.IX]          ; add or redefine scenarios
    platform = hybrid
    scheme = medium
    producers = 3

    [links.uplink]         ; override any link profile field
    base_delay_ms = 10
"""

from __future__ import annotations

import configparser
import dataclasses
import re
from dataclasses import dataclass, field
from pathlib import Path

from .anonymizer import DEFAULT_PER_CPU_RATE, DEFAULT_QUEUE_PER_GB, SCHEMES, AnonymizationScheme, get_scheme
from .cits import DEFAULT_PAYLOAD_BYTES
from .edge import DEFAULT_CAPACITY
from .netem import IDENTITY, LinkProfile, default_profiles

PLATFORMS = ("hybrid", "local")

# (platform, scheme, producers); I-III and V-VII run the anonymizer, IV and
# VIII are the local platform without it.
CANONICAL: dict[str, tuple[str, str, int]] = {
    "I": ("hybrid", "small", 1),
    "II": ("hybrid", "medium", 1),
    "III": ("hybrid", "large", 1),
    "IV": ("local", "none", 1),
    "V": ("hybrid", "small", 10),
    "VI": ("hybrid", "medium", 10),
    "VII": ("hybrid", "large", 10),
    "VIII": ("local", "none", 10),
}

LINK_NAMES = {"uplink": "uplink_5g", "wan": "wan", "downlink": "downlink_5g"}

PAPER_SCALE = {"duration_s": 600.0, "repetitions": 10}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Scenario:
    id: str
    platform: str = "hybrid"
    scheme: str = "large"
    producers: int = 1
    duration_s: float = 60.0
    repetitions: int = 3
    rate_hz: float = 2.0
    payload_bytes: int = DEFAULT_PAYLOAD_BYTES
    seed: int = 42
    links: dict[str, LinkProfile] | None = field(default_factory=default_profiles)
    sim_time: bool = False
    sampler: str = "first"
    edge_capacity: int = DEFAULT_CAPACITY
    per_cpu_rate: float = DEFAULT_PER_CPU_RATE
    queue_per_gb: int = DEFAULT_QUEUE_PER_GB
    poll_interval_ms: float = 10.0
    cloud_max_records: int | None = None
    consumer_delay_ms: float = 0.0
    clock_skew_ms: int = 0
    mec_id: str = "mec-1"
    data_type: str = "cits"
    distributed: bool = False

    def __post_init__(self):
        if self.platform not in PLATFORMS:
            raise ConfigError(f"scenario {self.id}: platform must be hybrid or local, not {self.platform!r}")
        try:
            get_scheme(self.scheme)
        except ValueError as exc:
            raise ConfigError(f"scenario {self.id}: {exc}") from None
        if self.platform == "local" and self.scheme.lower() != "none":
            raise ConfigError(f"scenario {self.id}: the local platform has no anonymizer; scheme must be none")
        if self.producers < 1:
            raise ConfigError(f"scenario {self.id}: producers must be at least 1")
        if self.repetitions < 1:
            raise ConfigError(f"scenario {self.id}: repetitions must be at least 1")
        if not self.duration_s > 0 or not self.rate_hz > 0:
            raise ConfigError(f"scenario {self.id}: duration and rate must be positive")
        if self.sampler not in ("first", "last"):
            raise ConfigError(f"scenario {self.id}: sampler must be first or last")

    @property
    def anonymization(self) -> AnonymizationScheme:
        return get_scheme(self.scheme)

    @property
    def netem(self) -> bool:
        return self.links is not None

    def link(self, name: str) -> LinkProfile:
        if self.links is None:
            return IDENTITY
        return self.links[name]

    def replace(self, **changes) -> Scenario:
        return dataclasses.replace(self, **changes)


@dataclass
class Settings:
    scenarios: list[str] = field(default_factory=lambda: ["all"])
    duration_s: float = 60.0
    repetitions: int = 3
    producers: int | None = None
    rate_hz: float = 2.0
    payload_bytes: int = DEFAULT_PAYLOAD_BYTES
    scheme: str | None = None
    platform: str | None = None
    seed: int = 42
    out_dir: str = "results"
    sim_time: bool = False
    paper_scale: bool = False
    netem: bool = True
    distributed: bool = False
    sampler: str = "first"
    edge_capacity: int = DEFAULT_CAPACITY
    per_cpu_rate: float = DEFAULT_PER_CPU_RATE
    queue_per_gb: int = DEFAULT_QUEUE_PER_GB
    poll_interval_ms: float = 10.0
    cloud_max_records: int | None = None
    definitions: dict[str, tuple[str, str, int]] = field(default_factory=lambda: dict(CANONICAL))
    link_overrides: dict[str, dict[str, float]] = field(default_factory=dict)

    def selected(self) -> list[str]:
        ids = []
        for item in self.scenarios:
            if item.lower() == "all":
                ids.extend(self.definitions)
            elif item.upper() in self.definitions:
                ids.append(item.upper())
            elif item in self.definitions:
                ids.append(item)
            else:
                raise ConfigError(f"unknown scenario {item!r}; known: {', '.join(self.definitions)}")
        return list(dict.fromkeys(ids))

    def links(self) -> dict[str, LinkProfile] | None:
        if not self.netem:
            return None
        profiles = default_profiles(self.seed)
        for short, values in self.link_overrides.items():
            name = LINK_NAMES[short]
            profiles[name] = dataclasses.replace(profiles[name], **values)
        return profiles

    def build(self) -> list[Scenario]:
        duration, reps = self.duration_s, self.repetitions
        if self.paper_scale:
            duration, reps = PAPER_SCALE["duration_s"], PAPER_SCALE["repetitions"]
        out = []
        links = self.links()
        for sid in self.selected():
            platform, scheme, producers = self.definitions[sid]
            if self.platform is not None:
                platform = self.platform
                if platform == "local" and self.scheme is None:
                    scheme = "none"
            if self.scheme is not None:
                scheme = self.scheme
            out.append(
                Scenario(
                    sid,
                    platform=platform,
                    scheme=scheme,
                    producers=self.producers or producers,
                    duration_s=duration,
                    repetitions=reps,
                    rate_hz=self.rate_hz,
                    payload_bytes=self.payload_bytes,
                    seed=self.seed,
                    links=links,
                    sim_time=self.sim_time,
                    sampler=self.sampler,
                    edge_capacity=self.edge_capacity,
                    per_cpu_rate=self.per_cpu_rate,
                    queue_per_gb=self.queue_per_gb,
                    poll_interval_ms=self.poll_interval_ms,
                    cloud_max_records=self.cloud_max_records,
                    distributed=self.distributed,
                )
            )
        return out


def canonical(sid: str, **overrides) -> Scenario:
    platform, scheme, producers = CANONICAL[sid]
    fields = {"platform": platform, "scheme": scheme, "producers": producers, **overrides}
    return Scenario(sid, **fields)


# -- config file ------------------------------------------------------------

_RUN_KEYS = {
    "scenario": ("scenarios", lambda v: [s.strip() for s in v.split(",") if s.strip()]),
    "duration": ("duration_s", float),
    "repetitions": ("repetitions", int),
    "producers": ("producers", int),
    "rate": ("rate_hz", float),
    "payload": ("payload_bytes", int),
    "scheme": ("scheme", str),
    "platform": ("platform", str),
    "seed": ("seed", int),
    "out": ("out_dir", str),
    "sim_time": ("sim_time", "bool"),
    "paper_scale": ("paper_scale", "bool"),
    "no_netem": ("netem", "notbool"),
    "distributed": ("distributed", "bool"),
    "sampler": ("sampler", str),
    "edge_capacity": ("edge_capacity", int),
    "per_cpu_rate": ("per_cpu_rate", float),
    "queue_per_gb": ("queue_per_gb", int),
    "poll_interval_ms": ("poll_interval_ms", float),
    "cloud_max_records": ("cloud_max_records", int),
}

_LINK_KEYS = {"base_delay_ms", "jitter_ms", "bandwidth_mbps", "random_loss_pct"}


def _line_of(text: str, section: str, key: str) -> int | None:
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if m := re.match(r"\[(.+)\]", stripped):
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", stripped):
            return n
    return None


def load_config(path: str | Path, settings: Settings | None = None) -> Settings:
    """Read an INI-style config into ``settings`` (new defaults if omitted)."""
    settings = settings or Settings()
    text = Path(path).read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    def fail(section: str, key: str, detail: str):
        line = _line_of(text, section, key)
        where = f"{path}:{line}" if line else str(path)
        raise ConfigError(f"{where}: [{section}] {key}: {detail}")

    for section in parser.sections():
        items = parser[section]
        if section == "run":
            for key, raw in items.items():
                if key not in _RUN_KEYS:
                    fail(section, key, "unknown key")
                attr, conv = _RUN_KEYS[key]
                try:
                    if conv == "bool":
                        value = items.getboolean(key)
                    elif conv == "notbool":
                        value = not items.getboolean(key)
                    else:
                        value = conv(raw)
                except ValueError as exc:
                    fail(section, key, str(exc))
                setattr(settings, attr, value)
        elif section.startswith("scenario."):
            sid = section.split(".", 1)[1]
            platform, scheme, producers = settings.definitions.get(sid, ("hybrid", "large", 1))
            for key, raw in items.items():
                if key == "platform":
                    platform = raw.strip().lower()
                elif key == "scheme":
                    scheme = raw.strip().lower()
                elif key == "producers":
                    try:
                        producers = int(raw)
                    except ValueError as exc:
                        fail(section, key, str(exc))
                else:
                    fail(section, key, "unknown key")
            if scheme not in SCHEMES:
                fail(section, "scheme", f"unknown scheme {scheme!r}")
            if platform not in PLATFORMS:
                fail(section, "platform", f"unknown platform {platform!r}")
            settings.definitions[sid] = (platform, scheme, producers)
        elif section.startswith("links."):
            short = section.split(".", 1)[1]
            if short not in LINK_NAMES:
                fail(section, next(iter(items), ""), f"unknown link {short!r}")
            values = settings.link_overrides.setdefault(short, {})
            for key, raw in items.items():
                if key not in _LINK_KEYS:
                    fail(section, key, "unknown key")
                try:
                    values[key] = float(raw)
                except ValueError as exc:
                    fail(section, key, str(exc))
        else:
            raise ConfigError(f"{path}:{_line_of_section(text, section)}: unknown section [{section}]")
    return settings


def _line_of_section(text: str, section: str) -> int | None:
    for n, line in enumerate(text.splitlines(), 1):
        if line.strip() == f"[{section}]":
            return n
    return None
