"""
Configuration for HammerLab.

One pydantic model tree (``RunConfig``) covers every section of a run.
Unknown keys are rejected, every validation failure names its dotted key
and each section builds the runtime object it configures.
"""

import copy
import hashlib
import json
import logging
import math
import os
import re

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple, Union

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator, model_validator

from error_handling import ConfigurationError, HammerLabError

from .attack import (
    BUILTIN_PROFILES,
    ETHERNET_WIRE_OVERHEAD,
    Annotation,
    AttackConfig,
    DutyCycle,
    KernelLayout,
    PacketProfile,
    ProfileFunction,
    annotation_for,
    double_sided,
    one_location,
    parse_bandwidth,
    single_sided,
)
from .cache import DEFAULT_SLICE_BITS, CacheConfig, UncachedRegions
from .classifier import ClassifierConfig, geometric_schedule
from .dram import COORDINATES, AddressMapping, DramGeometry, FlipModel, TrrConfig
from .memctrl import AdaptiveParams, PagePolicy, TimingConfig

logger = logging.getLogger("HAMMERLAB.Config")

CONFIG_ENV_VAR = "HAMMERLAB_CONFIG"
DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent.parent / "config" / "default_config.json"


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class LoggingSection(Section):
    level: Literal["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"] = "INFO"
    file: Optional[str] = None


class GeometrySection(Section):
    channels: int = Field(1, ge=1)
    dimms_per_channel: int = Field(1, ge=1)
    ranks_per_dimm: int = Field(2, ge=1)
    bank_groups: int = Field(4, ge=1)
    banks_per_group: int = Field(4, ge=1)
    rows_per_bank: int = Field(65536, ge=1)
    row_size_bytes: int = Field(8192, ge=1)

    @field_validator("row_size_bytes")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError("must be a power of two")
        return value

    def build(self) -> DramGeometry:
        return DramGeometry(**self.model_dump())


class MappingSection(Section):
    address_bits: int = Field(34, ge=1, le=64)
    channel: List[List[int]] = Field(default_factory=list)
    dimm: List[List[int]] = Field(default_factory=list)
    rank: List[List[int]] = Field(default_factory=list)
    bank_group: List[List[int]] = Field(default_factory=list)
    bank: List[List[int]] = Field(default_factory=list)
    row: List[List[int]] = Field(default_factory=list)
    column: List[List[int]] = Field(default_factory=list)

    def build(self) -> AddressMapping:
        return AddressMapping.from_lists({c: getattr(self, c) for c in COORDINATES}, self.address_bits)


class TimingSection(Section):
    t_rp: int = Field(14, ge=0)
    t_rcd: int = Field(14, ge=0)
    base_hit_latency: int = Field(200, gt=0)
    dram_transfer_rate: float = Field(2133.0, gt=0)
    double_clocked: bool = True
    cpu_freq: float = Field(4.0e9, gt=0)

    def build(self) -> TimingConfig:
        return TimingConfig(**self.model_dump())


class AdaptiveSection(Section):
    initial_timeout_ns: float = Field(0.0, ge=0)
    timeout_min_ns: float = Field(0.0, ge=0)
    timeout_max_ns: float = Field(10_000.0, ge=0)
    step_ns: float = Field(25.0, gt=0)
    inc_threshold: int = 8
    dec_threshold: int = -8
    check_period: int = Field(64, ge=1)
    saturation: int = Field(64, ge=1)

    @model_validator(mode="after")
    def _ordered(self) -> "AdaptiveSection":
        if not self.timeout_min_ns <= self.initial_timeout_ns <= self.timeout_max_ns:
            raise ValueError("need timeout_min_ns <= initial_timeout_ns <= timeout_max_ns")
        if self.dec_threshold > self.inc_threshold:
            raise ValueError("dec_threshold must not exceed inc_threshold")
        return self


class PolicySection(Section):
    kind: Literal["closed", "fixed_open", "adaptive"] = "closed"
    timeout_ns: Optional[float] = Field(None, ge=0, description="fixed_open timeout; null means never")
    adaptive: AdaptiveSection = Field(default_factory=AdaptiveSection)

    def build(self) -> PagePolicy:
        timeout = math.inf if self.timeout_ns is None else self.timeout_ns
        return PagePolicy(self.kind, timeout_ns=timeout, adaptive=AdaptiveParams(**self.adaptive.model_dump()))


class CacheSection(Section):
    slices: int = Field(8, ge=1)
    sets_per_slice: int = Field(2048, ge=1)
    ways: int = Field(16, ge=1)
    cat_ways: int = Field(1, ge=1)
    line_size: int = Field(64, ge=1)
    slice_bits: List[List[int]] = Field(default_factory=lambda: [list(bits) for bits in DEFAULT_SLICE_BITS])
    replacement: Literal["lru"] = "lru"
    uncached_regions: List[Tuple[int, int]] = Field(default_factory=list)

    @field_validator("cat_ways")
    @classmethod
    def _within_ways(cls, value: int, info: ValidationInfo) -> int:
        ways = info.data.get("ways")
        if ways is not None and value > ways:
            raise ValueError(f"cat_ways ({value}) exceeds ways ({ways})")
        return value

    @field_validator("slices", "sets_per_slice", "line_size")
    @classmethod
    def _power_of_two(cls, value: int) -> int:
        if value & (value - 1):
            raise ValueError("must be a power of two")
        return value

    @model_validator(mode="after")
    def _slice_bits_match(self) -> "CacheSection":
        if (1 << len(self.slice_bits)) != self.slices:
            raise ValueError("slice_bits needs log2(slices) bit sets")
        return self

    def build(self) -> CacheConfig:
        return CacheConfig(
            slices=self.slices,
            sets_per_slice=self.sets_per_slice,
            ways=self.ways,
            cat_ways=self.cat_ways,
            line_size=self.line_size,
            slice_bits=tuple(tuple(bits) for bits in self.slice_bits),
            replacement=self.replacement,
        )

    def build_uncached(self) -> UncachedRegions:
        return UncachedRegions(tuple(tuple(r) for r in self.uncached_regions))


class FlipModelSection(Section):
    threshold_by_distance: Dict[int, int] = Field(default_factory=lambda: {1: 139_000, 2: 556_000})
    susceptibility: float = Field(1e-4, ge=0.0, le=1.0)
    deterministic_mode: bool = False

    @field_validator("threshold_by_distance")
    @classmethod
    def _non_decreasing(cls, value: Dict[int, int]) -> Dict[int, int]:
        if not value:
            raise ValueError("needs at least one distance")
        ordered = sorted(value.items())
        if any(d < 1 or t < 1 for d, t in ordered):
            raise ValueError("distances and thresholds must be >= 1")
        if any(b[1] < a[1] for a, b in zip(ordered, ordered[1:])):
            raise ValueError("thresholds must be non-decreasing in distance")
        return dict(ordered)

    def build(self, seed: int, cells_per_row: int) -> FlipModel:
        return FlipModel(self.threshold_by_distance, self.susceptibility, self.deterministic_mode, seed, cells_per_row)


class TrrSection(Section):
    enabled: bool = False
    max_activation_count: int = Field(50_000, ge=1)
    refresh_radius: int = Field(1, ge=1)
    double_refresh: bool = False

    def build(self) -> TrrConfig:
        return TrrConfig(**self.model_dump())


class RefreshSection(Section):
    window_ms: float = Field(64.0, gt=0)


class DutyCycleSection(Section):
    on_ms: float = Field(..., gt=0)
    period_ms: float = Field(..., gt=0)

    @model_validator(mode="after")
    def _on_within_period(self) -> "DutyCycleSection":
        if self.on_ms > self.period_ms:
            raise ValueError("on_ms must not exceed period_ms")
        return self


class FunctionSection(Section):
    label: str
    addresses: List[int] = Field(..., min_length=1)
    calls_per_packet: int = Field(1, ge=1)
    annotation: Literal["flushed", "uncached", "cacheable"] = "cacheable"


class ProfileSection(Section):
    name: Literal["udp_funccount", "nf_hook_slow", "custom"] = "nf_hook_slow"
    kernel_base: int = Field(0x2_4000_0000, ge=0)
    kernel_stride: int = Field(0x1040, ge=1)
    functions: List[FunctionSection] = Field(default_factory=list)

    @model_validator(mode="after")
    def _custom_has_functions(self) -> "ProfileSection":
        if self.name == "custom" and not self.functions:
            raise ValueError("a custom profile needs functions")
        return self


class PatternSection(Section):
    kind: Literal["one_location", "single_sided", "double_sided"] = "one_location"
    k: int = Field(8, ge=1)
    bank: List[int] = Field(default_factory=lambda: [0, 0, 0, 0, 0], min_length=5, max_length=5)
    victim_row: int = Field(1000, ge=1)


class AttackSection(Section):
    bandwidth: Union[str, float] = "500Mbit"
    prefix_convention: Literal["binary", "decimal"] = "binary"
    frame_bytes: int = Field(64, ge=64)
    wire_overhead: bool = False
    duration_s: float = Field(0.064, gt=0)
    bypass_mode: Literal["flush_driver", "uncached", "cat_eviction"] = "flush_driver"
    background_load: float = Field(0.0, ge=0)
    background_mode: Literal["random", "hammered_bank"] = "random"
    arrival: Literal["uniform", "poisson"] = "uniform"
    duty_cycle: Optional[DutyCycleSection] = None
    hammered_function: str = "nf_hook_slow"
    thresholds: List[int] = Field(default_factory=lambda: [43_000, 110_000, 139_000])
    profile: ProfileSection = Field(default_factory=ProfileSection)
    pattern: PatternSection = Field(default_factory=PatternSection)

    @field_validator("bandwidth")
    @classmethod
    def _parseable(cls, value: Union[str, float]) -> Union[str, float]:
        try:
            bits = parse_bandwidth(value)
        except HammerLabError as e:
            raise ValueError(e.message) from e
        if bits <= 0:
            raise ValueError("bandwidth must be > 0")
        return value

    @field_validator("thresholds")
    @classmethod
    def _positive(cls, value: List[int]) -> List[int]:
        if any(t <= 0 for t in value):
            raise ValueError("thresholds must be positive")
        return value

    @property
    def wire_overhead_bytes(self) -> int:
        return ETHERNET_WIRE_OVERHEAD if self.wire_overhead else 0

    def build(self) -> AttackConfig:
        duty = DutyCycle(self.duty_cycle.on_ms, self.duty_cycle.period_ms) if self.duty_cycle else None
        return AttackConfig(
            bandwidth_bps=parse_bandwidth(self.bandwidth, self.prefix_convention),
            frame_bytes=self.frame_bytes,
            duration_s=self.duration_s,
            bypass_mode=self.bypass_mode,
            background_load=self.background_load,
            background_mode=self.background_mode,
            arrival=self.arrival,
            duty_cycle=duty,
            wire_overhead=self.wire_overhead_bytes,
            hammered_function=self.hammered_function,
            thresholds=tuple(self.thresholds),
        )

    def build_profile(self, mapping: AddressMapping, geometry: DramGeometry, seed: int,
                      line_size: int = 64) -> PacketProfile:
        """The packet profile with the hammering pattern applied to the hammered function."""
        annotation = annotation_for(self.bypass_mode)
        layout = KernelLayout(self.profile.kernel_base, self.profile.kernel_stride)
        if self.profile.name == "custom":
            profile = PacketProfile(
                tuple(ProfileFunction(f.label, tuple(f.addresses), f.calls_per_packet, Annotation(f.annotation))
                      for f in self.profile.functions),
                "custom",
            )
            return profile
        if self.profile.name == "udp_funccount":
            profile = BUILTIN_PROFILES["udp_funccount"](layout, self.hammered_function, annotation)
        else:
            profile = BUILTIN_PROFILES["nf_hook_slow"](layout, annotation)
        hammered = profile.function(self.hammered_function)
        if self.pattern.kind == "one_location":
            addresses = one_location(hammered.addresses[0])
        elif self.pattern.kind == "single_sided":
            addresses = single_sided(self.pattern.k, mapping, geometry, seed, line_size)
        else:
            addresses = double_sided(self.pattern.bank, self.pattern.victim_row, mapping, geometry)
        return profile.with_addresses(self.hammered_function, addresses)


class ClassifierSection(Section):
    n_max: int = Field(10_000, ge=1)
    n_points: int = Field(40, ge=1)
    n_schedule: Optional[List[int]] = None
    repeats_per_point: int = Field(9, ge=1)
    equality_tolerance: float = Field(3.0, ge=0)
    jump_detection_min_step: float = Field(20.0, gt=0)
    probe_gap_ns: float = Field(60.0, gt=0)
    jitter_cycles: int = Field(0, ge=0)
    bank: List[int] = Field(default_factory=lambda: [0, 0, 0, 0, 0], min_length=5, max_length=5)
    rows: Tuple[int, int] = (0, 1)
    replay_csv: Optional[str] = None
    conflict_latency: Optional[float] = None

    @model_validator(mode="after")
    def _tolerance_below_step(self) -> "ClassifierSection":
        if self.equality_tolerance >= self.jump_detection_min_step:
            raise ValueError("equality_tolerance must be below jump_detection_min_step")
        return self

    def build(self) -> ClassifierConfig:
        schedule = tuple(self.n_schedule) if self.n_schedule else geometric_schedule(self.n_max, self.n_points)
        return ClassifierConfig(schedule, self.repeats_per_point, self.equality_tolerance,
                                self.jump_detection_min_step)


class RegionSection(Section):
    name: str
    start: int = Field(..., ge=0)
    end: int = Field(..., gt=0)
    space: Literal["user", "kernel"] = "user"
    kind: Literal["code", "page_table", "stack", "heap", "data", "page_cache"] = "data"
    persistent: bool = False

    @model_validator(mode="after")
    def _non_empty(self) -> "RegionSection":
        if self.end <= self.start:
            raise ValueError("end must exceed start")
        return self


class ExploitSection(Section):
    regions: List[RegionSection] = Field(default_factory=list)
    fill_fraction: float = Field(0.8, ge=0.0, le=1.0)
    modulus_bits: int = Field(4096, ge=1)
    framing_bits: int = Field(16, ge=0)
    factor_budget: int = Field(200_000, ge=1)
    verify_rounds: int = Field(10, ge=1)


class OutputSection(Section):
    dir: str = "reports"
    csv: bool = False
    error_docs_dir: Optional[str] = None


class SweepSection(Section):
    grid: Dict[str, List[Any]] = Field(
        default_factory=lambda: {"policy.kind": ["closed", "fixed_open", "adaptive"], "attack.bandwidth": ["500Mbit"]}
    )
    max_concurrency: int = Field(4, ge=1)
    progress: bool = False


class RunConfig(Section):
    """Complete, validated configuration of one run."""
    seed: int = Field(0, ge=0, lt=2 ** 64)
    logging: LoggingSection = Field(default_factory=LoggingSection)
    geometry: GeometrySection = Field(default_factory=GeometrySection)
    mapping: Optional[MappingSection] = None
    timing: TimingSection = Field(default_factory=TimingSection)
    policy: PolicySection = Field(default_factory=PolicySection)
    cache: CacheSection = Field(default_factory=CacheSection)
    flip_model: FlipModelSection = Field(default_factory=FlipModelSection)
    trr: TrrSection = Field(default_factory=TrrSection)
    refresh: RefreshSection = Field(default_factory=RefreshSection)
    attack: AttackSection = Field(default_factory=AttackSection)
    classifier: ClassifierSection = Field(default_factory=ClassifierSection)
    exploit: ExploitSection = Field(default_factory=ExploitSection)
    output: OutputSection = Field(default_factory=OutputSection)
    sweep: SweepSection = Field(default_factory=SweepSection)

    def build_geometry(self) -> DramGeometry:
        return self.geometry.build()

    def build_mapping(self) -> AddressMapping:
        geometry = self.build_geometry()
        mapping = self.mapping.build() if self.mapping else AddressMapping.default_ddr4(geometry)
        try:
            mapping.check_compatible(geometry)
        except HammerLabError as e:
            raise ConfigurationError(e.message, key="mapping", context=e.context) from e
        return mapping

    def canonical(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def digest(self) -> str:
        return config_digest(self)


def config_digest(cfg: RunConfig) -> str:
    """SHA-256 of the canonical JSON form; independent of key order."""
    canonical = json.dumps(cfg.canonical(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _dotted(loc: Tuple) -> str:
    return ".".join(str(part) for part in loc)


def from_mapping(data: Mapping[str, Any]) -> RunConfig:
    """Validate a plain dictionary."""
    try:
        return RunConfig.model_validate(dict(data))
    except ValidationError as e:
        first = e.errors()[0]
        key = _dotted(first["loc"])
        raise ConfigurationError(
            f"invalid configuration at '{key}': {first['msg']}",
            key=key,
            context={"errors": [{"key": _dotted(err["loc"]), "message": err["msg"]} for err in e.errors()]},
        ) from e


def _parse_file(path: Path) -> Dict[str, Any]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read configuration {path}: {e.strerror}", context={"path": str(path)}) from e
    if path.suffix.lower() == ".toml":
        try:
            return tomllib.loads(text)
        except tomllib.TOMLDecodeError as e:
            match = re.search(r"line (\d+)", str(e))
            line = getattr(e, "lineno", None) or (int(match.group(1)) if match else None)
            raise ConfigurationError(f"{path}: TOML parse error: {e}", line=line, context={"path": str(path)}) from e
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: JSON parse error at line {e.lineno}: {e.msg}", line=e.lineno,
                                 context={"path": str(path)}) from e
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: configuration root must be an object", line=1)
    return data


def set_dotted(data: Dict[str, Any], key: str, value: Any) -> Dict[str, Any]:
    """Set ``a.b.c`` inside nested dictionaries, creating levels as needed."""
    node = data
    parts = key.split(".")
    for part in parts[:-1]:
        child = node.get(part)
        if child is None:
            child = node[part] = {}
        if not isinstance(child, dict):
            raise ConfigurationError(f"cannot set '{key}': '{part}' is not a section", key=key)
        node = child
    node[parts[-1]] = value
    return data


def resolve_config_path(path: Optional[Union[str, Path]] = None) -> Optional[Path]:
    """Explicit path, else the environment variable (``.env`` honoured), else none."""
    if path:
        return Path(path)
    load_dotenv()
    env_path = os.environ.get(CONFIG_ENV_VAR)
    return Path(env_path) if env_path else None


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """
    Load and validate a configuration.

    Args:
        path: JSON or TOML file, or a report produced by an earlier run
        overrides: dotted keys applied on top of the file

    Returns:
        RunConfig with every default materialised
    """
    resolved = resolve_config_path(path)
    data: Dict[str, Any] = {}
    if resolved is not None:
        data = _parse_file(resolved)
        if "schema_version" in data and "config" in data:
            logger.info(f"Re-executing from report header {resolved}")
            report = data
            data = copy.deepcopy(report["config"])
            data["seed"] = report.get("seed", data.get("seed", 0))
        logger.info(f"Configuration loaded from {resolved}")
    else:
        logger.info("Using default configuration")
    for key, value in (overrides or {}).items():
        set_dotted(data, key, value)
    return from_mapping(data)
