"""
HammerLab SDK - network-driven Rowhammer simulation and exploitability analysis
"""

import asyncio
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import pandas as pd

from core.attack import assess_rates
from core.classifier import ReplayTimingSource, SimulatedTimingSource, TimingSource, classify
from core.config import RunConfig, from_mapping, load_config, set_dotted
from core.dram import (
    bank_collision_probability,
    pigeonhole_guarantee,
    simulate_bank_collisions,
)
from core.simulation import Platform, SimReport, expected_flips_per_hour, simulate
from core.sweep_manager import SweepManager, SweepResult
from error_handling import ErrorHandler, UsageError
from exploit.dns_bitsquat import enumerate_dns_bitsquats, parse_zone, scan_zone
from exploit.flip_effects import MemoryRegion, RegionKind, Space, flip_effects
from exploit.key_store import analyze_changed_keys, diff_key_store, parse_listing
from exploit.ocsp import parse_index, scan_ocsp
from exploit.rsa_keys import RecordLayout, rsa_modulus_hit_probability

logger = logging.getLogger("HAMMERLAB")

DEFAULT_BANK_KS = (2, 4, 8, 16, 32, 33)


@dataclass
class CommandResult:
    """Results payload of one command plus its tabular extracts."""
    results: Dict[str, Any]
    frames: Dict[str, pd.DataFrame] = field(default_factory=dict)


class HammerLab:
    """Main facade: one method per command"""

    def __init__(self, config: Optional[RunConfig] = None, config_path: Optional[Union[str, Path]] = None,
                 overrides: Optional[Mapping[str, Any]] = None):
        """Initialize the toolkit

        Args:
            config: Already validated configuration; wins over ``config_path``
            config_path: JSON/TOML configuration or an earlier report
            overrides: Dotted keys applied on top of the file
        """
        self.logger = logger
        self.config = config if config is not None else load_config(config_path, overrides)
        self._init_error_handling()
        self.logger.debug(f"HammerLab initialized (seed={self.config.seed}, digest={self.config.digest()[:12]})")

    def _init_error_handling(self):
        """Initialize error handling system"""
        self.error_handler = ErrorHandler(self.config.output.error_docs_dir)

    def with_overrides(self, overrides: Mapping[str, Any]) -> "HammerLab":
        """A new instance whose configuration has the dotted overrides applied"""
        data = self.config.canonical()
        for key, value in overrides.items():
            set_dotted(data, key, value)
        return HammerLab(from_mapping(data))

    # -- builders -------------------------------------------------------

    def build_platform(self) -> Platform:
        cfg = self.config
        geometry = cfg.build_geometry()
        return Platform(
            geometry=geometry,
            mapping=cfg.build_mapping(),
            timing=cfg.timing.build(),
            policy=cfg.policy.build(),
            cache=cfg.cache.build(),
            uncached=cfg.cache.build_uncached(),
            flip_model=cfg.flip_model.build(cfg.seed, geometry.cells_per_row),
            trr=cfg.trr.build(),
            window_ns=cfg.refresh.window_ms * 1e6,
        )

    def build_regions(self) -> List[MemoryRegion]:
        return [MemoryRegion(r.name, r.start, r.end, Space(r.space), RegionKind(r.kind), r.persistent)
                for r in self.config.exploit.regions]

    def build_timing_source(self) -> TimingSource:
        section = self.config.classifier
        if section.replay_csv:
            return ReplayTimingSource.from_csv(section.replay_csv, section.conflict_latency)
        platform = self.build_platform()
        return SimulatedTimingSource(
            platform.policy, platform.timing, platform.mapping, platform.geometry,
            probe_gap_ns=section.probe_gap_ns, jitter_cycles=section.jitter_cycles,
            seed=self.config.seed, bank=tuple(section.bank), rows=tuple(section.rows),
        )

    # -- commands -------------------------------------------------------

    def rates(self, bandwidth: Optional[Union[str, float]] = None, frame_bytes: Optional[int] = None,
              calls_per_packet: Optional[int] = None) -> CommandResult:
        """Packet rate, hammering rate and threshold feasibility"""
        attack = self.config.attack
        bandwidth = attack.bandwidth if bandwidth is None else bandwidth
        frame_bytes = attack.frame_bytes if frame_bytes is None else frame_bytes
        platform = self.build_platform()
        if calls_per_packet is None:
            profile = attack.build_profile(platform.mapping, platform.geometry, self.config.seed,
                                           platform.cache.line_size)
            calls_per_packet = profile.calls_per_packet(attack.hammered_function)
        window_ns = platform.effective_window_ns
        verdict = assess_rates(bandwidth, frame_bytes, calls_per_packet, attack.prefix_convention,
                               window_ns, attack.thresholds, attack.wire_overhead_bytes)
        results = {
            "bandwidth": str(bandwidth),
            "prefix_convention": attack.prefix_convention,
            "frame_bytes": frame_bytes,
            "wire_overhead_bytes": attack.wire_overhead_bytes,
            "calls_per_packet": calls_per_packet,
            "window_ns": window_ns,
            **verdict.to_dict(),
            "feasible_everywhere": verdict.feasible_everywhere,
        }
        self.logger.info(f"{bandwidth}: {verdict.accesses_per_refresh_interval} accesses per window")
        return CommandResult(results)

    def run_simulation(self) -> SimReport:
        cfg = self.config
        platform = self.build_platform()
        profile = cfg.attack.build_profile(platform.mapping, platform.geometry, cfg.seed, platform.cache.line_size)
        report = simulate(cfg.attack.build(), profile, platform, cfg.seed)
        regions = self.build_regions()
        if regions and report.flips:
            report.flip_effects = flip_effects(report.flips, platform.mapping, regions)
        return report

    def simulate(self) -> CommandResult:
        """Discrete-event attack simulation"""
        attack_cfg = self.config.attack.build()
        platform = self.build_platform()
        report = self.run_simulation()
        results = {
            "packet_rate": attack_cfg.packet_rate,
            "packet_interval_ns": attack_cfg.packet_interval_ns,
            "policy": platform.policy.kind.value,
            "simulation": report.to_dict(),
            "expected_flips_per_hour": expected_flips_per_hour(report, platform.flip_model),
        }
        frames = {
            "flips": pd.DataFrame(report.flip_rows(), columns=["window_id", "channel", "dimm", "rank",
                                                               "bank_group", "bank", "row", "cell", "distance"]),
            "windows": pd.DataFrame(report.window_maxima, columns=["window_id", "max_count"]),
        }
        return CommandResult(results, frames)

    def _sweep_point(self, overrides: Dict[str, Any]) -> Dict[str, Any]:
        point = self.with_overrides(overrides)
        report = point.run_simulation()
        return {
            "config_digest": point.config.digest(),
            "max_window_count": report.max_window_count,
            "flip_count": len(report.flips),
            "flips_per_hour": report.flips_per_hour,
            "dram_accesses": report.dram_accesses,
            "access_histogram": dict(report.access_histogram),
        }

    def run_sweep(self, grid: Optional[Dict[str, List[Any]]] = None) -> SweepResult:
        section = self.config.sweep
        grid = dict(grid) if grid else dict(section.grid)
        manager = SweepManager(self._sweep_point, {"max_concurrency": section.max_concurrency,
                                                   "progress": section.progress}, self.error_handler)
        return asyncio.run(manager.run("sweep", grid))

    def sweep(self, grid: Optional[Dict[str, List[Any]]] = None) -> CommandResult:
        """Simulations over a parameter grid, ordered by grid index"""
        result = self.run_sweep(grid)
        rows = []
        for entry in result.points:
            row = {"index": entry["index"], **entry["overrides"], "success": entry["success"]}
            if entry["success"]:
                row.update({k: v for k, v in entry["result"].items() if k != "access_histogram"})
            rows.append(row)
        results = {"points": result.points, "failed": len(result.failed)}
        return CommandResult(results, {"sweep": pd.DataFrame(rows)})

    def classify(self) -> CommandResult:
        """Page-policy classification from timing measurements"""
        source = self.build_timing_source()
        verdict = classify(source, self.config.classifier.build())
        results = verdict.to_dict()
        if isinstance(source, SimulatedTimingSource):
            results["generating_policy"] = source.policy.kind.value
        return CommandResult(results, {"curve": verdict.curve_frame()})

    def banks(self, ks: Optional[Sequence[int]] = None, banks: Optional[int] = None,
              trials: int = 100_000) -> CommandResult:
        """Bank-collision probabilities, exact and Monte-Carlo"""
        banks = banks or self.build_platform().geometry.total_banks
        rows = []
        for k in ks or DEFAULT_BANK_KS:
            rows.append({
                "k": k,
                "banks": banks,
                "probability": bank_collision_probability(k, banks),
                "monte_carlo": simulate_bank_collisions(k, banks, trials, self.config.seed),
            })
        results = {"banks": banks, "pigeonhole": pigeonhole_guarantee(banks), "table": rows}
        return CommandResult(results, {"banks": pd.DataFrame(rows)})

    def analyze_dns(self, zone_text: Optional[str] = None, domains: Sequence[str] = ()) -> CommandResult:
        """Bitsquat candidates for bare domains and zone entries"""
        if zone_text is None and not domains:
            raise UsageError("analyze dns needs a zone file or at least one domain")
        findings = []
        for domain in domains:
            findings.extend({"record_name": domain, "record_type": None, "field": "name", **c.to_dict()}
                            for c in enumerate_dns_bitsquats(domain))
        if zone_text is not None:
            findings.extend(scan_zone(parse_zone(zone_text)))
        return CommandResult({"candidate_count": len(findings), "candidates": findings},
                             {"candidates": pd.DataFrame(findings)})

    def analyze_ocsp(self, index_text: Union[str, bytes]) -> CommandResult:
        """Flip positions and probabilities of an OCSP index"""
        records = parse_index(index_text)
        scan = scan_ocsp(records)
        status_counts = {s: sum(r.status.value == s for r in records) for s in ("V", "R", "E")}
        frame = pd.DataFrame([{**p.to_dict(), "kind": kind}
                              for kind, positions in (("exploitable", scan.exploitable),
                                                      ("denial_of_service", scan.denial_of_service),
                                                      ("unknown_status", scan.unknown_status))
                              for p in positions], columns=["offset", "bit", "record", "kind"])
        return CommandResult({"records": len(records), "status_counts": status_counts, **scan.to_dict()},
                             {"positions": frame})

    def analyze_rsa(self, listing_text: Optional[str] = None, after_text: Optional[str] = None) -> CommandResult:
        """Modulus hit probability, and key recovery for keys that changed between two listings"""
        section = self.config.exploit
        layout = RecordLayout(section.modulus_bits, section.framing_bits)
        results: Dict[str, Any] = {
            "fill_fraction": section.fill_fraction,
            "modulus_bits": section.modulus_bits,
            "framing_bits": section.framing_bits,
            "hit_probability": rsa_modulus_hit_probability(section.fill_fraction, layout),
        }
        frames: Dict[str, pd.DataFrame] = {}
        if listing_text is not None:
            before = parse_listing(listing_text)
            results["keys"] = len(before)
            if after_text is not None:
                changes = diff_key_store(before, parse_listing(after_text))
                findings = analyze_changed_keys(changes, section.factor_budget, section.verify_rounds,
                                                self.config.seed)
                results["changes"] = findings
                results["recovered"] = sum(1 for f in findings
                                           if f["result"] and f["result"]["status"] == "recovered")
                frames["changes"] = pd.DataFrame([
                    {"user": f["user"], "kind": f["kind"],
                     "status": f["result"]["status"] if f["result"] else None}
                    for f in findings], columns=["user", "kind", "status"])
        elif after_text is not None:
            raise UsageError("a second listing needs the original listing too")
        return CommandResult(results, frames)
