"""
Sweep Manager for HammerLab
Expands parameter grids and runs the points as independent simulations
"""

import asyncio
import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

from tqdm import tqdm

from error_handling import ErrorHandler, UsageError

logger = logging.getLogger("HAMMERLAB.Sweep")


@dataclass
class SweepPoint:
    """One point of a parameter grid"""
    index: int
    overrides: Dict[str, Any]

    def to_dict(self) -> Dict[str, Any]:
        """Convert point to dictionary representation"""
        return {"index": self.index, "overrides": dict(self.overrides)}


@dataclass
class SweepResult:
    """Results of a sweep, ordered by grid index"""
    points: List[Dict[str, Any]] = field(default_factory=list)

    def merge(self, other: "SweepResult") -> "SweepResult":
        """Associative merge; duplicate indices keep the first entry"""
        seen = {}
        for entry in self.points + other.points:
            seen.setdefault(entry["index"], entry)
        return SweepResult([seen[index] for index in sorted(seen)])

    @property
    def failed(self) -> List[Dict[str, Any]]:
        return [entry for entry in self.points if not entry.get("success", False)]


def parse_assignment(text: str) -> Dict[str, List[Any]]:
    """Parse ``key=v1,v2`` into a grid axis; numbers stay numbers"""
    if "=" not in text:
        raise UsageError(f"grid assignment '{text}' needs the form key=v1,v2")
    key, _, values = text.partition("=")
    parsed: List[Any] = []
    for raw in values.split(","):
        raw = raw.strip()
        if raw.lower() in ("true", "false"):
            parsed.append(raw.lower() == "true")
            continue
        try:
            parsed.append(int(raw))
        except ValueError:
            try:
                parsed.append(float(raw))
            except ValueError:
                parsed.append(raw)
    if not key.strip() or not parsed:
        raise UsageError(f"grid assignment '{text}' is empty")
    return {key.strip(): parsed}


def expand_grid(grid: Dict[str, List[Any]]) -> List[SweepPoint]:
    """Cartesian product in key order; the last key varies fastest"""
    keys = list(grid)
    for key in keys:
        if not grid[key]:
            raise UsageError(f"grid axis '{key}' has no values")
    return [
        SweepPoint(index, dict(zip(keys, values)))
        for index, values in enumerate(itertools.product(*(grid[key] for key in keys)))
    ]


class SweepManager:
    """Runs grid points concurrently and joins them in grid order"""

    def __init__(self, runner: Callable[[Dict[str, Any]], Dict[str, Any]], config: Dict[str, Any] = None,
                 error_handler: Optional[ErrorHandler] = None):
        """Initialize the sweep manager"""
        self.runner = runner
        self.config = config or {}
        self.max_concurrency = int(self.config.get("max_concurrency", 4))
        self.progress = bool(self.config.get("progress", False))
        self.error_handler = error_handler or ErrorHandler()
        self.sweeps: Dict[str, Dict[str, Any]] = {}
        self.logger = logger
        self.logger.info("Sweep Manager initialized")

    async def create_sweep(self, name: str, grid: Dict[str, List[Any]]) -> str:
        """Create a new sweep"""
        sweep_id = f"sweep_{len(self.sweeps) + 1}"
        points = expand_grid(grid)
        self.sweeps[sweep_id] = {
            "name": name,
            "points": points,
            "status": "created",
            "results": SweepResult(),
        }
        self.logger.info(f"Created sweep: {name} (ID: {sweep_id}, {len(points)} points)")
        return sweep_id

    async def _run_point(self, point: SweepPoint, semaphore: asyncio.Semaphore, bar: Optional[tqdm]) -> Dict[str, Any]:
        async with semaphore:
            try:
                result = await asyncio.to_thread(self.runner, dict(point.overrides))
                entry = {**point.to_dict(), "success": True, "result": result}
            except Exception as e:
                entry = {**point.to_dict(), "success": False,
                         "error": self.error_handler.handle_error(e, context=f"sweep point {point.index}")}
                entry["error"].pop("stack_trace", None)
            if bar is not None:
                bar.update(1)
            return entry

    async def execute_sweep(self, sweep_id: str) -> SweepResult:
        """Execute all points of a sweep"""
        if sweep_id not in self.sweeps:
            raise UsageError(f"Sweep {sweep_id} not found")
        sweep = self.sweeps[sweep_id]
        sweep["status"] = "running"
        semaphore = asyncio.Semaphore(self.max_concurrency)
        bar = tqdm(total=len(sweep["points"]), desc=sweep["name"], disable=not self.progress)
        try:
            entries = await asyncio.gather(*(self._run_point(p, semaphore, bar) for p in sweep["points"]))
        finally:
            bar.close()
        result = SweepResult(sorted(entries, key=lambda entry: entry["index"]))
        sweep["results"] = sweep["results"].merge(result)
        sweep["status"] = "failed" if result.failed else "completed"
        self.logger.info(f"Sweep {sweep['name']} {sweep['status']}: {len(result.points)} points")
        return sweep["results"]

    async def run(self, name: str, grid: Dict[str, List[Any]]) -> SweepResult:
        """Create and execute a sweep in one call"""
        sweep_id = await self.create_sweep(name, grid)
        return await self.execute_sweep(sweep_id)
