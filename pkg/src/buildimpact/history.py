"""Build-history ingestion and the statistics learned from it.

Per-build logs record how long every target took and whether it came from
cache.  From a window of those logs we derive the three things the
predictor needs: a per-target duration statistic (the time proxy), the
probability that each target executes rather than hits cache, and the
most frequent realized critical paths.
"""

from __future__ import annotations

import json
import statistics
from collections import Counter, deque
from collections.abc import Mapping as MappingABC
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from .errors import (
    BuildDataError,
    CoherenceError,
    EmptyWindowError,
    NoDataError,
    ParseError,
    UnknownTargetError,
)
from .graph import Chain, DependencyGraph, load_graph, save_graph

STAT_KINDS = ("median", "mean", "p90")


def parse_timestamp(value: str) -> datetime:
    """Parse an RFC 3339 timestamp; naive values are taken as UTC."""
    try:
        ts = datetime.fromisoformat(value.replace("Z", "+00:00"))
    except (ValueError, AttributeError):
        raise ParseError(f"invalid timestamp: {value!r}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat()


@dataclass(frozen=True)
class Window:
    """Half-open time span [start, end); None means unbounded on that side."""

    start: datetime | None = None
    end: datetime | None = None

    def contains(self, ts: datetime) -> bool:
        if self.start is not None and ts < self.start:
            return False
        if self.end is not None and ts >= self.end:
            return False
        return True

    @classmethod
    def trailing(cls, anchor: datetime, days: float) -> "Window":
        """Window reaching *days* back from *anchor* (inclusive upwards)."""
        return cls(start=anchor - timedelta(days=days), end=None)


@dataclass(frozen=True)
class TargetExecution:
    """One target's outcome within one build."""

    target: str
    duration_ms: float
    cached: bool

    def __post_init__(self) -> None:
        if self.duration_ms < 0:
            raise ValueError(f"negative duration for {self.target!r}")


@dataclass(frozen=True)
class BuildRecord:
    """One historical build: per-target durations and cached flags."""

    build_id: str
    timestamp: datetime
    graph_ref: str
    executions: tuple[TargetExecution, ...]

    def executed_targets(self) -> frozenset[str]:
        return frozenset(e.target for e in self.executions if not e.cached)

    def duration_map(self) -> dict[str, float]:
        return {e.target: e.duration_ms for e in self.executions}

    def to_dict(self) -> dict:
        return {
            "build_id": self.build_id,
            "timestamp": format_timestamp(self.timestamp),
            "graph_ref": self.graph_ref,
            "targets": [
                {"name": e.target, "duration_ms": e.duration_ms, "cached": e.cached}
                for e in self.executions
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "BuildRecord":
        try:
            executions = tuple(
                TargetExecution(t["name"], t["duration_ms"], bool(t["cached"]))
                for t in d["targets"]
            )
            return cls(
                build_id=str(d["build_id"]),
                timestamp=parse_timestamp(d["timestamp"]),
                graph_ref=str(d["graph_ref"]),
                executions=executions,
            )
        except (KeyError, TypeError) as exc:
            raise ParseError(f"build record missing or malformed key: {exc}") from None
        except ValueError as exc:
            raise ParseError(str(exc)) from None


def validate_record(record: BuildRecord, g: DependencyGraph) -> None:
    """Check a record against its graph: full coverage and cache coherence.

    Coherence means the executed (non-cached) set is closed downstream: a
    target whose prerequisite executed cannot itself have been a cache hit.
    """
    names = [e.target for e in record.executions]
    if len(names) != len(set(names)):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise BuildDataError(f"build {record.build_id!r}: duplicate target entries: {dupes}")
    if set(names) != g.targets:
        missing = sorted(g.targets - set(names))
        extra = sorted(set(names) - g.targets)
        raise BuildDataError(
            f"build {record.build_id!r}: executions do not match graph targets "
            f"(missing={missing}, extra={extra})"
        )
    executed = record.executed_targets()
    for t in sorted(executed):
        for dep in g.dependents_of(t):
            if dep not in executed:
                raise CoherenceError(record.build_id, dep)


@dataclass(frozen=True)
class History:
    """Time-ordered build records plus the graph snapshots they reference."""

    records: tuple[BuildRecord, ...]
    graphs: Mapping[str, DependencyGraph]

    def __post_init__(self) -> None:
        seen_ids: set[str] = set()
        prev_ts: datetime | None = None
        for r in self.records:
            if r.build_id in seen_ids:
                raise BuildDataError(f"duplicate build_id {r.build_id!r}")
            seen_ids.add(r.build_id)
            if prev_ts is not None and r.timestamp < prev_ts:
                raise BuildDataError(
                    f"records out of order: build {r.build_id!r} precedes its predecessor"
                )
            prev_ts = r.timestamp
            if r.graph_ref not in self.graphs:
                raise BuildDataError(
                    f"build {r.build_id!r} references unknown graph {r.graph_ref!r}"
                )
            validate_record(r, self.graphs[r.graph_ref])

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[BuildRecord]:
        return iter(self.records)

    def graph_of(self, record: BuildRecord) -> DependencyGraph:
        return self.graphs[record.graph_ref]

    def in_window(self, window: Window | None) -> tuple[BuildRecord, ...]:
        if window is None:
            return self.records
        return tuple(r for r in self.records if window.contains(r.timestamp))

    def truncated(self, count: int) -> "History":
        """The first *count* records, as their own history (no lookahead)."""
        return History(self.records[:count], self.graphs)

    def index_of(self, build_id: str) -> int:
        for i, r in enumerate(self.records):
            if r.build_id == build_id:
                return i
        raise BuildDataError(f"no build with id {build_id!r}")


# -- duration statistics --------------------------------------------------------


@dataclass(frozen=True)
class TimeModel(MappingABC):
    """Per-target duration statistic; the proxy for chain execution time.

    Behaves as a read-only mapping from target name to milliseconds;
    lookups for unknown targets raise rather than default.
    """

    durations: Mapping[str, float]
    stat: str = "median"
    window: Window | None = None

    def __getitem__(self, target: str) -> float:
        try:
            return self.durations[target]
        except KeyError:
            raise UnknownTargetError(target, "time model") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self.durations)

    def __len__(self) -> int:
        return len(self.durations)

    def scaled(self, factor: float) -> "TimeModel":
        return TimeModel(
            {t: d * factor for t, d in self.durations.items()}, self.stat, self.window
        )


def build_time_model(
    h: History, window: Window | None = None, stat: str = "median"
) -> TimeModel:
    """Aggregate non-cached durations per target over the window.

    Every target appearing in the window must have executed at least once
    there; otherwise there is no basis for a duration statistic and a
    NoDataError lists the offenders.
    """
    if stat not in STAT_KINDS:
        raise ValueError(f"stat must be one of {STAT_KINDS}, got {stat!r}")
    records = h.in_window(window)
    if not records:
        raise EmptyWindowError("no builds in window")
    samples: dict[str, list[float]] = {}
    universe: set[str] = set()
    for r in records:
        for e in r.executions:
            universe.add(e.target)
            if not e.cached:
                samples.setdefault(e.target, []).append(e.duration_ms)
    missing = universe - samples.keys()
    if missing:
        raise NoDataError(
            f"no non-cached samples in window for {len(missing)} target(s): "
            f"{', '.join(sorted(missing)[:8])}",
            targets=sorted(missing),
        )
    return TimeModel({t: _statistic(v, stat) for t, v in samples.items()}, stat, window)


def _statistic(values: list[float], stat: str) -> float:
    if stat == "median":
        return float(statistics.median(values))
    if stat == "mean":
        return float(statistics.fmean(values))
    return float(np.percentile(values, 90))


def time_of_chain(tm: Mapping[str, float], chain: Chain) -> float:
    """Summed statistic along a chain; the empty chain takes zero time."""
    total = 0.0
    for t in chain:
        try:
            total += tm[t]
        except KeyError:
            raise UnknownTargetError(t, "time model") from None
    return total


# -- cache statistics -------------------------------------------------------------


@dataclass(frozen=True)
class CacheModel(MappingABC):
    """Per-target probability of executing rather than hitting cache.

    Mapping access returns b(t); c(t) = 1 - b(t).  Targets known to the
    history's graphs but absent from every build in the window carry no
    estimate and are listed in ``warnings``.
    """

    probabilities: Mapping[str, float]
    sample_counts: Mapping[str, int]
    warnings: frozenset[str] = frozenset()
    window: Window | None = None

    def b(self, target: str) -> float:
        try:
            return self.probabilities[target]
        except KeyError:
            raise UnknownTargetError(target, "cache model") from None

    def c(self, target: str) -> float:
        return 1.0 - self.b(target)

    __getitem__ = b

    def __iter__(self) -> Iterator[str]:
        return iter(self.probabilities)

    def __len__(self) -> int:
        return len(self.probabilities)


def build_cache_model(h: History, window: Window | None = None) -> CacheModel:
    """Estimate b(t) as executed-build count over builds containing t."""
    records = h.in_window(window)
    if not records:
        raise EmptyWindowError("no builds in window")
    containing: Counter[str] = Counter()
    executed: Counter[str] = Counter()
    for r in records:
        for e in r.executions:
            containing[e.target] += 1
            if not e.cached:
                executed[e.target] += 1
    probabilities = {t: executed[t] / containing[t] for t in containing}
    all_known = set().union(*(g.targets for g in h.graphs.values())) if h.graphs else set()
    return CacheModel(
        probabilities=probabilities,
        sample_counts=dict(containing),
        warnings=frozenset(all_known - containing.keys()),
        window=window,
    )


# -- realized critical paths -------------------------------------------------------


def realized_result(record: BuildRecord, g: DependencyGraph) -> tuple[float, Chain]:
    """Makespan and critical path this build actually experienced.

    Heaviest path through the graph under the recorded durations, where a
    cache hit contributes its retrieval cost.  Zero-cost cached prefixes
    drop out, so with free cache hits the chain covers executed targets
    only; a fully cached build yields the empty chain.
    """
    validate_record(record, g)
    return _heaviest_path(g, record.duration_map())


def realized_lcp(record: BuildRecord, g: DependencyGraph) -> Chain:
    """The critical path this build actually experienced."""
    return realized_result(record, g)[1]


def realized_makespan(record: BuildRecord, g: DependencyGraph) -> float:
    """Wall-clock duration of this build under unbounded parallelism."""
    return realized_result(record, g)[0]


def _heaviest_path(g: DependencyGraph, costs: Mapping[str, float]) -> tuple[float, Chain]:
    """Longest path by summed cost; ties at every step go to the smaller name.

    Backtracking stops once the remaining upstream contribution is zero,
    which is what strips fully cached (zero-cost) prefixes.
    """
    dist: dict[str, float] = {}
    choice: dict[str, str | None] = {}
    for t in _topo(g):
        preds = g.dependencies_of(t)
        best = max((dist[p] for p in preds), default=0.0)
        if preds and best > 0:
            choice[t] = min(p for p in preds if dist[p] == best)
        else:
            choice[t] = None
        dist[t] = best + costs[t]
    if not dist:
        return 0.0, ()
    makespan = max(dist.values())
    if makespan <= 0:
        return 0.0, ()
    end = min(t for t in dist if dist[t] == makespan)
    chain = [end]
    while choice[chain[-1]] is not None:
        chain.append(choice[chain[-1]])  # type: ignore[arg-type]
    chain.reverse()
    return makespan, tuple(chain)


def _topo(g: DependencyGraph) -> list[str]:
    order: list[str] = []
    indeg = {t: len(g.dependencies_of(t)) for t in g.targets}
    ready = sorted(t for t in g.targets if indeg[t] == 0)
    from collections import deque

    queue = deque(ready)
    while queue:
        t = queue.popleft()
        order.append(t)
        for d in g.dependents_of(t):
            indeg[d] -= 1
            if indeg[d] == 0:
                queue.append(d)
    return order


@dataclass(frozen=True)
class LcpProfile:
    """One distinct realized critical path with its observed frequency."""

    lcp: Chain
    frequency: int
    share: float

    def to_dict(self) -> dict:
        return {"lcp": list(self.lcp), "frequency": self.frequency, "share": self.share}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LcpProfile":
        return cls(lcp=tuple(d["lcp"]), frequency=d["frequency"], share=d["share"])


def mine_top_lcps(h: History, k: int, window: Window | None = None) -> list[LcpProfile]:
    """The k most frequent realized critical paths in the window.

    Profiles are ranked by frequency, then lexicographically by target
    names; each share is relative to every build in the window, so the sum
    of returned shares is the coverage of the top-k paths.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    records = h.in_window(window)
    if not records:
        raise EmptyWindowError("no builds in window")
    counts: Counter[Chain] = Counter()
    for r in records:
        counts[realized_lcp(r, h.graph_of(r))] += 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    total = len(records)
    return [LcpProfile(lcp, n, n / total) for lcp, n in ranked[:k]]


def lcp_coverage(profiles: Iterable[LcpProfile]) -> float:
    return sum(p.share for p in profiles)


# -- on-disk format ---------------------------------------------------------------


def ingest_history(source: str | Path) -> History:
    """Load a history directory: build logs plus referenced graph snapshots.

    Build files are JSON objects with a "build_id" key; a manifest.json
    with a "builds" list pins the file set explicitly.  Graph snapshots are
    resolved relative to the directory via each record's graph_ref.
    """
    root = Path(source)
    if not root.is_dir():
        raise ParseError(f"history directory not found: {root}")
    manifest = root / "manifest.json"
    if manifest.is_file():
        try:
            listed = json.loads(manifest.read_text(encoding="utf-8"))["builds"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"bad manifest.json: {exc}") from None
        build_files = [root / name for name in listed]
    else:
        build_files = []
        for path in sorted(root.glob("*.json")):
            try:
                data = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path.name}: invalid JSON: {exc}") from None
            if isinstance(data, dict) and "build_id" in data:
                build_files.append(path)

    records = []
    for path in build_files:
        if not path.is_file():
            raise ParseError(f"build file listed but missing: {path.name}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path.name}: invalid JSON: {exc}") from None
        records.append(BuildRecord.from_dict(data))
    records.sort(key=lambda r: (r.timestamp, r.build_id))

    graphs: dict[str, DependencyGraph] = {}
    for r in records:
        if r.graph_ref not in graphs:
            snapshot = root / r.graph_ref
            if not snapshot.is_file():
                raise ParseError(
                    f"build {r.build_id!r}: graph snapshot {r.graph_ref!r} not found"
                )
            graphs[r.graph_ref] = load_graph(snapshot)
    return History(tuple(records), graphs)


def write_history(h: History, directory: str | Path) -> None:
    """Write a history directory readable by ingest_history."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    for ref, g in sorted(h.graphs.items()):
        target = root / ref
        target.parent.mkdir(parents=True, exist_ok=True)
        save_graph(g, target)
    names = []
    for r in h.records:
        name = f"{r.build_id}.json"
        (root / name).write_text(
            json.dumps(r.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        names.append(name)
    (root / "manifest.json").write_text(
        json.dumps({"builds": names}, indent=2) + "\n", encoding="utf-8"
    )
