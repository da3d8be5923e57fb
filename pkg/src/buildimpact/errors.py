"""Exception hierarchy shared across the package.

Everything a caller might want to catch derives from BuildDataError so the
CLI can map any data problem onto a single exit status while the library
keeps distinct types for tests and callers that care.
"""

from __future__ import annotations


class BuildDataError(Exception):
    """Base class for invalid graphs, logs, models, or query arguments."""

    def to_dict(self) -> dict:
        return {"type": type(self).__name__, "message": str(self)}


class ParseError(BuildDataError):
    """Malformed graph file, build log, or manifest."""


class CycleError(BuildDataError):
    """The graph contains a dependency cycle.

    ``cycle`` holds one witness: a list of target names where each target
    depends on the previous one and the first depends on the last.
    """

    def __init__(self, cycle: list[str]):
        self.cycle = list(cycle)
        super().__init__(f"dependency cycle: {' -> '.join(self.cycle)} -> {self.cycle[0]}")

    def to_dict(self) -> dict:
        d = super().to_dict()
        d["cycle"] = self.cycle
        return d


class UnknownTargetError(BuildDataError, KeyError):
    """A target name was queried that the graph or model does not know."""

    def __init__(self, target: str, context: str = ""):
        self.target = target
        msg = f"unknown target {target!r}"
        if context:
            msg += f" in {context}"
        BuildDataError.__init__(self, msg)

    def __str__(self) -> str:  # KeyError would repr() the message
        return self.args[0]


class CoherenceError(BuildDataError):
    """A build record claims a cache hit downstream of an executed target."""

    def __init__(self, build_id: str, target: str):
        self.build_id = build_id
        self.target = target
        super().__init__(
            f"build {build_id!r}: target {target!r} is cached but depends on an executed target"
        )


class NoDataError(BuildDataError):
    """A model cannot be built because required samples are missing."""

    def __init__(self, message: str, targets: list[str] | None = None):
        self.targets = sorted(targets) if targets else []
        super().__init__(message)


class EmptyWindowError(BuildDataError):
    """The requested time window contains no builds."""


class InsufficientSampleError(BuildDataError):
    """Too few qualifying builds for a statistical comparison."""

    def __init__(self, past_count: int, future_count: int, minimum: int):
        self.past_count = past_count
        self.future_count = future_count
        self.minimum = minimum
        super().__init__(
            f"need >= {minimum} qualifying builds per side, "
            f"got past={past_count} future={future_count}"
        )
