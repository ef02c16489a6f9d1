"""Recorders invoked by the simulators at scheduled steps.

A recorder has ``wants(k)`` and ``__call__(k, state)``; step 0 is the
initial state.
"""
from __future__ import annotations

import csv
from typing import Callable, TextIO

import numpy as np


class Recorder:
    def __init__(self, every: int = 1, steps=None):
        self.every = every
        self.steps = None if steps is None else set(steps)

    def wants(self, k: int) -> bool:
        if self.steps is not None:
            return k in self.steps
        return self.every > 0 and k % self.every == 0

    def __call__(self, k, state):
        raise NotImplementedError


class FractionRecorder(Recorder):
    """Collects ``(time, fraction of type)`` pairs."""

    def __init__(self, fraction: Callable, every: int = 1, steps=None):
        super().__init__(every, steps)
        self.fraction = fraction
        self.series: list[tuple[float, float]] = []

    def __call__(self, k, state):
        self.series.append((state.t, self.fraction(state)))


class StateRecorder(Recorder):
    """Keeps a copy of the state at the scheduled steps."""

    def __init__(self, every: int = 1, steps=None):
        super().__init__(every, steps)
        self.states: dict[int, object] = {}

    def __call__(self, k, state):
        self.states[k] = state


class AgentSnapshotWriter(Recorder):
    """Writes rows ``time, agent_id, position, type``."""

    columns = ("time", "agent_id", "position", "type")

    def __init__(self, fh: TextIO, every: int = 1, steps=None):
        super().__init__(every, steps)
        self.writer = csv.writer(fh)
        self.writer.writerow(self.columns)

    def __call__(self, k, state):
        t = f"{state.t:.10g}"
        for i, (x, y) in enumerate(zip(state.positions.tolist(), state.types.tolist())):
            self.writer.writerow((t, i, repr(x), y))


class DensitySnapshotWriter(Recorder):
    """Writes rows ``time, node_x, type, beta``."""

    columns = ("time", "node_x", "type", "beta")

    def __init__(self, fh: TextIO, nodes: np.ndarray, every: int = 1, steps=None):
        super().__init__(every, steps)
        self.nodes = nodes.tolist()
        self.writer = csv.writer(fh)
        self.writer.writerow(self.columns)

    def __call__(self, k, state):
        t = f"{state.t:.10g}"
        for s, row in enumerate(state.beta.tolist(), start=1):
            for x, b in zip(self.nodes, row):
                self.writer.writerow((t, repr(x), s, repr(b)))
