from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

METHODS = ("HIO", "ER")


class RetrievalError(RuntimeError):
    """A retrieval could not run on the given data."""


class DivergenceError(RetrievalError):
    """An iterative method produced a non-finite objective.

    ``result`` holds the last finite iterate.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


def parse_schedule(text):
    """Parse ``"45xHIO,5xER"`` into ``[("HIO", 45), ("ER", 5)]``."""
    steps = []
    for part in re.split(r"[,\s]+", text.strip()):
        if not part:
            continue
        m = re.fullmatch(r"(\d+)\s*[x*]\s*([A-Za-z]+)", part)
        if m is None:
            raise ValueError(f"bad schedule entry {part!r}, expected e.g. '45xHIO'")
        n, method = int(m.group(1)), m.group(2).upper()
        if method not in METHODS:
            raise ValueError(f"unknown iteration type {method!r}; use HIO or ER")
        if n < 1:
            raise ValueError(f"iteration count must be positive in {part!r}")
        steps.append((method, n))
    if not steps:
        raise ValueError("empty schedule")
    return steps


def format_schedule(schedule):
    return ",".join(f"{n}x{m}" for m, n in schedule)


@dataclass
class RetrievalParams:
    """Parameters shared by the retrieval algorithms.

    ``alpha`` is the Tikhonov term added to every spectral denominator. When
    ``alpha_high`` is given, ``alpha`` applies below ``crossover`` (cycles/m)
    and ``alpha_high`` above; the crossover defaults to the first zero of
    ``sin(chi)`` for the shortest distance.

    ``hio_beta`` is the HIO feedback constant, unrelated to the absorption
    index.
    """

    alpha: float = 1e-8
    alpha_high: float | None = None
    crossover: float | None = None
    delta_beta: float | None = None
    beta: float | None = None
    pad: int | str = 0
    max_iter: int = 20
    step: float = 0.05
    step_rule: str = "backtracking"
    armijo: float = 1e-4
    pure_phase: bool = False
    hio_beta: float = 0.9
    schedule: list = field(default_factory=lambda: [("HIO", 45), ("ER", 5)])
    cycles: int = 5
    averaging: str = "sequential"
    phase_max: float = math.pi
    max_amplitude: float = 1.0
    support: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.schedule, str):
            self.schedule = parse_schedule(self.schedule)
        if self.alpha < 0 or (self.alpha_high is not None and self.alpha_high < 0):
            raise ValueError("alpha must be >= 0")
        if self.delta_beta is not None and not self.delta_beta > 0:
            raise ValueError("delta_beta must be > 0")
        if not 0 < self.hio_beta <= 1:
            raise ValueError("hio_beta must lie in (0, 1]")
        if self.step_rule not in ("fixed", "backtracking"):
            raise ValueError(f"step_rule must be 'fixed' or 'backtracking', got {self.step_rule!r}")
        if self.averaging not in ("sequential", "restarts"):
            raise ValueError("averaging must be 'sequential' or 'restarts'")
        if self.max_iter < 0 or self.cycles < 1:
            raise ValueError("max_iter must be >= 0 and cycles >= 1")
        if not self.phase_max > 0:
            raise ValueError("phase_max must be positive")


@dataclass
class RetrievalResult:
    phi: np.ndarray
    b: np.ndarray | None = None
    thickness: np.ndarray | None = None
    residual_history: list = field(default_factory=list)
    info: dict = field(default_factory=dict)
