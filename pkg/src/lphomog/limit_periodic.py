"""Pastur–Tkachenko approximant sequences.

Level n+1 is level n extended to the next period plus a deterministic
pseudo-random bump whose sup-amplitude is ``ε_n``.  Bumps are drawn from
``numpy.random.default_rng([seed, n])`` (PCG64 seeded through SeedSequence),
so a level depends only on ``(seed, n)`` and the schedule, and every
published number can be regenerated bit for bit.

Increments are stored in log form as well: the default amplitudes
``ε_n = exp(-4^{n+1})`` underflow to zero from n = 4 on, and the log keeps
the exact decay visible even when the operators themselves stop changing
in floating point.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import continuum as cont
from .cmv import PeriodicCMV
from .jacobi import PeriodicJacobi, sup_distance

Kind = Literal["continuum", "jacobi", "cmv"]
KINDS = ("continuum", "jacobi", "cmv")

JACOBI_GAMMA = 0.5
CMV_MAX_MODULUS = 0.9


@dataclass(frozen=True)
class Schedule:
    """Integer periods ``p_1 | p_2 | ...`` and log-amplitudes ``log ε_1, log ε_2, ...``.

    Physical periods are ``p_n`` for discrete kinds and ``p_n π`` for the
    continuum.
    """

    periods: tuple[int, ...]
    log_eps: tuple[float, ...]
    name: str = "custom"

    def __post_init__(self):
        if not self.periods:
            raise ValueError("schedule needs at least one level")
        if len(self.log_eps) != len(self.periods) - 1:
            raise ValueError("need one amplitude per level transition")
        for p, q in zip(self.periods, self.periods[1:]):
            if p < 1 or q % p:
                raise ValueError(f"period {p} does not divide {q}")
        if any(b > a for a, b in zip(self.log_eps, self.log_eps[1:])):
            raise ValueError("amplitudes must be nonincreasing")

    @classmethod
    def default(cls, N: int) -> "Schedule":
        """``p_n = 2^n`` and ``ε_n = exp(-4^{n+1})``."""
        return cls(tuple(2 ** n for n in range(1, N + 1)),
                   tuple(-float(4 ** (n + 1)) for n in range(1, N)), "default")

    @classmethod
    def exponential(cls, N: int, rate: float, unit: float = 1.0) -> "Schedule":
        """``ε_n = exp(-rate T_{n+1})``, merely exponential decay."""
        periods = tuple(2 ** n for n in range(1, N + 1))
        return cls(periods, tuple(-rate * unit * periods[n] for n in range(1, N)),
                   f"exp:{rate}")

    @property
    def eps(self) -> tuple[float, ...]:
        return tuple(math.exp(x) for x in self.log_eps)

    def to_dict(self) -> dict:
        return {"name": self.name, "periods": list(self.periods), "log_eps": list(self.log_eps)}

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        if "log_eps" in d:
            log_eps = tuple(float(x) for x in d["log_eps"])
        else:
            log_eps = tuple(math.log(x) if x > 0 else -math.inf for x in d["eps"])
        return cls(tuple(int(p) for p in d["periods"]), log_eps, d.get("name", "custom"))

    @classmethod
    def parse(cls, spec: str, N: int, kind: str = "jacobi") -> "Schedule":
        """``default``, ``exp:<rate>`` or a JSON object with periods/eps."""
        unit = math.pi if kind == "continuum" else 1.0
        if spec == "default":
            return cls.default(N)
        if spec.startswith("exp:"):
            return cls.exponential(N, float(spec[4:]), unit)
        return cls.from_dict(json.loads(spec))


@dataclass
class PTSequence:
    kind: str
    seed: int
    schedule: Schedule
    levels: list
    log_increments: list[float]
    stepanov_increments: list[float] = field(default_factory=list)

    @property
    def N(self) -> int:
        return len(self.levels)

    @property
    def unit(self) -> float:
        return math.pi if self.kind == "continuum" else 1.0

    @property
    def periods(self) -> list[float]:
        """Physical periods T_n."""
        return [p * self.unit for p in self.schedule.periods[: self.N]]

    @property
    def increments(self) -> list[float]:
        """``‖V_n - V_{n+1}‖``: Besicovitch for the continuum, coefficient sup otherwise."""
        return [math.exp(x) for x in self.log_increments]

    def drop_front(self, k: int) -> "PTSequence":
        """Renumbered sequence without its first k levels."""
        sched = Schedule(self.schedule.periods[k:], self.schedule.log_eps[k:],
                         self.schedule.name)
        return PTSequence(self.kind, self.seed, sched, self.levels[k:],
                          self.log_increments[k:], self.stepanov_increments[k:])

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "schedule": self.schedule.to_dict(),
            "levels": [lv.to_dict() for lv in self.levels],
            "log_increments": self.log_increments,
            "stepanov_increments": self.stepanov_increments,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "PTSequence":
        kind = d["kind"]
        parse = {"continuum": cont.PiecewisePotential.from_dict,
                 "jacobi": PeriodicJacobi.from_dict,
                 "cmv": PeriodicCMV.from_dict}[kind]
        return cls(kind, int(d["seed"]), Schedule.from_dict(d["schedule"]),
                   [parse(x) for x in d["levels"]],
                   [float(x) for x in d["log_increments"]],
                   [float(x) for x in d.get("stepanov_increments", [])])

    @classmethod
    def from_json(cls, text: str) -> "PTSequence":
        return cls.from_dict(json.loads(text))


def _lattice(values: np.ndarray) -> cont.PiecewisePotential:
    """Potential with unit pieces of width π; breakpoints are exactly ``k * π``."""
    m = len(values)
    bp = tuple(k * math.pi for k in range(m + 1))
    return cont.PiecewisePotential(bp[-1], bp, tuple(float(v) for v in values))


def lattice_values(V: cont.PiecewisePotential, pieces: int) -> np.ndarray:
    """Re-read V on a lattice of ``pieces`` unit cells (midpoint samples)."""
    mids = (np.arange(pieces) + 0.5) * math.pi
    return np.asarray(V(mids))


def _unit_bump(rng: np.random.Generator, size: int) -> np.ndarray:
    u = rng.uniform(-1.0, 1.0, size=size)
    return u / np.max(np.abs(u))


def generate_pt_sequence(kind: str, seed: int, N: int,
                         schedule: Schedule | None = None) -> PTSequence:
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}")
    if N < 1:
        raise ValueError("need at least one level")
    schedule = schedule or Schedule.default(N)
    if len(schedule.periods) < N:
        raise ValueError(f"schedule has only {len(schedule.periods)} levels")
    periods = schedule.periods
    if kind == "cmv" and any(p % 2 for p in periods[:N]):
        raise ValueError("CMV periods must be even")

    rng = np.random.default_rng([seed, 0])
    p1 = periods[0]
    if kind == "jacobi":
        a = rng.uniform(0.75, 1.25, size=p1)
        b = rng.uniform(-1.0, 1.0, size=p1)
        state = [a, b]
    elif kind == "continuum":
        state = [rng.uniform(-1.0, 1.0, size=p1)]
    else:
        r = rng.uniform(0.1, 0.6, size=p1)
        phase = rng.uniform(0.0, 2 * math.pi, size=p1)
        state = [r, phase]

    levels = [_build(kind, state)]
    log_inc: list[float] = []
    step_inc: list[float] = []
    for n in range(1, N):
        ratio = periods[n] // periods[n - 1]
        rng = np.random.default_rng([seed, n])
        u = _unit_bump(rng, periods[n])
        log_eps = schedule.log_eps[n - 1]
        eps = math.exp(log_eps)
        state = [np.tile(x, ratio) for x in state]
        if kind == "jacobi":
            state[1] = state[1] + eps * u
            log_norm = 0.0  # max|u| = 1
        elif kind == "continuum":
            state[0] = state[0] + eps * u
            log_norm = 0.5 * math.log(float(np.mean(u * u)))
        else:
            r_old = state[0]
            r_new = np.clip(r_old + eps * u, 0.0, CMV_MAX_MODULUS)
            state[0] = r_new
            realized = np.max(np.abs(r_new - r_old))
            # exact log when the bump is representable, schedule value otherwise
            log_norm = math.log(realized / eps) if realized > 0 and eps > 0 else 0.0
        levels.append(_build(kind, state))
        log_inc.append(log_eps + log_norm)
        step_inc.append(eps)
    return PTSequence(kind, seed, schedule, levels, log_inc, step_inc)


def _build(kind: str, state):
    if kind == "jacobi":
        return PeriodicJacobi(tuple(state[0]), tuple(state[1]), gamma=JACOBI_GAMMA)
    if kind == "continuum":
        return _lattice(state[0])
    r, phase = state
    return PeriodicCMV(tuple(r * np.exp(1j * phase)))


def recompute_increments(S: PTSequence) -> list[float]:
    """Increment norms recomputed from the stored levels."""
    out = []
    for A, B in zip(S.levels, S.levels[1:]):
        if S.kind == "continuum":
            k = round(B.T / A.T)
            out.append(cont.besicovitch_distance(A.extended(k), B))
        elif S.kind == "jacobi":
            out.append(sup_distance(A, B).sup)
        else:
            Ae = A.extended(B.p)
            out.append(max(abs(x - y) for x, y in zip(Ae.alpha, B.alpha)))
    return out


@dataclass
class PTReport:
    b_grid: list[float]
    log_values: dict
    passed: dict
    decreasing_from: dict
    note: str = ("finite-sample proxy: the condition quantifies over all b > 0 and "
                 "n -> infinity; only the computed levels are checked")

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def to_dict(self) -> dict:
        return {"b_grid": self.b_grid, "log_values": {str(k): v for k, v in self.log_values.items()},
                "passed": {str(k): v for k, v in self.passed.items()},
                "decreasing_from": {str(k): v for k, v in self.decreasing_from.items()},
                "pass": self.all_passed, "note": self.note}


def check_pt_condition(S: PTSequence, b_grid) -> PTReport:
    """Is ``e^{b T_{n+1}} · Σ_{m>=n} ‖V_m - V_{m+1}‖`` eventually decreasing for each b?

    The tail sum bounds the distance from level n to the last computed
    level.  Works in log space.  For the continuum the Stepanov increments are used,
    as in the definition of the condition.  With fewer than two terms the
    check passes vacuously.
    """
    b_grid = [float(b) for b in b_grid]
    if not b_grid or any(b <= 0 for b in b_grid):
        raise ValueError("b_grid must be nonempty and positive")
    T = S.periods
    if S.kind == "continuum" and S.stepanov_increments:
        logs = [S.schedule.log_eps[n] for n in range(S.N - 1)]
    else:
        logs = list(S.log_increments)
    tail = [_logsumexp(logs[n:]) for n in range(len(logs))]
    vals, ok, start = {}, {}, {}
    for b in b_grid:
        L = [b * T[n + 1] + tail[n] for n in range(len(tail))]
        vals[b] = L
        k = len(L) - 1
        while k > 0 and L[k] <= L[k - 1]:
            k -= 1
        start[b] = k
        ok[b] = len(L) < 2 or k <= len(L) - 2
    return PTReport(b_grid, vals, ok, start)


def _logsumexp(xs: list[float]) -> float:
    m = max(xs)
    if m == -math.inf:
        return m
    return m + math.log(math.fsum(math.exp(x - m) for x in xs))


def tail_sum_terms(S: PTSequence, K: float, weight: float = 6.0) -> list[float]:
    """Log of each term ``T_{n+1}^w e^{K T_{n+1}} ‖V_n - V_{n+1}‖``."""
    T = S.periods
    return [weight * math.log(T[n + 1]) + K * T[n + 1] + S.log_increments[n]
            for n in range(S.N - 1)]


def tail_sum(S: PTSequence, K: float, weight: float = 6.0) -> float:
    if not K > 0:
        raise ValueError("K must be positive")
    total = []
    for x in tail_sum_terms(S, K, weight):
        try:
            total.append(math.exp(x))
        except OverflowError:
            return math.inf
    return math.fsum(total)
