"""Focus-of-attention scheduling of bound refinements across hypotheses.

The scheduler keeps the set of hypotheses whose upper bound still reaches
``gamma``, the best lower bound seen so far.  Each cycle it refines the
hypothesis with the largest predicted reduction of the potential
``sum_active (upper - gamma)``, then discards everything whose upper bound
fell below ``gamma``.  It stops when one hypothesis beats all others, when all
survivors are fully refined, or when the cycle budget runs out.

Bounders are duck-typed: anything with integer ``lower``/``upper``,
``fully_refined``, ``bound_pairs``, ``hyp_id`` and ``refine_once()`` works.
"""

from __future__ import annotations

import heapq
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import InvalidConfigurationError, InvalidInputError

log = logging.getLogger(__name__)

UNIQUE = "unique_optimum"
INDISTINGUISHABLE = "indistinguishable_set"
BUDGET = "budget_exhausted"

STRATEGIES = ("potential_reduction", "max_upper")


@dataclass
class FoamConfig:
    alpha: float = 0.9
    beta: float = 0.25
    rho: float = 1.2
    max_cycles: Optional[int] = None
    strategy: str = "potential_reduction"
    parallel: int = 1
    record_trace: bool = False

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.beta < 1:
            raise InvalidConfigurationError(f"beta must lie in (0, 1), got {self.beta}")
        if not self.rho > 1:
            raise InvalidConfigurationError(f"rho must exceed 1, got {self.rho}")
        if self.strategy not in STRATEGIES:
            raise InvalidConfigurationError(f"unknown strategy {self.strategy!r}; pick one of {STRATEGIES}")
        if self.max_cycles is not None and self.max_cycles < 0:
            raise InvalidConfigurationError("max_cycles must be >= 0")
        if self.parallel < 1:
            raise InvalidConfigurationError("parallel must be >= 1")


@dataclass
class FoamEntry:
    hypothesis_id: object
    bounds: object
    margin_pred: float = 0.0
    key: float = 0.0
    version: int = 0
    cycles: int = 0


@dataclass
class FoamResult:
    solutions: list
    bounds: dict  # id -> (lower, upper) in log-odds units
    gamma: float
    status: str
    cycles: dict
    total_bound_pairs: int
    n_hypotheses: int
    n_cycles: int
    discards: list = field(default_factory=list)  # (cycle, id) in order
    trace: list = field(default_factory=list)

    @property
    def tau(self) -> float:
        return self.total_bound_pairs / self.n_hypotheses

    def write_trace(self, path) -> None:
        with open(path, "w") as fh:
            for ev in self.trace:
                fh.write(json.dumps(ev) + "\n")


def predict_margin_reduction(entry: FoamEntry, observed: float, alpha: float = 0.9) -> float:
    """EWMA update of the predicted margin reduction from an observed one."""
    if observed < 0:
        raise InvalidInputError(f"observed margin reduction must be >= 0, got {observed}")
    entry.margin_pred = alpha * entry.margin_pred + (1.0 - alpha) * observed
    return entry.margin_pred


def expected_potential_reduction(entry: FoamEntry, gamma, active_count: int) -> float:
    half = entry.margin_pred / 2.0
    dgamma = max(entry.bounds.lower + half - gamma, 0)
    if dgamma > 0:
        return half + active_count * dgamma
    return half


class _Scheduler:
    def __init__(self, bounders, config: FoamConfig, observer: Optional[Callable]):
        self.cfg = config
        self.observer = observer
        self.entries = {}
        self.order = []
        for b in bounders:
            if b.hyp_id in self.entries:
                raise InvalidInputError(f"duplicate hypothesis id {b.hyp_id!r}")
            self.entries[b.hyp_id] = FoamEntry(b.hyp_id, b)
            self.order.append(b.hyp_id)
        self.tick = getattr(bounders[0], "tick", 1.0)
        self.gamma = max(b.lower for b in bounders)
        self.active = set()
        self.pending = []  # max-heap on key
        self.uppers = []  # min-heap on upper, for discards
        self.cycle = 0
        self.open = 0  # active hypotheses that can still be refined
        self.discards = []
        self.trace = []

    # -- bookkeeping
    def _event(self, kind, e: FoamEntry):
        if self.cfg.record_trace:
            b = e.bounds
            self.trace.append(
                {
                    "cycle": self.cycle,
                    "hypothesis_id": e.hypothesis_id,
                    "lower": b.lower * self.tick,
                    "upper": b.upper * self.tick,
                    "gamma": self.gamma * self.tick,
                    "active_count": len(self.active),
                    "event": kind,
                }
            )

    def _key(self, e: FoamEntry) -> float:
        if self.cfg.strategy == "max_upper":
            return float(e.bounds.upper)
        return expected_potential_reduction(e, self.gamma, len(self.active))

    def _push(self, e: FoamEntry):
        e.version += 1
        heapq.heappush(self.uppers, (e.bounds.upper, e.hypothesis_id, e.version))
        if not e.bounds.fully_refined:
            e.key = self._key(e)
            heapq.heappush(self.pending, (-e.key, e.hypothesis_id, e.version))

    def _discard(self, e: FoamEntry):
        self.active.discard(e.hypothesis_id)
        if not e.bounds.fully_refined:
            self.open -= 1
        self.discards.append((self.cycle, e.hypothesis_id))
        self._event("discard", e)

    def _sweep(self):
        while self.uppers and self.uppers[0][0] < self.gamma:
            _, hid, ver = heapq.heappop(self.uppers)
            e = self.entries[hid]
            if ver == e.version and hid in self.active:
                self._discard(e)

    def potential(self) -> int:
        return sum(self.entries[h].bounds.upper - self.gamma for h in self.active)

    def _pop(self):
        while self.pending:
            _, hid, ver = heapq.heappop(self.pending)
            e = self.entries[hid]
            if ver != e.version or hid not in self.active:
                continue
            if e.bounds.upper < self.gamma:
                self._discard(e)
                continue
            return e
        return None

    def _done(self):
        if len(self.active) == 1:
            return UNIQUE
        if self.open == 0:
            return INDISTINGUISHABLE
        if self.cfg.max_cycles is not None and self.cycle >= self.cfg.max_cycles:
            return BUDGET
        return None

    # -- phases
    def initialise(self):
        for hid in self.order:
            e = self.entries[hid]
            b = e.bounds
            e.margin_pred = self.cfg.beta * (b.upper - b.lower)
            if b.upper >= self.gamma:
                self.active.add(hid)
                self.open += not b.fully_refined
            else:
                self.discards.append((0, hid))
                self._event("discard", e)
        for hid in self.order:
            e = self.entries[hid]
            if hid in self.active:
                self._push(e)
                self._event("init", e)
        if self.observer:
            self.observer(self)

    def _absorb(self, e: FoamEntry, margin_before: int):
        b = e.bounds
        e.cycles += 1
        if b.fully_refined:
            self.open -= 1
        predict_margin_reduction(e, max(margin_before - (b.upper - b.lower), 0), self.cfg.alpha)
        if b.lower > self.gamma:
            self.gamma = b.lower
        self._push(e)
        self._event("refine", e)

    def step(self) -> bool:
        """One selection-refinement cycle (k of them in parallel mode)."""
        k = self.cfg.parallel
        batch = []
        while len(batch) < k:
            e = self._pop()
            if e is None:
                break
            if e.bounds.fully_refined:
                continue
            batch.append(e)
        if not batch:
            return False
        margins = [e.bounds.upper - e.bounds.lower for e in batch]
        if len(batch) == 1:
            batch[0].bounds.refine_once()
        else:
            with ThreadPoolExecutor(max_workers=len(batch)) as pool:
                list(pool.map(lambda e: e.bounds.refine_once(), batch))
        self.cycle += 1
        for e, m0 in zip(batch, margins):
            self._absorb(e, m0)
        self._sweep()
        if self.observer:
            self.observer(self)
        return True

    def result(self, status) -> FoamResult:
        sol = [h for h in self.order if h in self.active]
        return FoamResult(
            solutions=sol,
            bounds={h: (self.entries[h].bounds.lower * self.tick, self.entries[h].bounds.upper * self.tick) for h in sol},
            gamma=self.gamma * self.tick,
            status=status,
            cycles={h: self.entries[h].cycles for h in self.order},
            total_bound_pairs=sum(self.entries[h].bounds.bound_pairs for h in self.order),
            n_hypotheses=len(self.order),
            n_cycles=self.cycle,
            discards=self.discards,
            trace=self.trace,
        )


def run(bounders, config: Optional[FoamConfig] = None, observer: Optional[Callable] = None) -> FoamResult:
    """Refine until a unique optimum, an indistinguishable set, or the budget.

    ``bounders`` must already hold their initial bounds.  ``observer`` is
    called with the scheduler state after initialisation and every cycle.
    """
    bounders = list(bounders)
    if not bounders:
        raise InvalidInputError("no hypotheses to schedule")
    cfg = config or FoamConfig()
    s = _Scheduler(bounders, cfg, observer)
    s.initialise()
    while True:
        status = s._done()
        if status is not None:
            break
        if not s.step():
            status = UNIQUE if len(s.active) == 1 else INDISTINGUISHABLE
            break
    log.debug("foam finished: %s after %d cycles, %d survivors", status, s.cycle, len(s.active))
    return s.result(status)
