"""Prioritization matrices and their time variation.

A precedence pair ``(m, n)`` (task m before task n) becomes the row
``-delta_m + delta_n / kappa >= 0`` of ``K delta >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from graphlib import CycleError, TopologicalSorter

import numpy as np

from .errors import CyclicOrder, IndexOutOfRange

SEQUENTIAL = "sequential"
ENTRYWISE = "entrywise"
STEP = "step"
BLENDS = (SEQUENTIAL, ENTRYWISE, STEP)


def smoothstep(x):
    """C1 ramp 3x^2 - 2x^3 clipped to [0, 1]; slope at most 3/2."""
    x = min(max(x, 0.0), 1.0)
    return x * x * (3.0 - 2.0 * x)


@dataclass(frozen=True)
class PriorityStack:
    order: tuple = ()
    kappa: float = 10.0
    safety_critical: frozenset = frozenset()

    def __post_init__(self):
        pairs = tuple((int(m), int(n)) for m, n in self.order)
        object.__setattr__(self, "order", pairs)
        object.__setattr__(self, "safety_critical", frozenset(int(i) for i in self.safety_critical))
        if not self.kappa > 1:
            raise ValueError(f"kappa must exceed 1, got {self.kappa}")
        for m, n in pairs:
            if m == n:
                raise CyclicOrder(f"task {m} cannot precede itself")
        graph = {}
        for m, n in pairs:
            graph.setdefault(n, set()).add(m)
        try:
            tuple(TopologicalSorter(graph).static_order())
        except CycleError as exc:
            raise CyclicOrder(f"precedence cycle through tasks {exc.args[1]}") from None

    @classmethod
    def chain(cls, tasks, kappa=10.0, safety_critical=()):
        """``chain([a, b, c])`` means a before b before c."""
        tasks = list(tasks)
        return cls(tuple(zip(tasks, tasks[1:])), kappa, frozenset(safety_critical))

    @property
    def n_pairs(self) -> int:
        return len(self.order)


def stack_to_matrix(stack: PriorityStack, M: int) -> np.ndarray:
    """``N_p x M`` prioritization matrix; pairs touching safety-critical tasks are dropped."""
    rows = []
    seen = set()
    for m, n in stack.order:
        for i in (m, n):
            if not 0 <= i < M:
                raise IndexOutOfRange(f"task index {i} outside 0..{M - 1}")
        if m in stack.safety_critical or n in stack.safety_critical or (m, n) in seen:
            continue
        seen.add((m, n))
        row = np.zeros(M)
        row[m] = -1.0
        row[n] = 1.0 / stack.kappa
        rows.append(row)
    if len(rows) > M * M:
        raise ValueError("more prioritization rows than M^2")
    return np.array(rows).reshape(len(rows), M)


@dataclass(frozen=True)
class Ramp:
    """Insertion (0 -> 1 from ``time``) or removal (1 -> 0, reaching 0 at ``time``)."""

    task: int
    time: float
    duration: float = 1.0
    kind: str = "insert"

    def __post_init__(self):
        if self.kind not in ("insert", "remove"):
            raise ValueError(f"unknown ramp kind {self.kind!r}")
        if not self.duration > 0:
            raise ValueError("ramp duration must be positive")

    def __call__(self, t) -> float:
        if self.kind == "insert":
            return smoothstep((t - self.time) / self.duration)
        return 1.0 - smoothstep((t - (self.time - self.duration)) / self.duration)


def _pairs(stack: PriorityStack, M: int) -> dict:
    """Precedence pairs kept in K, mapped to their kappa."""
    K = stack_to_matrix(stack, M)
    return {(int(np.argmin(row)), int(np.argmax(row))): stack.kappa for row in K}


def _rows(pairs, M, neg_scale=None) -> np.ndarray:
    """Rows ``[-c at m, 1/kappa at n]``; ``neg_scale[pair]`` sets c (default 1)."""
    K = np.zeros((len(pairs), M))
    for r, ((m, n), kappa) in enumerate(pairs.items()):
        K[r, m] = -(1.0 if neg_scale is None else neg_scale)
        K[r, n] = 1.0 / kappa
    return K


@dataclass(frozen=True)
class PrioritySchedule:
    """Piecewise-constant stacks joined by transitions of length ``transition``.

    ``segments[i] = (start_i, stack_i)``. Blend modes on ``[start_i, start_i + transition]``:

    - ``sequential``: pairs only in the old stack are relaxed (their -1 entry
      fades to 0 over the first half), then pairs only in the new stack are
      tightened (their -1 entry fades in over the second half); shared pairs
      stay. Both fades use smoothstep. At every instant the binding rows come
      from one acyclic stack, so some slack vector with ``K delta > 0`` exists.
    - ``entrywise``: ``(1 - s) K_old + s K_new`` row by row, ``s`` smoothstep,
      matrices padded with zero rows to equal height. Rows can pass through
      all-negative values, which forces the slacks involved to zero.
    - ``step``: instant switch at ``start_i`` (discontinuous baseline).
    """

    segments: tuple
    n_tasks: int
    transition: float = 1.0
    blend: str = SEQUENTIAL
    ramps: tuple = ()
    _matrices: tuple = field(default=(), repr=False, compare=False)
    _pairs: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        segs = tuple((float(t0), s) for t0, s in self.segments)
        if not segs:
            segs = ((0.0, PriorityStack()),)
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "ramps", tuple(self.ramps))
        starts = [t0 for t0, _ in segs]
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment start times must be strictly increasing")
        if not self.transition > 0:
            raise ValueError("transition window must be positive")
        if self.blend not in BLENDS:
            raise ValueError(f"unknown blend {self.blend!r}")
        if self.blend != STEP and any(b - a < self.transition for a, b in zip(starts[1:], starts[2:])):
            raise ValueError("transition windows overlap")
        for r in self.ramps:
            if not 0 <= r.task < self.n_tasks:
                raise IndexOutOfRange(f"ramp references task {r.task}")
        mats = [stack_to_matrix(s, self.n_tasks) for _, s in segs]
        rows = max(k.shape[0] for k in mats)
        padded = tuple(np.vstack([k, np.zeros((rows - k.shape[0], self.n_tasks))]) for k in mats)
        object.__setattr__(self, "_matrices", padded)
        object.__setattr__(self, "_pairs", tuple(_pairs(s, self.n_tasks) for _, s in segs))

    @property
    def kappa(self):
        return self.segments[0][1].kappa

    def _segment(self, t) -> int:
        return max(0, int(np.searchsorted([t0 for t0, _ in self.segments], t, side="right")) - 1)

    def stack_at(self, t) -> PriorityStack:
        return self.segments[self._segment(t)][1]

    def in_transition(self, t) -> bool:
        i = self._segment(t)
        return i > 0 and self.blend != STEP and t < self.segments[i][0] + self.transition

    def blended(self, t) -> np.ndarray:
        """Stack matrix at time ``t`` without insertion weighting."""
        i = self._segment(t)
        if not self.in_transition(t):
            return _rows(self._pairs[i], self.n_tasks) if self.blend != ENTRYWISE else self._matrices[i].copy()
        x = (t - self.segments[i][0]) / self.transition
        if self.blend == ENTRYWISE:
            s = smoothstep(x)
            return (1.0 - s) * self._matrices[i - 1] + s * self._matrices[i]
        old, new = self._pairs[i - 1], self._pairs[i]
        relax = 1.0 - smoothstep(2.0 * x)
        tighten = smoothstep(2.0 * x - 1.0)
        shared = {pair: new[pair] for pair in new if pair in old}
        blocks = [
            _rows(shared, self.n_tasks),
            _rows({k: v for k, v in old.items() if k not in new}, self.n_tasks, relax),
            _rows({k: v for k, v in new.items() if k not in old}, self.n_tasks, tighten),
        ]
        # a shared pair whose kappa changes blends its 1/kappa entry
        for r, pair in enumerate(shared):
            if old[pair] != new[pair]:
                s = smoothstep(x)
                blocks[0][r, pair[1]] = (1.0 - s) / old[pair] + s / new[pair]
        return np.vstack(blocks)

    def gains(self, t) -> np.ndarray:
        rho = np.ones(self.n_tasks)
        for r in self.ramps:
            rho[r.task] *= r(t)
        return rho


def insertion_gain(sched: PrioritySchedule, task: int, t) -> float:
    rho = 1.0
    for r in sched.ramps:
        if r.task == task:
            rho *= r(t)
    return rho


def schedule_matrix(sched: PrioritySchedule, t) -> np.ndarray:
    """K(t): blended stack matrix with insertion/removal weighting.

    In each row the coefficient of task j is multiplied by the gains of the
    other tasks in that row. A pair whose partner is still ramping in thus
    fades in with it instead of forcing slacks to zero, and K(t) stays
    Lipschitz whenever the gains are.
    """
    K = sched.blended(t)
    if not sched.ramps or K.shape[0] == 0:
        return K
    rho = sched.gains(t)
    if np.all(rho == 1.0):
        return K
    nz = K != 0.0
    for r in range(K.shape[0]):
        cols = np.flatnonzero(nz[r])
        for j in cols:
            others = cols[cols != j]
            K[r, j] *= np.prod(rho[others])
    return K
