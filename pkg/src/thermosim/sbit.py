"""Continuous-time Markov chain sampling for single and coupled s-bits.

States live in {0,1}^N.  Each allowed transition carries its own
time-dependent rate schedule; event times are sampled by thinning against a
per-segment rate bound (Lewis/Ogata), with competing clocks for coupled
systems.  Small systems (N <= 12) also get an exact matrix-exponential
oracle for the transient distribution.
"""

from __future__ import annotations

import csv
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .core_sde import trajectory_rng
from .errors import ContractViolationError

MAX_DENSE_BITS = 12


@dataclass(frozen=True)
class _Segment:
    t_start: float
    t_end: float
    kind: str  # "const" | "linear"
    v0: float
    v1: float

    def value(self, t: float) -> float:
        if self.kind == "const":
            return self.v0
        w = (t - self.t_start) / (self.t_end - self.t_start)
        return (1 - w) * self.v0 + w * self.v1

    @property
    def bound(self) -> float:
        return max(self.v0, self.v1)


class RateSchedule:
    """Nonnegative rate function given piecewise (constant or linear)."""

    def __init__(self, segments):
        segments = list(segments)
        if not segments:
            raise ContractViolationError("rate schedule needs at least one segment")
        for seg in segments:
            if seg.t_end <= seg.t_start:
                raise ContractViolationError("rate segment needs t_start < t_end")
            if seg.v0 < 0 or seg.v1 < 0:
                raise ContractViolationError("rates must be nonnegative")
        for prev, cur in zip(segments, segments[1:]):
            if abs(prev.t_end - cur.t_start) > 1e-12:
                raise ContractViolationError("rate segments must be contiguous")
        self.segments = segments
        self.t0 = segments[0].t_start
        self.tf = segments[-1].t_end
        self._starts = [s.t_start for s in segments]

    @classmethod
    def constant(cls, rate, t0=0.0, tf=np.inf):
        return cls([_Segment(t0, tf, "const", float(rate), float(rate))])

    @classmethod
    def piecewise_constant(cls, times, values):
        if len(times) != len(values) + 1:
            raise ContractViolationError("need len(times) == len(values) + 1")
        return cls([_Segment(a, b, "const", float(v), float(v))
                    for a, b, v in zip(times, times[1:], values)])

    @classmethod
    def piecewise_linear(cls, times, values):
        if len(times) != len(values):
            raise ContractViolationError("need one value per breakpoint")
        return cls([_Segment(a, b, "linear", float(u), float(v))
                    for a, b, u, v in zip(times, times[1:], values, values[1:])])

    def _segment_index(self, t: float) -> int:
        j = bisect_right(self._starts, t) - 1
        return max(j, 0)

    def value(self, t: float) -> float:
        if t < self.t0 - 1e-12 or t > self.tf + 1e-12:
            raise ContractViolationError(f"t={t:g} outside schedule domain")
        return self.segments[self._segment_index(min(t, self.tf))].value(t)

    @property
    def is_piecewise_constant(self) -> bool:
        return all(s.kind == "const" for s in self.segments)

    def breakpoints(self, t_max: float):
        pts = {0.0, t_max}
        for s in self.segments:
            if 0.0 < s.t_start < t_max:
                pts.add(s.t_start)
        return pts

    def first_event(self, t: float, horizon: float, rng: np.random.Generator):
        """First inhomogeneous-Poisson event after t, or None before horizon.

        Thinning against the piecewise bound: each proposal consumes one
        unit-exponential that is inverted through the integrated bound (so it
        carries across segment boundaries), then one uniform for the accept
        test at rate lambda(t)/bound(t).  Because the clock never resets at
        a boundary, splitting a constant segment without changing its value
        leaves the sampled path bitwise unchanged.
        """
        if horizon > self.tf + 1e-12:
            raise ContractViolationError("schedule domain shorter than horizon")
        while t < horizon:
            budget = rng.exponential(1.0)
            j = self._segment_index(t)
            while True:
                seg = self.segments[j]
                seg_end = min(seg.t_end, horizon)
                bound = seg.bound
                capacity = bound * (seg_end - t)
                if budget <= capacity:
                    t = t + budget / bound
                    break
                budget -= capacity
                t = seg_end
                j += 1
                if t >= horizon:
                    return None
            if rng.uniform() * bound <= seg.value(t):
                return t
        return None


@dataclass(frozen=True)
class Transition:
    """Guarded jump: fires from states where enabled(x) holds."""

    enabled: object  # callable state tuple -> bool
    successor: object  # callable state tuple -> state tuple
    schedule: RateSchedule
    label: str = ""


class SBitSystem:
    """N s-bits with an explicit transition set (default: single-bit flips)."""

    def __init__(self, n_bits: int, transitions):
        self.n_bits = int(n_bits)
        self.transitions = list(transitions)
        if self.n_bits < 1:
            raise ContractViolationError("need at least one s-bit")

    @classmethod
    def single_flip(cls, up_schedules, down_schedules):
        """Per-bit flip rates: up = 0->1 schedule, down = 1->0 schedule."""
        if len(up_schedules) != len(down_schedules):
            raise ContractViolationError("need matching up/down schedule lists")
        n = len(up_schedules)
        transitions = []
        for i in range(n):
            def flip(x, i=i):
                y = list(x)
                y[i] ^= 1
                return tuple(y)

            transitions.append(Transition(
                lambda x, i=i: x[i] == 0, flip, up_schedules[i], f"bit{i}_up"))
            transitions.append(Transition(
                lambda x, i=i: x[i] == 1, flip, down_schedules[i], f"bit{i}_down"))
        return cls(n, transitions)


@dataclass
class SBitTrajectory:
    """Initial state plus ordered (jump time, new state) records."""

    x0: tuple
    jumps: list  # list of (t, state tuple)

    def __post_init__(self):
        ts = [t for t, _ in self.jumps]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ContractViolationError("jump times must be strictly increasing")
        prev = self.x0
        for _, x in self.jumps:
            if x == prev:
                raise ContractViolationError("consecutive states must differ")
            prev = x

    def state_at(self, t: float) -> tuple:
        x = self.x0
        for tj, xj in self.jumps:
            if tj > t:
                break
            x = xj
        return x

    def flip_times(self):
        return np.array([t for t, _ in self.jumps])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "state_bits"])
            writer.writerow([0.0, "".join(map(str, self.x0))])
            for t, x in self.jumps:
                writer.writerow([repr(float(t)), "".join(map(str, x))])


def sample_coupled_trajectory(system: SBitSystem, x0, T: float, seed: int) -> SBitTrajectory:
    """Competing-clocks sampler: at each state, one thinned clock per enabled
    transition; the minimum firing time wins (ties by lowest index); clocks
    are resampled after every jump."""
    if not np.isfinite(T) or T <= 0:
        raise ContractViolationError("finite positive horizon T required")
    x = tuple(int(b) for b in x0)
    if len(x) != system.n_bits or any(b not in (0, 1) for b in x):
        raise ContractViolationError("x0 must be a {0,1}^N state")
    rng = trajectory_rng(seed, 0)
    t = 0.0
    jumps = []
    while True:
        best = None
        for idx, trans in enumerate(system.transitions):
            if not trans.enabled(x):
                continue
            te = trans.schedule.first_event(t, T, rng)
            if te is not None and (best is None or te < best[0]):
                best = (te, idx)
        if best is None:
            break
        t, idx = best
        x = system.transitions[idx].successor(x)
        jumps.append((t, x))
    return SBitTrajectory(tuple(int(b) for b in x0), jumps)


def sample_sbit_trajectory(lambda0: RateSchedule, lambda1: RateSchedule, x0: int,
                           T: float, seed: int) -> SBitTrajectory:
    """Single s-bit: flip out of state 0 at rate lambda0(t), out of 1 at
    lambda1(t).  Implemented as the one-bit coupled system, so it shares the
    coupled sampler's seed protocol exactly."""
    system = SBitSystem.single_flip([lambda0], [lambda1])
    return sample_coupled_trajectory(system, (int(x0),), T, seed)


def state_index(x) -> int:
    """Bit tuple -> integer index, bit 0 least significant."""
    return sum(int(b) << i for i, b in enumerate(x))


def index_state(idx: int, n_bits: int) -> tuple:
    return tuple((idx >> i) & 1 for i in range(n_bits))


def dense_generator(system: SBitSystem, t: float) -> np.ndarray:
    """2^N x 2^N generator at time t: off-diagonal (x, y) holds the x->y
    rate, diagonals make rows sum to zero."""
    n = system.n_bits
    if n > MAX_DENSE_BITS:
        raise ContractViolationError(
            f"dense generator refused for N={n}: 2^{n} states blow up")
    size = 1 << n
    G = np.zeros((size, size))
    for i in range(size):
        x = index_state(i, n)
        for trans in system.transitions:
            if trans.enabled(x):
                j = state_index(trans.successor(x))
                G[i, j] += trans.schedule.value(t)
    np.fill_diagonal(G, G.diagonal() - G.sum(axis=1))
    return G


def transient_distribution(system: SBitSystem, p0, t: float) -> np.ndarray:
    """Exact p(t) = p0 exp(G s) piecewise; rates must be piecewise-constant."""
    n = system.n_bits
    if n > MAX_DENSE_BITS:
        raise ContractViolationError(
            f"transient oracle refused for N={n}: 2^{n} states blow up")
    p0 = np.asarray(p0, dtype=float).reshape(-1)
    if p0.shape != (1 << n,) or np.any(p0 < -1e-12) or abs(p0.sum() - 1) > 1e-9:
        raise ContractViolationError("p0 must be a probability distribution over 2^N states")
    for trans in system.transitions:
        if not trans.schedule.is_piecewise_constant:
            raise ContractViolationError("oracle requires piecewise-constant rates")
    pts = {0.0, t}
    for trans in system.transitions:
        pts |= trans.schedule.breakpoints(t)
    pts = sorted(pts)
    p = p0.copy()
    for a, b in zip(pts, pts[1:]):
        G = dense_generator(system, (a + b) / 2)
        p = p @ expm(G * (b - a))
    p = np.clip(p, 0.0, None)
    if abs(p.sum() - 1) > 1e-9:
        raise ContractViolationError("transient distribution failed to normalize")
    return p / p.sum()
