"""Event-driven simulation of the NBCPP on the torus (Z/LZ)^d.

Per site, resets fire at rate 1/(2 lambda d) and each ordered neighbour pair
fires an infection x <- y at rate 1/(2d); between events every value is
multiplied by exp(c dt) with c = 1/(2 lambda d) - 1. The weights are exactly the
unnormalized BCPP configuration run on the clock ``ModelParams.bcpp_time``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .lattice import site_index
from .params import ModelParams
from .rng import stream_key


class OverflowAbort(RuntimeError):
    """A physical value exceeded 1e300."""


@dataclass(frozen=True)
class InitialCondition:
    """``kind`` is "ones" or "equilibrium"; burn_in=None selects the adaptive rule."""

    kind: str = "ones"
    burn_in: float | None = None
    window: float = 5.0
    min_burn_in: float = 20.0
    max_burn_in: float = 500.0
    rel_change: float = 0.01

    def __post_init__(self):
        if self.kind not in ("ones", "equilibrium"):
            raise ValueError(f"init: unknown initial condition {self.kind!r}")
        if self.burn_in is not None and self.burn_in < 0:
            raise ValueError("burn_in: must be nonnegative")


ALL_ONES = InitialCondition("ones")


@dataclass
class FieldState:
    params: ModelParams
    weights: np.ndarray
    log_scale: float = 0.0
    time: float = 0.0
    key: np.uint64 = np.uint64(0)
    counter: np.uint64 = np.uint64(0)
    next_time: float = -1.0
    burn_in: float = 0.0
    events: int = 0

    @property
    def eta(self) -> np.ndarray:
        """Physical configuration (flat, C order)."""
        return self.weights * math.exp(self.log_scale)

    def value(self, x) -> float:
        return float(self.weights[site_index(x, self.params.L)] * math.exp(self.log_scale))

    def copy(self) -> "FieldState":
        return FieldState(self.params, self.weights.copy(), self.log_scale, self.time,
                          self.key, self.counter, self.next_time, self.burn_in, self.events)


@dataclass
class EventLog:
    """Events in order; source is -1 for a reset."""

    time: np.ndarray
    site: np.ndarray
    source: np.ndarray

    def __len__(self):
        return len(self.time)


@dataclass
class Observer:
    """Record eta at ``sites`` (all sites if None) and/or call ``statistic(state)``."""

    times: tuple
    sites: tuple | None = None
    statistic: object = None


@dataclass
class ObservationLog:
    times: np.ndarray
    values: np.ndarray | None = None
    statistics: list = field(default_factory=list)


def _geom(params):
    return K.geometry(params.L, params.d)


def run_until(state: FieldState, t_end: float, observers=(), *, record: int = 0,
              max_events: int | None = None):
    """Advance ``state`` in place to ``t_end``.

    Observer times inside (state.time, t_end] are hit exactly. ``record`` > 0
    keeps up to that many events in an EventLog. Returns
    (state, [ObservationLog per observer], EventLog or None).
    """
    if t_end < state.time:
        raise ValueError(f"t_end={t_end} is before the current time {state.time}")
    p = state.params
    strides, inv_s, inv_L = _geom(p)
    stops = sorted({float(t) for ob in observers for t in ob.times
                    if state.time <= t <= t_end} | {float(t_end)})
    logs = [ObservationLog(np.array(sorted(float(t) for t in ob.times)), None, [])
            for ob in observers]
    vals = [[] for _ in observers]
    rec_t = np.empty(record)
    rec_x = np.empty(record, dtype=np.int64)
    rec_y = np.empty(record, dtype=np.int64)
    logged = 0
    budget = (1 << 62) if max_events is None else int(max_events)
    for stop in stops:
        t, nt, ctr, ls, nev, status = K.advance(
            state.weights, p.L, p.d, p.lam, state.time, stop, state.next_time, state.key,
            state.counter, state.log_scale, budget, strides, inv_s, inv_L,
            rec_t[logged:], rec_x[logged:], rec_y[logged:])
        logged = min(record, logged + nev)
        budget -= nev
        state.time, state.next_time, state.counter, state.log_scale = t, nt, np.uint64(ctr), ls
        state.events += nev
        if status == K.OVERFLOWED:
            raise OverflowAbort(f"physical value above 1e300 at t={t:.6g}; "
                                f"parameters are likely subcritical (lambda={p.lam})")
        if status == K.MAX_EVENTS:
            break
        for i, ob in enumerate(observers):
            if any(float(s) == stop for s in ob.times):
                if ob.sites is not None:
                    idx = site_index(np.asarray(ob.sites), p.L) if len(ob.sites) else []
                    vals[i].append(state.eta[idx] if len(ob.sites) else np.empty(0))
                if ob.statistic is not None:
                    logs[i].statistics.append(ob.statistic(state))
    for i, ob in enumerate(observers):
        if ob.sites is not None:
            logs[i].values = np.array(vals[i])
    events = EventLog(rec_t[:logged].copy(), rec_x[:logged].copy(), rec_y[:logged].copy()) \
        if record else None
    return state, logs, events


def step_event(state: FieldState) -> tuple[FieldState, EventLog]:
    """Advance past exactly one event."""
    _, _, ev = run_until(state, float("inf"), record=1, max_events=1)
    return state, ev


def _second_moment(state):
    e = state.eta
    return float(np.mean(e * e))


def init_state(params: ModelParams, ic: InitialCondition = ALL_ONES, seed: int = 0,
               replica: int = 0) -> FieldState:
    """All-ones field at time 0, optionally run to (approximate) equilibrium.

    The adaptive burn-in runs in windows until the spatial mean of eta**2 moves by
    less than ``ic.rel_change`` between consecutive windows and at least
    ``ic.min_burn_in`` has elapsed. The measurement clock then restarts at 0.
    """
    state = FieldState(params, np.ones(params.n_sites), key=stream_key(seed, replica))
    if ic.kind == "ones":
        return state
    if ic.burn_in is not None:
        if ic.burn_in > 0:
            run_until(state, ic.burn_in)
    else:
        prev = _second_moment(state)
        while True:
            run_until(state, state.time + ic.window)
            cur = _second_moment(state)
            settled = abs(cur - prev) <= ic.rel_change * abs(prev)
            if (settled and state.time >= ic.min_burn_in) or state.time >= ic.max_burn_in:
                break
            prev = cur
    shift = state.time
    state.burn_in = shift
    state.weights *= math.exp(state.log_scale)
    state.log_scale = 0.0
    if state.next_time >= 0:
        state.next_time -= shift
    state.time = 0.0
    return state


def occupation_integral(eta_a: float, c: float, a: float, b: float) -> float:
    """Integral of (eta_u - 1) over [a, b] when eta_u = eta_a exp(c (u - a))."""
    if b < a:
        raise ValueError("window end before start")
    dt = b - a
    if abs(c) < 1e-12:
        return dt * (eta_a - 1.0)
    return eta_a * math.expm1(c * dt) / c - dt


def occupation_integral_state(state: FieldState, site, a: float, b: float) -> float:
    """occupation_integral for a site of ``state`` whose current time is a.

    The window must end before the pending event.
    """
    if a != state.time:
        raise ValueError("window must start at the state's current time")
    if state.next_time >= 0 and b > state.next_time:
        raise ValueError("window spans a jump")
    return occupation_integral(state.value(site), state.params.drift, a, b)


def project_support(state: FieldState) -> np.ndarray:
    """Contact-process indicator 1{eta(x) > 0}."""
    return (state.weights > 0).astype(np.uint8)


def apply_contact_events(xi: np.ndarray, events: EventLog) -> np.ndarray:
    """Contact-process rules along an event stream: reset -> 0, infect -> max."""
    xi = xi.copy()
    for x, y in zip(events.site, events.source):
        xi[x] = 0 if y < 0 else (xi[x] | xi[y])
    return xi


def replay_naive(params: ModelParams, eta0: np.ndarray, events: EventLog, t_end: float):
    """Per-site drift applied explicitly at every event; oracle for the scale trick."""
    eta = np.array(eta0, dtype=float)
    c = params.drift
    t = 0.0
    for s, x, y in zip(events.time, events.site, events.source):
        eta *= math.exp(c * (s - t))
        t = s
        if y < 0:
            eta[x] = 0.0
        else:
            eta[x] += eta[y]
    eta *= math.exp(c * (t_end - t))
    return eta


def bcpp_configuration(state: FieldState) -> tuple[np.ndarray, float]:
    """Integer BCPP field and its clock. Exact only before any renormalization."""
    return state.weights.copy(), state.params.bcpp_time(state.time + state.burn_in)


# ------------------------------------------------------------ moment sampling

@dataclass(frozen=True)
class MomentEstimate:
    value: float
    se: float
    replicas: int


def jackknife(per_replica: np.ndarray, fn=np.mean) -> tuple[float, float]:
    """Delete-one jackknife over the first axis; returns (estimate, se)."""
    x = np.asarray(per_replica, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("jackknife needs at least 2 replicas")
    full = fn(x)
    total = x.sum(axis=0)
    if fn is np.mean:
        loo = (total[None] - x) / (n - 1)
    else:
        loo = np.array([fn(np.delete(x, i, axis=0)) for i in range(n)])
    se = np.sqrt((n - 1) / n * ((loo - loo.mean(axis=0)) ** 2).sum(axis=0))
    return full, se


def product_statistic(eta: np.ndarray, shape, offsets, spatial: bool) -> np.ndarray:
    """Prod_i eta(z + offsets[i]), averaged over translations z if ``spatial``.

    ``eta`` is flat, ``offsets`` a list of lattice points.
    """
    field_ = eta.reshape(shape)
    prod = np.ones(shape)
    for off in offsets:
        prod = prod * np.roll(field_, shift=tuple(-int(v) for v in off), axis=tuple(range(len(shape))))
    return prod.mean() if spatial else prod.flat[0]


def sample_moments(params: ModelParams, ic: InitialCondition, t: float, sites,
                   replicas: int, seed: int = 0, spatial: bool = False) -> MomentEstimate:
    """Monte Carlo estimate of E prod_i eta_t(x_i) with a jackknife error.

    ``sites`` lists the points of the product (repeat a point for powers, so
    [O, O] gives the second moment). ``spatial`` averages each replica over all
    torus translations, which is unbiased by translation invariance.
    """
    if replicas < 2:
        raise ValueError("replicas: need at least 2")
    shape = (params.L,) * params.d
    per = np.empty(replicas)
    small = params.n_sites <= 4096 and ic.kind == "ones"
    if small:
        fields = batch_run(params, [t], replicas, seed)[:, 0, :]
        for r in range(replicas):
            per[r] = product_statistic(fields[r], shape, sites, spatial)
    else:
        for r in range(replicas):
            st = init_state(params, ic, seed, r)
            run_until(st, t)
            per[r] = product_statistic(st.eta, shape, sites, spatial)
    val, se = jackknife(per)
    return MomentEstimate(float(val), float(se), replicas)


def batch_run(params: ModelParams, times, replicas: int, seed: int = 0,
              first_replica: int = 0, w0=None) -> np.ndarray:
    """Fields at ``times`` for replicas started from w0 (default all ones).

    Replica r uses the same stream as ``init_state(params, ALL_ONES, seed, r)``.
    """
    strides, inv_s, inv_L = _geom(params)
    keys = np.array([stream_key(seed, first_replica + r) for r in range(replicas)], dtype=np.uint64)
    w0 = np.ones(params.n_sites) if w0 is None else np.asarray(w0, dtype=float)
    return K.batch_fields(params.L, params.d, params.lam, w0, keys,
                          np.asarray(sorted(times), dtype=float), strides, inv_s, inv_L)
