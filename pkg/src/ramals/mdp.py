"""State encoding, scheduling indicator, per-session reward and queue dynamics.

Each arriving session is one decision point: schedule it now or keep it
queued.  The agent sees the session's six raw properties (requested energy
and window, the three timestamps, delivered energy) scaled into [0, 1].  The
reward pays out only when the demand-supply ordering between the current and
the next queued session holds under the chosen action, and shrinks with the
site's normalized tail risk.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .sessions import ChargingSession, EvseConfig, energy_ratio

log = logging.getLogger(__name__)

ENERGY_NORM_KWH = 100.0
DURATION_NORM_MIN = 1440.0
STATE_DIM = 6
DEFAULT_STEP_MINUTES = 15.0


class MdpError(ValueError):
    """Raised for invalid decision inputs."""


def _minutes_since_midnight(ts) -> float:
    return ts.hour * 60.0 + ts.minute


@dataclass(frozen=True)
class EvseState:
    """Six-component observation for one queued session.

    Component order: requested kWh, requested minutes, plug-in, charge-end and
    unplug clock times, delivered kWh.  ``vector()`` scales energies by 100
    kWh, durations by 1440 minutes and timestamps by minutes-since-midnight
    over 1440, clipping into [0, 1].
    """

    session: ChargingSession
    energy_norm_kwh: float = ENERGY_NORM_KWH
    duration_norm_min: float = DURATION_NORM_MIN

    def vector(self) -> np.ndarray:
        s = self.session
        raw = np.array([
            s.energy_requested_kwh / self.energy_norm_kwh,
            s.minutes_available / self.duration_norm_min,
            _minutes_since_midnight(s.plug_in_time) / self.duration_norm_min,
            _minutes_since_midnight(s.charge_end_time) / self.duration_norm_min,
            _minutes_since_midnight(s.unplug_time) / self.duration_norm_min,
            s.energy_delivered_kwh / self.energy_norm_kwh,
        ])
        return np.clip(raw, 0.0, 1.0)


@dataclass(frozen=True)
class ActionDistribution:
    """Two-way policy output: probability of scheduling now vs queueing."""

    schedule_prob: float
    queue_prob: float

    def __post_init__(self):
        if self.schedule_prob < 0 or self.queue_prob < 0:
            raise MdpError("action probabilities must be non-negative")
        if abs(self.schedule_prob + self.queue_prob - 1.0) > 1e-9:
            raise MdpError("action probabilities must sum to 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.schedule_prob, self.queue_prob])


@dataclass(frozen=True)
class SchedulingDecision:
    """Binary schedule/queue decision plus the realized allocation triple."""

    schedule_now: int
    demand_supply_index: float
    allocated_energy_kwh: float = 0.0
    allocated_rate_kw: float = 0.0
    allocated_minutes: float = 0.0

    def __post_init__(self):
        if self.schedule_now not in (0, 1):
            raise MdpError("schedule_now must be 0 or 1")


@dataclass(frozen=True)
class RewardSpec:
    """Reward shaping constants: discount, normalized tail risk, significance."""

    gamma: float = 0.9
    risk_value: float = 0.0
    alpha: float = 0.95

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise MdpError("gamma must lie in (0, 1)")
        if not 0.0 <= self.risk_value < 1.0:
            raise MdpError("risk must lie in [0, 1)")


def scheduling_indicator(dist: ActionDistribution) -> int:
    """1 when the schedule component is the argmax; ties resolve to schedule."""
    return 1 if dist.schedule_prob >= dist.queue_prob else 0


def demand_supply_index(session: ChargingSession, schedule_now: int) -> float:
    """Select the energy ratio when scheduling, its complement when queueing."""
    ups = energy_ratio(session)
    return ups if schedule_now == 1 else 1.0 - ups


def session_reward(rate_ratio_value: float, time_ratio_value: float, risk: float,
                   eta_current: float, eta_next: float | None = None) -> float:
    """Per-session reward.

    The ordering condition compares the demand-supply index of the current
    session with the next queued one under the same action; with no next
    session the condition holds vacuously.  A unit rate ratio earns the bonus
    branch; any other non-zero ratio earns the plain product; everything else
    pays zero.
    """
    ordered = eta_next is None or eta_current >= eta_next
    if not ordered:
        return 0.0
    if rate_ratio_value == 1.0:
        return 1.0 + rate_ratio_value * time_ratio_value * (1.0 - risk)
    if rate_ratio_value != 0.0:
        return rate_ratio_value * time_ratio_value * (1.0 - risk)
    return 0.0


def discounted_return(rewards, gamma: float) -> float:
    """Sum of gamma^k * reward_k over the remaining sequence."""
    if not 0.0 <= gamma < 1.0:
        raise MdpError("gamma must lie in [0, 1)")
    total = 0.0
    for r in reversed(list(rewards)):
        total = r + gamma * total
    return total


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Suffix discounted return at every step of the sequence."""
    if not 0.0 <= gamma < 1.0:
        raise MdpError("gamma must lie in [0, 1)")
    out = np.zeros(len(rewards))
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


@dataclass(frozen=True)
class Allocation:
    """Realized charging plan for one scheduled session."""

    energy_kwh: float
    rate_kw: float
    charge_minutes: float
    occupy_minutes: float
    allocated_energy_kwh: float
    allocated_minutes: float


def rational_allocation(session: ChargingSession, evse: EvseConfig) -> Allocation:
    """Deliver the session's actual need, then free the port.

    The rate is the session's own recorded delivery rate capped by the port
    supply and the vehicle's receiving capacity; the granted window is the
    requested window capped by the time the requested energy takes at that
    rate.  Occupancy is the realized charging time plus the switching
    overhead, which is where the idle-time saving over an as-requested
    allocation comes from.
    """
    cap = min(evse.supply_capacity_kw, session.receiving_capacity_kw)
    implied = session.implied_rate_kw
    rate = min(implied, cap) if implied > 0 else cap
    if session.energy_requested_kwh <= 0:
        log.warning("session %r requests zero energy; served instantly",
                    session.session_id)
        return Allocation(0.0, rate, 0.0, evse.switching_minutes, 0.0,
                          evse.switching_minutes)
    window = min(session.minutes_available, session.energy_requested_kwh / rate * 60.0)
    energy = min(session.energy_delivered_kwh, rate * window / 60.0)
    charge_minutes = energy / rate * 60.0
    return Allocation(
        energy_kwh=energy,
        rate_kw=rate,
        charge_minutes=charge_minutes,
        occupy_minutes=charge_minutes + evse.switching_minutes,
        allocated_energy_kwh=min(session.energy_requested_kwh, rate * window / 60.0),
        allocated_minutes=window + evse.switching_minutes,
    )


def as_requested_allocation(session: ChargingSession, evse: EvseConfig) -> Allocation:
    """Grant the inflated request verbatim: the port stays blocked for the
    whole requested window while the vehicle absorbs only its actual need."""
    cap = min(evse.supply_capacity_kw, session.receiving_capacity_kw)
    implied = session.implied_rate_kw
    rate = min(implied, cap) if implied > 0 else cap
    energy = min(session.energy_delivered_kwh, rate * session.minutes_available / 60.0)
    charge_minutes = energy / rate * 60.0 if rate > 0 else 0.0
    return Allocation(
        energy_kwh=energy,
        rate_kw=rate,
        charge_minutes=charge_minutes,
        occupy_minutes=max(session.minutes_available, charge_minutes),
        allocated_energy_kwh=session.energy_requested_kwh,
        allocated_minutes=session.minutes_available,
    )


@dataclass
class QueueEvent:
    """What happened to the head session at one transition."""

    session: ChargingSession
    kind: str                      # "scheduled" | "queued" | "voided"
    clock_minutes: float
    wait_minutes: float = 0.0
    allocation: Allocation | None = None


class EvseQueue:
    """FCFS queue for one port with a private clock in minutes.

    Scheduling pops the head and realizes its allocation; queueing keeps the
    head and advances the clock one step; a head whose charging can no longer
    finish inside its availability window is voided.  Sessions are conserved:
    scheduled + queued + voided always equals the initial count.
    """

    def __init__(self, sessions, evse: EvseConfig, origin_minutes_fn,
                 step_minutes: float = DEFAULT_STEP_MINUTES):
        self.sessions = list(sessions)
        self.evse = evse
        self.step_minutes = step_minutes
        self._arrival = origin_minutes_fn
        self._idx = 0
        self.clock = self._arrival(self.sessions[0]) if self.sessions else 0.0
        self.events: list[QueueEvent] = []

    @property
    def pending(self) -> int:
        return len(self.sessions) - self._idx

    def head(self) -> ChargingSession | None:
        return self.sessions[self._idx] if self._idx < len(self.sessions) else None

    def peek_next(self) -> ChargingSession | None:
        nxt = self._idx + 1
        return self.sessions[nxt] if nxt < len(self.sessions) else None

    def head_state(self) -> EvseState | None:
        head = self.head()
        return EvseState(head) if head is not None else None

    def present(self) -> EvseState | None:
        """Void heads whose availability window has expired, then expose the head."""
        if self.head() is None:
            return None
        self._void_expired()
        return self.head_state()

    def _void_expired(self) -> None:
        # A head that cannot start within its availability window is voided;
        # once started, a session always runs to completion.
        while self.head() is not None:
            head = self.head()
            arrival = self._arrival(head)
            self.clock = max(self.clock, arrival)
            deadline = arrival + head.minutes_available
            if self.clock <= deadline + 1e-9:
                return
            log.debug("session %r voided: availability window expired unserved",
                      head.session_id)
            self.events.append(QueueEvent(head, "voided", self.clock,
                                          wait_minutes=self.clock - arrival))
            self._idx += 1

    def transition(self, schedule_now: int, allocator=rational_allocation):
        """Apply one decision to the head; returns (next_state, event)."""
        if self.head() is None:
            raise MdpError(f"EVSE {self.evse.evse_id!r}: transition on an empty queue")
        self._void_expired()
        head = self.head()
        if head is None:
            return None, self.events[-1]
        arrival = self._arrival(head)
        if schedule_now == 1:
            allocation = allocator(head, self.evse)
            event = QueueEvent(head, "scheduled", self.clock,
                               wait_minutes=self.clock - arrival,
                               allocation=allocation)
            self._idx += 1
            self.clock += allocation.occupy_minutes
        else:
            event = QueueEvent(head, "queued", self.clock,
                               wait_minutes=self.clock - arrival)
            self.clock += self.step_minutes
        self.events.append(event)
        return self.head_state(), event


def env_transition(queue: EvseQueue, decision: SchedulingDecision,
                   allocator=rational_allocation):
    """One environment step driven by a decision object."""
    return queue.transition(decision.schedule_now, allocator=allocator)
