"""Policy execution over session streams, baselines and evaluation metrics.

The engine replays a batch against a site on a global clock in minutes.
Each port owns an FCFS queue; when a port is free it presents its head
session to the decision rule, which either starts charging (blocking the
port for the realized charging time plus switching overhead) or requeues the
head for one time step.  Starting a session must not push the site's
simultaneous delivery above the utility feed; a port that would breach it
defers one step.  Sessions that can no longer finish inside their
availability window are voided.
"""

from __future__ import annotations

import heapq
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import learner, mdp
from .sessions import (ChargingSession, SessionBatch, SessionError, SiteConfig,
                       energy_ratio, rate_ratio, time_ratio)

log = logging.getLogger(__name__)


class SchedulerError(ValueError):
    """Raised for invalid execution inputs."""


@dataclass(frozen=True)
class ScheduleOutcome:
    """Final fate of one session."""

    session_id: str
    evse_id: str
    scheduled: bool
    voided: bool
    start_minutes: float
    wait_minutes: float
    realized_energy_kwh: float
    realized_rate_kw: float
    realized_minutes: float
    allocated_energy_kwh: float
    allocated_rate_kw: float
    allocated_minutes: float
    reward: float

    def to_json_line(self) -> str:
        return json.dumps({
            "session_id": self.session_id,
            "evse_id": self.evse_id,
            "scheduled": self.scheduled,
            "voided": self.voided,
            "allocated_kwh": self.allocated_energy_kwh,
            "allocated_kw": self.allocated_rate_kw,
            "allocated_min": self.allocated_minutes,
            "realized_kwh": self.realized_energy_kwh,
            "realized_kw": self.realized_rate_kw,
            "realized_min": self.realized_minutes,
            "wait_min": self.wait_minutes,
            "reward": self.reward,
        }, sort_keys=True)


@dataclass(frozen=True)
class MetricsReport:
    """Site-level evaluation summary."""

    site_id: str
    charging_rate_kw: float
    assignment_efficiency_pct: float
    sessions_served: int
    sessions_total: int
    active_hours_by_evse: dict[str, float]
    energy_kwh_by_evse: dict[str, float]

    @property
    def total_active_hours(self) -> float:
        return sum(self.active_hours_by_evse.values())

    @property
    def total_energy_kwh(self) -> float:
        return sum(self.energy_kwh_by_evse.values())

    def scalar_metrics(self) -> dict[str, float]:
        return {
            "charging_rate_kw": self.charging_rate_kw,
            "assignment_efficiency_pct": self.assignment_efficiency_pct,
            "sessions_served": float(self.sessions_served),
            "active_charging_hours": self.total_active_hours,
            "energy_delivered_kwh": self.total_energy_kwh,
        }

    def to_csv(self) -> str:
        lines = ["metric,scope,value"]
        for name, value in self.scalar_metrics().items():
            lines.append(f"{name},site,{value!r}")
        lines.append(f"sessions_total,site,{float(self.sessions_total)!r}")
        for evse_id in sorted(self.active_hours_by_evse):
            lines.append(f"active_charging_hours,{evse_id},"
                         f"{self.active_hours_by_evse[evse_id]!r}")
            lines.append(f"energy_delivered_kwh,{evse_id},"
                         f"{self.energy_kwh_by_evse[evse_id]!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str, site_id: str = "") -> "MetricsReport":
        site: dict[str, float] = {}
        hours: dict[str, float] = {}
        energy: dict[str, float] = {}
        rows = text.strip().splitlines()
        if not rows or rows[0] != "metric,scope,value":
            raise SchedulerError("unrecognized metrics CSV header")
        for row in rows[1:]:
            name, scope, value = row.split(",")
            if scope == "site":
                site[name] = float(value)
            elif name == "active_charging_hours":
                hours[scope] = float(value)
            elif name == "energy_delivered_kwh":
                energy[scope] = float(value)
        served = int(site["sessions_served"])
        total = int(site.get("sessions_total", 0.0))
        return cls(site_id=site_id,
                   charging_rate_kw=site["charging_rate_kw"],
                   assignment_efficiency_pct=site["assignment_efficiency_pct"],
                   sessions_served=served,
                   sessions_total=total,
                   active_hours_by_evse=hours,
                   energy_kwh_by_evse=energy)


def _safe_energy_ratio(session: ChargingSession) -> float:
    try:
        return energy_ratio(session)
    except SessionError:
        log.warning("session %r: zero requested energy, demand-supply index forced to 0",
                    session.session_id)
        return 0.0


class _PolicyRule:
    """Argmax policy pick, then the demand-supply ordering check."""

    def __init__(self, model: learner.SharedModel):
        self.model = model
        self._carries: dict[str, tuple] = {}

    def decide(self, evse_id: str, queue: mdp.EvseQueue) -> int:
        head = queue.head()
        state = mdp.EvseState(head).vector()
        carry = self._carries.get(evse_id)
        if carry is None:
            carry = self.model.carry_for(evse_id)
        dist, _value, carry = learner.policy_value_forward(
            self.model.agent_params(evse_id), state, carry)
        self._carries[evse_id] = carry
        indicator = mdp.scheduling_indicator(dist)
        ups_head = _safe_energy_ratio(head)
        eta_head = ups_head if indicator == 1 else 1.0 - ups_head
        nxt = queue.peek_next()
        if nxt is None:
            return 1
        ups_next = _safe_energy_ratio(nxt)
        eta_next = ups_next if indicator == 1 else 1.0 - ups_next
        return 1 if eta_head >= eta_next else 0


class _ForcedRule:
    """Oracle rule that always schedules; used by tests and ablations."""

    def decide(self, evse_id: str, queue: mdp.EvseQueue) -> int:
        return 1


class _AsRequestedRule(_ForcedRule):
    pass


@dataclass
class _ActiveInterval:
    end_minutes: float
    rate_kw: float


class ScheduleEngine:
    """Replays one batch against one site under a decision rule."""

    def __init__(self, batch: SessionBatch, site: SiteConfig, rule,
                 allocator=mdp.rational_allocation,
                 step_minutes: float = mdp.DEFAULT_STEP_MINUTES,
                 risk_value: float = 0.0,
                 update_hook=None, update_every: int = 0):
        known = set(site.evse_ids)
        missing = [e for e in batch.evse_ids if e not in known]
        if missing:
            raise SchedulerError(f"batch references EVSEs absent from site config: {missing}")
        self.batch = batch
        self.site = site
        self.rule = rule
        self.allocator = allocator
        self.step_minutes = step_minutes
        self.risk_value = risk_value
        self.update_hook = update_hook
        self.update_every = update_every
        self._served_since_update = 0

        if len(batch):
            self.origin = min(s.plug_in_time for s in batch)
        else:
            self.origin = None
        self._zeta: dict[str, float] = {}
        self.queues: dict[str, mdp.EvseQueue] = {}
        for evse_id in batch.evse_ids:
            group = batch.group(evse_id)
            try:
                self._zeta[evse_id] = rate_ratio(group)
            except SessionError:
                log.warning("EVSE %r: rate ratio undefined, reward ratio forced to 0",
                            evse_id)
                self._zeta[evse_id] = 0.0
            self.queues[evse_id] = mdp.EvseQueue(
                group, site.evse(evse_id), self._arrival_minutes,
                step_minutes=step_minutes)
        self.outcomes: list[ScheduleOutcome] = []
        self._active: list[_ActiveInterval] = []

    def _arrival_minutes(self, session: ChargingSession) -> float:
        return (session.plug_in_time - self.origin).total_seconds() / 60.0

    def _site_load(self, at_minutes: float) -> float:
        self._active = [iv for iv in self._active if iv.end_minutes > at_minutes + 1e-9]
        return sum(iv.rate_kw for iv in self._active)

    def _session_reward(self, evse_id: str, queue: mdp.EvseQueue, scheduled: bool) -> float:
        head = queue.head()
        nxt = queue.peek_next()
        indicator = 1 if scheduled else 0
        ups = _safe_energy_ratio(head)
        eta_cur = ups if indicator else 1.0 - ups
        eta_next = None
        if nxt is not None:
            ups_next = _safe_energy_ratio(nxt)
            eta_next = ups_next if indicator else 1.0 - ups_next
        return mdp.session_reward(self._zeta[evse_id], time_ratio(head),
                                  self.risk_value, eta_cur, eta_next)

    def _record(self, evse_id: str, event: mdp.QueueEvent, reward: float) -> None:
        alloc = event.allocation
        self.outcomes.append(ScheduleOutcome(
            session_id=event.session.session_id,
            evse_id=evse_id,
            scheduled=event.kind == "scheduled",
            voided=event.kind == "voided",
            start_minutes=event.clock_minutes,
            wait_minutes=event.wait_minutes,
            realized_energy_kwh=alloc.energy_kwh if alloc else 0.0,
            realized_rate_kw=alloc.rate_kw if alloc else 0.0,
            realized_minutes=alloc.charge_minutes if alloc else 0.0,
            allocated_energy_kwh=alloc.allocated_energy_kwh if alloc else 0.0,
            allocated_rate_kw=alloc.rate_kw if alloc else 0.0,
            allocated_minutes=alloc.allocated_minutes if alloc else 0.0,
            reward=reward,
        ))

    def _drain_voids(self, evse_id: str, queue: mdp.EvseQueue, already: int) -> None:
        for event in queue.events[already:]:
            if event.kind == "voided":
                self._record(evse_id, event, 0.0)

    def run(self) -> list[ScheduleOutcome]:
        # Min-heap of (next decision time, evse_id); port order breaks ties,
        # which keeps runs deterministic.
        heap = []
        for evse_id, queue in self.queues.items():
            if queue.head() is not None:
                heapq.heappush(heap, (queue.clock, evse_id))
        while heap:
            _when, evse_id = heapq.heappop(heap)
            queue = self.queues[evse_id]
            seen = len(queue.events)
            state = queue.present()
            self._drain_voids(evse_id, queue, seen)
            if state is None:
                continue
            decision = self.rule.decide(evse_id, queue)
            if decision == 1:
                head = queue.head()
                allocation = self.allocator(head, self.site.evse(evse_id))
                load = self._site_load(queue.clock)
                if load + allocation.rate_kw > self.site.dso_capacity_kw + 1e-9:
                    log.debug("EVSE %r deferred session %r: site load %.1f kW full",
                                evse_id, head.session_id, load)
                    queue.clock += self.step_minutes
                    heapq.heappush(heap, (queue.clock, evse_id))
                    continue
                reward = self._session_reward(evse_id, queue, scheduled=True)
                seen = len(queue.events)
                _state, event = queue.transition(1, allocator=self.allocator)
                self._drain_voids(evse_id, queue, seen)
                for ev in queue.events[seen:]:
                    if ev.kind == "scheduled":
                        self._record(evse_id, ev, reward)
                        self._active.append(_ActiveInterval(
                            ev.clock_minutes + ev.allocation.charge_minutes,
                            ev.allocation.rate_kw))
                        self._served_since_update += 1
                        if (self.update_hook is not None and self.update_every > 0
                                and self._served_since_update >= self.update_every):
                            self.update_hook(self)
                            self._served_since_update = 0
            else:
                seen = len(queue.events)
                queue.transition(0, allocator=self.allocator)
                self._drain_voids(evse_id, queue, seen)
            if queue.head() is not None:
                heapq.heappush(heap, (queue.clock, evse_id))
            else:
                # Drain any trailing voids discovered when the queue empties.
                seen = len(queue.events)
                queue.present()
                self._drain_voids(evse_id, queue, seen)
        return self.outcomes


def compute_metrics(outcomes, site: SiteConfig) -> MetricsReport:
    """Summarize realized outcomes into the evaluation report."""
    outcomes = list(outcomes)
    served = [o for o in outcomes if o.scheduled]
    hours = {evse_id: 0.0 for evse_id in site.evse_ids}
    energy = {evse_id: 0.0 for evse_id in site.evse_ids}
    for o in served:
        hours[o.evse_id] = hours.get(o.evse_id, 0.0) + o.realized_minutes / 60.0
        energy[o.evse_id] = energy.get(o.evse_id, 0.0) + o.realized_energy_kwh
    total_minutes = sum(o.realized_minutes for o in served)
    total_energy = sum(o.realized_energy_kwh for o in served)
    rate = total_energy / total_minutes * 60.0 if total_minutes > 0 else 0.0
    efficiency = 100.0 * len(served) / len(outcomes) if outcomes else 0.0
    return MetricsReport(
        site_id=site.site_id,
        charging_rate_kw=rate,
        assignment_efficiency_pct=efficiency,
        sessions_served=len(served),
        sessions_total=len(outcomes),
        active_hours_by_evse=hours,
        energy_kwh_by_evse=energy,
    )


def execute(model: learner.SharedModel | None, batch: SessionBatch, site: SiteConfig,
            step_minutes: float = mdp.DEFAULT_STEP_MINUTES,
            force_schedule: bool = False,
            update_hook=None, update_every: int = 0):
    """Run the trained policy over a batch; returns (outcomes, MetricsReport).

    With ``force_schedule`` (or no model) every presented session is started,
    which is the oracle upper bound used in tests.
    """
    if model is None or force_schedule:
        rule = _ForcedRule()
        risk = model.risk_value if model is not None else 0.0
    else:
        rule = _PolicyRule(model)
        risk = model.risk_value
    engine = ScheduleEngine(batch, site, rule, allocator=mdp.rational_allocation,
                            step_minutes=step_minutes, risk_value=risk,
                            update_hook=update_hook, update_every=update_every)
    outcomes = engine.run()
    audit_outcomes(outcomes, batch, site)
    return outcomes, compute_metrics(outcomes, site)


def fcfs_as_requested_baseline(batch: SessionBatch, site: SiteConfig,
                               step_minutes: float = mdp.DEFAULT_STEP_MINUTES):
    """Replay the requested allocations verbatim (the deployed-system baseline)."""
    engine = ScheduleEngine(batch, site, _AsRequestedRule(),
                            allocator=mdp.as_requested_allocation,
                            step_minutes=step_minutes, risk_value=0.0)
    outcomes = engine.run()
    audit_outcomes(outcomes, batch, site)
    return outcomes, compute_metrics(outcomes, site)


def risk_off_ablation(batch: SessionBatch, site: SiteConfig,
                      config: learner.TrainConfig) -> MetricsReport:
    """Train with the tail-risk factor pinned to zero, then execute."""
    model, _logs = learner.train(batch, site, config, risk_value=0.0)
    _outcomes, report = execute(model, batch, site)
    return report


def audit_outcomes(outcomes, batch: SessionBatch, site: SiteConfig) -> None:
    """Hard checks after a run: session conservation and capacity limits."""
    outcomes = list(outcomes)
    if len(outcomes) != len(batch):
        raise SchedulerError(f"session conservation violated: {len(outcomes)} outcomes "
                             f"for {len(batch)} sessions")
    ids = sorted(o.session_id for o in outcomes)
    expected = sorted(s.session_id for s in batch)
    if ids != expected:
        raise SchedulerError("session conservation violated: outcome ids differ from batch")
    by_id = {s.session_id: s for s in batch}
    for o in outcomes:
        if o.voided and o.realized_energy_kwh != 0.0:
            raise SchedulerError(f"voided session {o.session_id!r} delivered energy")
        if o.scheduled:
            evse = site.evse(o.evse_id)
            cap = min(evse.supply_capacity_kw, by_id[o.session_id].receiving_capacity_kw)
            if o.realized_rate_kw > cap + 1e-9:
                raise SchedulerError(f"session {o.session_id!r} rate {o.realized_rate_kw} "
                                     f"exceeds cap {cap}")
    # Site load: charging intervals are constant-rate, so the maximum load
    # occurs at some charging start instant.
    served = [o for o in outcomes if o.scheduled and o.realized_minutes > 0]
    starts = [(o.start_minutes, o.start_minutes + o.realized_minutes, o.realized_rate_kw)
              for o in served]
    for start, _end, _rate in starts:
        load = sum(r for s, e, r in starts if s <= start + 1e-9 < e)
        if load > site.dso_capacity_kw + 1e-6:
            raise SchedulerError(f"site load {load:.3f} kW exceeds feed capacity "
                                 f"{site.dso_capacity_kw} kW at t={start:.1f} min")


def compare_report(reports: dict[str, MetricsReport]) -> list[dict]:
    """Side-by-side metric table with percentage deltas against the first entry."""
    if not reports:
        raise SchedulerError("compare needs at least one report")
    labels = list(reports)
    site_ids = {r.site_id for r in reports.values() if r.site_id}
    if len(site_ids) > 1:
        raise SchedulerError(f"mismatched site configs in comparison: {sorted(site_ids)}")
    base_label = labels[0]
    base = reports[base_label].scalar_metrics()
    rows = []
    for metric in base:
        row = {"metric": metric}
        for label in labels:
            row[label] = reports[label].scalar_metrics()[metric]
        for label in labels[1:]:
            if base[metric] != 0:
                delta = (row[label] - base[metric]) / base[metric] * 100.0
            else:
                delta = 0.0 if row[label] == 0 else float("inf")
            row[f"delta_pct_{label}"] = delta
        rows.append(row)
    return rows


def comparison_csv(rows: list[dict]) -> str:
    if not rows:
        return "\n"
    header = list(rows[0])
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(row[key]) if isinstance(row[key], str)
                              else repr(row[key]) for key in header))
    return "\n".join(lines) + "\n"


def outcomes_jsonl(outcomes) -> str:
    return "\n".join(o.to_json_line() for o in outcomes) + "\n"
