"""Shared builders for tests."""

from datetime import datetime, timedelta

from ramals import ChargingSession, EvseConfig, SessionBatch, SiteConfig, VehicleClass

T0 = datetime(2026, 1, 5, 8, 0)


def make_session(requested=10.0, delivered=10.0, charge_min=60, plugged_min=None,
                 window_min=None, evse="EVSE-1", sid="s", klass=VehicleClass.CV,
                 start=T0, receiving_kw=50.0):
    plugged = charge_min if plugged_min is None else plugged_min
    window = charge_min if window_min is None else window_min
    return ChargingSession(
        session_id=sid, evse_id=evse, vehicle_class=klass,
        energy_requested_kwh=requested, minutes_available=float(window),
        plug_in_time=start, charge_end_time=start + timedelta(minutes=charge_min),
        unplug_time=start + timedelta(minutes=plugged),
        energy_delivered_kwh=delivered, receiving_capacity_kw=receiving_kw)


def make_av_session(energy=10.0, charge_min=60, evse="EVSE-1", sid="s", start=T0):
    """AV request: delivered equals requested and the window is exact."""
    return make_session(requested=energy, delivered=energy, charge_min=charge_min,
                        evse=evse, sid=sid, klass=VehicleClass.AV, start=start)


def spaced_av_batch(n=12, energy=20.0, charge_min=30, gap_min=10, evses=("EVSE-1",)):
    """AV sessions spaced so each starts after the previous one finished."""
    sessions = []
    for e_idx, evse in enumerate(evses):
        t = T0
        for i in range(n):
            sessions.append(make_av_session(energy=energy, charge_min=charge_min,
                                            evse=evse, sid=f"{evse}-s{i}", start=t))
            t = t + timedelta(minutes=charge_min + gap_min)
    return SessionBatch(sessions)


def site_for(batch, dso_kw=1000.0, switching_minutes=0.0, supply_kw=50.0):
    return SiteConfig("test-site", dso_kw,
                      tuple(EvseConfig(e, supply_capacity_kw=supply_kw,
                                       switching_minutes=switching_minutes)
                            for e in batch.evse_ids))
