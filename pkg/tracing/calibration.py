"""Clock-domain calibration onto one reference timeline."""

from collections import defaultdict
from typing import Iterable, NamedTuple

import numpy as np
from pydantic import BaseModel, Field

from services.errors import AlreadyCalibrated, InconsistentBeacons, NoBeacons
from services.log import Log
from tracing.events import EventKind, TraceEvent

BEACON_NAME = "beacon"


class Beacon(NamedTuple):
    domain: str
    local_ts: int
    reference_ts: int


class ClockTransform(BaseModel):
    """
    Affine map from a local clock to the reference clock.

    reference = drift * local + offset_ns
    """

    offset_ns: float = 0.0
    drift: float = 1.0
    max_residual_ns: float = 0.0
    beacon_count: int = 0

    def apply(self, local_ts: int) -> int:
        return int(round(self.drift * local_ts + self.offset_ns))

    def scale(self, duration: int) -> int:
        return int(round(self.drift * duration))


IDENTITY = ClockTransform()


class ClockCalibration(BaseModel):
    """Per-domain transforms; the reference domain maps to itself."""

    reference_domain: str = "host"
    transforms: dict[str, ClockTransform] = Field(default_factory=dict)

    def transform_for(self, domain: str) -> ClockTransform:
        if domain == self.reference_domain:
            return IDENTITY
        if domain not in self.transforms:
            raise NoBeacons(f"No calibration for clock domain '{domain}'", {"domain": domain})
        return self.transforms[domain]


def extract_beacons(events: Iterable[TraceEvent]) -> list[Beacon]:
    """
    Collect inline beacons: Instant events named ``beacon`` whose
    ``reference_ts`` arg holds the reference time in microseconds.
    """
    beacons = []
    for event in events:
        if event.kind is EventKind.INSTANT and event.name == BEACON_NAME and "reference_ts" in event.args:
            reference_us = float(event.args["reference_ts"])
            beacons.append(Beacon(event.source.clock_domain, event.start_ts, int(round(reference_us * 1000))))
    return beacons


def _fit_domain(domain: str, pairs: list[Beacon], estimate_drift: bool, tolerance_ns: float) -> ClockTransform:
    local = np.array([b.local_ts for b in pairs], dtype=float)
    reference = np.array([b.reference_ts for b in pairs], dtype=float)

    if estimate_drift:
        if len(pairs) < 2 or np.ptp(local) == 0:
            raise NoBeacons(
                f"Drift estimation for '{domain}' needs two beacons at distinct local times",
                {"domain": domain, "beacons": len(pairs)},
            )
        # Least-squares line through (local, reference)
        local_mean = local.mean()
        reference_mean = reference.mean()
        drift = float(np.sum((local - local_mean) * (reference - reference_mean)) / np.sum((local - local_mean) ** 2))
        offset = float(reference_mean - drift * local_mean)
    else:
        drift = 1.0
        offset = float(np.mean(reference - local))

    residuals = np.abs(drift * local + offset - reference)
    max_residual = float(residuals.max())
    if max_residual > tolerance_ns:
        raise InconsistentBeacons(
            f"Beacons of '{domain}' leave a residual of {max_residual:.1f} ns (tolerance {tolerance_ns:.1f} ns)",
            {"domain": domain, "max_residual_ns": max_residual, "tolerance_ns": tolerance_ns},
        )
    return ClockTransform(offset_ns=offset, drift=drift, max_residual_ns=max_residual, beacon_count=len(pairs))


def calibrate(
    beacons: Iterable[Beacon | tuple[str, int, int]],
    reference_domain: str = "host",
    tolerance_ns: float = 1000.0,
    estimate_drift: bool = False,
    domains: Iterable[str] = (),
) -> ClockCalibration:
    """
    Fit one affine transform per clock domain from beacon pairs.

    Parameters
    ----------
    beacons : Iterable[Beacon | tuple[str, int, int]]
        (domain, local_ts, reference_ts) triples in nanoseconds.
    reference_domain : str, optional
        Domain that defines the unified timeline; always identity.
    tolerance_ns : float, optional
        Maximum allowed residual per beacon. Defaults to 1 µs.
    estimate_drift : bool, optional
        Fit drift as well as offset. Needs two beacons per domain.
    domains : Iterable[str], optional
        Domains that must be calibrated; each needs at least one beacon.

    Returns
    -------
    ClockCalibration
        Transforms with the max residual recorded per domain.

    Raises
    ------
    NoBeacons
        If a required domain has no beacon.
    InconsistentBeacons
        If a fit leaves a residual above the tolerance.
    """
    grouped: dict[str, list[Beacon]] = defaultdict(list)
    for beacon in beacons:
        grouped[beacon[0]].append(Beacon(*beacon))

    calibration = ClockCalibration(reference_domain=reference_domain)
    for domain in sorted(set(domains) - {reference_domain}):
        if domain not in grouped:
            raise NoBeacons(f"Clock domain '{domain}' has no beacons", {"domain": domain})

    for domain in sorted(grouped):
        if domain == reference_domain:
            continue
        transform = _fit_domain(domain, grouped[domain], estimate_drift, tolerance_ns)
        calibration.transforms[domain] = transform
        Log.info(
            f"Calibrated clock domain '{domain}': offset={transform.offset_ns:.1f} ns "
            f"drift={transform.drift:.9f} max_residual={transform.max_residual_ns:.1f} ns"
        )
    return calibration


def apply_calibration(events: Iterable[TraceEvent], calibration: ClockCalibration) -> list[TraceEvent]:
    """
    Map every event onto the reference timeline and mark it calibrated.

    Raises
    ------
    AlreadyCalibrated
        If an event already carries the calibrated flag.
    NoBeacons
        If an event's domain has no transform.
    """
    calibrated = []
    for event in events:
        if event.calibrated:
            raise AlreadyCalibrated(
                f"Event {event.event_id} is already calibrated", {"event_id": event.event_id}
            )
        transform = calibration.transform_for(event.source.clock_domain)
        update: dict = {"start_ts": transform.apply(event.start_ts), "calibrated": True}
        if event.duration is not None:
            update["duration"] = transform.scale(event.duration)
        calibrated.append(event.model_copy(update=update))
    return calibrated
