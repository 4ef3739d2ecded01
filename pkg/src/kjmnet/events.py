"""Gait event detection from force plate data and foot geometry checks.

Events are found on the analog timeline:

  * foot strike: earliest sample from which vertical force stays above the
    contact threshold for an entire hold window (debounces plate noise);
  * toe off: first sample after foot strike where vertical force drops
    below the release threshold.

Conversion to the (slower) marker timeline is round-to-nearest on the rate
ratio. Foot-on-plate and foot-orientation checks run on the marker
timeline.
"""

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateStance, NoEvent

__all__ = [
    "Limb",
    "Orientation",
    "EventThresholds",
    "GaitEvents",
    "detect_foot_strike",
    "detect_toe_off",
    "foot_within_plate",
    "classify_foot_orientation",
    "limb_markers",
]


class Limb(enum.Enum):
    LEFT = "L"
    RIGHT = "R"

    @property
    def other(self):
        return Limb.RIGHT if self is Limb.LEFT else Limb.LEFT


class Orientation(enum.Enum):
    """Foot posture at contact: heel down, flat, or toe down."""

    HEEL_DOWN = "HD"
    FLAT = "FL"
    TOE_DOWN = "TD"


@dataclass(frozen=True)
class EventThresholds:
    """Detection thresholds.

    fs_force: vertical force (N) that must be exceeded at contact.
    to_force: vertical force (N) below which the foot has left the plate.
    fs_hold: time (s) the contact force must stay above fs_force.
    """

    fs_force: float = 20.0
    to_force: float = 10.0
    fs_hold: float = 0.025

    def hold_samples(self, rate):
        return max(1, round(self.fs_hold * rate))


@dataclass(frozen=True)
class GaitEvents:
    """Detected contact interval, as analog sample indices."""

    foot_strike: int
    toe_off: int
    rate: float

    def marker_frames(self, marker_rate):
        """Event indices on the marker timeline (round to nearest)."""
        ratio = self.rate / marker_rate
        return round(self.foot_strike / ratio), round(self.toe_off / ratio)


def detect_foot_strike(fz, rate, thresholds=EventThresholds()):
    """First analog sample index where contact force holds.

    Returns the smallest i such that fz[j] > fs_force for every j in
    [i, i + hold), where hold = round(fs_hold * rate). The hold window must
    fit inside the series; raises NoEvent when no sample qualifies.
    """
    fz = np.asarray(fz, dtype=float)
    hold = thresholds.hold_samples(rate)
    if fz.ndim != 1 or fz.size < hold:
        raise NoEvent(f"series of {fz.size} samples cannot hold for {hold}")
    above = fz > thresholds.fs_force
    csum = np.concatenate(([0], np.cumsum(above)))
    full = csum[hold:] - csum[:-hold] == hold
    if not full.any():
        raise NoEvent(
            f"no {hold}-sample run above {thresholds.fs_force} N"
        )
    return int(np.argmax(full))


def detect_toe_off(fz, rate, after, thresholds=EventThresholds()):
    """First analog sample index strictly after `after` with force below
    the release threshold. Raises NoEvent when the force never drops."""
    fz = np.asarray(fz, dtype=float)
    if not (0 <= after < fz.size):
        raise NoEvent(f"search start {after} outside series of {fz.size}")
    below = fz[after + 1:] < thresholds.to_force
    if not below.any():
        raise NoEvent(f"force never drops below {thresholds.to_force} N")
    return int(after + 1 + np.argmax(below))


def limb_markers(limb):
    """Canonical label names of one limb's foot markers (toe, heel, ankle)."""
    side = limb.value
    return (f"{side}MT1", f"{side}CAL", f"{side}LMAL")


def _limb_indices(marker_set, limb):
    return tuple(marker_set.labels.index(name) for name in limb_markers(limb))


def foot_within_plate(marker_set, limb, frame, corners):
    """True when the limb's foot centroid lies inside the plate quadrilateral.

    The centroid of the toe, heel and ankle markers is projected to the
    horizontal plane and tested against the (simple) quadrilateral with an
    inclusive boundary.
    """
    idx = _limb_indices(marker_set, limb)
    pts = marker_set.positions[frame, idx, :2]
    centroid = pts.mean(axis=0)
    return _point_in_polygon(centroid, np.asarray(corners, dtype=float))


def _point_in_polygon(point, poly):
    """Even-odd test with an inclusive boundary."""
    x, y = float(point[0]), float(point[1])
    n = poly.shape[0]
    span = max(np.ptp(poly, axis=0).max(), 1.0)
    eps = 1e-9 * span
    inside = False
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        # On-segment check first: boundary counts as inside.
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        if abs(cross) <= eps * max(abs(x2 - x1) + abs(y2 - y1), 1.0):
            if min(x1, x2) - eps <= x <= max(x1, x2) + eps and \
                    min(y1, y2) - eps <= y <= max(y1, y2) + eps:
                return True
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


def classify_foot_orientation(marker_set, limb, fs, to):
    """Contact posture from heel/toe marker heights.

    Uses d = z(heel) - z(toe) at foot strike, compared against a mid-stance
    reference band (mean |z(heel) - z(toe)| over the 25-30 % stance window)
    widened by 1 % of the peak-to-peak of the height difference over
    stance. Above the band: heel down; below its negative: toe down;
    within: flat.
    """
    fs, to = int(fs), int(to)
    if to - fs < 4:
        raise DegenerateStance(f"stance of {to - fs} frames is too short")
    if fs < 0 or to >= marker_set.frame_count:
        raise DegenerateStance(
            f"stance [{fs}, {to}] outside recorded {marker_set.frame_count} frames"
        )
    toe_i, heel_i, _ = _limb_indices(marker_set, limb)
    z_heel = marker_set.positions[:, heel_i, 2]
    z_toe = marker_set.positions[:, toe_i, 2]
    diff = z_heel - z_toe

    d = diff[fs]
    length = to - fs
    lo = fs + 0.25 * length
    hi = fs + 0.30 * length
    frames = np.arange(math.ceil(lo), math.floor(hi) + 1)
    if frames.size == 0:
        frames = np.array([round(fs + 0.275 * length)])
    band = float(np.abs(diff[frames]).mean())
    tol = 0.01 * float(np.ptp(diff[fs:to + 1]))

    if d > band + tol:
        return Orientation.HEEL_DOWN
    if d < -(band + tol):
        return Orientation.TOE_DOWN
    return Orientation.FLAT
