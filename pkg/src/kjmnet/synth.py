"""Synthetic gait trials with scripted ground truth.

A TrialRecipe scripts everything a real capture would measure: approach
speed and turn angle of the pelvis path, stance timing, foot posture at
contact, and subject scale. From a recipe the generator lays down marker
trajectories (250 Hz) and plate channels (2,000 Hz) such that

  * foot strike and toe off land exactly on the scripted analog samples
    (the vertical force steps from 0 to >= 26 N at contact and back to 0
    at release);
  * the movement classifier recovers the scripted class: the pelvis path
    is piecewise straight with the turn blended inside stance, so the
    approach and departure windows see constant velocity;
  * the scripted stance foot is the only one over the plate at contact,
    and the heel-toe height gap at contact encodes the scripted posture;
  * joint moment curves follow a fixed smooth function of the scripted
    features (speed, unsigned turn angle, contact height gap), so mirrored
    recipes produce identical responses.

The moment curves are closed-form over stance fraction and are also laid
down on the marker timeline, the same shape a measured series would
arrive in.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .c3d import CANONICAL_MARKERS, ForcePlateRecord, MarkerTrajectorySet, make_c3d
from .events import Limb, Orientation
from .prep import Movement

__all__ = [
    "MARKER_RATE",
    "ANALOG_RATE",
    "PLATE_CORNERS",
    "KJM_WAVEFORMS",
    "GRFM_WAVEFORMS",
    "TrialRecipe",
    "SynthTrial",
    "generate_trial",
    "kjm_curves",
    "trial_to_c3d",
    "mirror_recipe",
    "random_recipes",
]

MARKER_RATE = 250.0
ANALOG_RATE = 2000.0
SUBFRAMES = int(ANALOG_RATE / MARKER_RATE)

# 500 x 600 mm plate centered at the origin.
PLATE_CORNERS = np.array(
    [[-250.0, -300.0], [250.0, -300.0], [250.0, 300.0], [-250.0, 300.0]]
)

KJM_WAVEFORMS = ("flexion", "adduction", "rotation")
GRFM_WAVEFORMS = ("fz",)

_BODY_HEIGHT = 950.0  # sacrum height, mm
_NECK_RISE = 520.0  # C7 above sacrum, mm
_FOOT_LATERAL = 90.0  # stance-foot offset from midline, mm
_BASE_WEIGHT = 736.0  # ~75 kg subject, N
_CONTACT_GAP = 60.0  # heel-toe height gap at contact, mm


@dataclass(frozen=True)
class TrialRecipe:
    """Script for one trial.

    speed is the approach speed in m/s; turn_mag the unsigned turn in
    degrees (its sign follows from movement and limb); fs_time / stance_time
    place the contact interval in seconds; gap_scale scales the heel-toe
    height gap at contact (+1 heel down, -1 toe down, 0 flat); noise is the
    marker noise std in mm; response_noise the moment curve noise std.
    """

    movement: Movement
    limb: Limb
    orientation: Orientation
    speed: float
    turn_mag: float
    fs_time: float
    stance_time: float
    duration: float
    stature: float = 1.0
    bob: float = 22.0
    gap_scale: float = None
    peak_force: float = None
    noise: float = 0.0
    response_noise: float = 0.0
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        straight = self.movement in (Movement.WALK, Movement.RUN)
        if straight and self.turn_mag >= 20.0:
            raise ValueError(
                f"{self.movement.value} recipe turns {self.turn_mag} degrees"
            )
        if not straight and self.turn_mag < 20.0:
            raise ValueError(
                f"{self.movement.value} recipe turns only {self.turn_mag} degrees"
            )
        if self.movement is Movement.SIDESTEP_LEFT and self.limb is not Limb.RIGHT:
            raise ValueError("a left cut pushes off the right limb")
        if self.movement is Movement.SIDESTEP_RIGHT and self.limb is not Limb.LEFT:
            raise ValueError("a right cut pushes off the left limb")

    @property
    def turn_angle(self):
        """Signed turn (positive = left) implied by movement and limb."""
        if self.movement is Movement.SIDESTEP_LEFT:
            return self.turn_mag
        if self.movement is Movement.SIDESTEP_RIGHT:
            return -self.turn_mag
        if self.movement is Movement.CROSSOVER:
            # Turning toward the stance side crosses the swing leg over.
            return self.turn_mag if self.limb is Limb.LEFT else -self.turn_mag
        return math.copysign(self.turn_mag, 1 if self.limb is Limb.LEFT else -1)

    @property
    def contact_gap(self):
        """Signed heel-minus-toe marker height at contact, mm."""
        if self.gap_scale is not None:
            return _CONTACT_GAP * self.gap_scale
        sign = {
            Orientation.HEEL_DOWN: 1.0,
            Orientation.FLAT: 0.0,
            Orientation.TOE_DOWN: -1.0,
        }[self.orientation]
        return _CONTACT_GAP * sign

    @property
    def weight(self):
        return _BASE_WEIGHT * self.stature

    @property
    def peak(self):
        if self.peak_force is not None:
            return self.peak_force
        if self.movement is Movement.WALK:
            factor = 1.02 + 0.09 * self.speed
        else:
            factor = 1.45 + 0.21 * self.speed
        return factor * self.weight

    @property
    def source_id(self):
        label = self.name or f"{self.movement.value}-{self.limb.value}"
        return f"synth:{label}:{self.seed:08d}"


@dataclass
class SynthTrial:
    """Generated signals plus the scripted truth they encode."""

    recipe: TrialRecipe
    markers: MarkerTrajectorySet
    plate: ForcePlateRecord
    kjm_series: np.ndarray  # (marker frames, 3), marker timeline
    kjm_truth: np.ndarray  # (3, 90), exact closed form over stance
    fs_index: int  # scripted, analog timeline
    to_index: int

    @property
    def source_id(self):
        return self.recipe.source_id


def _smoothstep(u):
    return 0.5 * (1.0 - np.cos(np.pi * np.clip(u, 0.0, 1.0)))


def _heading(recipe, t):
    """Heading angle (rad, CCW from +y) at time t; turn blends in stance."""
    u = (t - recipe.fs_time) / recipe.stance_time
    return math.radians(recipe.turn_angle) * _smoothstep(u)


def _pelvis_path(recipe, t):
    """Horizontal pelvis positions (len(t), 2) in mm.

    Velocity is exactly constant outside the stance interval; trapezoid
    integration is exact on those straight segments.
    """
    theta = _heading(recipe, t)
    v = recipe.speed * 1000.0  # mm/s
    vel = np.stack([-v * np.sin(theta), v * np.cos(theta)], axis=1)
    dt = np.diff(t)[:, None]
    pos = np.zeros_like(vel)
    pos[1:] = np.cumsum(0.5 * (vel[1:] + vel[:-1]) * dt, axis=0)
    # Shift so the pelvis sits just behind the plate center at contact.
    fs_frame = int(round(recipe.fs_time * MARKER_RATE))
    return pos - pos[fs_frame] + np.array([0.0, -80.0])


def _plant_weight(recipe, t):
    """1 inside stance, cosine ramps over 0.15 s on both sides, 0 elsewhere."""
    ramp = 0.15
    rise = _smoothstep((t - (recipe.fs_time - ramp)) / ramp)
    fall = _smoothstep(((recipe.fs_time + recipe.stance_time + ramp) - t) / ramp)
    return np.minimum(rise, fall)


def _gap_pulse(recipe, t):
    """Contact posture pulse: peaks exactly at foot strike, gone by 15 %
    of stance (clear of the mid-stance reference band)."""
    fs = recipe.fs_time
    width_in = 0.10
    width_out = 0.15 * recipe.stance_time
    before = np.clip((t - (fs - width_in)) / width_in, 0.0, 1.0)
    after = np.clip(((fs + width_out) - t) / width_out, 0.0, 1.0)
    return _smoothstep(before) * _smoothstep(after)


def _foot_positions(recipe, t, pelvis, limb):
    """(frames, 3, 3) trajectories for one foot's toe, heel, ankle."""
    stance = limb is recipe.limb
    side = 1.0 if limb is Limb.RIGHT else -1.0
    lateral = np.array([side * _FOOT_LATERAL, 0.0])

    theta = _heading(recipe, t)
    rot = np.stack(
        [np.cos(theta), -np.sin(theta), np.sin(theta), np.cos(theta)], axis=1
    ).reshape(-1, 2, 2)
    scale = recipe.stature
    # Local foot frame offsets (x lateral, y forward), mm.
    offsets = np.array(
        [
            [side * 12.0, 130.0],  # toe (MT1)
            [side * 8.0, -115.0],  # heel (CAL)
            [side * 42.0, -25.0],  # ankle (LMAL)
        ]
    ) * scale

    if stance:
        w = _plant_weight(recipe, t)
        plant = lateral
        base = (1.0 - w[:, None]) * (pelvis + lateral) + w[:, None] * plant
        lift = 55.0 * scale * (1.0 - w)
    else:
        # Swing leg trails at contact (well off the plate) and passes
        # through to lead after stance.
        u = (t - recipe.fs_time) / (recipe.stance_time * 1.3)
        stride = -450.0 * scale * np.cos(np.pi * np.clip(u, 0.0, 1.0))
        base = pelvis + lateral + np.stack(
            [np.zeros_like(stride), stride], axis=1
        )
        w = _plant_weight(recipe, t)
        lift = 25.0 * scale + 45.0 * scale * w

    xy = base[:, None, :] + np.einsum("fij,mj->fmi", rot, offsets)
    ground = 28.0 * scale
    z = np.broadcast_to(
        (ground + lift)[:, None], (len(t), 3)
    ).copy()
    if stance:
        # Contact pulse encodes the scripted posture; the mid-stance arch
        # ripple keeps the classifier's reference band away from zero so
        # flat contacts stay flat under marker noise.
        arch = 3.0 * scale * np.sin(
            np.pi * np.clip(
                (t - recipe.fs_time) / recipe.stance_time, 0.0, 1.0
            )
        )
        gap = recipe.contact_gap * _gap_pulse(recipe, t) + arch
        z[:, 0] -= 0.5 * gap  # toe
        z[:, 1] += 0.5 * gap  # heel
    return np.concatenate([xy, z[:, :, None]], axis=2)


def _marker_set(recipe, t, rng):
    pelvis = _pelvis_path(recipe, t)
    scale = recipe.stature
    bob_freq = 1.6 + 0.45 * recipe.speed
    bob = recipe.bob * np.sin(2.0 * np.pi * bob_freq * t)

    positions = np.zeros((len(t), 8, 3))
    sacr_z = _BODY_HEIGHT * scale + bob
    sway = 18.0 * np.sin(2.0 * np.pi * 0.5 * bob_freq * t)
    positions[:, CANONICAL_MARKERS.index("SACR"), :2] = pelvis
    positions[:, CANONICAL_MARKERS.index("SACR"), 2] = sacr_z
    positions[:, CANONICAL_MARKERS.index("C7"), 0] = pelvis[:, 0] + sway
    positions[:, CANONICAL_MARKERS.index("C7"), 1] = pelvis[:, 1] - 30.0
    positions[:, CANONICAL_MARKERS.index("C7"), 2] = sacr_z + _NECK_RISE * scale

    for limb in (Limb.LEFT, Limb.RIGHT):
        foot = _foot_positions(recipe, t, pelvis, limb)
        for k, part in enumerate(("MT1", "CAL", "LMAL")):
            positions[:, CANONICAL_MARKERS.index(limb.value + part)] = foot[:, k]

    if recipe.noise > 0.0:
        positions = positions + rng.normal(0.0, recipe.noise, positions.shape)
    return MarkerTrajectorySet(
        labels=CANONICAL_MARKERS, positions=positions, rate=MARKER_RATE
    )


def _stance_profile(recipe, u):
    """Vertical force shape over stance fraction u in [0, 1): a floor of
    26 N at the edges (kept above the contact threshold) plus a hump.

    The hump's peak timing shifts with contact posture: a heel-first
    landing (positive gap) loads later in stance, a toe-first landing
    earlier. This couples the force shape to the same posture latent the
    moment curves depend on, so force-trained features carry over."""
    bias = 1.0 + 0.2 * np.clip(recipe.contact_gap / _CONTACT_GAP, -1.5, 1.5)
    hump = np.sin(np.pi * u**bias) ** 0.7
    if recipe.movement is Movement.WALK:
        hump = hump * (1.0 - 0.35 * np.sin(np.pi * u) ** 4)
    return 26.0 + (recipe.peak - 26.0) * hump


def _plate_channels(recipe, n_samples, fs, to):
    channels = np.zeros((n_samples, 6))
    length = to - fs
    i = np.arange(fs, to)
    u = (i - fs) / length
    fz = _stance_profile(recipe, u)
    turn = math.radians(recipe.turn_angle)
    amp = recipe.peak

    channels[fs:to, 2] = fz
    channels[fs:to, 0] = (
        -0.25 * amp * math.sin(turn) * np.sin(np.pi * u)
        + 0.06 * amp * np.sin(2.0 * np.pi * u)
    )
    channels[fs:to, 1] = -0.18 * amp * np.sin(2.0 * np.pi * u)
    cop_y = (u - 0.45) * 180.0 * recipe.stature
    cop_x = 30.0 * np.sin(np.pi * u) * (1.0 if recipe.limb is Limb.RIGHT else -1.0)
    channels[fs:to, 3] = fz * cop_y
    channels[fs:to, 4] = -fz * cop_x
    channels[fs:to, 5] = 0.015 * amp * math.sin(turn) * np.sin(np.pi * u) * 100.0
    return channels


def _kjm_features(recipe):
    # Travel span (m) over stance rather than raw speed: after time
    # normalization the marker window shows displacement per stance, so
    # span is the latent a predictor can actually carry.
    return (
        recipe.speed * recipe.stance_time,
        abs(recipe.turn_angle),
        recipe.contact_gap,
        recipe.stature,
    )


def kjm_curves(recipe, s):
    """Closed-form joint moment curves at stance fractions s.

    Returns (3, len(s)) in N.m, waveforms in KJM_WAVEFORMS order. The
    curves depend on the stance travel span, unsigned turn angle, contact
    height gap and stature only, so a mirrored recipe yields the identical
    response.
    """
    s = np.asarray(s, dtype=float)
    span, a, d, scale = _kjm_features(recipe)
    s1 = np.sin(np.pi * s)
    s2 = np.sin(2.0 * np.pi * s)
    s3 = np.sin(3.0 * np.pi * s)

    # The contact-gap terms flip the early-stance lobe between heel-down
    # and toe-down trials (strongest for rotation), so a mean-shape
    # predictor cannot score well on every waveform.
    flexion = (20.0 + 30.0 * span + 6.0 * span * span + 0.10 * a) * s1 ** 1.1 \
        - (3.0 + 8.0 * span) * s2 + 0.10 * d * s3
    adduction = (5.0 + 0.40 * a + 6.0 * span * (a / 35.0)) * s1 \
        + (1.0 + 0.12 * a) * s2 + 0.12 * d * s3
    rotation = (2.0 + 0.18 * a + 5.0 * span) * s1 ** 2 \
        + (0.3 + 0.02 * a) * s3 + 0.25 * d * s3
    return np.stack([flexion, adduction, rotation]) * scale


def generate_trial(recipe):
    """Lay down one synthetic trial from its recipe."""
    frames = int(round(recipe.duration * MARKER_RATE))
    fs = int(round(recipe.fs_time * ANALOG_RATE))
    to = fs + int(round(recipe.stance_time * ANALOG_RATE))
    n_analog = frames * SUBFRAMES
    if not 0 < fs < to < n_analog:
        raise ValueError(
            f"stance [{fs}, {to}] does not fit in {n_analog} analog samples"
        )

    rng = np.random.default_rng(recipe.seed)
    t = np.arange(frames) / MARKER_RATE
    markers = _marker_set(recipe, t, rng)
    channels = _plate_channels(recipe, n_analog, fs, to)
    plate = ForcePlateRecord(
        channels=channels, corners=PLATE_CORNERS.copy(), rate=ANALOG_RATE
    )

    truth = kjm_curves(recipe, np.linspace(0.0, 1.0, 90))
    # The same curves on the marker timeline, held at their stance-edge
    # values outside stance (what a measured series would look like).
    stance_frac = np.clip(
        (t - recipe.fs_time) / recipe.stance_time, 0.0, 1.0
    )
    series = kjm_curves(recipe, stance_frac).T
    if recipe.response_noise > 0.0:
        # Smooth per-trial wobble on a few low harmonics, applied to the
        # truth and the series from the same coefficients, so both remain
        # the same underlying curve.
        modes = np.arange(1, 5)
        coeff = rng.normal(0.0, recipe.response_noise, (3, 4)) / modes

        def wobble(frac):
            return coeff @ np.sin(np.pi * np.outer(modes, frac))

        truth = truth + wobble(np.linspace(0.0, 1.0, 90))
        series = series + wobble(stance_frac).T

    return SynthTrial(
        recipe=recipe,
        markers=markers,
        plate=plate,
        kjm_series=series,
        kjm_truth=truth,
        fs_index=fs,
        to_index=to,
    )


def trial_to_c3d(trial):
    """Pack a generated trial into a standard single-plate capture file."""
    return make_c3d(
        trial.markers.positions,
        trial.plate.channels,
        trial.plate.corners,
        marker_rate=trial.markers.rate,
        analog_rate=trial.plate.rate,
    )


def mirror_recipe(recipe):
    """Swap stance limb and turn direction; responses stay identical."""
    mirrored = {
        Movement.SIDESTEP_LEFT: Movement.SIDESTEP_RIGHT,
        Movement.SIDESTEP_RIGHT: Movement.SIDESTEP_LEFT,
    }
    return replace(
        recipe,
        movement=mirrored.get(recipe.movement, recipe.movement),
        limb=recipe.limb.other,
    )


# --------------------------------------------------------------------------
# recipe sampling
# --------------------------------------------------------------------------

_ORIENTATION_MIX = (
    (Orientation.HEEL_DOWN, 0.55),
    (Orientation.FLAT, 0.25),
    (Orientation.TOE_DOWN, 0.20),
)


def _draw_orientation(rng):
    r = rng.random()
    acc = 0.0
    for orientation, p in _ORIENTATION_MIX:
        acc += p
        if r < acc:
            return orientation
    return _ORIENTATION_MIX[-1][0]


def random_recipes(
    n,
    kind,
    seed,
    limb=Limb.RIGHT,
    crossover_rate=0.05,
    noise=0.6,
    response_noise=0.5,
):
    """Draw n recipes of one movement kind.

    kind: "walk", "run" or "sidestep". Sidestep draws are contaminated
    with crossover trials at crossover_rate (they exercise the assembly
    hygiene). Every recipe gets an independent child seed, so a recipe
    list is reproducible from (n, kind, seed) alone.
    """
    if kind not in ("walk", "run", "sidestep"):
        raise ValueError(f"unknown movement kind {kind!r}")
    root = np.random.default_rng(seed)
    child_seeds = root.spawn(n)
    recipes = []
    for i, child in enumerate(child_seeds):
        rng = child
        orientation = _draw_orientation(rng)
        gap_scale = {
            Orientation.HEEL_DOWN: rng.uniform(0.8, 1.2),
            Orientation.FLAT: 0.0,
            Orientation.TOE_DOWN: -rng.uniform(0.8, 1.2),
        }[orientation]
        if kind == "walk":
            movement = Movement.WALK
            speed = rng.uniform(1.1, 2.0)
            turn = rng.uniform(0.0, 9.0)
            stance = rng.uniform(0.58, 0.75)
        elif kind == "run":
            movement = Movement.RUN
            speed = rng.uniform(2.6, 5.0)
            turn = rng.uniform(0.0, 10.0)
            stance = rng.uniform(0.20, 0.32)
        else:
            speed = rng.uniform(2.4, 4.6)
            turn = rng.uniform(24.0, 50.0)
            stance = rng.uniform(0.24, 0.40)
            if rng.random() < crossover_rate:
                movement = Movement.CROSSOVER
            else:
                movement = (
                    Movement.SIDESTEP_LEFT
                    if limb is Limb.RIGHT
                    else Movement.SIDESTEP_RIGHT
                )
        fs_time = rng.uniform(0.75, 1.10)
        recipes.append(
            TrialRecipe(
                movement=movement,
                limb=limb,
                orientation=orientation,
                speed=speed,
                turn_mag=turn,
                fs_time=fs_time,
                stance_time=stance,
                duration=fs_time + 1.45 * stance + 0.35,
                stature=rng.uniform(0.92, 1.08),
                bob=rng.uniform(15.0, 30.0),
                gap_scale=gap_scale,
                noise=noise,
                response_noise=response_noise,
                seed=int(rng.integers(0, 2 ** 31 - 1)),
                name=f"{kind}-{i:05d}",
            )
        )
    return recipes
