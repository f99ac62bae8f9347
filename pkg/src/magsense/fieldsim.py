"""Point-dipole field simulation, sensor arrays and synthetic gesture corpora.

Units: positions in cm, dipole moments in A*cm^2, fields in microtesla. With
those units the dipole prefactor mu0/4pi is exactly 10 uT*cm^3/(A*cm^2).
"""

from __future__ import annotations

import csv
import hashlib
import os
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .core import DEFAULT_RATE_HZ, N_SENSORS, Recording, write_recording
from .magdelta import DEFAULT_THRESHOLD_UT, pair_delta_array

MU0_4PI = 10.0
R_MIN_CM = 0.5
SENSOR_SPACING_CM = 0.8
NOISE_STD_UT = (0.6, 0.6, 1.1)
EARTH_FIELD_UT = 50.0
EARTH_INCLINATION_DEG = 60.0
RING_RANGE_CM = 11.0
SILICON_FRACTION = 0.1

TASKS = ("face8", "scratch9", "scratch_binary")


class NearFieldWarning(UserWarning):
    """A sensor came closer to a magnet than the dipole model's clamp radius."""


def derive_seed(*parts: object) -> int:
    """Deterministic 63-bit seed from arbitrary parts (sha256 of their repr)."""
    h = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


# --- dipole law -------------------------------------------------------------

def dipole_field_many(moments: np.ndarray, magnet_pos: np.ndarray, sensor_pos: np.ndarray,
                      r_min: float = R_MIN_CM) -> tuple[np.ndarray, int]:
    """Field of T dipoles at S sensors.

    ``moments`` and ``magnet_pos`` are (T, 3), ``sensor_pos`` is (S, 3).
    Returns the (T, S, 3) field and the number of clamped (t, s) pairs.
    """
    moments = np.atleast_2d(np.asarray(moments, dtype=float))
    magnet_pos = np.atleast_2d(np.asarray(magnet_pos, dtype=float))
    sensor_pos = np.atleast_2d(np.asarray(sensor_pos, dtype=float))
    r = sensor_pos[None, :, :] - magnet_pos[:, None, :]
    dist = np.linalg.norm(r, axis=-1)
    close = dist < r_min
    n_clamped = int(close.sum())
    if n_clamped:
        # keep the direction, push the distance out to r_min
        safe = np.where(dist > 0, dist, 1.0)
        unit = np.where((dist > 0)[..., None], r / safe[..., None], np.array([0.0, 0.0, 1.0]))
        r = np.where(close[..., None], unit * r_min, r)
        dist = np.maximum(dist, r_min)
    rhat = r / dist[..., None]
    m = moments[:, None, :]
    mdotr = np.sum(m * rhat, axis=-1, keepdims=True)
    b = MU0_4PI * (3.0 * mdotr * rhat - m) / dist[..., None] ** 3
    return b, n_clamped


def dipole_field(moment: Sequence[float], magnet_pos: Sequence[float], sensor_pos: Sequence[float],
                 r_min: float = R_MIN_CM) -> np.ndarray:
    b, clamped = dipole_field_many(np.asarray(moment)[None], np.asarray(magnet_pos)[None],
                                   np.asarray(sensor_pos)[None], r_min)
    if clamped:
        warnings.warn(f"sensor within {r_min} cm of magnet; distance clamped", NearFieldWarning,
                      stacklevel=2)
    return b[0, 0]


# --- scene types ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SensorArray:
    positions: np.ndarray
    noise_std: np.ndarray = field(default_factory=lambda: np.array(NOISE_STD_UT))
    sample_rate_hz: float = DEFAULT_RATE_HZ

    def __post_init__(self) -> None:
        pos = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if pos.shape[0] < 1 or pos.shape[1] != 3:
            raise ValueError("need at least one 3D sensor position")
        d = np.linalg.norm(pos[:, None] - pos[None, :], axis=-1)
        if np.any(d[np.triu_indices(len(pos), 1)] == 0):
            raise ValueError("sensor positions must be pairwise distinct")
        noise = np.broadcast_to(np.asarray(self.noise_std, dtype=float), (3,)).copy()
        if np.any(noise < 0):
            raise ValueError("noise_std must be non-negative")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "noise_std", noise)

    @classmethod
    def linear(cls, n: int = N_SENSORS, spacing_cm: float = SENSOR_SPACING_CM,
               noise_std: Sequence[float] = NOISE_STD_UT,
               sample_rate_hz: float = DEFAULT_RATE_HZ) -> "SensorArray":
        pos = np.zeros((n, 3))
        pos[:, 0] = spacing_cm * np.arange(n)
        return cls(pos, np.asarray(noise_std, dtype=float), sample_rate_hz)

    @property
    def n_sensors(self) -> int:
        return self.positions.shape[0]

    @property
    def center(self) -> np.ndarray:
        return self.positions.mean(axis=0)

    def noiseless(self) -> "SensorArray":
        return SensorArray(self.positions, np.zeros(3), self.sample_rate_hz)

    def perturbed(self, jitter_cm: float, rng: np.random.Generator) -> "SensorArray":
        """Rigid remount: the whole unit shifts and tilts by roughly ``jitter_cm``."""
        if jitter_cm == 0:
            return self
        shift = rng.normal(0.0, jitter_cm, 3)
        # tilt so that the array ends move by about jitter_cm as well
        span = max(np.ptp(self.positions, axis=0).max(), 1e-9)
        rot = Rotation.from_rotvec(rng.normal(0.0, jitter_cm / span, 3))
        c = self.center
        pos = rot.apply(self.positions - c) + c + shift
        return SensorArray(pos, self.noise_std, self.sample_rate_hz)


@dataclass(frozen=True, eq=False)
class EnvironmentField:
    uniform_field: np.ndarray = field(default_factory=lambda: earth_field())
    device_bias: np.ndarray | None = None
    max_uniform_ut: float = 100.0

    def __post_init__(self) -> None:
        u = np.asarray(self.uniform_field, dtype=float).reshape(3)
        if np.linalg.norm(u) > self.max_uniform_ut:
            raise ValueError(f"|uniform_field| exceeds {self.max_uniform_ut} uT")
        object.__setattr__(self, "uniform_field", u)
        if self.device_bias is not None:
            object.__setattr__(self, "device_bias", np.atleast_2d(np.asarray(self.device_bias, dtype=float)))

    def bias_for(self, n_sensors: int) -> np.ndarray:
        if self.device_bias is None:
            return np.zeros((n_sensors, 3))
        return np.broadcast_to(self.device_bias, (n_sensors, 3))

    def rotated(self, yaw_deg: float) -> "EnvironmentField":
        """The same scene after the wearer turns by ``yaw_deg`` about the vertical (z) axis."""
        rot = Rotation.from_euler("z", yaw_deg, degrees=True)
        return EnvironmentField(rot.apply(self.uniform_field), self.device_bias, self.max_uniform_ut)


def earth_field(magnitude: float = EARTH_FIELD_UT, inclination_deg: float = EARTH_INCLINATION_DEG,
                yaw_deg: float = 0.0) -> np.ndarray:
    inc = np.deg2rad(inclination_deg)
    yaw = np.deg2rad(yaw_deg)
    h = magnitude * np.cos(inc)
    return np.array([h * np.cos(yaw), h * np.sin(yaw), -magnitude * np.sin(inc)])


@dataclass(frozen=True, eq=False)
class MagnetTrajectory:
    times: np.ndarray      # (K,) seconds
    positions: np.ndarray  # (K, 3) cm
    moments: np.ndarray    # (K, 3) A*cm^2
    duration_s: float

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float).reshape(-1)
        p = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        m = np.asarray(self.moments, dtype=float).reshape(-1, 3)
        if not (len(t) == len(p) == len(m) and len(t) >= 1):
            raise ValueError("times, positions and moments must have equal non-zero length")
        if not self.duration_s > 0:
            raise ValueError("duration_s must be positive")
        if t[0] < 0 or t[-1] > self.duration_s + 1e-9 or np.any(np.diff(t) <= 0):
            raise ValueError("waypoint times must be increasing within [0, duration_s]")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", p)
        object.__setattr__(self, "moments", m)
        object.__setattr__(self, "duration_s", float(self.duration_s))

    @classmethod
    def straight(cls, start: Sequence[float], end: Sequence[float], moment: Sequence[float],
                 duration_s: float) -> "MagnetTrajectory":
        return cls(np.array([0.0, duration_s]), np.array([start, end]), np.array([moment, moment]),
                   duration_s)

    @classmethod
    def static(cls, position: Sequence[float], moment: Sequence[float], duration_s: float) -> "MagnetTrajectory":
        return cls.straight(position, position, moment, duration_s)

    def at(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        t = np.asarray(t, dtype=float)
        pos = np.stack([np.interp(t, self.times, self.positions[:, k]) for k in range(3)], axis=-1)
        mom = np.stack([np.interp(t, self.times, self.moments[:, k]) for k in range(3)], axis=-1)
        return pos, mom


def sample_times(duration_s: float, rate_hz: float) -> np.ndarray:
    n = int(np.floor(duration_s * rate_hz + 1e-9)) + 1
    return np.arange(n) / rate_hz


def sensor_fields(trajs: MagnetTrajectory | Sequence[MagnetTrajectory], array: SensorArray,
                  env: EnvironmentField | None = None, times: np.ndarray | None = None,
                  warn: bool = True) -> np.ndarray:
    """Noise-free readings (T, S, 3): summed dipoles + uniform field + device bias."""
    if isinstance(trajs, MagnetTrajectory):
        trajs = [trajs]
    if times is None:
        times = sample_times(max(tr.duration_s for tr in trajs), array.sample_rate_hz)
    out = np.zeros((len(times), array.n_sensors, 3))
    clamped = 0
    for tr in trajs:
        pos, mom = tr.at(times)
        b, c = dipole_field_many(mom, pos, array.positions)
        out += b
        clamped += c
    if clamped and warn:
        warnings.warn(f"{clamped} sensor samples inside the {R_MIN_CM} cm clamp radius",
                      NearFieldWarning, stacklevel=2)
    if env is not None:
        out += env.uniform_field + env.bias_for(array.n_sensors)
    return out


def simulate_recording(traj: MagnetTrajectory | Sequence[MagnetTrajectory], array: SensorArray,
                       env: EnvironmentField, seed: int, meta: dict | None = None) -> Recording:
    if array.n_sensors != N_SENSORS:
        raise ValueError(f"recordings carry {N_SENSORS} sensors; use sensor_fields for other arrays")
    clean = sensor_fields(traj, array, env)
    rng = np.random.default_rng(seed)
    noisy = clean + rng.normal(size=clean.shape) * array.noise_std
    return Recording.from_array(noisy.reshape(len(clean), -1), array.sample_rate_hz, meta or {})


# --- moment presets ---------------------------------------------------------

def reference_approach(array: SensorArray, distance_cm: np.ndarray | float) -> tuple[np.ndarray, np.ndarray]:
    """Magnet positions and unit moments for the calibration approach.

    The magnet comes in along +y toward the array centre (broadside to the
    sensor line, as for a unit on an eyeglass bridge) with its moment pointing
    at the array.
    """
    d = np.atleast_1d(np.asarray(distance_cm, dtype=float))
    pos = array.center + d[:, None] * np.array([0.0, 1.0, 0.0])
    mom = np.tile([0.0, -1.0, 0.0], (len(d), 1))
    return pos, mom


def calibrated_ring_moment(threshold_ut: float = DEFAULT_THRESHOLD_UT, range_cm: float = RING_RANGE_CM,
                           array: SensorArray | None = None) -> float:
    """Moment magnitude whose max pairwise sensor difference equals the threshold at ``range_cm``."""
    array = array or SensorArray.linear()
    pos, mom = reference_approach(array, range_cm)
    b, _ = dipole_field_many(mom, pos, array.positions)
    unit_delta = pair_delta_array(b)[0]
    return threshold_ut / unit_delta


RING_MOMENT = calibrated_ring_moment()
SILICON_MOMENT = SILICON_FRACTION * RING_MOMENT
PRESETS = {"ring": RING_MOMENT, "silicon": SILICON_MOMENT}


# --- design study -----------------------------------------------------------

@dataclass(frozen=True)
class DesignStudyConfig:
    n_directions: int = 8
    jitter_std_cm: float = 1.0
    samples_per_action: int = 100
    half_length_cm: float = 5.0
    # pass height above the sensor plane; closer passes saturate with one
    # sensor, farther ones never reach 0.95 with three
    standoff_cm: float = 15.0
    duration_s: float = 2.0
    preset: str = "ring"
    moment_dir: tuple[float, float, float] = (0.0, 0.0, -1.0)


def _random_unit(rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    v = rng.normal(size=(3,) if n is None else (n, 3))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def design_study_trajectories(n_directions: int = 8, jitter_std_cm: float = 1.0,
                              samples_per_action: int = 100, seed: int = 0,
                              cfg: DesignStudyConfig | None = None) -> dict[int, list[MagnetTrajectory]]:
    """Straight passes over the array, ``samples_per_action`` per direction.

    Direction k points at k*360/n degrees in the sensor (x-y) plane. Each pass
    runs from -half_length to +half_length through the origin at a fixed
    standoff height; start and end points get independent Gaussian jitter,
    isotropic within the plane of motion. The moment keeps a fixed orientation (``cfg.moment_dir``).
    """
    if n_directions < 2:
        raise ValueError("need at least two directions")
    cfg = cfg or DesignStudyConfig()
    rng = np.random.default_rng(seed)
    m = np.asarray(cfg.moment_dir, dtype=float)
    moment = PRESETS[cfg.preset] * m / np.linalg.norm(m)
    out: dict[int, list[MagnetTrajectory]] = {}
    for k in range(n_directions):
        ang = np.deg2rad(k * 360.0 / n_directions)
        d = np.array([np.cos(ang), np.sin(ang), 0.0])
        lift = np.array([0.0, 0.0, cfg.standoff_cm])
        paths = []
        for _ in range(samples_per_action):
            j0 = np.r_[rng.normal(0.0, jitter_std_cm, 2), 0.0]
            j1 = np.r_[rng.normal(0.0, jitter_std_cm, 2), 0.0]
            start = -cfg.half_length_cm * d + lift + j0
            end = cfg.half_length_cm * d + lift + j1
            paths.append(MagnetTrajectory.straight(start, end, moment, cfg.duration_s))
        out[k] = paths
    return out


# --- gesture corpora ----------------------------------------------------------

FACE_LABELS = ("forehead", "left_eye", "right_eye", "left_cheek", "right_cheek", "nose", "lips", "no_touch")
SCRATCH_LABELS = tuple(f"cell_{r}{c}" for r in range(3) for c in range(3))
SCRATCH_CENTER = 4
GRID_SPACING_CM = 3.0
# the skin grid lies this far from the sensor plane, so the weak silicon
# field is comparable to the Earth field at the outer cells
NAIL_HEIGHT_CM = 3.5
TRIAL_ANCHOR_JITTER_CM = 0.15
TRIAL_TILT_DEG = 8.0

# (azimuth in the x-z face plane, elevation toward -y, distance in cm) per
# region; the unit sits on the eyeglass bridge with x to the wearer's left
# and z up. "no_touch" is the hand hovering in front of the face.
_FACE_GEOMETRY = {
    "forehead": (90.0, 20.0, 5.5),
    "left_eye": (20.0, 15.0, 4.5),
    "right_eye": (160.0, 15.0, 4.5),
    "left_cheek": (-35.0, 45.0, 7.0),
    "right_cheek": (-145.0, 45.0, 7.0),
    "nose": (-90.0, 10.0, 4.0),
    "lips": (-90.0, 60.0, 8.5),
    "no_touch": (0.0, 80.0, 8.0),
}


def face_anchors(distance_scale: float = 1.0, center: np.ndarray | None = None) -> np.ndarray:
    """Eight anchors on the face side (y < 0) of the array centre."""
    c = SensorArray.linear().center if center is None else center
    pts = []
    for name in FACE_LABELS:
        az, el, dist = _FACE_GEOMETRY[name]
        az, el = np.deg2rad(az), np.deg2rad(el)
        v = np.array([np.cos(el) * np.cos(az), -np.sin(el), np.cos(el) * np.sin(az)])
        pts.append(c + distance_scale * dist * v)
    return np.array(pts)


def scratch_anchors(spacing_cm: float = GRID_SPACING_CM, height_cm: float = NAIL_HEIGHT_CM,
                    center: np.ndarray | None = None) -> np.ndarray:
    c = SensorArray.linear().center if center is None else center
    pts = [c + np.array([spacing_cm * (col - 1), spacing_cm * (1 - row), height_cm])
           for row in range(3) for col in range(3)]
    return np.array(pts)


@dataclass(frozen=True)
class UserTraits:
    """Per-wearer variation: where they touch, how strong their magnet is, how they move."""

    anchor_offsets: np.ndarray
    moment_scale: float
    moment_tilt: np.ndarray
    speed_scale: float
    rub_amplitude_cm: float
    rub_freq_hz: float
    wander_cm: float            # slow drift of the contact point across the touched region
    wander_freq_hz: float

    @classmethod
    def for_user(cls, user_id: int, n_anchors: int, task: str = "face") -> "UserTraits":
        rng = np.random.default_rng(derive_seed("user", task, user_id))
        # face touches rub skin over a patch; scratches stay inside one grid cell
        rub, wander = ((0.4, 1.0), (0.6, 1.2)) if task == "face" else ((0.2, 0.5), (0.1, 0.3))
        return cls(
            anchor_offsets=rng.normal(0.0, 0.4, (n_anchors, 3)),
            moment_scale=float(rng.uniform(0.8, 1.2)),
            moment_tilt=rng.normal(0.0, np.deg2rad(15.0), 3),
            speed_scale=float(rng.uniform(0.8, 1.25)),
            rub_amplitude_cm=float(rng.uniform(*rub)),
            rub_freq_hz=float(rng.uniform(1.0, 3.0)),
            wander_cm=float(rng.uniform(*wander)),
            wander_freq_hz=float(rng.uniform(0.15, 0.4)),
        )


@dataclass(frozen=True)
class GestureScene:
    """Fixed geometry for one task: anchors, rest point, base moment and durations."""

    task: str
    anchors: np.ndarray
    rest: np.ndarray
    moment_dir: np.ndarray
    preset: str
    dwell_range_s: tuple[float, float]
    labels: tuple[str, ...]

    @classmethod
    def for_task(cls, task: str) -> "GestureScene":
        c = SensorArray.linear().center
        if task == "face8":
            return cls(task, face_anchors(), c + np.array([0.0, -18.0, -22.0]),
                       np.array([0.0, 1.0, 0.0]), "ring", (3.0, 15.0), FACE_LABELS)
        if task in ("scratch9", "scratch_binary"):
            labels = SCRATCH_LABELS if task == "scratch9" else ("no_scratch", "scratch")
            return cls(task, scratch_anchors(), c + np.array([0.0, -8.0, 24.0]),
                       np.array([0.0, 0.0, -1.0]), "silicon", (2.0, 12.0), labels)
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}")


def _gesture_trajectory(scene: GestureScene, anchor: np.ndarray, traits: UserTraits,
                        rng: np.random.Generator, dwell_s: float) -> tuple[MagnetTrajectory, float, float]:
    """Rest -> approach -> dwell (rubbing) -> retreat -> rest, sampled densely."""
    quiet0 = rng.uniform(1.6, 2.4)
    approach = rng.uniform(0.8, 1.2) / traits.speed_scale
    retreat = rng.uniform(0.8, 1.2) / traits.speed_scale
    quiet1 = rng.uniform(1.2, 1.8)
    total = quiet0 + approach + dwell_s + retreat + quiet1
    rest = scene.rest + rng.normal(0.0, 1.5, 3)

    dt = 0.02
    t = np.arange(0.0, total + 1e-9, dt)
    if t[-1] < total:
        t = np.r_[t, total]
    pos = np.empty((len(t), 3))
    s = np.clip((t - quiet0) / approach, 0.0, 1.0)
    s = 0.5 - 0.5 * np.cos(np.pi * s)  # ease in/out
    r = np.clip((t - (quiet0 + approach + dwell_s)) / retreat, 0.0, 1.0)
    r = 0.5 - 0.5 * np.cos(np.pi * r)
    pos[:] = rest + (anchor - rest) * s[:, None] + (rest - anchor) * r[:, None]

    # rubbing / scratching motion along a random tangent while dwelling
    tangent = _random_unit(rng)
    tangent -= tangent.dot(scene.moment_dir) * scene.moment_dir
    tangent /= np.linalg.norm(tangent)
    phase = rng.uniform(0, 2 * np.pi)
    freq = traits.rub_freq_hz * rng.uniform(0.8, 1.2)
    envelope = s * (1.0 - r)
    pos += (traits.rub_amplitude_cm * envelope * np.sin(2 * np.pi * freq * t + phase))[:, None] * tangent
    side = np.cross(scene.moment_dir, tangent)
    wander = traits.wander_cm * envelope * np.sin(2 * np.pi * traits.wander_freq_hz * t + rng.uniform(0, 2 * np.pi))
    pos += wander[:, None] * side

    base = Rotation.from_rotvec(traits.moment_tilt).apply(scene.moment_dir)
    wobble = Rotation.from_rotvec(rng.normal(0.0, np.deg2rad(TRIAL_TILT_DEG), 3))
    mdir = wobble.apply(base)
    moment = PRESETS[scene.preset] * traits.moment_scale * mdir
    moms = np.tile(moment, (len(t), 1))
    return MagnetTrajectory(t, pos, moms, total), quiet0, quiet0 + approach + dwell_s + retreat


def ground_truth_interval(clean: np.ndarray, threshold_ut: float = DEFAULT_THRESHOLD_UT) -> tuple[int, int]:
    """[start, end) of the longest run where the noise-free pair delta exceeds the threshold."""
    above = pair_delta_array(clean) > threshold_ut
    if not above.any():
        return -1, -1
    idx = np.flatnonzero(above)
    return int(idx[0]), int(idx[-1]) + 1


def synth_gesture_recording(task: str, label: int, seed: int, user_id: int = 0,
                            yaw_deg: float = 0.0, array: SensorArray | None = None,
                            env: EnvironmentField | None = None) -> Recording:
    scene = GestureScene.for_task(task)
    array = array or SensorArray.linear()
    traits = UserTraits.for_user(user_id, len(scene.anchors), "face" if task == "face8" else "scratch")
    rng = np.random.default_rng(seed)
    if task == "scratch_binary":
        anchor_idx = SCRATCH_CENTER if label == 1 else int(rng.choice([i for i in range(9) if i != SCRATCH_CENTER]))
    else:
        anchor_idx = label
    anchor = scene.anchors[anchor_idx] + traits.anchor_offsets[anchor_idx] + rng.normal(0.0, TRIAL_ANCHOR_JITTER_CM, 3)
    dwell = rng.uniform(*scene.dwell_range_s)
    traj, _, _ = _gesture_trajectory(scene, anchor, traits, rng, dwell)
    env = (env or EnvironmentField()).rotated(yaw_deg)
    clean = sensor_fields(traj, array, env, warn=False)
    gt0, gt1 = ground_truth_interval(clean - env.uniform_field - env.bias_for(array.n_sensors))
    noisy = clean + rng.normal(size=clean.shape) * array.noise_std
    meta = {"task": task, "label": label, "label_name": scene.labels[label], "user": user_id,
            "seed": seed, "yaw_deg": f"{yaw_deg:g}", "gt_start": gt0, "gt_end": gt1,
            "anchor": anchor_idx}
    return Recording.from_array(noisy.reshape(len(clean), -1), array.sample_rate_hz, meta)


def n_classes(task: str) -> int:
    return len(GestureScene.for_task(task).labels)


def synth_gesture_corpus(task: str, n_per_class: int, seed: int, user_id: int = 0,
                         yaw_deg: float = 0.0, array: SensorArray | None = None) -> list[Recording]:
    """``n_per_class`` labelled recordings per class.

    ``scratch_binary`` is generated from the scratch9 draws and relabelled
    (centre cell -> 1, everything else -> 0), so both tasks share signals.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    if task == "scratch_binary":
        base = synth_gesture_corpus("scratch9", n_per_class, seed, user_id, yaw_deg, array)
        out = []
        for rec in base:
            lab = int(int(rec.meta["label"]) == SCRATCH_CENTER)
            out.append(rec.with_meta(task="scratch_binary", label=lab,
                                     label_name=("no_scratch", "scratch")[lab]))
        return out
    scene = GestureScene.for_task(task)
    recs = []
    for label in range(len(scene.labels)):
        for i in range(n_per_class):
            s = derive_seed(seed, task, user_id, label, i)
            recs.append(synth_gesture_recording(task, label, s, user_id, yaw_deg, array))
    return recs


def free_movement_recording(seed: int, user_id: int = 0, duration_s: float = 45.0,
                            array: SensorArray | None = None, yaw_deg: float | None = None,
                            preset: str = "ring") -> Recording:
    """Unlabelled free-form hand motion, wandering between near and far points.

    ``ring``: a finger ring moving around the face side of the unit.
    ``silicon``: a nail magnet moving over the skin region under the unit.
    """
    if preset not in PRESETS:
        raise ValueError(f"preset must be one of {tuple(PRESETS)}")
    array = array or SensorArray.linear()
    rng = np.random.default_rng(seed)
    ring = preset == "ring"
    traits = UserTraits.for_user(user_id, 9, "face" if ring else "scratch")
    c = array.center
    rest = np.array([0.0, -18.0, -22.0]) if ring else np.array([0.0, -8.0, 24.0])
    times = [0.0]
    pts = [c + rest]
    while times[-1] < duration_s:
        step = rng.uniform(0.6, 1.8) / traits.speed_scale
        if rng.random() < 0.5:
            # touch-like visit close to the unit
            if ring:
                v = _random_unit(rng)
                v[1] = -abs(v[1])
                p = c + rng.uniform(3.5, 9.0) * v
            else:
                p = c + np.array([rng.uniform(-4, 4), rng.uniform(-4, 4), rng.uniform(2.5, 4.5)])
        else:
            v = _random_unit(rng)
            if not ring:
                v[2] = abs(v[2])
            p = c + rng.uniform(14.0, 30.0) * v
        times.append(times[-1] + step)
        pts.append(p)
    t_way = np.array(times)
    way = np.array(pts)
    t = np.arange(0.0, duration_s + 1e-9, 0.02)
    pos = np.stack([np.interp(t, t_way, way[:, k]) for k in range(3)], axis=-1)
    pos += (0.3 * np.sin(2 * np.pi * traits.rub_freq_hz * t))[:, None] * _random_unit(rng)
    key_t = np.linspace(0.0, duration_s, 8)
    key_rots = Rotation.from_rotvec(rng.normal(0.0, 0.6, (8, 3)))
    base = Rotation.from_rotvec(traits.moment_tilt).apply([0.0, 1.0, 0.0] if ring else [0.0, 0.0, -1.0])
    mdirs = Slerp(key_t, key_rots)(np.clip(t, 0, duration_s)).apply(base)
    moms = PRESETS[preset] * traits.moment_scale * mdirs
    traj = MagnetTrajectory(t, pos, moms, duration_s)
    yaw = float(rng.uniform(0, 360)) if yaw_deg is None else yaw_deg
    env = EnvironmentField().rotated(yaw)
    rec = simulate_recording(traj, array, env, int(rng.integers(2**62)))
    return rec.with_meta(task="free", user=user_id, seed=seed, yaw_deg=f"{yaw:g}", preset=preset)


def free_movement_corpus(user_ids: Sequence[int], seed: int, duration_s: float = 45.0) -> list[Recording]:
    """Per user, ``duration_s`` of free movement split evenly between the ring and the nail magnet."""
    half = duration_s / 2
    return [free_movement_recording(derive_seed(seed, "free", u, p), u, half, preset=p)
            for u in user_ids for p in ("ring", "silicon")]


def simulate_calibration_recording(env: EnvironmentField, seed: int, duration_s: float = 10.0,
                                   array: SensorArray | None = None, max_angle_deg: float = 180.0) -> Recording:
    """The unit is turned around by hand with no magnet nearby.

    The uniform field is fixed in the world, so in the sensor frame it sweeps
    over a sphere; device bias rides along with the sensors.
    """
    array = array or SensorArray.linear()
    rng = np.random.default_rng(seed)
    t = sample_times(duration_s, array.sample_rate_hz)
    n_keys = max(int(duration_s), 2) + 1
    key_rots = Rotation.from_rotvec(_random_unit(rng, n_keys) * np.deg2rad(rng.uniform(0, max_angle_deg, n_keys))[:, None])
    rots = Slerp(np.linspace(0, t[-1], n_keys), key_rots)(t)
    world = rots.inv().apply(env.uniform_field)  # (T, 3) field in the sensor frame
    clean = world[:, None, :] + env.bias_for(array.n_sensors)[None]
    noisy = clean + rng.normal(size=clean.shape) * array.noise_std
    return Recording.from_array(noisy.reshape(len(t), -1), array.sample_rate_hz, {"task": "calibration"})


# --- corpus manifest ----------------------------------------------------------

INDEX_NAME = "index.csv"


def write_corpus(recs: Sequence[Recording], out_dir: str | os.PathLike, task: str, seed: int) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, rec in enumerate(recs):
        name = f"{task}_{i:04d}.csv"
        write_recording(rec, out / name)
        rows.append((name, rec.meta.get("label", ""), task, seed))
    with open(out / INDEX_NAME, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["path", "label", "task", "seed"])
        w.writerows(rows)
    return out / INDEX_NAME


def read_corpus(corpus_dir: str | os.PathLike) -> list[tuple[Recording, str]]:
    """(recording, label) pairs in index order; label is '' for unlabelled data."""
    from .core import read_recording

    root = Path(corpus_dir)
    with open(root / INDEX_NAME, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return [(read_recording(root / r["path"]), r["label"]) for r in rows]
