"""Streaming smoothing, hard-iron (device bias) calibration and normalization."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .core import N_CHANNELS, N_SENSORS, Recording, Window

DEFAULT_ALPHA = 0.5
PROFILE_FORMAT = "magsense-calibration/1"
DEFAULT_MAX_CONDITION = 12.0
DEFAULT_MAX_RESIDUAL = 0.05


class CalibrationQualityError(ValueError):
    """Calibration data does not cover enough orientations for a stable fit."""


@dataclass(frozen=True, eq=False)
class SmoothingState:
    alpha: float = DEFAULT_ALPHA
    estimate: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")


def smooth_step(state: SmoothingState, y: np.ndarray) -> tuple[SmoothingState, np.ndarray]:
    """One step of exponential smoothing; the first sample seeds the estimate."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite input to smoothing filter")
    if state.estimate is None:
        est = y.copy()
    else:
        est = state.alpha * y + (1.0 - state.alpha) * state.estimate
    return SmoothingState(state.alpha, est), est


def smooth_array(data: np.ndarray, alpha: float = DEFAULT_ALPHA) -> np.ndarray:
    """Causal smoothing of an (N, C) stream, identical to folding ``smooth_step`` over rows."""
    data = np.asarray(data, dtype=float)
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    if len(data) == 0:
        return data.copy()
    if not np.all(np.isfinite(data)):
        raise ValueError("non-finite input to smoothing filter")
    zi = (1.0 - alpha) * data[0][None, :]
    out, _ = lfilter([alpha], [1.0, -(1.0 - alpha)], data, axis=0, zi=zi)
    return out


def smooth_recording(rec: Recording, alpha: float = DEFAULT_ALPHA) -> Recording:
    return rec.with_data(smooth_array(rec.data, alpha))


# --- calibration ------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CalibrationProfile:
    device_bias: np.ndarray = field(default_factory=lambda: np.zeros((N_SENSORS, 3)))
    earth_field_magnitude: float = 50.0

    def __post_init__(self) -> None:
        b = np.asarray(self.device_bias, dtype=float).reshape(-1, 3)
        if not self.earth_field_magnitude > 0:
            raise ValueError("earth_field_magnitude must be positive")
        object.__setattr__(self, "device_bias", b)
        object.__setattr__(self, "earth_field_magnitude", float(self.earth_field_magnitude))

    @property
    def bias_flat(self) -> np.ndarray:
        return self.device_bias.reshape(-1)

    def scale_only(self) -> "CalibrationProfile":
        """Same scale, zero bias: for data whose offset was already removed."""
        return CalibrationProfile(np.zeros_like(self.device_bias), self.earth_field_magnitude)

    def save(self, path: str | os.PathLike) -> None:
        lines = [f"format={PROFILE_FORMAT}", f"earth_field_magnitude={self.earth_field_magnitude!r}"]
        for i, b in enumerate(self.device_bias):
            lines.append(f"bias_s{i}=" + ",".join(repr(float(v)) for v in b))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CalibrationProfile":
        kv = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                k, v = line.split("=", 1)
                kv[k.strip()] = v.strip()
        if kv.get("format") != PROFILE_FORMAT:
            raise ValueError(f"{path}: unsupported profile format {kv.get('format')!r}")
        n = len([k for k in kv if k.startswith("bias_s")])
        bias = np.array([[float(x) for x in kv[f"bias_s{i}"].split(",")] for i in range(n)])
        return cls(bias, float(kv["earth_field_magnitude"]))


def fit_sphere(points: np.ndarray, max_condition: float = DEFAULT_MAX_CONDITION,
               max_residual: float = DEFAULT_MAX_RESIDUAL) -> tuple[np.ndarray, float]:
    """Least-squares sphere through (n, 3) points: returns (centre, radius).

    Linear form |x|^2 = 2 c.x + (r^2 - |c|^2). Orientation diversity is the
    condition number of the direction tensor mean(u u^T), u = unit vectors
    from the fitted centre; it is 1 for full coverage and grows as the points
    shrink to a cap or a circle. A noise blob can fake diversity, so the
    radial residual (relative to the radius) is checked as well.
    """
    x = np.asarray(points, dtype=float)
    if len(x) < 4:
        raise CalibrationQualityError("need at least 4 points for a sphere fit")
    a = np.hstack([2.0 * x, np.ones((len(x), 1))])
    rhs = np.sum(x * x, axis=1)
    sol, _, rank, _ = np.linalg.lstsq(a, rhs, rcond=None)
    if rank < 4:
        raise CalibrationQualityError("points are degenerate (coplanar or collinear)")
    c = sol[:3]
    r2 = sol[3] + c @ c
    if r2 <= 0:
        raise CalibrationQualityError("sphere fit produced a non-positive radius")
    r = float(np.sqrt(r2))
    d = x - c
    dist = np.linalg.norm(d, axis=1)
    u = d / np.maximum(dist, 1e-12)[:, None]
    ev = np.linalg.eigvalsh(u.T @ u / len(u))
    cond = ev[-1] / ev[0] if ev[0] > 0 else np.inf
    if cond > max_condition:
        raise CalibrationQualityError(
            f"orientation diversity too low (condition number {cond:.1f} > {max_condition:g}); "
            "turn the unit through more orientations")
    resid = float(np.std(dist - r) / r)
    if resid > max_residual:
        raise CalibrationQualityError(
            f"readings do not lie on a sphere (relative residual {resid:.3f} > {max_residual:g}); "
            "turn the unit through more orientations")
    return c, r


def calibrate_device_bias(rec: Recording, duration_s: float = 10.0,
                          max_condition: float = DEFAULT_MAX_CONDITION) -> CalibrationProfile:
    """Per-sensor hard-iron offset from a magnet-free recording with the unit being turned around.

    Uses the first ``duration_s`` of the recording. The fitted radii are
    averaged into the Earth-field magnitude used as the normalization scale.
    """
    n = int(round(duration_s * rec.sample_rate_hz))
    if len(rec) < n:
        raise ValueError(f"need {duration_s:g} s of calibration data, got {rec.duration_s:.2f} s")
    data = rec.data[:n].reshape(n, -1, 3)
    centres, radii = [], []
    for s in range(data.shape[1]):
        c, r = fit_sphere(data[:, s], max_condition)
        centres.append(c)
        radii.append(r)
    return CalibrationProfile(np.array(centres), float(np.mean(radii)))


# --- normalization ----------------------------------------------------------

def normalize_array(data: np.ndarray, profile: CalibrationProfile) -> np.ndarray:
    """(x - bias) / earth magnitude. No mean removal, so zero stays zero."""
    return (np.asarray(data, dtype=float) - profile.bias_flat) / profile.earth_field_magnitude


def denormalize_array(data: np.ndarray, profile: CalibrationProfile) -> np.ndarray:
    return np.asarray(data, dtype=float) * profile.earth_field_magnitude + profile.bias_flat


def normalize_window(w: Window, profile: CalibrationProfile) -> Window:
    if profile.bias_flat.shape != (N_CHANNELS,):
        raise ValueError("profile must carry a bias for each of the three sensors")
    return Window(normalize_array(w.data, profile), w.origin)


def denormalize_window(w: Window, profile: CalibrationProfile) -> Window:
    return Window(denormalize_array(w.data, profile), w.origin)
