"""Virtual synchronous machine baseline.

Each IBR reacts to the centre-of-inertia frequency with a virtual inertia
term (on the backward-difference ROCOF) and a damping term.  The resulting
power is subtracted from the nominal set-point, so under-frequency raises
injection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .plant import Measurement


@dataclass(frozen=True)
class VsmGains:
    k_m: float = 0.0
    k_d: float = 0.0

    def __post_init__(self):
        if not (self.k_m >= 0 and self.k_d >= 0):
            raise ValueError("VSM gains must be non-negative")


def coi_frequency(omega, m) -> float:
    """Inertia-weighted average speed deviation."""
    omega = np.asarray(omega, dtype=float).reshape(-1)
    m = np.asarray(m, dtype=float).reshape(-1)
    if omega.size == 0 or omega.shape != m.shape:
        raise ValueError("need one inertia per machine and at least one machine")
    total = m.sum()
    if total <= 0:
        raise ValueError("total inertia must be positive")
    return float(m @ omega / total)


def vsm_power(d_omega: float, prev_d_omega: float, h: float, gains: VsmGains) -> float:
    """``K_m * (d_omega - prev) / h + K_d * d_omega``."""
    if h <= 0:
        raise ValueError("step must be positive")
    return gains.k_m * (d_omega - prev_d_omega) / h + gains.k_d * d_omega


class VsmController:
    """VSM law applied identically to every IBR, clamped by power and energy limits.

    ``gains`` may be one :class:`VsmGains` or one per IBR.  ``smoothing`` is
    an optional low-pass time constant on the ROCOF estimate (0 = off).
    """

    def __init__(self, gains, m, p0, h: float, *, p_min=-np.inf, p_max=np.inf,
                 energy=np.inf, smoothing: float = 0.0):
        p0 = np.asarray(p0, dtype=float).reshape(-1)
        nu = p0.size
        self.gains = [gains] * nu if isinstance(gains, VsmGains) else list(gains)
        if len(self.gains) != nu:
            raise ValueError("need one set of VSM gains per IBR")
        if smoothing < 0:
            raise ValueError("smoothing time constant must be non-negative")
        self.m = np.asarray(m, dtype=float)
        self.p0, self.h = p0, float(h)
        self.p_min = np.broadcast_to(np.asarray(p_min, dtype=float), (nu,)).copy()
        self.p_max = np.broadcast_to(np.asarray(p_max, dtype=float), (nu,)).copy()
        self.energy = np.broadcast_to(np.asarray(energy, dtype=float), (nu,)).copy()
        self.alpha = 1.0 if smoothing == 0 else self.h / (smoothing + self.h)
        self.energy_used = np.zeros(nu)
        self._prev: float | None = None
        self._rocof = 0.0
        self.telemetry: dict[str, float] = {}

    def __call__(self, meas: Measurement) -> np.ndarray:
        w = coi_frequency(meas.omega, self.m)
        prev = w if self._prev is None else self._prev
        self._rocof += self.alpha * ((w - prev) / self.h - self._rocof)
        self._prev = w
        dp = np.array([g.k_m * self._rocof + g.k_d * w for g in self.gains])
        p = np.clip(self.p0 - dp, self.p_min, self.p_max)
        room = (self.energy - self.energy_used) / self.h
        p = np.where(p - self.p0 > room, self.p0 + np.maximum(room, 0.0), p)
        self.energy_used = self.energy_used + self.h * (p - self.p0)
        self.telemetry = {"coi": w, "rocof_est": self._rocof}
        return p
