"""Random road profiles as sums of sinusoids with an ISO 8608 style PSD."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# displacement PSD level G_d(n_0) in m^3 at n_0 = 0.1 cycles/m, one step per class
REFERENCE_FREQUENCY = 0.1
ROAD_CLASSES = {"A": 16e-6, "B": 64e-6, "C": 256e-6, "D": 1024e-6, "E": 4096e-6,
                "F": 16384e-6, "G": 65536e-6, "H": 262144e-6}


@dataclass(frozen=True)
class RoadProfile:
    """z_r(t) = sum_k a_k cos(w_k t + phi_k) for a vehicle at constant speed.

    ``w_k`` are temporal angular frequencies (rad/s).  The input signal of the
    vehicle model is the road slope u(t) = dz_r/dt.
    """

    omegas: np.ndarray
    amplitudes: np.ndarray
    phases: np.ndarray

    def height(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        arg = np.multiply.outer(t, self.omegas) + self.phases
        return np.cos(arg) @ self.amplitudes

    def slope(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        arg = np.multiply.outer(t, self.omegas) + self.phases
        return -np.sin(arg) @ (self.amplitudes * self.omegas)

    def input_signal(self, t):
        """Input list for :class:`DynamicModel` (one channel, u = dz_r/dt)."""
        return [self.slope(t)]


def generate_road(road_class: str = "D", seed: int = 0, horizon: float = 42.0,
                  speed: float = 25.0, n_sines: int = 200, band=(0.01, 1.0),
                  amplitude_scale: float = 1.0) -> RoadProfile:
    """Stationary road with PSD G_d(n) = G_d(n_0) (n / n_0)^-2 over spatial frequency n.

    ``band`` is given in cycles per metre; ``n_sines`` log-spaced bins each get
    one sinusoid with amplitude sqrt(2 G_d(n_k) dn_k) and a uniform random
    phase.  ``horizon`` only has to be positive: the profile is defined for all
    t and the same seed always gives the same road.
    """
    if not horizon > 0:
        raise ValueError("road horizon must be positive")
    key = str(road_class).upper()
    if key not in ROAD_CLASSES:
        raise ValueError(f"unknown road class {road_class!r}")
    if not (0 < band[0] < band[1]) or n_sines < 1 or not speed > 0:
        raise ValueError("invalid road synthesis settings")
    g0 = ROAD_CLASSES[key]
    edges = np.geomspace(band[0], band[1], n_sines + 1)      # cycles/m
    n_mid = np.sqrt(edges[:-1] * edges[1:])
    psd = g0 * (n_mid / REFERENCE_FREQUENCY) ** -2.0
    amps = amplitude_scale * np.sqrt(2.0 * psd * np.diff(edges))
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 8608]))
    phases = rng.uniform(0.0, 2.0 * np.pi, n_sines)
    return RoadProfile(2.0 * np.pi * n_mid * speed, amps, phases)
