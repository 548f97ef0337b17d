"""Scenario configuration for the RIS-assisted MU-MISO simulator.

All powers are handled in watts internally; dBm and dBm/Hz appear only at
the config boundary (config files, CLI flags).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict


CONTINUOUS = None  # phase_bits value meaning continuous phase shifts


@dataclass(frozen=True)
class SystemConfig:
    """All scenario knobs: array sizes, power, noise, geometry, RNG seed.

    ``p_t_mw`` is the maximum transmit power in linear milliwatts
    (10 dBm -> 10.0). ``phase_bits`` is ``None`` for continuous phase
    shifts or an integer B >= 1 for a 2**B-point phase grid.
    """

    m: int = 8
    k: int = 4
    n: int = 100
    p_t_mw: float = 10.0
    noise_psd_dbm_hz: float = -170.0
    bandwidth_hz: float = 180e3
    kappa: float = 10.0
    phase_bits: int | None = CONTINUOUS
    ap_pos: tuple[float, float] = (0.0, 0.0)
    ris_pos: tuple[float, float] = (200.0, 0.0)
    user_center: tuple[float, float] = (200.0, 30.0)
    user_radius: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.k < 1 or self.n < 0:
            raise ValueError(f"invalid array sizes M={self.m} K={self.k} N={self.n}")
        if self.p_t_mw <= 0:
            raise ValueError("transmit power must be positive")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth must be positive")
        if self.kappa < 0:
            raise ValueError("Rician factor must be nonnegative")
        if self.user_radius < 0:
            raise ValueError("user radius must be nonnegative")
        if self.phase_bits is not None and self.phase_bits < 1:
            raise ValueError("phase_bits must be >= 1 or None (continuous)")

    @property
    def p_t(self) -> float:
        """Maximum transmit power in watts."""
        return self.p_t_mw * 1e-3

    @property
    def sigma2(self) -> float:
        """Noise power in watts, identical for all users."""
        db = self.noise_psd_dbm_hz + 10.0 * math.log10(self.bandwidth_hz) - 30.0
        return 10.0 ** (db / 10.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        # dBm at the boundary; "inf" spells continuous phase shifts
        d["p_t_dbm"] = 10.0 * math.log10(self.p_t_mw)
        del d["p_t_mw"]
        d["phase_bits"] = "inf" if self.phase_bits is None else self.phase_bits
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        d = dict(d)
        if "p_t_dbm" in d:
            d["p_t_mw"] = 10.0 ** (d.pop("p_t_dbm") / 10.0)
        bits = d.get("phase_bits", CONTINUOUS)
        if bits in ("inf", "continuous", None):
            d["phase_bits"] = CONTINUOUS
        else:
            d["phase_bits"] = int(bits)
        for key in ("ap_pos", "ris_pos", "user_center"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)

    @classmethod
    def load(cls, path: str) -> "SystemConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
