"""Synthetic reduced-order impact responses.

A closed-form stand-in for the finite-element campaign. The surfaces are
smooth and reproduce the qualitative trends of the simulations: plastic
strain with a soft knee in velocity, impact temperature bounded below the
melting point, a Johnson-Cook flow stress with an interior velocity peak,
and a near-linear flattening ratio. Coefficients are fixed constants.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import FEATURES, RANGES, TARGETS, SampleRecord, write_csv
from .exceptions import ValidationError

# Aluminium Johnson-Cook constants (MPa, K).
JC_A = 148.4
JC_B = 345.5
JC_N = 0.183
JC_M = 0.895
T_REF = 298.0
T_MELT = 916.0

# max_peeq
KNEE_VELOCITY = 650.0
KNEE_WIDTH = 40.0
# max_temp_K: impact temperature saturates 10 K below melting.
TEMP_CEILING = T_MELT - 10.0
# von Mises: fraction of flash heating reaching the bulk, and the dynamic
# amplification bump centred on the critical-velocity window.
BULK_HEAT_FRACTION = 0.3
STRESS_PEAK_VELOCITY = 600.0
STRESS_PEAK_WIDTH = 120.0


@dataclass(frozen=True)
class OracleConfig:
    n_samples: int = 100
    seed: int = 7
    noise_std: dict = field(default_factory=lambda: {t: 0.02 for t in TARGETS})
    ranges: dict = field(default_factory=lambda: dict(RANGES))

    def __post_init__(self):
        if int(self.n_samples) < 1:
            raise ValidationError(f"n_samples must be >= 1, got {self.n_samples}")
        noise = self.noise_std
        if not isinstance(noise, dict):
            noise = {t: float(noise) for t in TARGETS}
        noise = {t: float(noise.get(t, 0.0)) for t in TARGETS}
        if any(not np.isfinite(s) or s < 0 for s in noise.values()):
            raise ValidationError("noise_std entries must be finite and >= 0")
        ranges = {**RANGES, **{k: tuple(map(float, v)) for k, v in self.ranges.items()}}
        for name, (lo, hi) in ranges.items():
            if name not in FEATURES:
                raise ValidationError(f"unknown input {name!r} in ranges")
            if not lo < hi:
                raise ValidationError(f"range for {name} is degenerate: [{lo}, {hi}]")
        object.__setattr__(self, "n_samples", int(self.n_samples))
        object.__setattr__(self, "noise_std", noise)
        object.__setattr__(self, "ranges", ranges)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ranges"] = {k: list(v) for k, v in self.ranges.items()}
        return d


def _softplus(x):
    return np.logaddexp(0.0, x)


def sample_inputs(config: OracleConfig) -> np.ndarray:
    """Centred Latin-hypercube design, one point per bin in every dimension."""
    n = config.n_samples
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0]))
    cols = []
    for name in FEATURES:
        lo, hi = config.ranges[name]
        u = (rng.permutation(n) + 0.5) / n
        cols.append(lo + (hi - lo) * u)
    return np.column_stack(cols)


def max_peeq(v, T, mu):
    ramp = KNEE_WIDTH * _softplus((v - KNEE_VELOCITY) / KNEE_WIDTH)
    thermal = 1.0 + 0.6 * (T - 300.0) / 300.0
    return (0.5 + 4e-4 * (v - 400.0) + 0.0085 * ramp * thermal) * (1.0 + 0.05 * (mu - 0.3))


def avg_peeq_contact(v, T, mu):
    x = (v - 400.0) / 500.0
    return 0.06 + 0.18 * x + 0.06 * x**2 + 0.05 * ((T - 425.0) / 150.0) ** 2 + 0.02 * (mu - 0.3)


def max_temp(v, T, mu):
    heating = 2.2 * ((v - 300.0) / 500.0) ** 2 + 0.3 * mu
    return T + (TEMP_CEILING - T) * -np.expm1(-heating)


def max_von_mises(v, T, mu):
    eps = max_peeq(v, T, mu)
    t_bulk = T + BULK_HEAT_FRACTION * (max_temp(v, T, mu) - T)
    homologous = np.clip((t_bulk - T_REF) / (T_MELT - T_REF), 0.0, 1.0)
    flow = (JC_A + JC_B * eps**JC_N) * (1.0 - homologous**JC_M)
    bump = np.exp(-(((v - STRESS_PEAK_VELOCITY) / STRESS_PEAK_WIDTH) ** 2)) * (1.0 - (mu - 0.1))
    return flow * (0.9 + 0.55 * bump)


def deformation_ratio(v, T, mu):
    x = (v - 400.0) / 500.0
    return 0.2 + 0.95 * x + 0.12 * x**2 + 0.04 * (T - 300.0) / 300.0 - 0.02 * (mu - 0.3)


_RESPONSES = {
    "max_peeq": max_peeq,
    "avg_peeq_contact": avg_peeq_contact,
    "max_temp_K": max_temp,
    "max_von_mises_MPa": max_von_mises,
    "deformation_ratio": deformation_ratio,
}


def respond(velocity, particle_temp, friction) -> dict:
    """Noise-free targets; accepts scalars or broadcastable arrays."""
    v = np.asarray(velocity, dtype=np.float64)
    T = np.asarray(particle_temp, dtype=np.float64)
    mu = np.asarray(friction, dtype=np.float64)
    out = {}
    for name, fn in _RESPONSES.items():
        val = fn(v, T, mu)
        out[name] = float(val) if np.ndim(val) == 0 else val
    return out


def generate(config: OracleConfig, csv_path=None) -> list[SampleRecord]:
    X = sample_inputs(config)
    clean = respond(X[:, 0], X[:, 1], X[:, 2])
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    noisy = {}
    for name in TARGETS:
        z = rng.standard_normal(len(X))
        noisy[name] = clean[name] * (1.0 + config.noise_std[name] * z)
    records = [
        SampleRecord(x[0], x[1], x[2], {t: float(noisy[t][i]) for t in TARGETS})
        for i, x in enumerate(X)
    ]
    if csv_path is not None:
        write_csv(records, csv_path)
        sidecar = Path(str(csv_path) + ".json")
        sidecar.write_text(json.dumps({"oracle_config": config.to_dict()}, indent=2, sort_keys=True) + "\n")
    return records
