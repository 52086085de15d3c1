"""Synthetic ECG and pulse generation.

Stands in for the analog front end of a wearable monitor: each heartbeat
is modelled as a sum of five Gaussian bumps (P, Q, R, S, T), repeated at
the beat period, amplified onto a mid-rail baseline, optionally corrupted
with Gaussian noise, and quantized by an ideal ADC.  A separate event
stream mimics the optical pulse counter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "Wave",
    "BeatTemplate",
    "SynthConfig",
    "EcgSample",
    "ConfigError",
    "DEFAULT_TEMPLATE",
    "quantize",
    "synthesize",
    "pulse_events",
]


class ConfigError(ValueError):
    """Raised when a synthesis configuration violates an invariant."""


class Wave(NamedTuple):
    """One Gaussian component of the beat: a*exp(-(t-mu)^2 / (2*sigma^2))."""

    amplitude: float  # millivolts, sign carries wave polarity
    center: float     # seconds, offset from the R peak
    sigma: float      # seconds, width


@dataclass(frozen=True)
class BeatTemplate:
    """Morphology of a single heartbeat as five Gaussian waves.

    Centers are offsets from the R peak (R itself sits at 0) and must be
    ordered P < Q < R < S < T.  P, R and T deflect upward (amplitude >= 0),
    Q and S downward (amplitude <= 0).
    """

    p: Wave
    q: Wave
    r: Wave
    s: Wave
    t: Wave

    def waves(self) -> tuple[Wave, ...]:
        return (self.p, self.q, self.r, self.s, self.t)

    def validate(self) -> None:
        centers = [w.center for w in self.waves()]
        if not (centers[0] < centers[1] < centers[2] == 0.0 < centers[3] < centers[4]):
            raise ConfigError("template: wave centers must satisfy P < Q < R=0 < S < T")
        for name, w in zip("pqrst", self.waves()):
            if w.sigma <= 0:
                raise ConfigError(f"template.{name}: sigma must be > 0")
        for name in ("q", "s"):
            if getattr(self, name).amplitude > 0:
                raise ConfigError(f"template.{name}: amplitude must be <= 0")
        for name in ("p", "r", "t"):
            if getattr(self, name).amplitude < 0:
                raise ConfigError(f"template.{name}: amplitude must be >= 0")


#: Conventional textbook magnitudes for an adult lead-II beat.
DEFAULT_TEMPLATE = BeatTemplate(
    p=Wave(0.15, -0.20, 0.025),
    q=Wave(-0.10, -0.040, 0.010),
    r=Wave(1.00, 0.0, 0.012),
    s=Wave(-0.20, 0.040, 0.010),
    t=Wave(0.30, 0.25, 0.045),
)

# The last beat of a record keeps this much signal after its R peak so the
# full T wave (center 0.25 s plus ~3 sigma) stays inside the record.
_POST_BEAT_MARGIN = 0.45


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of one synthesis run.

    The front-end gain maps template millivolts to ADC-input millivolts the
    way an instrumentation amplifier would; with the defaults a 1 mV R wave
    lands around 450 counts above the mid-rail baseline.
    """

    sample_rate: int = 250        # samples per second
    heart_rate: float = 72.0      # beats per minute
    duration: float = 10.0        # seconds
    baseline: float = 1650.0      # millivolts at the ADC input (mid-rail)
    noise_std: float = 0.0        # millivolts, post-gain additive noise
    adc_reference: float = 5.0    # volts
    adc_bits: int = 10
    gain: float = 1100.0          # amplifier gain applied to the template
    lead_off_intervals: tuple[tuple[float, float], ...] = ()
    seed: int | None = None       # noise generator seed, None for fresh entropy

    def validate(self) -> None:
        if self.sample_rate < 100:
            raise ConfigError("sample_rate: must be >= 100")
        if not 20 <= self.heart_rate <= 250:
            raise ConfigError("heart_rate: must be within [20, 250]")
        if self.duration < 0:
            raise ConfigError("duration: must be >= 0")
        if self.noise_std < 0:
            raise ConfigError("noise_std: must be >= 0")
        if self.adc_reference <= 0:
            raise ConfigError("adc_reference: must be > 0")
        if not 8 <= self.adc_bits <= 16:
            raise ConfigError("adc_bits: must be within [8, 16]")
        if self.gain <= 0:
            raise ConfigError("gain: must be > 0")
        for iv in self.lead_off_intervals:
            if len(iv) != 2 or not 0 <= iv[0] <= iv[1]:
                raise ConfigError("lead_off_intervals: each entry must be [start, end) with 0 <= start <= end")


class EcgSample(NamedTuple):
    """One quantized reading: session-relative time, ADC code, lead-off flag."""

    timestamp: float
    adc_code: int
    lead_off: bool


def quantize(voltage, adc_reference: float, adc_bits: int):
    """Quantize a voltage (millivolts) to an ADC code.

    code = clamp(floor(voltage / 1000 / adc_reference * 2**bits),
                 0, 2**bits - 1)

    Accepts a scalar or an ndarray; clamping absorbs out-of-range inputs,
    so the mapping is total and monotone non-decreasing.
    """
    full_scale = 1 << adc_bits
    code = np.floor(np.asarray(voltage, dtype=float) / 1000.0 / adc_reference * full_scale)
    code = np.clip(code, 0, full_scale - 1).astype(np.int64)
    if code.ndim == 0:
        return int(code)
    return code


def _beat_centers(heart_rate: float, duration: float) -> list[float]:
    # Beats are phased half a period into the record so the first P wave
    # and the last T wave both fit inside it.
    period = 60.0 / heart_rate
    centers = []
    c = period / 2.0
    while c + _POST_BEAT_MARGIN <= duration + 1e-12:
        centers.append(c)
        c += period
    return centers


def synthesize(config: SynthConfig, template: BeatTemplate = DEFAULT_TEMPLATE) -> list[EcgSample]:
    """Generate floor(sample_rate * duration) quantized ECG samples.

    The analog signal is baseline + gain * sum of beat Gaussians plus
    Gaussian noise; samples falling inside a lead-off interval are pinned
    to the rail-high code and flagged.
    """
    config.validate()
    template.validate()
    n = int(math.floor(config.sample_rate * config.duration + 1e-9))
    if n == 0:
        return []
    t = np.arange(n) / config.sample_rate
    shape = np.zeros(n)
    for c in _beat_centers(config.heart_rate, config.duration):
        for w in template.waves():
            if w.amplitude == 0.0:
                continue
            shape += w.amplitude * np.exp(-((t - c - w.center) ** 2) / (2.0 * w.sigma ** 2))
    mv = config.baseline + config.gain * shape
    if config.noise_std > 0:
        rng = np.random.default_rng(config.seed)
        mv = mv + rng.normal(0.0, config.noise_std, n)
    codes = quantize(mv, config.adc_reference, config.adc_bits)

    lead_off = np.zeros(n, dtype=bool)
    for start, end in config.lead_off_intervals:
        lead_off |= (t >= start) & (t < end)
    rail = (1 << config.adc_bits) - 1
    codes[lead_off] = rail

    return [EcgSample(float(ts), int(code), bool(off)) for ts, code, off in zip(t, codes, lead_off)]


def pulse_events(config: SynthConfig) -> list[float]:
    """Beat timestamps as seen by the pulse counter.

    Events fall at k * (60 / heart_rate) for k = 0, 1, ... strictly below
    duration; events inside a lead-off interval are swallowed (no optical
    return, no count).
    """
    config.validate()
    period = 60.0 / config.heart_rate
    events = []
    k = 0
    while True:
        ts = k * period
        if ts >= config.duration:
            break
        if not _in_lead_off(ts, config.lead_off_intervals):
            events.append(ts)
        k += 1
    return events


def _in_lead_off(ts: float, intervals: Sequence[tuple[float, float]]) -> bool:
    return any(start <= ts < end for start, end in intervals)
