"""GMCS modulation, pilot/signal framing, pulse shaping and homodyne detection."""

from dataclasses import dataclass
from enum import Enum
import math

import numpy as np

N_SAMPLES = 8
OSP_INDEX = 4

# Raised-cosine profile with its peak (value 1) on the optimum sampling point.
PULSE_PROFILE = 0.5 * (1.0 + np.cos(np.pi * (np.arange(N_SAMPLES) - OSP_INDEX) / 4.0))


@dataclass(frozen=True)
class ProtocolParams:
    """Modulation settings.

    Parameters
    ----------
    v_a : float
        Modulation variance V_A in SNU.
    pilot_amplitude : tuple of float, optional
        Public pilot quadratures (X_P, P_P); defaults to ``(10 sqrt(V_A), 0)``.
    """

    v_a: float
    pilot_amplitude: tuple | None = None

    def __post_init__(self):
        if not self.v_a > 0:
            raise ValueError("v_a must be positive")
        if self.pilot_amplitude is None:
            object.__setattr__(self, "pilot_amplitude", (10.0 * math.sqrt(self.v_a), 0.0))
        else:
            object.__setattr__(self, "pilot_amplitude", tuple(float(v) for v in self.pilot_amplitude))

    @property
    def v_total(self):
        return self.v_a + 1.0


@dataclass(frozen=True)
class DetectorModel:
    """Homodyne detector with efficiency ``eta`` and electronic noise ``nu_el`` (SNU)."""

    eta: float = 0.6
    nu_el: float = 0.01
    n0: float = 1.0

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if self.nu_el < 0:
            raise ValueError("nu_el must be nonnegative")
        if not self.n0 > 0:
            raise ValueError("n0 must be positive")


@dataclass(frozen=True)
class PulseSamples:
    samples: np.ndarray
    sample_interval: float = 1.0
    osp_index: int = OSP_INDEX

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.shape != (N_SAMPLES,):
            raise ValueError(f"a pulse has exactly {N_SAMPLES} samples, got shape {s.shape}")
        if not 0 <= self.osp_index < N_SAMPLES:
            raise ValueError("osp_index out of range")
        object.__setattr__(self, "samples", s)


class SlotKind(str, Enum):
    PILOT = "Pilot"
    SIGNAL = "Signal"


@dataclass(frozen=True)
class FrameSlot:
    """One time slot of the interleaved stream.

    ``conjugate_value`` is the quadrature not measured by the homodyne; it
    only matters when a phase drift rotates it into the measured one.
    """

    kind: SlotKind
    modulated_value: float
    conjugate_value: float
    pulse: PulseSamples


def modulate_gmcs(params, n, rng):
    """Draw ``n`` coherent-state quadrature pairs ``(x, p)`` from Normal(0, V_A)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return rng.normal(0.0, math.sqrt(params.v_a), size=(n, 2))


def shape_pulse(value):
    """Transmit-side pulse for ``value``: the raised-cosine profile scaled by it."""
    return PulseSamples(float(value) * PULSE_PROFILE)


def shape_pulses(values):
    """Vectorised :func:`shape_pulse`; returns an ``(n, 8)`` array."""
    return np.multiply.outer(np.asarray(values, dtype=float), PULSE_PROFILE)


def build_frame(symbols, params):
    """Interleave pilots and signals as Pilot, Signal, Pilot, Signal, ...

    Parameters
    ----------
    symbols : array_like, shape (n, 2)
        Signal quadrature pairs ``(x, p)``; ``x`` is the measured quadrature.
    """
    symbols = np.asarray(symbols, dtype=float).reshape(-1, 2)
    if len(symbols) == 0:
        raise ValueError("symbols must be nonempty")
    xp, pp = params.pilot_amplitude
    frame = []
    for x, p in symbols:
        frame.append(FrameSlot(SlotKind.PILOT, xp, pp, shape_pulse(xp)))
        frame.append(FrameSlot(SlotKind.SIGNAL, float(x), float(p), shape_pulse(x)))
    return frame


def deinterleave(frame):
    """Recover the ``(n, 2)`` signal symbols from a frame built by :func:`build_frame`."""
    out = [(s.modulated_value, s.conjugate_value) for s in frame[1::2]]
    return np.array(out, dtype=float).reshape(-1, 2)


def detect_homodyne(pulse, realization, det, rng, conjugate=None):
    """Measure a pulse after the channel.

    The deterministic part of every sample is ``sqrt(eta T)`` times the
    phase-rotated quadrature, ``x cos(dphi) - p sin(dphi)``.  Shot noise and
    channel excess noise live in the optical mode and therefore follow the
    pulse profile; electronic noise is added independently per sample.  At
    the optimum sampling point the total variance is ``N_0 + eta T eps +
    nu_el``.

    Parameters
    ----------
    pulse : PulseSamples
        Transmitted pulse of the measured quadrature.
    realization : ChannelRealization
    det : DetectorModel
    rng : numpy.random.Generator
    conjugate : PulseSamples, optional
        Transmitted pulse of the conjugate quadrature.
    """
    p = 0.0 if conjugate is None else conjugate.samples
    t = math.sqrt(det.eta * realization.transmittance)
    phi = realization.phase_drift
    mode_var = max(realization.noise_var - det.nu_el, 0.0)
    z = rng.normal(0.0, math.sqrt(mode_var)) if mode_var > 0 else 0.0
    e = rng.normal(0.0, math.sqrt(det.nu_el), N_SAMPLES) if det.nu_el > 0 else 0.0
    out = t * (pulse.samples * math.cos(phi) - p * math.sin(phi)) + z * PULSE_PROFILE + e
    return PulseSamples(out, pulse.sample_interval, pulse.osp_index)


def detect_batch(x, p, channels, det, rng):
    """Vectorised detection of ``n`` pulses, one sub-channel draw per pulse.

    Parameters
    ----------
    x, p : ndarray, shape (n,)
        Measured and conjugate quadratures.
    channels : ChannelBatch
        Realisation per pulse; must have length ``n``.

    Returns
    -------
    ndarray, shape (n, 8)
    """
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    t = np.sqrt(det.eta * channels.transmittance)
    phi = channels.phase_drift
    mode_std = np.sqrt(np.maximum(channels.noise_var - det.nu_el, 0.0))
    z = rng.standard_normal(len(x)) * mode_std
    e = rng.standard_normal((len(x), N_SAMPLES)) * math.sqrt(det.nu_el)
    amp = t * (x * np.cos(phi) - p * np.sin(phi)) + z
    return np.multiply.outer(amp, PULSE_PROFILE) + e


def optimum_sample(pulse):
    """Value at the optimum sampling point."""
    if isinstance(pulse, PulseSamples):
        return float(pulse.samples[pulse.osp_index])
    return np.asarray(pulse)[..., OSP_INDEX]
