"""Experiment configuration, JSON (de)serialisation and bundled scenario presets."""

from dataclasses import dataclass, field, asdict, replace
from importlib import resources
import json
import math

from .channels import (FadingChannel, GammaGammaParams, LogNormalParams, PhaseNoiseConfig,
                       FiberConfig, FreeSpaceConfig, fiber_transmittance, free_space_transmittance)
from .estimation import EstimationConfig
from .security import SecurityConfig
from .signal_chain import DetectorModel, ProtocolParams

SCHEMA_VERSION = 1
SCENARIOS = ("Fiber10km", "FreeSpaceWeak", "FreeSpaceMedium", "FreeSpaceStrong", "Custom")


class ConfigError(ValueError):
    pass


def fading_from_dict(d):
    if d is None:
        return None
    kind = d.get("kind")
    if kind == "lognormal":
        return LogNormalParams(float(d["mean_intensity"]), float(d["scint_index"]))
    if kind == "gamma_gamma":
        return GammaGammaParams.from_effective(float(d["alpha_eff"]), float(d["beta_eff"]))
    raise ConfigError(f"unknown fading kind {kind!r}")


def fading_to_dict(f):
    if f is None:
        return None
    if isinstance(f, LogNormalParams):
        return {"kind": "lognormal", "mean_intensity": f.mean_intensity, "scint_index": f.scint_index}
    return {"kind": "gamma_gamma", "alpha_eff": f.alpha_eff, "beta_eff": f.beta_eff}


def phase_from_dict(d):
    if d is None:
        return None
    if "sigma2_phase" in d and "c_j" not in d:
        return PhaseNoiseConfig.from_variance(float(d["sigma2_phase"]))
    return PhaseNoiseConfig(float(d["c_j"]), float(d["aperture_radius_m"]),
                            float(d["coherence_diameter_m"]))


def phase_to_dict(p):
    if p is None:
        return None
    return {"c_j": p.c_j, "aperture_radius_m": p.aperture_radius_m,
            "coherence_diameter_m": p.coherence_diameter_m}


@dataclass(frozen=True)
class TurbulencePreset:
    """A free-space link: Lambert-law attenuation at a fixed optical depth plus turbulence."""

    name: str
    alpha_db_per_km: float
    target_T: float
    fading: object
    phase: object

    @property
    def length_km(self):
        """Path length at which the Lambert law gives ``target_T``."""
        return -10.0 * math.log10(self.target_T) / self.alpha_db_per_km

    def transmittance(self, length_km=None):
        L = self.length_km if length_km is None else length_km
        return free_space_transmittance(FreeSpaceConfig(self.alpha_db_per_km, L))

    def channel(self, excess_noise, length_km=None):
        return FadingChannel(self.transmittance(length_km), excess_noise, self.fading, self.phase)

    def to_dict(self):
        return {"name": self.name, "alpha_db_per_km": self.alpha_db_per_km,
                "target_T": self.target_T, "fading": fading_to_dict(self.fading),
                "phase": phase_to_dict(self.phase)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["name"], float(d["alpha_db_per_km"]), float(d["target_T"]),
                   fading_from_dict(d.get("fading")), phase_from_dict(d.get("phase")))


@dataclass(frozen=True)
class FiberChannelSettings:
    alpha_f: float = 0.2
    length_km: float = 10.0
    excess_noise: float = 0.01
    fading: object = None
    phase: object = None
    stage_frames: int = 100

    def transmittance(self, length_km=None):
        L = self.length_km if length_km is None else length_km
        return fiber_transmittance(FiberConfig(self.alpha_f, L))

    def channel(self, length_km=None):
        return FadingChannel(self.transmittance(length_km), self.excess_noise, self.fading, self.phase)

    def to_dict(self):
        return {"kind": "fiber", "alpha_f": self.alpha_f, "length_km": self.length_km,
                "excess_noise": self.excess_noise, "fading": fading_to_dict(self.fading),
                "phase": phase_to_dict(self.phase), "stage_frames": self.stage_frames}


@dataclass(frozen=True)
class FreeSpaceChannelSettings:
    """Classified free-space run: ``target`` names one entry of the turbulence mix."""

    target: str = "strong"
    excess_noise: float = 0.01
    reference: str = "weak"

    def to_dict(self):
        return {"kind": "free_space", "target": self.target, "excess_noise": self.excess_noise,
                "reference": self.reference}


@dataclass(frozen=True)
class EqualizerSettings:
    mode: str = "OneHidden"
    hidden_size: int = 16
    learning_rate: float = 1e-2
    epochs: int = 200
    batch: int = 64
    val_fraction: float = 0.2
    retrain_epochs: int = 40


@dataclass(frozen=True)
class ClassifierSettings:
    k1: float = 1.5
    k2: float = 2.5
    k3: float = 3.5
    k: int = 5
    test_fraction: float = 0.2
    min_class_count: int = 100


@dataclass(frozen=True)
class SweepSettings:
    """Distance grids (km) per scenario for key-rate curves."""

    distances_km: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    n_pulses: int
    seed: int
    protocol: ProtocolParams
    detector: DetectorModel
    channel: object
    turbulence: tuple = ()
    equalizer: EqualizerSettings = EqualizerSettings()
    classifier: ClassifierSettings = ClassifierSettings()
    eps_pe: float = 0.05
    security: dict = field(default_factory=lambda: {"beta_r": 0.95, "fer": 0.0, "delta_n": 0.0})
    sweep: SweepSettings = SweepSettings()
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.n_pulses < 1000:
            raise ConfigError("n_pulses must be at least 1000")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if isinstance(self.channel, FreeSpaceChannelSettings):
            names = [p.name for p in self.turbulence]
            for n in (self.channel.target, self.channel.reference):
                if n not in names:
                    raise ConfigError(f"turbulence preset {n!r} missing from the mix")

    @property
    def is_free_space(self):
        return isinstance(self.channel, FreeSpaceChannelSettings)

    def estimation_config(self, n0=None, nu_el=None):
        det = self.detector
        return EstimationConfig(self.eps_pe, det.eta, det.nu_el if nu_el is None else nu_el,
                                det.n0 if n0 is None else n0, self.protocol.v_a)

    def security_config(self):
        s = self.security
        return SecurityConfig(self.protocol.v_a, self.detector.eta, self.detector.nu_el,
                              float(s.get("beta_r", 0.95)), float(s.get("fer", 0.0)),
                              float(s.get("delta_n", 0.0)))

    def preset(self, name):
        for p in self.turbulence:
            if p.name == name:
                return p
        raise ConfigError(f"no turbulence preset named {name!r}")

    def to_dict(self):
        return {
            "schema_version": self.schema_version,
            "scenario": self.scenario,
            "n_pulses": self.n_pulses,
            "seed": int(self.seed),
            "protocol": {"v_a": self.protocol.v_a, "pilot_amplitude": list(self.protocol.pilot_amplitude)},
            "detector": asdict(self.detector),
            "channel": self.channel.to_dict(),
            "turbulence": [p.to_dict() for p in self.turbulence],
            "equalizer": asdict(self.equalizer),
            "classifier": asdict(self.classifier),
            "estimation": {"eps_pe": self.eps_pe},
            "security": dict(self.security),
            "sweep": {"distances_km": {k: list(v) for k, v in self.sweep.distances_km.items()}},
        }


def config_from_dict(d):
    """Build an :class:`ExperimentConfig` from its JSON form."""
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    try:
        proto = d.get("protocol", {})
        pilot = proto.get("pilot_amplitude")
        protocol = ProtocolParams(float(proto["v_a"]), tuple(pilot) if pilot is not None else None)
        detector = DetectorModel(**d.get("detector", {}))
        ch = d["channel"]
        if ch.get("kind") == "fiber":
            channel = FiberChannelSettings(float(ch.get("alpha_f", 0.2)), float(ch.get("length_km", 10.0)),
                                           float(ch.get("excess_noise", 0.01)),
                                           fading_from_dict(ch.get("fading")), phase_from_dict(ch.get("phase")),
                                           int(ch.get("stage_frames", 100)))
        elif ch.get("kind") == "free_space":
            channel = FreeSpaceChannelSettings(ch.get("target", "strong"), float(ch.get("excess_noise", 0.01)),
                                               ch.get("reference", "weak"))
        else:
            raise ConfigError(f"unknown channel kind {ch.get('kind')!r}")
        sweep = d.get("sweep", {}).get("distances_km", {})
        return ExperimentConfig(
            scenario=d["scenario"], n_pulses=int(d["n_pulses"]), seed=int(d["seed"]),
            protocol=protocol, detector=detector, channel=channel,
            turbulence=tuple(TurbulencePreset.from_dict(p) for p in d.get("turbulence", [])),
            equalizer=EqualizerSettings(**d.get("equalizer", {})),
            classifier=ClassifierSettings(**d.get("classifier", {})),
            eps_pe=float(d.get("estimation", {}).get("eps_pe", 0.05)),
            security=dict(d.get("security", {"beta_r": 0.95, "fer": 0.0, "delta_n": 0.0})),
            sweep=SweepSettings({k: tuple(float(x) for x in v) for k, v in sweep.items()}),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc


def load_config(path):
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def _bundled():
    text = resources.files("cvqkd_eq").joinpath("data/presets.json").read_text()
    return json.loads(text)


def load_preset(scenario):
    """Bundled configuration for one of the named scenarios."""
    data = _bundled()
    if scenario not in data["scenarios"]:
        raise ConfigError(f"no bundled preset for scenario {scenario!r}")
    return config_from_dict(data["scenarios"][scenario])


def turbulence_presets():
    """The weak / medium / strong turbulence presets in their JSON form."""
    return _bundled()["turbulence"]
