"""Synthetic RF sensing data: multipath channel, OFDM CSI and dechirped LFM.

A scene is a :class:`PathSet`: static environment paths plus body paths whose
delay varies with time according to an activity template. Domains differ in
subject speed, reflection strength, environment geometry and noise, drawn
around nominal values with a configurable ``spread``.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from .datastore import DatasetContainer
from .errors import ConfigError

C_LIGHT = 299_792_458.0


@dataclass
class Path:
    amplitude: float
    static_delay: float
    dynamic_delay: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self):
        if self.amplitude < 0 or self.static_delay < 0:
            raise ConfigError("path amplitude and static delay must be non-negative")

    def delay(self, t):
        t = np.asarray(t, dtype=np.float64)
        d = np.full(t.shape, self.static_delay)
        if self.dynamic_delay is not None:
            d = d + self.dynamic_delay(t)
        return d


@dataclass
class PathSet:
    paths: list = field(default_factory=list)
    noise_std: float = 0.0

    def delays(self, t):
        """``(P,) + t.shape`` array of total delays."""
        t = np.asarray(t, dtype=np.float64)
        if not self.paths:
            return np.zeros((0,) + t.shape)
        return np.stack([p.delay(t) for p in self.paths])

    @property
    def amplitudes(self):
        return np.array([p.amplitude for p in self.paths], dtype=np.float64)


def _complex_noise(rng, std, shape):
    if std == 0:
        return np.zeros(shape, dtype=np.complex128)
    if rng is None:
        raise ValueError("a random generator is required when noise_std > 0")
    return (rng.normal(size=shape) + 1j * rng.normal(size=shape)) * (std / np.sqrt(2.0))


def channel_response(pathset: PathSet, f, t, rng=None):
    """``sum_p a_p exp(-j 2 pi f tau_p(t)) + n`` broadcast over ``f`` and ``t``."""
    f = np.asarray(f, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(f <= 0):
        raise ValueError("carrier frequency must be positive")
    shape = np.broadcast_shapes(f.shape, t.shape)
    h = np.zeros(shape, dtype=np.complex128)
    for p in pathset.paths:
        h = h + p.amplitude * np.exp(-2j * np.pi * f * p.delay(t))
    h = h + _complex_noise(rng, pathset.noise_std, shape)
    return h if shape else complex(h)


# -- OFDM ----------------------------------------------------------------------


@dataclass
class OfdmConfig:
    n_subcarriers: int = 30
    f1: float = 5.18e9
    delta_f: float = 625e3
    n_packets: int = 100
    packet_interval: float = 0.02
    pilot_seed: int = 7

    def __post_init__(self):
        if self.n_subcarriers < 1 or self.n_packets < 1 or self.delta_f <= 0:
            raise ConfigError("OFDM needs N, T >= 1 and delta_f > 0")

    @property
    def frequencies(self):
        return self.f1 + np.arange(self.n_subcarriers) * self.delta_f

    @property
    def pilots(self):
        """Unit-modulus QPSK pilot symbols ``s_n``."""
        k = np.random.default_rng(self.pilot_seed).integers(0, 4, self.n_subcarriers)
        return np.exp(1j * np.pi * (2 * k + 1) / 4)

    def time_grid(self, t0=0.0):
        return t0 + np.arange(self.n_packets) * self.packet_interval


def ofdm_csi_matrix(cfg: OfdmConfig, pathset: PathSet, t_grid, rng=None):
    """``(N, T)`` CSI estimates ``y_n / s_n`` with noise added to the received ``y_n``."""
    t_grid = np.asarray(t_grid, dtype=np.float64)
    f = cfg.frequencies[:, None]
    s = cfg.pilots[:, None]
    clean = channel_response(PathSet(pathset.paths, 0.0), f, t_grid[None, :])
    clean = np.asarray(clean).reshape(cfg.n_subcarriers, t_grid.size)
    y = clean * s + _complex_noise(rng, pathset.noise_std, clean.shape)
    return y / s


# -- LFM -------------------------------------------------------------------------


@dataclass
class LfmConfig:
    bandwidth: float = 7e6
    sweep_time: float = 64e-6
    f_c: float = 5.8e9
    fs: float = 2e6
    n_bins: int = 30
    n_snapshots: int = 100
    snapshot_interval: float = 0.02
    n_fft: int | None = None

    def __post_init__(self):
        if self.n_bins > self.n_samples:
            raise ConfigError("n_bins cannot exceed the samples per sweep")
        if self.fft_size < self.n_samples:
            raise ConfigError("n_fft must be at least the samples per sweep")

    @property
    def beta(self):
        return self.bandwidth / self.sweep_time

    @property
    def n_samples(self):
        return int(round(self.fs * self.sweep_time))

    @property
    def fft_size(self):
        return self.n_fft or self.n_samples

    def beat_bin(self, tau):
        return self.beta * tau * self.fft_size / self.fs

    def time_grid(self, t0=0.0):
        return t0 + np.arange(self.n_snapshots) * self.snapshot_interval


def lfm_chirp(cfg: LfmConfig, t):
    """Transmitted sweep ``exp(j 2 pi (f_c t + beta t^2 / 2))``."""
    return np.exp(2j * np.pi * (cfg.f_c * t + 0.5 * cfg.beta * t * t))


def lfm_snapshot(cfg: LfmConfig, pathset: PathSet, t0, rng=None):
    """Magnitude spectrum (first ``n_bins`` bins) of one dechirped sweep.

    The echo of each path is ``a conj(x(t - tau)) Pi(t - tau)`` with the sweep
    rectangle ``Pi``; mixing it with the transmitted sweep leaves a tone at
    the beat frequency ``beta * tau``. Delays are frozen over one sweep.
    """
    t = np.arange(cfg.n_samples) / cfg.fs
    taus = pathset.delays(np.asarray(t0, dtype=np.float64))
    if np.any(taus >= cfg.sweep_time):
        raise ValueError("path delay lies outside the chirp window")
    if taus.size and cfg.beta * taus.max() > cfg.fs / 2:
        raise ValueError("beat frequency exceeds Nyquist; raise fs")
    y = np.zeros(t.shape, dtype=np.complex128)
    for a, tau in zip(pathset.amplitudes, taus):
        u = t - tau
        y += a * np.conj(lfm_chirp(cfg, u)) * ((u >= 0) & (u <= cfg.sweep_time))
    y += _complex_noise(rng, pathset.noise_std, y.shape)
    beat = y * lfm_chirp(cfg, t)
    spec = np.abs(np.fft.fft(beat, n=cfg.fft_size)) / cfg.n_samples
    return spec[:cfg.n_bins]


def lfm_matrix(cfg: LfmConfig, pathset: PathSet, t0_grid, rng=None):
    return np.stack([lfm_snapshot(cfg, pathset, t0, rng) for t0 in np.asarray(t0_grid)], axis=1)


# -- model input -----------------------------------------------------------------


def to_model_input(matrix, mode="amplitude", dtype=np.float32):
    """``(N, T)`` complex/real matrix -> real ``(D, L)`` array.

    ``amplitude``: ``|m|`` (D = N). ``amplitude_phase``: amplitude rows then
    phase rows unwrapped along time (D = 2N).
    """
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ValueError(f"expected an (N, T) matrix, got shape {m.shape}")
    amp = np.abs(m)
    if mode == "amplitude":
        return amp.astype(dtype)
    if mode == "amplitude_phase":
        if not np.iscomplexobj(m):
            raise ValueError("amplitude_phase mode needs a complex matrix")
        phase = np.unwrap(np.angle(m), axis=1)
        return np.concatenate([amp, phase]).astype(dtype)
    raise ValueError(f"unknown input mode {mode!r}")


# -- activities ------------------------------------------------------------------


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _bump(x):
    return np.exp(-0.5 * x * x)


def _walking(u, speed, c, ph):
    cycles = 2.5 * speed
    return np.abs(((cycles * u + ph) % 1.0) - 0.5) * 2.0


def _sitting_down(u, speed, c, ph):
    return 1.0 - _smoothstep((u - c) * speed / 0.4 + 0.5)


def _standing_up(u, speed, c, ph):
    return _smoothstep((u - c) * speed / 0.4 + 0.5)


def _standing(u, speed, c, ph):
    return 0.5 + 0.03 * np.sin(2 * np.pi * (0.8 * speed * u + ph))


def _picking_up(u, speed, c, ph):
    return 1.0 - 0.8 * _bump((u - c) * speed / 0.12)


def _kicking(u, speed, c, ph):
    return 0.5 + 0.5 * _bump((u - c) * speed / 0.035) - 0.3 * _bump((u - c - 0.08 / speed) * speed / 0.035)


@dataclass(frozen=True)
class ActivityTemplate:
    """``shape(u, speed, centre, phase)`` maps normalized time ``u`` to a
    normalized displacement, roughly in ``[0, 1]``."""

    class_id: int
    name: str
    shape: Callable
    duration: float = 2.0

    def trajectory(self, span, speed, centre, phase, t_start=0.0):
        """Dynamic delay function ``tau_D(t)`` in seconds."""
        def tau(t):
            u = (np.asarray(t) - t_start) / self.duration
            return span * self.shape(u, speed, centre, phase)
        return tau


DEFAULT_ACTIVITIES = (
    ActivityTemplate(1, "walking", _walking),
    ActivityTemplate(2, "sitting_down", _sitting_down),
    ActivityTemplate(3, "standing_up", _standing_up),
    ActivityTemplate(4, "standing", _standing),
    ActivityTemplate(5, "picking_up", _picking_up),
    ActivityTemplate(6, "kicking", _kicking),
)


# -- domains ---------------------------------------------------------------------


@dataclass
class DomainSpec:
    domain_id: int
    subject_speed_scale: float = 1.0
    reflection_amplitude_scale: float = 1.0
    static_env_paths: list = field(default_factory=list)  # [(amplitude, delay_s), ...]
    noise_std: float = 0.05
    rng_seed: int = 0

    def __post_init__(self):
        if self.subject_speed_scale <= 0 or self.reflection_amplitude_scale <= 0:
            raise ConfigError("domain scales must be positive")


@dataclass
class Geometry:
    """Per-modality delay layout (seconds)."""

    los_delay: float
    env_delay_range: tuple
    body_delay_range: tuple
    motion_span: float


GEOMETRY = {
    "ofdm": Geometry(los_delay=10e-9, env_delay_range=(20e-9, 80e-9),
                     body_delay_range=(25e-9, 45e-9), motion_span=4e-9),
    "lfm": Geometry(los_delay=0.5e-6, env_delay_range=(1.0e-6, 4.0e-6),
                    body_delay_range=(1.5e-6, 2.5e-6), motion_span=0.8e-6),
}


def make_domain_specs(n_domains, spread=0.3, seed=0, modality="ofdm", n_env_paths=2, base_noise=0.05):
    """Domain parameters drawn around a shared nominal scene.

    Each domain's deviations are fixed standard-normal draws scaled by
    ``spread``, so ``spread=0`` gives identical domains and larger spreads
    move domains apart along the same directions.
    """
    geo = GEOMETRY[modality]
    rng = np.random.default_rng([seed, 1009])
    lo, hi = geo.env_delay_range
    base_amp = rng.uniform(0.3, 0.8, n_env_paths)
    base_delay = rng.uniform(lo, hi, n_env_paths)
    specs = []
    for k in range(n_domains):
        z = rng.normal(size=3 + 2 * n_env_paths)
        amps = np.clip(base_amp * np.exp(spread * z[3:3 + n_env_paths]), 0.2, 1.0)
        delays = np.clip(base_delay + spread * 0.25 * (hi - lo) * z[3 + n_env_paths:], lo, hi)
        specs.append(DomainSpec(
            domain_id=k + 1,
            subject_speed_scale=float(np.exp(spread * 0.5 * z[0])),
            reflection_amplitude_scale=float(np.exp(spread * 0.5 * z[1])),
            static_env_paths=[(float(a), float(d)) for a, d in zip(amps, delays)],
            noise_std=float(base_noise * np.exp(spread * 0.5 * z[2])),
            rng_seed=int(rng.integers(0, 2**31)),
        ))
    return specs


@dataclass
class SimConfig:
    modality: str = "ofdm"
    n_domains: int = 3
    n_classes: int = 6
    samples_per_class: int = 50
    spread: float = 0.6
    input_mode: str = "amplitude"
    speed_jitter: float = 0.15
    amplitude_jitter: float = 0.15
    env_amp_jitter: float = 0.3
    env_delay_jitter: float = 0.05
    seed: int = 0
    ofdm: OfdmConfig = field(default_factory=OfdmConfig)
    lfm: LfmConfig = field(default_factory=LfmConfig)

    def __post_init__(self):
        if isinstance(self.ofdm, dict):
            self.ofdm = OfdmConfig(**self.ofdm)
        if isinstance(self.lfm, dict):
            self.lfm = LfmConfig(**self.lfm)
        if self.modality not in GEOMETRY:
            raise ConfigError(f"modality must be one of {sorted(GEOMETRY)}")
        if not 2 <= self.n_classes <= len(DEFAULT_ACTIVITIES):
            raise ConfigError(f"n_classes must lie in [2, {len(DEFAULT_ACTIVITIES)}]")


def scene(spec: DomainSpec, template: ActivityTemplate, modality, rng, speed_jitter=0.15, amp_jitter=0.15,
          env_amp_jitter=0.0, env_delay_jitter=0.0):
    """Draw one subject/trial and return its :class:`PathSet`.

    Static paths get per-trial log-normal amplitude jitter and delay jitter
    (in units of the motion span) around the domain's nominal layout.
    """
    geo = GEOMETRY[modality]
    speed = spec.subject_speed_scale * np.exp(speed_jitter * rng.normal())
    refl = spec.reflection_amplitude_scale * np.exp(amp_jitter * rng.normal())
    centre = rng.uniform(0.35, 0.65)
    phase = rng.uniform()
    paths = [Path(1.0, geo.los_delay)]
    for a, d in spec.static_env_paths:
        a = float(np.clip(a * np.exp(env_amp_jitter * rng.normal()), 0.0, 1.0))
        d = float(max(d + env_delay_jitter * geo.motion_span * rng.normal(), 0.0))
        paths.append(Path(a, d))
    body = rng.uniform(*geo.body_delay_range)
    torso = template.trajectory(geo.motion_span, speed, centre, phase)
    limb = template.trajectory(1.6 * geo.motion_span, speed, centre, phase + 0.25)
    paths.append(Path(float(np.clip(0.5 * refl, 0.05, 1.0)), body, torso))
    paths.append(Path(float(np.clip(0.25 * refl, 0.02, 1.0)), body + 0.1 * geo.motion_span, limb))
    return PathSet(paths, spec.noise_std)


def simulate_sample(spec, template, cfg: SimConfig, rng):
    ps = scene(spec, template, cfg.modality, rng, cfg.speed_jitter, cfg.amplitude_jitter,
               cfg.env_amp_jitter, cfg.env_delay_jitter)
    if cfg.modality == "ofdm":
        m = ofdm_csi_matrix(cfg.ofdm, ps, cfg.ofdm.time_grid(), rng)
        return to_model_input(m, cfg.input_mode)
    if cfg.input_mode != "amplitude":
        raise ConfigError("LFM matrices are magnitude spectra; only amplitude mode applies")
    return to_model_input(lfm_matrix(cfg.lfm, ps, cfg.lfm.time_grid(), rng))


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def generate_dataset(domain_specs, activity_templates, samples_per_class_per_domain, modality="ofdm",
                     seed=0, cfg: SimConfig | None = None):
    """Simulate every (domain, class, repetition); deterministic in ``seed``."""
    if samples_per_class_per_domain < 1:
        raise ConfigError("samples_per_class_per_domain must be positive")
    if len(domain_specs) < 2 or len(activity_templates) < 2:
        raise ConfigError("need at least two domains and two activity classes")
    cfg = cfg or SimConfig(modality=modality, seed=seed)
    cfg.modality = modality
    inputs, domains, labels = [], [], []
    for spec in domain_specs:
        for tpl in activity_templates:
            for i in range(samples_per_class_per_domain):
                rng = np.random.default_rng([seed, spec.rng_seed, spec.domain_id, tpl.class_id, i])
                inputs.append(simulate_sample(spec, tpl, cfg, rng))
                domains.append(spec.domain_id)
                labels.append(tpl.class_id)
    generator = {
        "sim": {k: v for k, v in asdict(cfg).items() if k not in ("ofdm", "lfm")},
        "radio": asdict(cfg.ofdm) if modality == "ofdm" else asdict(cfg.lfm),
        "domains": [asdict(s) for s in domain_specs],
        "activities": [t.name for t in activity_templates],
    }
    generator["sim"]["seed"] = seed
    return DatasetContainer(
        inputs=np.stack(inputs), domain_ids=domains, labels=labels,
        n_classes=max(t.class_id for t in activity_templates),
        modality=modality, seed=seed, generator_hash=config_hash(generator), generator=generator,
    )


def simulate(cfg: SimConfig) -> DatasetContainer:
    """Convenience wrapper: default domains + the first ``n_classes`` templates."""
    specs = make_domain_specs(cfg.n_domains, cfg.spread, cfg.seed, cfg.modality)
    return generate_dataset(specs, DEFAULT_ACTIVITIES[:cfg.n_classes], cfg.samples_per_class,
                            cfg.modality, cfg.seed, cfg)
