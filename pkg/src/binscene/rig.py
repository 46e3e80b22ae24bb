"""Synthetic eight-microphone rig: renders moving traffic sources to four binaural
pairs and rasterizes matching panoramic semantic/depth/flow grids.

Azimuth is measured clockwise from the rig's front (positive = to the right),
so panorama columns grow with azimuth. Within every pair the first channel is
the left ear.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import distill, fileio
from .dsp import Waveform
from .errors import ConfigurationError, GeometryError, InvalidInputError

CLASS_IDS = {"car": 1, "tram": 2, "motorcycle": 3}
CLASS_BY_ID = {v: k for k, v in CLASS_IDS.items()}
# Physical extent (width, height) in metres, painted as angle = size / distance.
CLASS_SIZE = {1: (4.0, 1.6), 2: (8.0, 3.2), 3: (2.0, 1.4)}

FULL_SCALE_SPLIT = (51400, 6208, 6492)


@dataclass(frozen=True)
class RigGeometry:
    head_radius: float = 0.0875
    speed_of_sound: float = 343.0
    pair_azimuths: tuple = (0, 90, 180, 270)
    pair_to_channel: tuple = ((0, (3, 8)), (90, (1, 6)), (180, (4, 7)), (270, (2, 5)))

    def __post_init__(self):
        if self.head_radius <= 0 or self.speed_of_sound <= 0:
            raise ConfigurationError("head_radius and speed_of_sound must be positive")
        if tuple(self.pair_azimuths) != (0, 90, 180, 270):
            raise ConfigurationError("pair azimuths must be exactly 0, 90, 180, 270 degrees")
        ids = sorted(c for _, pair in self.pair_to_channel for c in pair)
        if ids != list(range(1, 9)):
            raise ConfigurationError("pair channels must be a permutation of 1..8")

    def channels(self, azimuth_deg: int) -> tuple[int, int]:
        return dict(self.pair_to_channel)[azimuth_deg]

    def pair_of(self, channel: int) -> tuple[int, int]:
        """(pair azimuth in degrees, ear index 0=left / 1=right) for a channel id."""
        for az, pair in self.pair_to_channel:
            if channel in pair:
                return az, pair.index(channel)
        raise InvalidInputError(f"unknown channel {channel}")


@dataclass(frozen=True)
class SourceSpec:
    class_id: int
    azimuth0: float
    distance0: float
    angular_velocity: float = 0.0
    radial_velocity: float = 0.0
    timbre_seed: int = 0
    base_gain: float = 1.0
    onset: float | None = None  # emitter silent before this time, seconds

    def __post_init__(self):
        if self.class_id not in CLASS_BY_ID:
            raise InvalidInputError(f"class_id must be one of {sorted(CLASS_BY_ID)}, got {self.class_id}")

    def azimuth(self, t):
        return self.azimuth0 + self.angular_velocity * np.asarray(t, dtype=np.float64)

    def distance(self, t):
        return self.distance0 + self.radial_velocity * np.asarray(t, dtype=np.float64)


@dataclass(frozen=True)
class SceneSpec:
    sources: tuple = ()
    duration: float = 1.0
    sample_rate: int = 16000
    noise_floor: float = 0.0
    rng_seed: int = 0
    parked: tuple = ()  # silent static objects, visible only to the label maps

    def __post_init__(self):
        if self.duration <= 0 or self.sample_rate <= 0:
            raise InvalidInputError("duration and sample_rate must be positive")
        if len(self.sources) > 4:
            raise InvalidInputError(f"at most 4 sound sources, got {len(self.sources)}")
        object.__setattr__(self, "sources", tuple(self.sources))
        object.__setattr__(self, "parked", tuple(self.parked))

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))

    def to_kv(self) -> dict:
        out = {"duration": self.duration, "sample_rate": self.sample_rate,
               "noise_floor": self.noise_floor, "rng_seed": self.rng_seed,
               "n_sources": len(self.sources), "n_parked": len(self.parked)}
        for prefix, group in (("source", self.sources), ("parked", self.parked)):
            for i, s in enumerate(group):
                for k, v in asdict(s).items():
                    out[f"{prefix}{i}.{k}"] = "none" if v is None else v
        return out

    @classmethod
    def from_kv(cls, kv: dict) -> "SceneSpec":
        def group(prefix, n):
            items = []
            for i in range(n):
                kw = {}
                for f in fields(SourceSpec):
                    raw = kv[f"{prefix}{i}.{f.name}"]
                    if raw == "none":
                        kw[f.name] = None
                    elif f.name in ("class_id", "timbre_seed"):
                        kw[f.name] = int(raw)
                    else:
                        kw[f.name] = float(raw)
                items.append(SourceSpec(**kw))
            return tuple(items)

        return cls(sources=group("source", int(kv["n_sources"])), duration=float(kv["duration"]),
                   sample_rate=int(kv["sample_rate"]), noise_floor=float(kv["noise_floor"]),
                   rng_seed=int(kv["rng_seed"]), parked=group("parked", int(kv.get("n_parked", 0))))


@dataclass
class GroundTruthMaps:
    labels: np.ndarray  # (H, W) int
    depth: np.ndarray   # (H, W) metres
    flow: np.ndarray    # (2, H, W) pixels per frame interval, (dx, dy)

    def __post_init__(self):
        if self.labels.shape != self.depth.shape or self.flow.shape != (2,) + self.labels.shape:
            raise InvalidInputError("label, depth and flow grids disagree in shape")


@dataclass
class RigAudio:
    data: np.ndarray  # (8, n), row i holds channel id i + 1
    sample_rate: int

    def channel(self, cid: int) -> Waveform:
        return Waveform(self.data[cid - 1], self.sample_rate, cid)

    def select(self, cids) -> np.ndarray:
        return self.data[[c - 1 for c in cids]]


# -- acoustics ----------------------------------------------------------------

def lateral_angle(relative_azimuth):
    """Fold an azimuth relative to a pair's facing into [-pi/2, pi/2]."""
    return np.arcsin(np.clip(np.sin(relative_azimuth), -1.0, 1.0))


def itd(source_azimuth, g: RigGeometry = RigGeometry()):
    """Woodworth spherical-head ITD, left arrival minus right arrival, in seconds."""
    lat = lateral_angle(source_azimuth)
    return g.head_radius / g.speed_of_sound * (lat + np.sin(lat))


def head_shadow(relative_azimuth):
    """(left gain, right gain): the far ear is attenuated by 1 - 0.4 |sin(lateral)|."""
    lat = lateral_angle(relative_azimuth)
    far = 1.0 - 0.4 * np.abs(np.sin(lat))
    left = np.where(lat > 0, far, 1.0)
    right = np.where(lat < 0, far, 1.0)
    return left, right


def emitter_spectrum(class_id: int, timbre_seed: int, n: int, sample_rate: int) -> np.ndarray:
    """One-sided spectrum of a unit-RMS periodic emitter whose partials all sit on
    the DFT grid of the clip, so fractional delays are exact phase rotations."""
    rng = np.random.default_rng([class_id, timbre_seed])
    df = sample_rate / n
    nb = n // 2 + 1
    freqs = np.arange(nb) * df
    spec = np.zeros(nb, dtype=np.complex128)

    def harmonics(f0, max_f, amp_fn):
        f0_bin = max(1, int(round(f0 / df)))
        k = 1
        while k * f0_bin < nb - 1 and k * f0_bin * df <= max_f:
            spec[k * f0_bin] += amp_fn(k) * np.exp(2j * np.pi * rng.random())
            k += 1

    def noise(lo, hi, level, tilt=0.0):
        band = (freqs >= lo) & (freqs <= hi)
        band[0] = band[-1] = False
        shape = (np.maximum(freqs[band], 1.0) / lo) ** (-tilt)
        phases = np.exp(2j * np.pi * rng.random(band.sum()))
        spec[band] += level * shape * phases / np.sqrt(band.sum())

    if class_id == 1:  # car: low harmonic stack + broadband rumble
        harmonics(rng.uniform(80, 120), 2000.0, lambda k: rng.uniform(0.5, 1.0) / k)
        noise(50.0, 4000.0, 1.5, tilt=1.0)
    elif class_id == 2:  # tram: tonal whine + rail hiss
        harmonics(rng.uniform(300, 500), 3000.0, lambda k: rng.uniform(0.6, 1.0) / k ** 1.5)
        noise(2000.0, min(6000.0, sample_rate / 2 - df), 1.0)
    else:  # motorcycle: pulse train, odd harmonics dominant
        harmonics(rng.uniform(40, 70), 3000.0,
                  lambda k: (1.0 if k % 2 else 0.25) / k ** 0.7)
        noise(100.0, 3000.0, 0.3, tilt=0.5)

    spec[0] = 0.0
    spec[-1] = 0.0
    power = 2.0 * np.sum(np.abs(spec) ** 2) / n ** 2  # mean square of irfft(spec)
    return spec / np.sqrt(power)


def delayed(spec: np.ndarray, delay_samples: float, n: int) -> np.ndarray:
    k = np.arange(spec.size)
    return np.fft.irfft(spec * np.exp(-2j * np.pi * k * delay_samples / n), n=n)


def check_geometry(scene: SceneSpec) -> None:
    for s in scene.sources + scene.parked:
        d = s.distance(np.array([0.0, scene.duration]))
        if d.min() < 1.0:
            raise GeometryError(
                f"source of class {CLASS_BY_ID[s.class_id]} comes within {d.min():.3f} m (< 1 m)")


def propagation_delays(source: SourceSpec, t: float, g: RigGeometry = RigGeometry()) -> dict:
    """Arrival delay in seconds for every channel id at time ``t``."""
    az = float(source.azimuth(t))
    base = float(source.distance(t)) / g.speed_of_sound
    out = {}
    for pair_az, (left, right) in g.pair_to_channel:
        half = 0.5 * float(itd(az - math.radians(pair_az), g))
        out[left] = base + half
        out[right] = base - half
    return out


def render_scene(scene: SceneSpec, g: RigGeometry = RigGeometry()) -> RigAudio:
    """Render all eight channels.

    Propagation delays (distance and ITD) are frozen at the clip midpoint so no
    Doppler shift is produced; distance attenuation and head shadow follow the
    source trajectory sample by sample.
    """
    check_geometry(scene)
    n, sr = scene.n_samples, scene.sample_rate
    t = np.arange(n) / sr
    out = np.zeros((8, n))
    t_ref = 0.5 * scene.duration
    for s in scene.sources:
        spec = emitter_spectrum(s.class_id, s.timbre_seed, n, sr)
        az_t = s.azimuth(t)
        atten = s.base_gain / s.distance(t)
        delays = propagation_delays(s, t_ref, g)
        for pair_az, (left, right) in g.pair_to_channel:
            gl, gr = head_shadow(az_t - math.radians(pair_az))
            for cid, ear_gain in ((left, gl), (right, gr)):
                sig = delayed(spec, delays[cid] * sr, n) * (atten * ear_gain)
                if s.onset is not None:
                    sig[t < s.onset + delays[cid]] = 0.0
                out[cid - 1] += sig
    if scene.noise_floor > 0:
        rng = np.random.default_rng(scene.rng_seed)
        out += rng.normal(0.0, scene.noise_floor, size=out.shape)
    return RigAudio(out, sr)


# -- ground truth -------------------------------------------------------------

def _paint_order(objects, t):
    return sorted(objects, key=lambda s: -float(s.distance(t)))


def rasterize_ground_truth(scene: SceneSpec, t_mid: float, t_next: float, H: int = 32,
                           W: int = 64, bg_depth: float = 40.0,
                           include_parked: bool = True) -> GroundTruthMaps:
    if H < 8 or W < 8:
        raise ConfigurationError(f"grid must be at least 8x8, got {H}x{W}")
    if not 0 <= t_mid < t_next <= scene.duration:
        raise InvalidInputError(f"need 0 <= t_mid < t_next <= duration, got {t_mid}, {t_next}")
    labels = np.zeros((H, W), dtype=np.int64)
    depth = np.full((H, W), float(bg_depth))
    flow = np.zeros((2, H, W))
    objects = scene.sources + (scene.parked if include_parked else ())
    cols = np.arange(W) + 0.5
    rows = np.arange(H) + 0.5
    px_per_rad_x = W / (2 * np.pi)
    px_per_rad_y = H / np.pi
    for s in _paint_order(objects, t_mid):
        d = float(s.distance(t_mid))
        width, height = CLASS_SIZE[s.class_id]
        cx = (W / 2 + float(s.azimuth(t_mid)) * px_per_rad_x) % W
        half_w = max(0.5, 0.5 * width / d * px_per_rad_x)
        half_h = max(0.5, 0.5 * height / d * px_per_rad_y)
        dx = np.abs((cols - cx + W / 2) % W - W / 2)
        col_mask = dx <= half_w
        if not col_mask.any():
            col_mask[np.argmin(dx)] = True
        dy = np.abs(rows - H / 2)
        row_mask = dy <= half_h
        if not row_mask.any():
            row_mask[np.argmin(dy)] = True
        region = row_mask[:, None] & col_mask[None, :]
        labels[region] = s.class_id
        depth[region] = d
        flow[0][region] = (float(s.azimuth(t_next)) - float(s.azimuth(t_mid))) * px_per_rad_x
        flow[1][region] = 0.0
    return GroundTruthMaps(labels, depth, flow)


def background_sequence(scene: SceneSpec, t_mid: float, t_next: float, H: int, W: int,
                        n_frames: int, rng: np.random.Generator) -> np.ndarray:
    """Label frames of the same street at other moments: parked objects stay put,
    traffic shows up at random bearings."""
    frames = []
    for _ in range(n_frames):
        moved = tuple(
            SourceSpec(s.class_id, rng.uniform(-np.pi, np.pi), s.distance0, s.angular_velocity,
                       s.radial_velocity, s.timbre_seed, s.base_gain)
            for s in scene.sources if rng.random() < 0.5)
        other = SceneSpec(moved, scene.duration, scene.sample_rate, parked=scene.parked)
        frames.append(rasterize_ground_truth(other, t_mid, t_next, H, W).labels)
    return np.stack(frames)


# -- datasets -----------------------------------------------------------------

@dataclass
class DatasetConfig:
    n: int = 64
    seed: int = 0
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    duration: float = 1.0
    sample_rate: int = 16000
    grid_h: int = 32
    grid_w: int = 64
    flow_dt: float = 0.25
    bg_depth: float = 40.0
    min_sources: int = 1
    max_sources: int = 2
    azimuth_min_deg: float = -90.0
    azimuth_max_deg: float = 90.0
    distance_min: float = 4.0
    distance_max: float = 12.0
    max_angular_velocity: float = 0.4
    max_radial_velocity: float = 2.0
    gain_min: float = 0.5
    gain_max: float = 1.0
    parked_probability: float = 0.3
    noise_floor: float = 0.001
    background_frames: int = 9
    select: bool = False
    energy_threshold: float = distill.DEFAULT_ENERGY_THRESHOLD
    min_diff_fraction: float = distill.DEFAULT_MIN_DIFF_FRACTION
    workers: int = 1

    @classmethod
    def from_kv(cls, kv: dict) -> "DatasetConfig":
        known = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in kv.items():
            if key not in known:
                continue
            default = getattr(cls, key)
            if isinstance(default, bool):
                kw[key] = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(default, int):
                kw[key] = int(raw)
            else:
                kw[key] = float(raw)
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self):
        if self.n <= 0:
            raise ConfigurationError("empty dataset: n must be positive")
        if not (0 <= self.train_fraction <= 1 and 0 <= self.val_fraction <= 1
                and self.train_fraction + self.val_fraction <= 1):
            raise ConfigurationError("split fractions must lie in [0, 1] and sum to at most 1")
        if not 0 <= self.min_sources <= self.max_sources <= 4:
            raise ConfigurationError("need 0 <= min_sources <= max_sources <= 4")
        if self.distance_min - self.max_radial_velocity * self.duration < 1.0:
            raise ConfigurationError("distance range lets sources pass within 1 m")
        if self.flow_dt <= 0 or 0.5 * self.duration + self.flow_dt > self.duration:
            raise ConfigurationError("flow_dt must be positive and fit after the clip midpoint")

    def split_counts(self) -> tuple[int, int, int]:
        n_train = int(round(self.n * self.train_fraction))
        n_val = min(self.n - n_train, int(round(self.n * self.val_fraction)))
        return n_train, n_val, self.n - n_train - n_val


def random_scene(cfg: DatasetConfig, rng: np.random.Generator) -> SceneSpec:
    n_src = int(rng.integers(cfg.min_sources, cfg.max_sources + 1))
    sources = []
    for _ in range(n_src):
        sources.append(SourceSpec(
            class_id=int(rng.integers(1, 4)),
            azimuth0=math.radians(rng.uniform(cfg.azimuth_min_deg, cfg.azimuth_max_deg)),
            distance0=rng.uniform(cfg.distance_min, cfg.distance_max),
            angular_velocity=rng.uniform(-cfg.max_angular_velocity, cfg.max_angular_velocity),
            radial_velocity=rng.uniform(-cfg.max_radial_velocity, cfg.max_radial_velocity),
            timbre_seed=int(rng.integers(0, 2 ** 31)),
            base_gain=rng.uniform(cfg.gain_min, cfg.gain_max)))
    parked = []
    if rng.random() < cfg.parked_probability:
        parked.append(SourceSpec(int(rng.integers(1, 4)), rng.uniform(-np.pi, np.pi),
                                 rng.uniform(cfg.distance_min, cfg.distance_max), base_gain=0.0))
    return SceneSpec(tuple(sources), cfg.duration, cfg.sample_rate, cfg.noise_floor,
                     int(rng.integers(0, 2 ** 31)), tuple(parked))


@dataclass
class Sample:
    scene: SceneSpec
    audio: RigAudio
    maps: GroundTruthMaps  # labels already reduced to sound-making pixels
    background: np.ndarray = field(repr=False, default=None)


def make_sample(cfg: DatasetConfig, seed_seq: np.random.SeedSequence,
                g: RigGeometry = RigGeometry()) -> Sample:
    rng = np.random.default_rng(seed_seq)
    t_mid = 0.5 * cfg.duration
    t_next = t_mid + cfg.flow_dt
    for _attempt in range(100):
        scene = random_scene(cfg, rng)
        audio = render_scene(scene, g)
        maps = rasterize_ground_truth(scene, t_mid, t_next, cfg.grid_h, cfg.grid_w, cfg.bg_depth)
        seq = background_sequence(scene, t_mid, t_next, cfg.grid_h, cfg.grid_w,
                                  cfg.background_frames, rng)
        y_bg = distill.mode_background(seq)
        if cfg.select and not distill.select_sample(
                audio.select(g.channels(0)), maps.labels, y_bg,
                cfg.energy_threshold, cfg.min_diff_fraction):
            continue
        labels = distill.distilled_labels(maps.labels, y_bg)
        return Sample(scene, audio, GroundTruthMaps(labels, maps.depth, maps.flow), y_bg)
    raise ConfigurationError("sample selection rejected 100 consecutive scenes; relax thresholds")


def write_sample(directory: Path, sample: Sample) -> None:
    fileio.ensure_dir(directory)
    fileio.write_audio(directory / "audio.bsna", sample.audio.data, sample.audio.sample_rate)
    fileio.write_tensor(directory / "labels.bsnt", sample.maps.labels)
    fileio.write_tensor(directory / "depth.bsnt", sample.maps.depth)
    fileio.write_tensor(directory / "flow.bsnt", sample.maps.flow)
    fileio.write_kv(directory / "scene.txt", sample.scene.to_kv())


def _render_one(args):
    cfg, seed_seq, directory = args
    write_sample(Path(directory), make_sample(cfg, seed_seq))
    return directory


def generate_dataset(cfg: DatasetConfig, out_dir) -> list[tuple[str, str]]:
    """Render ``cfg.n`` scenes into ``out_dir`` and write ``manifest.txt``."""
    cfg.validate()
    out_dir = fileio.ensure_dir(out_dir)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n)
    ids = [f"s{i:05d}" for i in range(cfg.n)]
    jobs = [(cfg, s, str(out_dir / sid)) for sid, s in zip(ids, seeds)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            list(pool.map(_render_one, jobs))
    else:
        for job in jobs:
            _render_one(job)
    n_train, n_val, _ = cfg.split_counts()
    rows = [(sid, "train" if i < n_train else "val" if i < n_train + n_val else "test")
            for i, sid in enumerate(ids)]
    fileio.write_manifest(out_dir / "manifest.txt", rows)
    fileio.write_kv(out_dir / "dataset.txt", asdict(cfg))
    return rows


def load_sample(directory) -> tuple[RigAudio, GroundTruthMaps]:
    directory = Path(directory)
    data, sr = fileio.read_audio(directory / "audio.bsna")
    labels = fileio.read_tensor(directory / "labels.bsnt").astype(np.int64)
    depth = fileio.read_tensor(directory / "depth.bsnt").astype(np.float64)
    flow = fileio.read_tensor(directory / "flow.bsnt").astype(np.float64)
    return RigAudio(data.astype(np.float64), sr), GroundTruthMaps(labels, depth, flow)
