"""Training-sample generation: synthetic panoramas, mixed-reality views with
SH targets, panorama-disjoint splits and the JSONL manifest."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .equirect import EquirectGrid
from .errors import InvalidArgument, ParseError
from .hdrio import load_radiance_map, save_png
from .panorama import LUMA, CameraSpec, LdrImage, RadianceMap, mixed_reality_view
from .sh import SHCoeffs, convolve_irradiance, eval_sh, project_panorama

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.jsonl"
SPLITS = ("train", "val", "test")


# --------------------------------------------------------------------------
# Synthetic panoramas


@dataclass
class AreaLight:
    direction: tuple[float, float, float]
    radius: float  # degrees
    radiance: tuple[float, float, float]


@dataclass
class SynthLightSpec:
    """Disc area lights over an ambient floor.

    ``bounce`` is the albedo of the surrounding walls: each wall texel also
    reflects the diffuse light it receives from the discs, which gives
    cropped views a cue about lights outside the frame.
    """

    lights: list[AreaLight]
    ambient: tuple[float, float, float] = (0.0, 0.0, 0.0)
    bounce: float = 0.0
    texture: float = 0.05

    def validate(self) -> None:
        if not 1 <= len(self.lights) <= 4:
            raise InvalidArgument(f"need 1..4 lights, got {len(self.lights)}")
        for i, light in enumerate(self.lights):
            if not 2.0 < light.radius < 60.0:
                raise InvalidArgument(f"light {i}: angular radius {light.radius} outside (2, 60) degrees")
            if min(light.radiance) < 0:
                raise InvalidArgument(f"light {i}: negative radiance")
            if np.linalg.norm(light.direction) == 0:
                raise InvalidArgument(f"light {i}: zero direction")
        if min(self.ambient) < 0:
            raise InvalidArgument("negative ambient radiance")
        if not 0.0 <= self.bounce < 1.0 or not 0.0 <= self.texture < 1.0:
            raise InvalidArgument("bounce and texture must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> SynthLightSpec:
        d = dict(d)
        d["lights"] = [AreaLight(tuple(x["direction"]), x["radius"], tuple(x["radiance"])) for x in d["lights"]]
        d["ambient"] = tuple(d.get("ambient", (0.0, 0.0, 0.0)))
        return cls(**d)


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _disc_mask(dirs: np.ndarray, light: AreaLight) -> np.ndarray:
    axis = np.asarray(light.direction, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    ang = np.degrees(np.arccos(np.clip(dirs @ axis, -1.0, 1.0)))
    edge = 0.15 * light.radius
    return _smoothstep((light.radius + edge - ang) / (2.0 * edge))


def _texture(dirs: np.ndarray, rng: np.random.Generator, n_waves: int = 6) -> np.ndarray:
    out = np.zeros(dirs.shape[:-1])
    for _ in range(n_waves):
        w = rng.normal(size=3)
        w /= np.linalg.norm(w)
        out += np.sin(rng.uniform(2.0, 8.0) * (dirs @ w) + rng.uniform(0, 2 * np.pi))
    return out / math.sqrt(n_waves / 2.0)


def synth_panorama(spec: SynthLightSpec, width: int = 512, height: int = 256, seed: int = 0) -> RadianceMap:
    """Ambient + smooth-edged disc lights + wall bounce, with a faint
    multiplicative texture.  Deterministic for a given spec and seed."""
    spec.validate()
    if width != 2 * height or height < 4:
        raise InvalidArgument(f"synthetic panoramas must be 2:1, got {width}x{height}")
    dirs = EquirectGrid(width, height).directions()
    lights = np.zeros(dirs.shape[:-1] + (3,))
    for light in spec.lights:
        lights += _disc_mask(dirs, light)[..., None] * np.asarray(light.radiance, dtype=np.float64)
    data = lights + np.asarray(spec.ambient, dtype=np.float64)
    if spec.bounce > 0:
        # walls at direction d face the center; their normal is -d
        irr = convolve_irradiance(project_panorama(lights))
        data += spec.bounce / np.pi * np.maximum(eval_sh(irr, -dirs), 0.0)
    if spec.texture > 0:
        rng = np.random.default_rng(seed)
        data *= 1.0 + spec.texture * np.clip(_texture(dirs, rng), -3.0, 3.0)[..., None] / 3.0
    return RadianceMap(np.maximum(data, 0.0).astype(np.float32))


def _tint(rng: np.random.Generator, spread: float) -> np.ndarray:
    c = np.exp(rng.normal(0.0, spread, 3))
    return c / float(c @ LUMA)


def random_light_spec(rng: np.random.Generator, power: tuple[float, float] = (8.0, 12.0)) -> SynthLightSpec:
    """Indoor-like random spec: 1-4 lights mostly above the horizon, tinted
    light colors, total light power (luminance x solid angle) in ``power``."""
    n = int(rng.integers(1, 5))
    elev = np.radians(rng.uniform(-10.0, 75.0, n))
    azim = rng.uniform(-np.pi, np.pi, n)
    radius = rng.uniform(5.0, 30.0, n)
    share = rng.dirichlet(np.ones(n))
    total = rng.uniform(*power)
    lights = []
    for i in range(n):
        d = (math.cos(elev[i]) * math.cos(azim[i]), math.sin(elev[i]), math.cos(elev[i]) * math.sin(azim[i]))
        omega = 2.0 * np.pi * (1.0 - math.cos(math.radians(radius[i])))
        rad = _tint(rng, 0.35) * total * share[i] / omega
        lights.append(AreaLight(tuple(float(x) for x in d), float(radius[i]), tuple(float(x) for x in rad)))
    ambient = _tint(rng, 0.1) * rng.uniform(0.1, 0.3)
    return SynthLightSpec(lights, tuple(float(x) for x in ambient), bounce=float(rng.uniform(0.4, 0.7)))


def left_right_spec(red_left: bool, rng: np.random.Generator | None = None) -> SynthLightSpec:
    """Scene with a red light left of the forward (+x) view and a blue light
    to its right (or swapped).  Camera right is +z."""
    rng = rng or np.random.default_rng(0)
    side = -1.0 if red_left else 1.0
    elev = math.radians(rng.uniform(5.0, 30.0))
    az = math.radians(rng.uniform(25.0, 40.0))
    def light(sign, color):
        d = (math.cos(elev) * math.cos(az), math.sin(elev), sign * math.cos(elev) * math.sin(az))
        omega = 2.0 * np.pi * (1.0 - math.cos(math.radians(15.0)))
        return AreaLight(d, 15.0, tuple(float(x) for x in np.asarray(color) * 5.0 / omega))
    red, blue = (1.0, 0.15, 0.1), (0.1, 0.2, 1.0)
    return SynthLightSpec([light(side, red), light(-side, blue)], (0.1, 0.1, 0.1), bounce=0.6)


# --------------------------------------------------------------------------
# Samples


@dataclass
class ViewConfig:
    camera: CameraSpec = field(default_factory=CameraSpec)
    t: float = 0.3
    gamma: float = 2.2
    percentile: float = 90.0
    yaw_range: tuple[float, float] = (-180.0, 180.0)
    pitch_range: tuple[float, float] = (-15.0, 15.0)
    sh_order: int = 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ViewConfig:
        d = dict(d)
        d["camera"] = CameraSpec(**d.get("camera", {}))
        for key in ("yaw_range", "pitch_range"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class Sample:
    panorama_id: str
    view_index: int
    sh_raw: np.ndarray  # (3, k) projection of the rotated, warped HDR map
    yaw: float
    pitch: float
    beta: float
    t: float
    exposure_scale: float = 1.0
    exposure: float = 1.0  # tone-mapping exposure chosen for the view
    norm_scale: float = 1.0
    mrv_path: str = ""
    image: LdrImage | None = field(default=None, repr=False, compare=False)

    @property
    def order(self) -> int:
        return int(math.isqrt(self.sh_raw.shape[1])) - 1

    @property
    def sh_target(self) -> SHCoeffs:
        """Normalized radiance coefficients."""
        return SHCoeffs(self.order, self.sh_raw / self.norm_scale, meta={"normalized": True})

    def to_record(self) -> dict:
        return {
            "panorama_id": self.panorama_id, "view_index": self.view_index, "mrv_path": self.mrv_path,
            "sh_target": (self.sh_raw / self.norm_scale).tolist(),
            "yaw": self.yaw, "pitch": self.pitch, "beta": self.beta, "t": self.t,
            "exposure_scale": self.exposure_scale, "exposure": self.exposure, "norm_scale": self.norm_scale,
        }

    @classmethod
    def from_record(cls, r: dict) -> Sample:
        scale = float(r["norm_scale"])
        return cls(r["panorama_id"], int(r["view_index"]), np.asarray(r["sh_target"], dtype=np.float64) * scale,
                   float(r["yaw"]), float(r["pitch"]), float(r["beta"]), float(r["t"]),
                   float(r["exposure_scale"]), float(r["exposure"]), scale, r["mrv_path"])


def panorama_seed(master: int, panorama_id: str) -> int:
    """Stream seed for one panorama, independent of processing order."""
    digest = hashlib.sha256(f"{master}:{panorama_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def generate_views(envmap: RadianceMap, panorama_id: str, n_views: int = 8, seed: int = 0,
                   config: ViewConfig | None = None) -> list[Sample]:
    """Draw ``n_views`` (yaw, pitch) pairs and build one sample per view.

    The target is the SH projection of the rotated and warped HDR map, the
    same map the view is cut from.  Samples carry the LDR view in ``image``.
    """
    if n_views < 1:
        raise InvalidArgument("n_views must be >= 1")
    config = config or ViewConfig()
    rng = np.random.default_rng(seed)
    yaws = rng.uniform(*config.yaw_range, n_views)
    pitches = rng.uniform(*config.pitch_range, n_views)
    out = []
    for i in range(n_views):
        mrv = mixed_reality_view(envmap, float(yaws[i]), float(pitches[i]), config.t, config.camera,
                                 config.gamma, config.percentile)
        coeffs = project_panorama(mrv.warped, config.sh_order)
        out.append(Sample(panorama_id, i, coeffs.values, mrv.yaw, mrv.pitch, mrv.beta, mrv.t,
                          envmap.exposure_scale, mrv.exposure, image=mrv.ldr))
    return out


# --------------------------------------------------------------------------
# Manifest and splits


@dataclass
class Manifest:
    samples: list[Sample]
    splits: dict[str, list[str]] = field(default_factory=lambda: {s: [] for s in SPLITS})
    norm_scale: float = 1.0
    seed: int = 0
    views_per_panorama: int = 8
    view_config: ViewConfig = field(default_factory=ViewConfig)
    root: Path | None = None

    @property
    def panorama_ids(self) -> list[str]:
        return sorted({s.panorama_id for s in self.samples})

    def split_of(self, panorama_id: str) -> str | None:
        for name in SPLITS:
            if panorama_id in self.splits.get(name, ()):
                return name
        return None

    def subset(self, split: str) -> list[Sample]:
        ids = set(self.splits.get(split, ()))
        return [s for s in self.samples if s.panorama_id in ids]

    def image_path(self, sample: Sample) -> Path:
        return (self.root or Path(".")) / sample.mrv_path

    def header(self) -> dict:
        return {"record": "header", "version": MANIFEST_VERSION, "norm_scale": self.norm_scale,
                "seed": self.seed, "views_per_panorama": self.views_per_panorama,
                "camera": asdict(self.view_config.camera), "view_config": self.view_config.to_dict(),
                "splits": {k: sorted(v) for k, v in self.splits.items()}}

    def dumps(self) -> str:
        lines = [json.dumps(self.header(), sort_keys=True)]
        for s in sorted(self.samples, key=lambda s: (s.panorama_id, s.view_index)):
            lines.append(json.dumps(s.to_record(), sort_keys=True))
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str, root: Path | None = None) -> Manifest:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ParseError("empty manifest", 0)
        try:
            head = json.loads(lines[0])
            if head.get("record") != "header":
                raise ParseError("manifest does not start with a header record", 0)
            if head.get("version") != MANIFEST_VERSION:
                raise ParseError(f"unsupported manifest version {head.get('version')}", 0)
            samples = [Sample.from_record(json.loads(ln)) for ln in lines[1:]]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ParseError(f"malformed manifest: {exc}") from exc
        return cls(samples, {k: list(v) for k, v in head["splits"].items()}, float(head["norm_scale"]),
                   int(head["seed"]), int(head["views_per_panorama"]),
                   ViewConfig.from_dict(head["view_config"]), root)

    @classmethod
    def load(cls, path: str | Path) -> Manifest:
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        return cls.loads(path.read_text(), path.parent)


def split_counts(n: int, ratios=(0.70, 0.15, 0.15)) -> tuple[int, int, int]:
    """Round-half-up panorama counts; val and test get at least one each."""
    n_train = min(n - 2, max(1, math.floor(ratios[0] * n + 0.5)))
    n_val = min(n - n_train - 1, max(1, math.floor(ratios[1] * n + 0.5)))
    return n_train, n_val, n - n_train - n_val


def split_dataset(manifest: Manifest, ratios=(0.70, 0.15, 0.15), seed: int = 0) -> Manifest:
    """Assign whole panoramas to train/val/test after a seeded shuffle."""
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise InvalidArgument(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    ids = manifest.panorama_ids
    if len(ids) < 3:
        raise InvalidArgument(f"need at least 3 panoramas to split, got {len(ids)}")
    order = np.random.default_rng(seed).permutation(len(ids))
    shuffled = [ids[i] for i in order]
    n_train, n_val, _ = split_counts(len(ids), ratios)
    splits = {"train": sorted(shuffled[:n_train]),
              "val": sorted(shuffled[n_train:n_train + n_val]),
              "test": sorted(shuffled[n_train + n_val:])}
    return replace(manifest, splits=splits)


def compute_norm_scale(targets, headroom: float = 1.05) -> float:
    """``headroom * max |c|`` over the given raw targets; 1 if they are all zero."""
    arrs = [t.values if isinstance(t, SHCoeffs) else np.asarray(t) for t in targets]
    if not arrs:
        raise InvalidArgument("compute_norm_scale needs at least one target")
    m = max(float(np.abs(a).max()) for a in arrs)
    return headroom * m if m > 0 else 1.0


def apply_norm_scale(manifest: Manifest) -> Manifest:
    scale = compute_norm_scale([s.sh_raw for s in manifest.subset("train")])
    for s in manifest.samples:
        s.norm_scale = scale
    manifest.norm_scale = scale
    return manifest


# --------------------------------------------------------------------------
# Dataset builder


def synthetic_panorama_ids(n: int) -> list[str]:
    return [f"synth{i:05d}" for i in range(n)]


def synthetic_panorama(panorama_id: str, master_seed: int, width: int = 512) -> RadianceMap:
    rng = np.random.default_rng(panorama_seed(master_seed, panorama_id))
    spec = random_light_spec(rng)
    return synth_panorama(spec, width, width // 2, int(rng.integers(2 ** 31)))


def build_dataset(out_dir: str | Path, panoramas, n_views: int = 8, seed: int = 0,
                  config: ViewConfig | None = None, ratios=(0.70, 0.15, 0.15)) -> Manifest:
    """Generate views for every ``(panorama_id, loader)`` pair, split, normalize
    and write PNGs plus the manifest under ``out_dir``.

    ``loader`` is a zero-argument callable returning a RadianceMap, so maps
    are produced one at a time.
    """
    config = config or ViewConfig()
    out_dir = Path(out_dir)
    (out_dir / "mrv").mkdir(parents=True, exist_ok=True)
    samples = []
    for pid, loader in sorted(panoramas, key=lambda p: p[0]):
        envmap = loader()
        for s in generate_views(envmap, pid, n_views, panorama_seed(seed, pid), config):
            s.mrv_path = f"mrv/{pid}_{s.view_index:02d}.png"
            save_png(out_dir / s.mrv_path, s.image)
            s.image = None
            samples.append(s)
        log.info("generated %d views for %s", n_views, pid)
    manifest = Manifest(samples, seed=seed, views_per_panorama=n_views, view_config=config, root=out_dir)
    manifest = apply_norm_scale(split_dataset(manifest, ratios, seed))
    manifest.save(out_dir / MANIFEST_NAME)
    return manifest


def build_synthetic_dataset(out_dir: str | Path, n_panoramas: int, n_views: int = 8, seed: int = 0,
                            config: ViewConfig | None = None, width: int = 512) -> Manifest:
    pans = [(pid, lambda pid=pid: synthetic_panorama(pid, seed, width)) for pid in synthetic_panorama_ids(n_panoramas)]
    return build_dataset(out_dir, pans, n_views, seed, config)


def build_dataset_from_dir(out_dir: str | Path, input_dir: str | Path, n_views: int = 8, seed: int = 0,
                           config: ViewConfig | None = None, exposure_scale: float = 1.0) -> Manifest:
    files = sorted(p for p in Path(input_dir).iterdir() if p.suffix.lower() in (".hdr", ".pfm"))
    if not files:
        raise InvalidArgument(f"no .hdr or .pfm panoramas in {input_dir}")
    pans = [(p.stem, lambda p=p: load_radiance_map(p, exposure_scale)) for p in files]
    return build_dataset(out_dir, pans, n_views, seed, config)
