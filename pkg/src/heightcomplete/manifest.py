"""Scene manifests and experiment configuration.

Manifests are JSON files pointing at the rasters of one scene; experiment
configs are YAML with every paper-unspecified default (neighbor counts,
bandwidths, learning rates, strides) spelled out so run records can echo
them.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .raster import HeightRaster, load_raster, _require_same_meta
from .degrade import LulcClass, LulcRaster
from .tta import TtaConfig
from .baselines import NeighborQueryConfig

DEFAULT_LEVELS = (0.25, 0.5, 0.75)
DEFAULT_METHODS = ("global", "prior2dsm")


class ManifestError(ValueError):
    """Raised for missing files or inconsistent manifest entries."""


@dataclass(frozen=True)
class SceneManifest:
    scene_id: str
    rgb: Path
    gt_dsm: Path
    lulc: Path | None = None
    prior_dsm: Path | None = None
    change_mask: Path | None = None
    pixel_size_m: float = 1.0
    notes: str = ""
    expected_height_mean: float | None = None
    expected_height_std: float | None = None
    lulc_classes: dict = field(default_factory=dict)


def load_manifest(path) -> SceneManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    for key in ("scene_id", "rgb", "gt_dsm"):
        if key not in raw:
            raise ManifestError(f"manifest {path} missing required field {key!r}")
    base = path.parent

    def _p(key):
        return (base / raw[key]).resolve() if raw.get(key) else None

    m = SceneManifest(
        scene_id=str(raw["scene_id"]),
        rgb=_p("rgb"),
        gt_dsm=_p("gt_dsm"),
        lulc=_p("lulc"),
        prior_dsm=_p("prior_dsm"),
        change_mask=_p("change_mask"),
        pixel_size_m=float(raw.get("pixel_size_m", 1.0)),
        notes=str(raw.get("notes", "")),
        expected_height_mean=raw.get("expected_height_mean"),
        expected_height_std=raw.get("expected_height_std"),
        lulc_classes={int(k): v for k, v in raw.get("lulc_classes", {}).items()},
    )
    for name in ("rgb", "gt_dsm", "lulc", "prior_dsm", "change_mask"):
        p = getattr(m, name)
        if p is not None and not p.exists():
            raise ManifestError(f"manifest {path}: {name} file {p} does not exist")
    return m


def save_manifest(m: SceneManifest, path) -> None:
    path = Path(path)
    raw = {}
    for k, v in asdict(m).items():
        if v is None or v == {} or v == "":
            continue
        raw[k] = str(Path(v).resolve()) if isinstance(v, Path) else v
    path.write_text(json.dumps(raw, indent=2, sort_keys=True) + "\n")


def load_scene(m: SceneManifest) -> dict:
    """Load all referenced rasters and check that they share one grid."""
    scene = {
        "rgb": load_raster(m.rgb, "rgb"),
        "gt": load_raster(m.gt_dsm, "height"),
    }
    if m.lulc is not None:
        labels = load_raster(m.lulc, "height")  # integer codes stored as a single band
        table = {
            int(code): LulcClass(str(spec.get("name", code)), bool(spec.get("is_object", False)))
            for code, spec in m.lulc_classes.items()
        }
        arr = labels.values.copy()
        arr[~labels.valid] = 0
        scene["lulc"] = LulcRaster(labels.meta, arr.astype(int), table)
    if m.prior_dsm is not None:
        scene["prior"] = load_raster(m.prior_dsm, "height")
    if m.change_mask is not None:
        scene["change"] = load_raster(m.change_mask, "mask")
    _require_same_meta(*[v for v in scene.values()])
    gt: HeightRaster = scene["gt"]
    if abs(gt.meta.pixel_size - m.pixel_size_m) > 1e-6 * m.pixel_size_m:
        raise ManifestError(
            f"scene {m.scene_id}: file pixel size {gt.meta.pixel_size} != manifest {m.pixel_size_m}"
        )
    _check_stats(m, gt)
    return scene


def _check_stats(m: SceneManifest, gt: HeightRaster):
    vals = gt.valid_values
    for name, expected, actual in (
        ("mean", m.expected_height_mean, float(vals.mean())),
        ("std", m.expected_height_std, float(vals.std())),
    ):
        if expected is None:
            continue
        if abs(actual - expected) > 0.2 * max(abs(expected), 1e-9):
            warnings.warn(
                f"scene {m.scene_id}: ground-truth height {name} {actual:.2f} deviates "
                f">20% from declared {expected:.2f}",
                stacklevel=3,
            )


@dataclass(frozen=True)
class ExperimentConfig:
    levels: tuple[float, ...] = DEFAULT_LEVELS
    methods: tuple[str, ...] = DEFAULT_METHODS
    seed: int = 0
    buffer_m: float = 10.0
    tile_px: int = 672
    depth_backend: dict = field(default_factory=lambda: {"name": "oracle", "a": 1.0, "b": 0.0})
    backbone: dict = field(default_factory=lambda: {"name": "toy", "seed": 0, "patch_size": 16, "embed_dim": 32, "layers": 2})
    tta: dict = field(default_factory=dict)
    neighbors: dict = field(default_factory=dict)
    nodata_sentinel: float = -9999.0
    output_dir: Path = Path("runs")

    def __post_init__(self):
        levels = tuple(float(x) for x in self.levels)
        if any(not (0.0 < x < 1.0) for x in levels):
            raise ManifestError(f"levels must lie in (0, 1), got {levels}")
        if not self.methods:
            raise ManifestError("methods list must not be empty")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "output_dir", Path(self.output_dir))

    def tta_config(self) -> TtaConfig:
        return TtaConfig(**{"seed": self.seed, **self.tta})

    def neighbor_config(self) -> NeighborQueryConfig:
        known = {k: v for k, v in self.neighbors.items() if k in ("k", "bandwidth_m", "metric")}
        return NeighborQueryConfig(**known)

    def hash(self) -> str:
        payload = asdict(self)
        payload["output_dir"] = str(payload["output_dir"])
        blob = json.dumps(payload, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    raw = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ManifestError(f"cannot read config {path}: {exc}") from exc
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ManifestError(f"unknown config keys {sorted(unknown)}; expected a subset of {sorted(known)}")
    return ExperimentConfig(**raw)
