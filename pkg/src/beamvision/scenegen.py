"""Synthetic vision-wireless dataset generation and manifest management.

Scenes are top-down street views: gray background, a fixed RSU glyph, the
user as a filled disc at the linear world-to-pixel mapping of its position,
seeded distractor rectangles, and a dark bar across the RSU-user segment when
the link is blocked. Every label is produced by the exhaustive-search beam
oracle on the deterministic LoS channel, so stored labels can always be
recomputed from stored positions.

Manifest files are line-delimited JSON (UTF-8): a header line carrying the
format version, codebook parameters, scene config and optional split
assignment, then one record object per line with fields image_ref, position,
beam_label, blocked, trajectory_id.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .channel import LinkParams, oracle_beam, synthesize_los_channel
from .codebook import BeamCodebook, N_COPHASE
from .errors import (
    InvalidArgumentError,
    ManifestParseError,
    OutOfBoundsError,
    ValidationError,
)

MANIFEST_FORMAT = "beamvision-manifest-v1"

BACKGROUND_GRAY = 96
USER_COLOR = (255, 214, 10)
RSU_COLOR = (220, 50, 50)
BAR_COLOR = (15, 15, 15)


@dataclass
class SceneConfig:
    """Rendering parameters for one synthetic scene family.

    world_extent_m is the side length of the square world region mapped onto
    the image; the origin sits at the image center with +x right and +y up.
    rsu_pixel defaults to the image center.
    """

    image_size: int = 224
    world_extent_m: float = 100.0
    rsu_pixel: tuple[float, float] | None = None
    user_marker_radius: int = 5
    distractor_count: int = 6
    blockage_probability: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.image_size < 32:
            raise InvalidArgumentError(f"image_size must be >= 32, got {self.image_size}")
        if self.world_extent_m <= 0:
            raise InvalidArgumentError("world_extent_m must be positive")
        if not (0.0 <= self.blockage_probability <= 1.0):
            raise InvalidArgumentError(
                f"blockage_probability must be in [0, 1], got {self.blockage_probability}"
            )
        if self.rsu_pixel is None:
            self.rsu_pixel = (self.image_size / 2.0, self.image_size / 2.0)
        else:
            self.rsu_pixel = (float(self.rsu_pixel[0]), float(self.rsu_pixel[1]))


@dataclass
class SampleRecord:
    """One vision-wireless sample: image reference plus ground truth."""

    image_ref: str
    position: np.ndarray
    beam_label: int
    blocked: bool
    trajectory_id: int

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)


@dataclass
class DatasetManifest:
    """File-backed dataset: records plus the parameters that generated them."""

    records: list[SampleRecord]
    codebook_params: tuple[int, int, int, int]
    scene_config: SceneConfig | None = None
    split_assignment: list[str] | None = None

    def __post_init__(self) -> None:
        if not self.records:
            raise InvalidArgumentError("manifest must contain at least one record")
        self.codebook_params = tuple(int(v) for v in self.codebook_params)

    @property
    def codebook_size(self) -> int:
        n1, n2, o1, o2 = self.codebook_params
        return n1 * o1 * n2 * o2 * N_COPHASE

    def indices(self, split: str) -> np.ndarray:
        if self.split_assignment is None:
            raise InvalidArgumentError("manifest has no split assignment")
        return np.array([i for i, s in enumerate(self.split_assignment) if s == split], dtype=np.int64)


def world_to_pixel(x: float, y: float, config: SceneConfig) -> tuple[float, float]:
    """Linear world->pixel map: origin at image center, +x right, +y up."""
    scale = config.image_size / config.world_extent_m
    px = config.image_size / 2.0 + x * scale
    py = config.image_size / 2.0 - y * scale
    return px, py


def _fill_disc(img: np.ndarray, cx: float, cy: float, radius: float, color) -> None:
    # Anti-aliased edge: pixel coverage encodes the center at sub-pixel
    # precision, which position regression depends on.
    size = img.shape[0]
    ys, xs = np.ogrid[:size, :size]
    dist = np.sqrt((xs - cx) ** 2 + (ys - cy) ** 2)
    weight = np.clip(radius + 0.5 - dist, 0.0, 1.0)[..., None]
    color = np.asarray(color, dtype=np.float64)
    blended = (1.0 - weight) * img + weight * color
    np.copyto(img, np.rint(blended).astype(np.uint8))


def _fill_rect(img: np.ndarray, x0: int, y0: int, w: int, h: int, color) -> None:
    size = img.shape[0]
    img[max(0, y0) : min(size, y0 + h), max(0, x0) : min(size, x0 + w)] = color


def _draw_blockage_bar(img: np.ndarray, rsu_px: tuple[float, float], user_px: tuple[float, float]) -> None:
    """Dark bar perpendicular to the RSU-user segment at its midpoint."""
    size = img.shape[0]
    mx = (rsu_px[0] + user_px[0]) / 2.0
    my = (rsu_px[1] + user_px[1]) / 2.0
    dx, dy = user_px[0] - rsu_px[0], user_px[1] - rsu_px[1]
    norm = math.hypot(dx, dy)
    if norm < 1e-9:
        dx, dy, norm = 1.0, 0.0, 1.0
    dx, dy = dx / norm, dy / norm
    half_len = max(6.0, size * 14.0 / 224.0)
    half_thick = max(1.5, size * 2.0 / 224.0)
    ys, xs = np.ogrid[:size, :size]
    along = (xs - mx) * dx + (ys - my) * dy  # signed distance along the segment
    across = (xs - mx) * (-dy) + (ys - my) * dx  # perpendicular direction
    mask = (np.abs(along) <= half_thick) & (np.abs(across) <= half_len)
    img[mask] = BAR_COLOR


def render_scene(
    position: np.ndarray,
    config: SceneConfig,
    blocked: bool,
    rng: np.random.Generator,
) -> np.ndarray:
    """Render one scene as an (image_size, image_size, 3) uint8 array.

    Deterministic function of (position, config, blocked) and the state of the
    seeded generator, which only drives the distractor layout.
    """
    position = np.asarray(position, dtype=np.float64).reshape(3)
    half = config.world_extent_m / 2.0
    if abs(position[0]) > half or abs(position[1]) > half:
        raise OutOfBoundsError(
            f"position {position[:2].tolist()} outside world extent +-{half} m"
        )

    size = config.image_size
    img = np.full((size, size, 3), BACKGROUND_GRAY, dtype=np.uint8)

    # Distractor rectangles first so markers stay visible on top.
    lo, hi = max(2, size // 16), max(4, size // 6)
    for _ in range(config.distractor_count):
        x0 = int(rng.integers(0, size))
        y0 = int(rng.integers(0, size))
        w = int(rng.integers(lo, hi))
        h = int(rng.integers(lo, hi))
        gray = int(rng.integers(40, 200))
        _fill_rect(img, x0, y0, w, h, (gray, gray, gray))

    rx, ry = config.rsu_pixel
    glyph = max(2.0, size * 3.0 / 224.0)
    _fill_rect(img, int(round(rx - glyph)), int(round(ry - glyph)), int(2 * glyph) + 1, int(2 * glyph) + 1, RSU_COLOR)

    ux, uy = world_to_pixel(position[0], position[1], config)
    if blocked:
        _draw_blockage_bar(img, (rx, ry), (ux, uy))
    _fill_disc(img, ux, uy, config.user_marker_radius, USER_COLOR)
    return img


def _trajectory_positions(
    n_points: int, config: SceneConfig, rng: np.random.Generator
) -> np.ndarray:
    """Smooth random walk inside the world extent; z fixed at 0."""
    half = config.world_extent_m / 2.0
    margin = 0.04 * config.world_extent_m
    lo, hi = -half + margin, half - margin
    pos = rng.uniform(lo, hi, size=2)
    heading = rng.uniform(0.0, 2.0 * np.pi)
    step = config.world_extent_m * rng.uniform(0.008, 0.025)
    out = np.zeros((n_points, 3))
    for i in range(n_points):
        out[i, :2] = pos
        heading += rng.normal(0.0, 0.25)
        nxt = pos + step * np.array([math.cos(heading), math.sin(heading)])
        if not (lo <= nxt[0] <= hi):  # bounce off vertical walls
            heading = math.pi - heading
        if not (lo <= nxt[1] <= hi):
            heading = -heading
        nxt = pos + step * np.array([math.cos(heading), math.sin(heading)])
        pos = np.clip(nxt, lo, hi)
    return out


def generate_dataset(
    n_samples: int,
    config: SceneConfig,
    codebook: BeamCodebook,
    params: LinkParams,
    trajectories: int,
    out_dir: Path | str,
) -> DatasetManifest:
    """Generate n_samples labeled scenes along smooth random trajectories.

    Images are written to ``out_dir/images``; the returned manifest is not
    written to disk (see save_manifest). Per-record randomness derives from
    (config.seed, record_index) and trajectory shapes from
    (config.seed, trajectory_id), so records can be regenerated independently.
    """
    if n_samples < 1:
        raise InvalidArgumentError("n_samples must be >= 1")
    if trajectories < 1:
        raise InvalidArgumentError("trajectories must be >= 1")
    out_dir = Path(out_dir)
    img_dir = out_dir / "images"
    img_dir.mkdir(parents=True, exist_ok=True)

    base, extra = divmod(n_samples, trajectories)
    records: list[SampleRecord] = []
    idx = 0
    for traj in range(trajectories):
        count = base + (1 if traj < extra else 0)
        if count == 0:
            continue
        traj_rng = np.random.default_rng([config.seed, 1_000_000 + traj])
        positions = _trajectory_positions(count, config, traj_rng)
        for pos in positions:
            rec_rng = np.random.default_rng([config.seed, idx])
            blocked = bool(rec_rng.random() < config.blockage_probability)
            realization = synthesize_los_channel(pos, params, codebook.geometry, blocked)
            label = oracle_beam(realization, codebook).flat
            img = render_scene(pos, config, blocked, rec_rng)
            ref = f"images/{idx:06d}.png"
            Image.fromarray(img).save(out_dir / ref)
            records.append(
                SampleRecord(
                    image_ref=ref,
                    position=pos,
                    beam_label=label,
                    blocked=blocked,
                    trajectory_id=traj,
                )
            )
            idx += 1
    return DatasetManifest(
        records=records,
        codebook_params=codebook.params,
        scene_config=config,
        split_assignment=None,
    )


def split_dataset(
    manifest: DatasetManifest,
    train_fraction: float,
    seed: int,
    by_trajectory: bool = False,
) -> DatasetManifest:
    """Assign train/val splits; floor(train_fraction*N) records go to train.

    With by_trajectory=True, whole trajectories are shuffled and assigned to
    train until the train count reaches the floor target, so no trajectory_id
    spans both splits. The assignment is stored, never destructive.
    """
    if not (0.0 < train_fraction < 1.0):
        raise InvalidArgumentError(f"train_fraction must be in (0, 1), got {train_fraction}")
    n = len(manifest.records)
    n_train = int(math.floor(train_fraction * n))
    rng = np.random.default_rng(seed)
    assignment = ["val"] * n
    if by_trajectory:
        traj_ids = sorted({r.trajectory_id for r in manifest.records})
        order = rng.permutation(len(traj_ids))
        assigned = 0
        for j in order:
            if assigned >= n_train:
                break
            tid = traj_ids[j]
            for i, rec in enumerate(manifest.records):
                if rec.trajectory_id == tid:
                    assignment[i] = "train"
                    assigned += 1
    else:
        order = rng.permutation(n)
        for i in order[:n_train]:
            assignment[i] = "train"
    return DatasetManifest(
        records=list(manifest.records),
        codebook_params=manifest.codebook_params,
        scene_config=manifest.scene_config,
        split_assignment=assignment,
    )


def _record_to_json(rec: SampleRecord) -> str:
    return json.dumps(
        {
            "image_ref": rec.image_ref,
            "position": [float(v) for v in rec.position],
            "beam_label": int(rec.beam_label),
            "blocked": bool(rec.blocked),
            "trajectory_id": int(rec.trajectory_id),
        }
    )


def save_manifest(manifest: DatasetManifest, path: Path | str) -> None:
    """Write the line-delimited manifest file (header line, then records)."""
    n1, n2, o1, o2 = manifest.codebook_params
    header = {
        "format": MANIFEST_FORMAT,
        "codebook_params": {"n1": n1, "n2": n2, "o1": o1, "o2": o2},
        "scene_config": asdict(manifest.scene_config) if manifest.scene_config else None,
        "split": manifest.split_assignment,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for rec in manifest.records:
            fh.write(_record_to_json(rec) + "\n")


def load_manifest(path: Path | str) -> DatasetManifest:
    """Read a native manifest; rejects malformed lines and out-of-range labels."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ManifestParseError(f"{path}: empty manifest file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ManifestParseError(f"{path}: header is not valid JSON: {exc}") from exc
    if header.get("format") != MANIFEST_FORMAT:
        raise ManifestParseError(
            f"{path}: unsupported manifest format {header.get('format')!r}"
        )
    cb = header["codebook_params"]
    params = (cb["n1"], cb["n2"], cb["o1"], cb["o2"])
    scene = None
    if header.get("scene_config") is not None:
        sc = dict(header["scene_config"])
        if sc.get("rsu_pixel") is not None:
            sc["rsu_pixel"] = tuple(sc["rsu_pixel"])
        scene = SceneConfig(**sc)

    records: list[SampleRecord] = []
    bad: list[int] = []
    for lineno, line in enumerate(lines[1:], start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            records.append(
                SampleRecord(
                    image_ref=obj["image_ref"],
                    position=np.asarray(obj["position"], dtype=np.float64),
                    beam_label=int(obj["beam_label"]),
                    blocked=bool(obj["blocked"]),
                    trajectory_id=int(obj["trajectory_id"]),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            bad.append(lineno)
    if bad:
        raise ManifestParseError(f"{path}: malformed record lines {bad}")
    if not records:
        raise ManifestParseError(f"{path}: manifest contains no records")

    manifest = DatasetManifest(
        records=records,
        codebook_params=params,
        scene_config=scene,
        split_assignment=header.get("split"),
    )
    _validate_labels(manifest, path)
    return manifest


def _validate_labels(manifest: DatasetManifest, source) -> None:
    size = manifest.codebook_size
    bad = [i for i, r in enumerate(manifest.records) if not (0 <= r.beam_label < size)]
    if bad:
        raise ValidationError(
            f"{source}: beam labels out of range [0, {size}) at records {bad}"
        )


def load_external_manifest(
    path: Path | str,
    schema: str,
    mapping_path: Path | str | None = None,
) -> DatasetManifest:
    """Load a dataset manifest under a named schema.

    native: the line-delimited format written by save_manifest.
    viwi_drone: a CSV table adapted through a JSON column-mapping file that
    declares which columns hold the image path, the 3-D position and the beam
    label, an optional integer offset for re-basing beam indices, and the
    codebook parameters the labels refer to. Missing blockage flags default
    to false.
    """
    if schema == "native":
        return load_manifest(path)
    if schema != "viwi_drone":
        raise InvalidArgumentError(f"unknown manifest schema {schema!r}")
    if mapping_path is None:
        raise InvalidArgumentError("viwi_drone schema requires a column-mapping file")

    with open(mapping_path, "r", encoding="utf-8") as fh:
        mapping = json.load(fh)
    cols = mapping["columns"]
    offset = int(mapping.get("beam_label_offset", 0))
    cbp = mapping["codebook_params"]
    params = (cbp["n1"], cbp["n2"], cbp["o1"], cbp["o2"])

    records: list[SampleRecord] = []
    bad: list[int] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for rowno, row in enumerate(reader, start=1):
            try:
                blocked = False
                if "blocked" in cols and cols["blocked"] in row:
                    blocked = str(row[cols["blocked"]]).strip().lower() in ("1", "true", "yes")
                traj = 0
                if "trajectory_id" in cols and cols["trajectory_id"] in row:
                    traj = int(row[cols["trajectory_id"]])
                records.append(
                    SampleRecord(
                        image_ref=row[cols["image_ref"]],
                        position=np.array(
                            [float(row[cols["x"]]), float(row[cols["y"]]), float(row[cols["z"]])]
                        ),
                        beam_label=int(row[cols["beam_label"]]) - offset,
                        blocked=blocked,
                        trajectory_id=traj,
                    )
                )
            except (KeyError, TypeError, ValueError):
                bad.append(rowno)
    if bad:
        raise ManifestParseError(f"{path}: rows violating the viwi_drone schema: {bad}")
    if not records:
        raise ManifestParseError(f"{path}: no records parsed")

    manifest = DatasetManifest(
        records=records, codebook_params=params, scene_config=None, split_assignment=None
    )
    _validate_labels(manifest, path)
    return manifest


def load_split_arrays(manifest: DatasetManifest, root_dir: Path | str, split: str | None = None) -> dict:
    """Materialize images and targets as numpy arrays for one split (or all).

    Returns dict with images (N,H,W,3 uint8), labels (N,), positions (N,3),
    blocked (N,) bool, and the manifest indices the rows came from.
    """
    root_dir = Path(root_dir)
    if split is None:
        idx = np.arange(len(manifest.records), dtype=np.int64)
    else:
        idx = manifest.indices(split)
    images = []
    for i in idx:
        rec = manifest.records[int(i)]
        with Image.open(root_dir / rec.image_ref) as im:
            images.append(np.asarray(im.convert("RGB"), dtype=np.uint8))
    return {
        "images": np.stack(images) if images else np.zeros((0, 0, 0, 3), np.uint8),
        "labels": np.array([manifest.records[int(i)].beam_label for i in idx], dtype=np.int64),
        "positions": np.stack([manifest.records[int(i)].position for i in idx]) if len(idx) else np.zeros((0, 3)),
        "blocked": np.array([manifest.records[int(i)].blocked for i in idx], dtype=bool),
        "indices": idx,
    }
