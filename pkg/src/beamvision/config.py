"""Experiment configuration: one YAML file drives generation, training and
evaluation. All defaults live here so every knob the experiments depend on is
explicit and versioned with the run.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .channel import LinkParams
from .codebook import ArrayGeometry, BeamCodebook, build_type1_codebook
from .errors import ConfigError
from .finetune import (
    LossWeights,
    Stage,
    StagePlan,
    make_default_stage_plan,
    make_full_plan,
)
from .model import BackboneSpec, HeadSpec
from .scenegen import SceneConfig, world_to_pixel


@dataclass
class CodebookSection:
    n1: int = 8
    n2: int = 2
    o1: int = 4
    o2: int = 4
    spacing_h: float = 0.5
    spacing_v: float = 0.5


@dataclass
class LinkSection:
    snr_db: float = 100.0  # transmit power over noise; path loss enters via the channel
    wavelength_m: float = 0.01
    blockage_attenuation_db: float = 20.0
    rsu_position: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    rsu_yaw_rad: float = 0.0
    pol_phase_rad: float = 0.0


@dataclass
class SceneSection:
    image_size: int = 224
    world_extent_m: float = 100.0
    rsu_pixel: list | None = None  # derived from rsu_position when null
    user_marker_radius: int = 5
    distractor_count: int = 6
    blockage_probability: float = 0.0
    seed: int = 0


@dataclass
class ModelSection:
    kind: str = "tiny_transformer"
    patch_size: int = 16
    embed_dim: int = 128
    depth: int = 4
    heads: int = 4
    pool: str = "mean"
    pretrained_ref: str | None = None
    blockage_head: bool = True
    beam_classes: int | None = None  # optional; must equal the codebook size


@dataclass
class PlanSection:
    stage_epochs: list = field(default_factory=lambda: [6, 6, 6])
    stage_learning_rates: list = field(default_factory=lambda: [1e-3, 5e-4, 2.5e-4])
    full_epochs: int = 18
    full_learning_rate: float = 1e-3
    stages: list | None = None  # explicit stage dicts override default3


@dataclass
class TrainSection:
    batch_size: int = 64
    seed: int = 0
    w_beam: float = 1.0
    w_pos: float = 0.1
    w_blk: float = 0.1
    weight_decay: float = 0.0


@dataclass
class DatasetSection:
    n_samples: int = 1200
    trajectories: int = 17
    train_fraction: float = 0.7
    split_by_trajectory: bool = False
    split_seed: int = 0


@dataclass
class PathsSection:
    data_dir: str = "data"
    run_dir: str = "runs"


_SECTIONS = {
    "codebook": CodebookSection,
    "link": LinkSection,
    "scene": SceneSection,
    "model": ModelSection,
    "plan": PlanSection,
    "train": TrainSection,
    "dataset": DatasetSection,
    "paths": PathsSection,
}


@dataclass
class ExperimentConfig:
    codebook: CodebookSection = field(default_factory=CodebookSection)
    link: LinkSection = field(default_factory=LinkSection)
    scene: SceneSection = field(default_factory=SceneSection)
    model: ModelSection = field(default_factory=ModelSection)
    plan: PlanSection = field(default_factory=PlanSection)
    train: TrainSection = field(default_factory=TrainSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    paths: PathsSection = field(default_factory=PathsSection)

    # ---- file I/O ----

    @classmethod
    def from_yaml(cls, path: Path | str) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: config root must be a mapping")
        kwargs = {}
        for name, section_cls in _SECTIONS.items():
            data = raw.pop(name, {}) or {}
            known = {f.name for f in fields(section_cls)}
            unknown = set(data) - known
            if unknown:
                raise ConfigError(f"{path}: unknown keys in section {name!r}: {sorted(unknown)}")
            kwargs[name] = section_cls(**data)
        if raw:
            raise ConfigError(f"{path}: unknown config sections: {sorted(raw)}")
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_yaml(self, path: Path | str) -> None:
        payload = {name: asdict(getattr(self, name)) for name in _SECTIONS}
        with open(path, "w", encoding="utf-8") as fh:
            yaml.safe_dump(payload, fh, sort_keys=False)

    # ---- validation ----

    def validate(self) -> None:
        """Cross-field consistency, checked before any work starts."""
        cb, sc, md, tr, ds = self.codebook, self.scene, self.model, self.train, self.dataset
        problems = []
        if min(cb.n1, cb.n2, cb.o1, cb.o2) < 1:
            problems.append("codebook dimensions and oversampling must be >= 1")
        if sc.image_size % md.patch_size != 0:
            problems.append(
                f"scene.image_size {sc.image_size} not divisible by model.patch_size {md.patch_size}"
            )
        size = cb.n1 * cb.o1 * cb.n2 * cb.o2 * 4
        if md.beam_classes is not None and md.beam_classes != size:
            problems.append(
                f"model.beam_classes {md.beam_classes} does not equal codebook size {size}"
            )
        if not (0.0 <= sc.blockage_probability <= 1.0):
            problems.append("scene.blockage_probability must be in [0, 1]")
        if not (0.0 < ds.train_fraction < 1.0):
            problems.append("dataset.train_fraction must be in (0, 1)")
        if tr.batch_size < 1:
            problems.append("train.batch_size must be >= 1")
        if min(tr.w_beam, tr.w_pos, tr.w_blk) < 0 or tr.w_beam + tr.w_pos + tr.w_blk <= 0:
            problems.append("train loss weights must be nonnegative with a positive sum")
        if self.plan.stages is None:
            if len(self.plan.stage_epochs) != 3 or len(self.plan.stage_learning_rates) != 3:
                problems.append("plan.stage_epochs and plan.stage_learning_rates need 3 entries")
        if problems:
            raise ConfigError("; ".join(problems))

    # ---- builders ----

    def geometry(self) -> ArrayGeometry:
        cb = self.codebook
        return ArrayGeometry(
            n1=cb.n1, n2=cb.n2, dual_polarized=True,
            spacing_h=cb.spacing_h, spacing_v=cb.spacing_v,
        )

    def build_codebook(self) -> BeamCodebook:
        return build_type1_codebook(self.geometry(), self.codebook.o1, self.codebook.o2)

    def link_params(self) -> LinkParams:
        lk = self.link
        return LinkParams(
            rsu_position=lk.rsu_position,
            rsu_yaw_rad=lk.rsu_yaw_rad,
            snr_linear=10.0 ** (lk.snr_db / 10.0),
            carrier_wavelength_m=lk.wavelength_m,
            blockage_attenuation_db=lk.blockage_attenuation_db,
            pol_phase_rad=lk.pol_phase_rad,
        )

    def scene_config(self) -> SceneConfig:
        sc = self.scene
        rsu_pixel = tuple(sc.rsu_pixel) if sc.rsu_pixel is not None else None
        config = SceneConfig(
            image_size=sc.image_size,
            world_extent_m=sc.world_extent_m,
            rsu_pixel=(0.0, 0.0),  # placeholder, fixed below
            user_marker_radius=sc.user_marker_radius,
            distractor_count=sc.distractor_count,
            blockage_probability=sc.blockage_probability,
            seed=sc.seed,
        )
        if rsu_pixel is None:
            pos = self.link.rsu_position
            rsu_pixel = world_to_pixel(pos[0], pos[1], config)
        config.rsu_pixel = (float(rsu_pixel[0]), float(rsu_pixel[1]))
        return config

    def backbone_spec(self, for_plan: str = "default3") -> BackboneSpec:
        md = self.model
        kind = md.kind
        ref = md.pretrained_ref
        if for_plan == "from_scratch":
            kind, ref = "tiny_transformer", None
        elif ref is not None:
            kind = "external_pretrained"
        return BackboneSpec(
            kind=kind,
            patch_size=md.patch_size,
            embed_dim=md.embed_dim,
            depth=md.depth,
            heads=md.heads,
            image_size=self.scene.image_size,
            pool=md.pool,
            pretrained_ref=ref,
        )

    def head_spec(self) -> HeadSpec:
        cb = self.codebook
        size = cb.n1 * cb.o1 * cb.n2 * cb.o2 * 4
        return HeadSpec(beam_classes=size, position_dims=3, blockage=self.model.blockage_head)

    def loss_weights(self, mode: str) -> LossWeights:
        tr = self.train
        if mode == "single_task":
            return LossWeights(w_beam=tr.w_beam, w_pos=0.0, w_blk=0.0)
        if mode == "multi_task":
            return LossWeights(w_beam=tr.w_beam, w_pos=tr.w_pos, w_blk=tr.w_blk)
        raise ConfigError(f"unknown training mode {mode!r}")

    def stage_plan(self, plan_name: str, weights: LossWeights) -> StagePlan:
        pl, depth = self.plan, self.model.depth
        if plan_name == "default3":
            if pl.stages is not None:
                stages = [
                    Stage(
                        name=s["name"],
                        unfreeze_last_n_blocks=int(s["unfreeze_last_n_blocks"]),
                        epochs=int(s["epochs"]),
                        learning_rate=float(s["learning_rate"]),
                        weights=weights,
                        train_embed=bool(s.get("train_embed", False)),
                    )
                    for s in pl.stages
                ]
                return StagePlan(stages=stages)
            return make_default_stage_plan(
                depth,
                epochs=tuple(pl.stage_epochs),
                learning_rates=tuple(pl.stage_learning_rates),
                weights=weights,
            )
        if plan_name in ("full_finetune", "from_scratch"):
            return make_full_plan(
                depth, pl.full_epochs, pl.full_learning_rate, weights, name=plan_name
            )
        raise ConfigError(f"unknown plan {plan_name!r}")
