"""beamvision: vision-aided mmWave beam selection at desk scale.

Type-I beam codebook and LoS channel oracle, synthetic scene dataset
generation, a multi-head tiny vision transformer, and a progressive
multi-stage fine-tuning pipeline with beam accuracy, rate-ratio and
positioning-error evaluation.
"""

from .channel import (
    ChannelRealization,
    LinkParams,
    achievable_rate,
    beamforming_gains,
    oracle_beam,
    synthesize_los_channel,
    top_k_beams,
)
from .codebook import (
    ArrayGeometry,
    BeamCodebook,
    BeamIndex,
    build_type1_codebook,
    export_codebook,
    load_codebook_export,
    steering_vector,
)
from .config import ExperimentConfig
from .evalmetrics import (
    EvalReport,
    RateTable,
    mean_positioning_error,
    rate_evaluation,
    top_k_accuracy,
)
from .finetune import (
    LossWeights,
    SplitTensors,
    Stage,
    StagePlan,
    TrainConfig,
    apply_stage,
    make_default_stage_plan,
    make_full_plan,
    multitask_loss,
    predict_outputs,
    run_progressive_finetune,
)
from .model import (
    BackboneSpec,
    BeamVisionModel,
    HeadSpec,
    ModelOutputs,
    build_model,
    count_trainable_params,
    load_checkpoint,
    save_checkpoint,
    set_block_trainable,
    trainable_mask,
)
from .scenegen import (
    DatasetManifest,
    SampleRecord,
    SceneConfig,
    generate_dataset,
    load_external_manifest,
    load_manifest,
    load_split_arrays,
    render_scene,
    save_manifest,
    split_dataset,
    world_to_pixel,
)

__version__ = "0.1.0"
