"""Layout-sequence prediction from noisy mobile-sensor streams with a
conditional denoising diffusion model."""

from .core import (
    AgentSample,
    Dataset,
    LayoutFrame,
    LayoutSequence,
    MobileSignalSequence,
    ValidationError,
    VisibilityMask,
    apply_mask,
    validate_sample,
    visible_timestamps,
)
from .masking import MaskKind, MaskSpec, fixed_ratio_mask, full_mask, make_mask, prefix_mask, random_mask
from .synthdata import (
    NoiseLevels,
    SceneConfig,
    WorldTrack,
    dead_reckon_layout,
    generate_dataset,
    project_to_layout,
    read_dataset,
    simulate_track,
    synthesize_mobile,
    write_dataset,
)
from .encoders import EncoderConfig, LayoutExtractingModule, TemporalAlignmentModule, count_params
from .fusion import ModalityFusionModule
from .diffusion import (
    NoisePredictor,
    NoiseSchedule,
    denoise_step,
    diffusion_loss,
    forward_diffuse,
    linear_schedule,
    sample_sequence,
)
from .model import (
    AblationFlags,
    LTrajDiff,
    ModelConfig,
    ModelPredictor,
    Seq2SeqBaseline,
    TrainConfig,
    load_checkpoint,
    run_ablation_suite,
    save_checkpoint,
    train_model,
)
from .metrics import (
    EvalReport,
    evaluate,
    iou_d,
    iou_d_frame,
    mse_t,
    rasterize_iou_oracle,
    read_report,
    write_report,
)

__version__ = "0.1.0"
