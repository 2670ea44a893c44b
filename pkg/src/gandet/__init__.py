"""gandet: adversarially trained tiny detector, robust to blur and noise."""

__version__ = "0.1.0"

from .anchors import (
    build_anchors,
    decode_detections,
    encode_targets,
)
from .adversarial import (
    DiscriminatorParams,
    discriminator_forward,
    gan_loss_d,
    gan_loss_g,
    init_discriminator,
    total_loss,
)
from .checkpoint import Checkpoint, load_checkpoint, load_detector_checkpoint, save_checkpoint
from .degrade import (
    DistortionPool,
    Kernel,
    QualityTag,
    apply_random_level,
    augment_minibatch,
    awgn,
    camshake_kernel,
    convolve2d,
    defocus_kernel,
    gaussian_kernel,
)
from .detector import (
    DetectionOutput,
    DetectorConfig,
    detection_loss,
    forward,
    init_params,
    loss_gradients,
    smooth_l1,
)
from .metrics import (
    APReport,
    LossBreakdown,
    coco_ap,
    cross_distortion_matrix,
    iou,
    loss_decomposition,
    per_level_sweep,
    voc_ap,
)
from .schedule import PlateauState, TwoPhaseState, lr_plateau_step
from .synth import (
    DatasetManifest,
    SceneSpec,
    generate_dataset,
    load_manifest,
    materialize_split,
    render_scene,
    save_manifest,
)
from .train import (
    Adam,
    TrainConfig,
    TrainLog,
    TrainValData,
    freeze_after,
    train_baseline,
    train_finetune,
    train_gando,
)

__all__ = [name for name in dir() if not name.startswith("_")]
