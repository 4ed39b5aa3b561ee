"""Unpaired two-stage reconstruction for accelerated multi-coil 3D TOF
angiography volumes: MR physics operators, synthetic vessel phantoms,
adversarial training for slice reconstruction and volumetric refinement,
and a command-line pipeline around them."""

from .fourier import fft2c, ifft2c, forward_operator, kspace_residual, ssos
from .geometry import (
    SlabVolume,
    assemble_volume,
    center_slice,
    depth_maxpool,
    depth_windows,
    mip,
    reorient_volume,
    resize_zeropad_crop,
    restack_volume,
    split_into_slabs,
)
from .masks import SamplingMask, make_mask
from .metrics import MetricRecord, psnr, ssim, vessel_continuity
from .phantom import (
    CoilMaps,
    DatasetGeometry,
    Phantom,
    build_unpaired_dataset,
    gen_coilmaps,
    gen_phantom,
    simulate_slice,
    split_subjects,
)
from .losses import (
    LossReport,
    Stage1Weights,
    gradient_check,
    stage1_discriminator_loss,
    stage1_generator_loss,
    stage2_losses,
)
from .networks import (
    DiscriminatorConfig,
    GeneratorConfig,
    ProjectionDiscriminatorConfig,
    build_patchgan,
    build_stage1_generator,
    build_stage2_generator_f,
    build_stage2_generator_g,
    projection_score,
    spectral_audit,
)
from .optim import Adam, Lookahead, NonFiniteGradientError, RAdam

__version__ = "0.1.0"
