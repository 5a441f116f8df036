"""Multi-energy CT segmentation toolkit.

Spectral volumes of linear attenuation coefficients in, label volumes out:
energy-axis preprocessing (clipping, uniform and variance-adaptive
rebinning, spectral gradients), graph-based region merging and adaptive
mean-shift segmentation, evaluation metrics, and a synthetic projection /
reconstruction harness for end-to-end studies.
"""

from .binning import (
    BinningPlan,
    adaptive_rebin,
    channel_variance,
    clip_spectrum,
    spectral_gradient,
    uniform_rebin,
)
from .fams import FamsParams, ModeSet, QuantizedPoints, mean_shift, pilot_bandwidths, quantize, segment_fams
from .graphcut import EdgeList, GraphCutParams, Neighborhood, build_edges, merge_small, segment_fh
from .metrics import (
    DiceReport,
    MetricsReport,
    cnr,
    dice_multilabel,
    homogeneity_score,
    mask_background,
    snr_projection,
    snr_reconstruction,
)
from .model import (
    EnergyAxis,
    FormatError,
    LabelVolume,
    Segmentation,
    SpectralVolume,
    TruncationError,
    canonicalize_labels,
    load_labels,
    load_volume,
    rgb_composite,
    save_labels,
    save_volume,
    volume_digest,
    write_ppm,
)
from .synth import (
    Ellipsoid,
    MaterialModel,
    PhantomSpec,
    Sinogram,
    add_poisson_noise,
    art_tv_reconstruct,
    backproject,
    default_phantom,
    forward_project,
    generate_phantom,
    load_sinogram,
    save_sinogram,
)

__version__ = "0.1.0"
