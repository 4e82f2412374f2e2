"""Learned compression toolkit for fixed-length feature vectors.

Trains end-to-end rate-distortion codecs for embedding-style features,
offers a scalar-quantization baseline over the same adaptive entropy coder,
enhances compressed representations after the fact without spending more
bits, and evaluates everything with verification-style rate-accuracy
sweeps.
"""

__version__ = "0.1.0"

from .codec import (
    FeatureCodec,
    TrainConfig,
    clip_latent,
    load_model,
    quantize_latent,
    rd_loss,
    save_model,
    train_codec,
    train_noise,
)
from .data import (
    FeatureSet,
    dim_stats,
    gen_pairs,
    gen_synthetic,
    read_features,
    read_pairs,
    write_features,
    write_pairs,
)
from .enhance import (
    LatentEnhancer,
    SqEnhancer,
    load_enhancer,
    load_sqe,
    save_enhancer,
    save_sqe,
    train_enhancer,
    train_sqe,
)
from .entropy import (
    AdaptiveModel,
    FeatureBitstream,
    RateReport,
    SymbolAlphabet,
    ac_decode,
    ac_encode,
    measure_rate,
    read_bitstream,
    write_bitstream,
)
from .errors import (
    CodingError,
    ConfigError,
    DegenerateFeatureError,
    FeatcodecError,
    FormatError,
    ProtocolError,
    ShapeError,
    TrainingDivergenceError,
)
from .metrics import (
    KfoldResult,
    VerificationPairs,
    eer,
    kfold_accuracy,
    normalize_rows,
    pair_scores,
    roc_auc,
)
from .nn import (
    Adam,
    DenseLayer,
    GdnLayer,
    GradientTape,
    grad_check,
    xavier_init,
)
from .sq import (
    qstep_from_qp,
    sq_code_features,
    sq_dequantize,
    sq_quantize,
)
from .sweep import (
    CodecPipeline,
    EnhancedCodecPipeline,
    RatePoint,
    SqEnhancedPipeline,
    SqPipeline,
    run_sweep,
)
