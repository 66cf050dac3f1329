"""Post-training low-rank compression of dense networks driven by the calibration gradient."""

import os

# cap BLAS threads before numpy loads
if os.environ.get("RANKLOSS_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["RANKLOSS_THREADS"])

from .constraints import ConstraintVerdict, check, lossless_condition, max_compressive_rank, predicted_loss_delta  # noqa: E402
from .linalg import FactorPair, SvdResult, noise, svd, truncate  # noqa: E402
from .network import (  # noqa: E402
    Dataset, GradientSnapshot, Layer, Network, apply_factorization, dataset_loss, forward,
    gradients, perturb, train_toy)
from .optimizer import (  # noqa: E402
    CompressionConfig, compact_layer_search, compress_network, lossless_layer_search)
from .report import CompressionReport, Metrics, drop_rate, emit_report, evaluate, rank_curve  # noqa: E402

__version__ = "0.1.0"
