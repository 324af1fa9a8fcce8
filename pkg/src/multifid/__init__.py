"""Multi-fidelity Gaussian-process surrogate modeling.

Exact GP regression and the classical multi-fidelity baselines (recursive
auto-regressive correction, bias correction through nominal input
mappings, input-mapping calibration), plus a deep multi-fidelity GP whose
embedded mapping layers learn the transformation between fidelity input
spaces jointly with the fidelity chain.  Includes analytical benchmark
problems, Latin hypercube designs, metrics, and a reproducible experiment
runner.
"""

from .data import (
    CsvSchema,
    FidelityDataset,
    IoTransform,
    NominalMapping,
    load_dataset_csv,
    load_nominal_csv,
    scale_io,
)
from .doe import lhs_sample
from .exactgp import (
    Ar1Model,
    BcModel,
    ExactGpModel,
    GpFitConfig,
    ImcResult,
    build_bc,
    fit_ar1_recursive,
    fit_exact_gp,
    imc_calibrate,
    predict_ar1,
    predict_bc,
    predict_exact_gp,
)
from .kernels import CompositeMfParams, SeArdParams, composite_mf_cov, se_ard_cov, white_cov
from .linalg import cholesky_psd, chol_solve, gauss_logpdf, logdet_from_chol, tri_solve
from .metrics import MetricsReport, compute_metrics
from .mfdgp import (
    MfDgpEmModel,
    TrainConfig,
    build_model,
    constrain_inducing,
    elbo_estimate,
    load_checkpoint,
    predict,
    save_checkpoint,
    train,
)
from .optim import AdamState, adam_step
from .problems import PROBLEMS, ProblemSpec, eval_problem, get_problem, nominal_map
from .rng import RngStream
from .svgp import (
    SparseVariationalLayer,
    kl_gaussian,
    natural_step,
    sample_layer,
    sparse_conditional,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
