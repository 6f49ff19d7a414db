"""Post-training activation quantization by bit-plane coefficient fitting.

Fixed-point activation codes are split into bit planes, an L1-penalized
least-squares fit decides which planes are worth keeping and at what weight,
and a per-layer penalty sweep picks the sparsest scheme whose worst-case
PSNR loss stays under a threshold.
"""

from .bitplane_codec import (InitQuantizerSpec, decompose, dequantize, fit_init_quantizer,
                             init_quantize, natural_coefficients, recompose, reconstruct)
from .bottleneck import (BottleneckConfig, QuantScheme, SweepPoint, SweepTrace, layer_stats,
                         load_config, oracle_layer, reconstruct_with_scheme, run_all_layers,
                         sweep_layer, trace_to_csv, truncation_coeffs, validate_scheme)
from .metrics import EfficiencyRow, efficiency_row, efficiency_table, mse, psnr, psnr_loss_from_mse
from .sparse_solver import (CoefficientVector, GramSystem, build_gram_system, exact_l0_oracle,
                            kkt_violation, lambda_grid, lambda_max, objective,
                            restricted_least_squares, solve_lasso, solve_path)
from .tensor_store import (ActivationTensor, DatasetError, DatasetManifest, SchemeError,
                           load_dataset, read_scheme, read_tensor, write_container, write_scheme)

__version__ = "0.1.0"

__all__ = [
    "ActivationTensor", "BottleneckConfig", "CoefficientVector", "DatasetError",
    "DatasetManifest", "EfficiencyRow", "GramSystem", "InitQuantizerSpec", "QuantScheme",
    "SchemeError", "SweepPoint", "SweepTrace", "build_gram_system", "decompose",
    "dequantize", "efficiency_row", "efficiency_table", "exact_l0_oracle",
    "fit_init_quantizer", "init_quantize", "kkt_violation", "lambda_grid", "lambda_max",
    "layer_stats", "load_config", "load_dataset", "mse", "natural_coefficients",
    "objective", "oracle_layer", "psnr", "psnr_loss_from_mse", "read_scheme",
    "read_tensor", "recompose", "reconstruct", "reconstruct_with_scheme",
    "restricted_least_squares", "run_all_layers", "solve_lasso", "solve_path", "sweep_layer",
    "trace_to_csv", "truncation_coeffs", "validate_scheme", "write_container",
    "write_scheme",
]
