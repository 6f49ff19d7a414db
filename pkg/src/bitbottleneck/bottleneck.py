"""Per-layer rate selection: sweep the penalty, hold the PSNR-loss line.

For each layer the fit samples are pooled to set the initial quantizer, the
bit planes of every sample feed one merged Gram system, and the penalty
grid is walked upward while the worst per-sample PSNR loss stays within the
threshold. The kept scheme is the sparsest grid point that still met it.

The penalty decides only which planes survive. Once a support is picked,
its coefficients are refit by plain least squares before anything is
measured or stored: the constrained problem the sweep is really solving is
best-subset selection, and for a fixed subset its optimal coefficients are
the unpenalized ones. Keeping the shrunk interior solution would bleed the
loss budget on bias that has nothing to do with the chosen rate.
"""

from __future__ import annotations

import concurrent.futures
import io
from dataclasses import dataclass, field

import numpy as np

from . import bitplane_codec, metrics, sparse_solver
from .bitplane_codec import InitQuantizerSpec
from .sparse_solver import CoefficientVector, GramSystem
from .tensor_store import DatasetError, DatasetManifest, parse_kv, read_tensor

CONFIG_VERSION = 1
DEFAULT_THRESHOLD_DB = 24.0
DEFAULT_N_FIT = 64
LOSS_REFS = ("init", "lsq")


@dataclass(frozen=True)
class BottleneckConfig:
    """Knobs of the whole pipeline; serializable as key = value text."""

    bits: int = bitplane_codec.DEFAULT_BITS
    init_quantizer: str = "clip_scale"
    clip_percentile: float = bitplane_codec.DEFAULT_CLIP_PERCENTILE  # 100 = exact max
    threshold_db: float = DEFAULT_THRESHOLD_DB
    grid_points: int = sparse_solver.GRID_POINTS
    grid_ratio: float = sparse_solver.GRID_RATIO
    grid_max_ratio: float = 1.0
    n_fit: int | None = None  # None means min(num_samples, DEFAULT_N_FIT)
    nonnegative: bool = False
    loss_ref: str = "init"  # reference for the per-sample loss: init | lsq
    seed: int = 0  # reserved for subsampled fitting; the default path is exhaustive
    data: str = ""  # optional dataset path, CLI flags override
    out: str = ""  # optional output directory, CLI flags override

    def __post_init__(self):
        if self.init_quantizer not in bitplane_codec.QUANTIZER_KINDS:
            raise DatasetError(f"unknown init_quantizer {self.init_quantizer!r}")
        if not 1 <= self.bits <= 16:
            raise DatasetError(f"bits must be in 1..16, got {self.bits}")
        if not 0.0 < self.clip_percentile <= 100.0:
            raise DatasetError(f"clip_percentile must be in (0, 100], got {self.clip_percentile}")
        if not np.isfinite(self.threshold_db):
            raise DatasetError(f"threshold_db must be finite, got {self.threshold_db}")
        if self.grid_points < 1:
            raise DatasetError(f"grid_points must be >= 1, got {self.grid_points}")
        if not 0.0 < self.grid_ratio <= self.grid_max_ratio <= 1.0:
            raise DatasetError(f"penalty grid needs 0 < min factor <= max factor <= 1, "
                              f"got {self.grid_ratio} and {self.grid_max_ratio}")
        if self.n_fit is not None and self.n_fit < 1:
            raise DatasetError(f"n_fit must be >= 1, got {self.n_fit}")
        if self.loss_ref not in LOSS_REFS:
            raise DatasetError(f"loss_ref must be one of {LOSS_REFS}, got {self.loss_ref!r}")

    def fit_count(self, num_samples: int) -> int:
        limit = DEFAULT_N_FIT if self.n_fit is None else self.n_fit
        return min(num_samples, limit)

    def to_kv(self) -> list[tuple[str, str]]:
        return [
            ("config_version", str(CONFIG_VERSION)),
            ("bits", str(self.bits)),
            ("init_quantizer", self.init_quantizer),
            ("clip_percentile", repr(self.clip_percentile)),
            ("threshold_db", repr(self.threshold_db)),
            ("grid_points", str(self.grid_points)),
            ("grid_ratio", repr(self.grid_ratio)),
            ("grid_max_ratio", repr(self.grid_max_ratio)),
            ("n_fit", "" if self.n_fit is None else str(self.n_fit)),
            ("nonnegative", "1" if self.nonnegative else "0"),
            ("loss_ref", self.loss_ref),
            ("seed", str(self.seed)),
            ("data", self.data),
            ("out", self.out),
        ]

    @classmethod
    def from_kv(cls, pairs, source: str = "<config>") -> "BottleneckConfig":
        kv = dict(pairs)
        version = kv.pop("config_version", None)
        if version != str(CONFIG_VERSION):
            raise DatasetError(f"{source}: unsupported config_version {version!r}")
        kwargs = {}
        converters = {
            "bits": int, "init_quantizer": str, "clip_percentile": float,
            "threshold_db": float, "grid_points": int, "grid_ratio": float,
            "grid_max_ratio": float, "n_fit": lambda v: None if v == "" else int(v),
            "nonnegative": lambda v: v == "1", "loss_ref": str, "seed": int,
            "data": str, "out": str,
        }
        for key, value in kv.items():
            if key not in converters:
                raise DatasetError(f"{source}: unknown config field {key!r}")
            try:
                kwargs[key] = converters[key](value)
            except ValueError:
                raise DatasetError(f"{source}: bad value for {key!r}: {value!r}") from None
        return cls(**kwargs)


def load_config(path) -> BottleneckConfig:
    from pathlib import Path

    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"config file not found: {path}")
    return BottleneckConfig.from_kv(parse_kv(path.read_text("utf-8"), source=str(path)),
                                    source=str(path))


@dataclass
class QuantScheme:
    """The deployable result for one layer: quantizer plus plane coefficients."""

    layer_id: int
    spec: InitQuantizerSpec
    coeffs: CoefficientVector
    lam: float
    psnr_db: float  # pooled over the fit samples, initial-peak reference
    psnr_loss_db: float  # worst per-sample loss, the sweep statistic
    t_per_sample: tuple[float, ...]
    threshold_unmet: bool = False

    @property
    def effective_rate(self) -> int:
        return self.coeffs.effective_rate


def validate_scheme(scheme: QuantScheme) -> None:
    spec, coeffs = scheme.spec, scheme.coeffs
    if coeffs.alpha.size != spec.bits:
        raise DatasetError(f"layer {scheme.layer_id}: {coeffs.alpha.size} coefficients "
                           f"for a {spec.bits}-bit code")
    nonzero = tuple(int(j) + 1 for j in np.flatnonzero(coeffs.alpha))
    if tuple(coeffs.support) != nonzero:
        raise DatasetError(f"layer {scheme.layer_id}: support {coeffs.support} does not "
                           f"match nonzero coefficients {nonzero}")
    if scheme.lam < 0.0 or not np.isfinite(scheme.lam):
        raise DatasetError(f"layer {scheme.layer_id}: bad penalty {scheme.lam}")
    if not np.isfinite(coeffs.residual_sse) or coeffs.residual_sse < 0.0:
        raise DatasetError(f"layer {scheme.layer_id}: bad residual_sse {coeffs.residual_sse}")


@dataclass
class SweepPoint:
    """One evaluated grid point of a layer sweep."""

    lam: float
    rate: int
    psnr_db: float
    psnr_loss_db: float  # max over fit samples
    t_per_sample: tuple[float, ...]
    coeffs: CoefficientVector  # refit on the penalized support


@dataclass
class SweepTrace:
    layer_id: int
    points: list[SweepPoint] = field(default_factory=list)
    chosen: int = -1  # index into points
    threshold_unmet: bool = False


def trace_to_csv(trace: SweepTrace) -> str:
    out = io.StringIO()
    out.write("lambda,d,psnr_db,psnr_loss_db\n")
    for p in trace.points:
        out.write(f"{p.lam!r},{p.rate},{p.psnr_db!r},{p.psnr_loss_db!r}\n")
    return out.getvalue()


@dataclass
class LayerFit:
    """Everything the sweep needs for one layer, held in memory."""

    layer_id: int
    spec: InitQuantizerSpec
    system: GramSystem
    planes: list[np.ndarray]  # per fit sample, (M_i, D) uint8
    values: list[np.ndarray]  # per fit sample, float64 originals
    mse_ref: list[float]  # per-sample reference error for the loss
    mse_init: list[float]  # per-sample initial-quantizer error
    sample_ids: list[int]


def prepare_layer(manifest: DatasetManifest, layer_id: int,
                  config: BottleneckConfig) -> LayerFit:
    """Quantize the fit samples of one layer and pool their statistics."""
    n_fit = config.fit_count(manifest.num_samples)
    sample_ids = list(range(1, n_fit + 1))
    tensors = [read_tensor(manifest, layer_id, i) for i in sample_ids]
    pooled = np.concatenate([t.values for t in tensors]).astype(np.float64)
    spec = bitplane_codec.fit_init_quantizer(pooled, kind=config.init_quantizer,
                                             bits=config.bits,
                                             clip_percentile=config.clip_percentile)
    planes, values, systems, mse_init = [], [], [], []
    for t in tensors:
        codes = bitplane_codec.init_quantize(spec, t)
        b = bitplane_codec.decompose(codes, spec.bits)
        x = t.values.astype(np.float64)
        planes.append(b)
        values.append(x)
        systems.append(sparse_solver.build_gram_system(b, x - spec.clip_lo))
        mse_init.append(metrics.mse(x, bitplane_codec.dequantize(spec, codes)))
    system = sparse_solver.merge_gram_systems(systems)
    if config.loss_ref == "lsq":
        full, _ = sparse_solver.restricted_least_squares(system, range(1, spec.bits + 1))
        mse_ref = [metrics.mse(x, bitplane_codec.reconstruct(b, full, spec.clip_lo))
                   for b, x in zip(planes, values)]
    else:
        mse_ref = list(mse_init)
    return LayerFit(layer_id=layer_id, spec=spec, system=system, planes=planes,
                    values=values, mse_ref=mse_ref, mse_init=mse_init,
                    sample_ids=sample_ids)


def evaluate_coeffs(fit: LayerFit, alpha: np.ndarray) -> tuple[float, list[float], list[float]]:
    """Pooled PSNR and per-sample losses of a coefficient vector, by explicit
    reconstruction of every fit sample."""
    t_list, mse_list = [], []
    sq_sum, count = 0.0, 0
    for b, x, ref in zip(fit.planes, fit.values, fit.mse_ref):
        recon = bitplane_codec.reconstruct(b, alpha, fit.spec.clip_lo)
        m = metrics.mse(x, recon)
        mse_list.append(m)
        t_list.append(metrics.psnr_loss_from_mse(ref, m))
        sq_sum += m * x.size
        count += x.size
    pooled_psnr = metrics.psnr(sq_sum / count, fit.spec.bits)
    return pooled_psnr, t_list, mse_list


def refit_on_support(system: GramSystem, support, lam: float) -> CoefficientVector:
    """Unpenalized least squares on a support, packaged with its residual."""
    alpha, sse = sparse_solver.restricted_least_squares(system, support)
    kept = tuple(int(j) + 1 for j in np.flatnonzero(alpha))
    return CoefficientVector(alpha=alpha, support=kept, lam=float(lam), residual_sse=sse)


def sweep_layer(manifest: DatasetManifest, layer_id: int,
                config: BottleneckConfig) -> tuple[QuantScheme, SweepTrace]:
    """Walk the penalty grid upward and keep the last point under threshold.

    Each grid point contributes its penalized support, refit without the
    penalty; the per-sample losses of the refit decide acceptance. The walk
    stops at the first grid point whose worst loss exceeds the threshold. If
    even the densest point exceeds it, that point is kept and the scheme is
    flagged threshold_unmet.
    """
    fit = prepare_layer(manifest, layer_id, config)
    grid = sparse_solver.lambda_grid(fit.system, num=config.grid_points,
                                     ratio=config.grid_ratio,
                                     max_ratio=config.grid_max_ratio)
    trace = SweepTrace(layer_id=layer_id)
    chosen = -1
    warm = None
    for lam in grid:
        sol = sparse_solver.solve_lasso(fit.system, float(lam),
                                        nonnegative=config.nonnegative, warm_start=warm)
        warm = sol.alpha
        coeffs = refit_on_support(fit.system, sol.support, float(lam))
        pooled_psnr, t_list, _ = evaluate_coeffs(fit, coeffs.alpha)
        t_max = max(t_list) if t_list else 0.0
        trace.points.append(SweepPoint(lam=float(lam), rate=coeffs.effective_rate,
                                       psnr_db=pooled_psnr, psnr_loss_db=t_max,
                                       t_per_sample=tuple(t_list), coeffs=coeffs))
        if t_max <= config.threshold_db:
            chosen = len(trace.points) - 1
        else:
            break
    if chosen < 0:
        trace.threshold_unmet = True
        chosen = 0
    trace.chosen = chosen
    point = trace.points[chosen]
    scheme = QuantScheme(layer_id=layer_id, spec=fit.spec, coeffs=point.coeffs,
                         lam=point.lam, psnr_db=point.psnr_db,
                         psnr_loss_db=point.psnr_loss_db,
                         t_per_sample=point.t_per_sample,
                         threshold_unmet=trace.threshold_unmet)
    validate_scheme(scheme)
    return scheme, trace


def run_all_layers(manifest: DatasetManifest, config: BottleneckConfig,
                   layer_ids=None, jobs: int = 1):
    """Sweep every requested layer, optionally across worker processes.

    Returns (results, failures): results maps layer_id to (scheme, trace) in
    layer order for the layers that succeeded; failures lists (layer_id,
    message) for the rest, so one bad layer does not sink the run.
    """
    if layer_ids is None:
        layer_ids = range(1, manifest.num_layers + 1)
    layer_ids = list(layer_ids)
    for lid in layer_ids:
        if not 1 <= lid <= manifest.num_layers:
            raise DatasetError(f"layer_id {lid} out of range 1..{manifest.num_layers}")
    results: dict[int, tuple[QuantScheme, SweepTrace]] = {}
    failures: list[tuple[int, str]] = []
    if jobs > 1 and len(layer_ids) > 1:
        with concurrent.futures.ProcessPoolExecutor(
                max_workers=min(jobs, len(layer_ids))) as pool:
            futures = {lid: pool.submit(sweep_layer, manifest, lid, config)
                       for lid in layer_ids}
            for lid in layer_ids:
                try:
                    results[lid] = futures[lid].result()
                except DatasetError as exc:
                    failures.append((lid, str(exc)))
    else:
        for lid in layer_ids:
            try:
                results[lid] = sweep_layer(manifest, lid, config)
            except DatasetError as exc:
                failures.append((lid, str(exc)))
    ordered = {lid: results[lid] for lid in layer_ids if lid in results}
    return ordered, failures


def truncation_coeffs(spec: InitQuantizerSpec, rate: int) -> CoefficientVector:
    """Plain truncation baseline: the top `rate` planes at natural weights."""
    if not 0 <= rate <= spec.bits:
        raise DatasetError(f"rate must be in 0..{spec.bits}, got {rate}")
    natural = bitplane_codec.natural_coefficients(spec)
    alpha = np.zeros(spec.bits)
    support = tuple(range(spec.bits - rate + 1, spec.bits + 1))
    for j in support:
        alpha[j - 1] = natural[j - 1]
    return CoefficientVector(alpha=alpha, support=support, lam=0.0, residual_sse=float("nan"))


@dataclass
class OracleRow:
    """Rate-distortion comparison at one kept-bit count.

    The path column is the best penalized-path support of this size, refit
    by the same restricted solve as the exhaustive search; NaN when no path
    point landed on this size.
    """

    rate: int
    psnr_trunc_db: float
    psnr_oracle_db: float
    psnr_path_db: float
    oracle_support: tuple[int, ...]
    path_support: tuple[int, ...]
    trunc_sse: float
    oracle_sse: float
    path_sse: float


def oracle_layer(manifest: DatasetManifest, layer_id: int, config: BottleneckConfig,
                 max_rate: int | None = None) -> tuple[InitQuantizerSpec, list[OracleRow]]:
    """Exhaustive best-support distortion against the penalized path and
    plain truncation, rate by rate."""
    fit = prepare_layer(manifest, layer_id, config)
    top = fit.spec.bits if max_rate is None else max_rate
    if not 1 <= top <= fit.spec.bits:
        raise DatasetError(f"max rate must be in 1..{fit.spec.bits}, got {top}")
    grid = sparse_solver.lambda_grid(fit.system, num=config.grid_points,
                                     ratio=config.grid_ratio,
                                     max_ratio=config.grid_max_ratio)
    path = sparse_solver.solve_path(fit.system, grid, nonnegative=config.nonnegative)
    best_by_rate: dict[int, tuple[float, tuple[int, ...], np.ndarray]] = {}
    for sol in path:
        alpha, sse = sparse_solver.restricted_least_squares(fit.system, sol.support)
        d = len(sol.support)
        if d not in best_by_rate or sse < best_by_rate[d][0]:
            best_by_rate[d] = (sse, sol.support, alpha)
    rows = []
    for rate in range(1, top + 1):
        trunc = truncation_coeffs(fit.spec, rate)
        trunc_psnr, _, trunc_mses = evaluate_coeffs(fit, trunc.alpha)
        oracle = sparse_solver.exact_l0_oracle(fit.system, rate)
        oracle_psnr, _, _ = evaluate_coeffs(fit, oracle.alpha)
        if rate in best_by_rate:
            path_sse, path_support, path_alpha = best_by_rate[rate]
            path_psnr, _, _ = evaluate_coeffs(fit, path_alpha)
        else:
            path_sse, path_support, path_psnr = float("nan"), (), float("nan")
        rows.append(OracleRow(
            rate=rate,
            psnr_trunc_db=trunc_psnr,
            psnr_oracle_db=oracle_psnr,
            psnr_path_db=path_psnr,
            oracle_support=oracle.support,
            path_support=path_support,
            trunc_sse=sum(m * x.size for m, x in zip(trunc_mses, fit.values)),
            oracle_sse=oracle.residual_sse,
            path_sse=path_sse,
        ))
    return fit.spec, rows


@dataclass
class LayerStats:
    """Descriptive statistics of one layer's fit samples."""

    layer_id: int
    shape: tuple[int, int, int]
    num_samples: int
    minimum: float
    maximum: float
    mean: float
    zero_fraction: float
    clip_hi: float
    plane_fill: np.ndarray  # fraction of ones per plane, LSB first


def layer_stats(manifest: DatasetManifest, layer_id: int,
                config: BottleneckConfig) -> LayerStats:
    fit = prepare_layer(manifest, layer_id, config)
    pooled = np.concatenate(fit.values)
    counts = sum(bitplane_codec.plane_counts(b) for b in fit.planes)
    return LayerStats(
        layer_id=layer_id,
        shape=manifest.shape(layer_id),
        num_samples=len(fit.sample_ids),
        minimum=float(pooled.min()),
        maximum=float(pooled.max()),
        mean=float(pooled.mean()),
        zero_fraction=float(np.mean(pooled == 0.0)),
        clip_hi=fit.spec.clip_hi,
        plane_fill=counts / pooled.size,
    )


def reconstruct_with_scheme(scheme: QuantScheme, tensor) -> np.ndarray:
    """Quantize a tensor with the scheme's initial quantizer and rebuild it
    from the kept planes; returns float64 values in the tensor's flat order."""
    codes = bitplane_codec.init_quantize(scheme.spec, tensor)
    planes = bitplane_codec.decompose(codes, scheme.spec.bits)
    return bitplane_codec.reconstruct(planes, scheme.coeffs.alpha, scheme.spec.clip_lo)


__all__ = [
    "BottleneckConfig", "QuantScheme", "SweepPoint", "SweepTrace", "LayerFit",
    "LayerStats", "OracleRow", "load_config", "validate_scheme", "trace_to_csv",
    "prepare_layer", "evaluate_coeffs", "refit_on_support", "sweep_layer",
    "run_all_layers", "truncation_coeffs", "oracle_layer", "layer_stats",
    "reconstruct_with_scheme",
]
