"""Command-line front end.

Subcommands cover the pipeline end to end: `synth` makes a demo dataset,
`stats` profiles layers, `sweep` selects per-layer schemes, `oracle` compares
against the exhaustive best support, `efficiency` prints the cost model and
`reconstruct` applies a stored scheme. Reports go to stdout as tab-separated
text; with an output directory the same tables land in files, figures render
next to them unless suppressed.

Exit codes: 0 on success (a sweep that never met its threshold still counts,
the schemes say so themselves), 1 when some layers failed and others were
written, 2 on bad input or configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import bottleneck, metrics, synth
from .bottleneck import BottleneckConfig
from .tensor_store import (DatasetError, SchemeError, atomic_write_text, load_dataset,
                           read_scheme, read_tensor, write_scheme)

CONFIG_FIELDS = ("bits", "init_quantizer", "clip_percentile", "threshold_db",
                 "grid_points", "grid_ratio", "grid_max_ratio", "n_fit", "nonnegative",
                 "loss_ref", "seed", "data", "out")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("fit configuration")
    g.add_argument("--config", metavar="FILE", help="key = value config file; flags override it")
    g.add_argument("--bits", type=int, help="initial code width D (default 8)")
    g.add_argument("--init-quantizer", choices=("clip_scale", "rounding"), dest="init_quantizer")
    g.add_argument("--clip-percentile", type=float, dest="clip_percentile",
                   help="upper clip percentile; 100 clips at the exact maximum")
    g.add_argument("--threshold-db", type=float, dest="threshold_db",
                   help="largest tolerated per-sample PSNR loss (default 24)")
    g.add_argument("--grid-points", type=int, dest="grid_points")
    g.add_argument("--grid-ratio", type=float, dest="grid_ratio",
                   help="smallest grid penalty as a fraction of lambda_max")
    g.add_argument("--grid-max-ratio", type=float, dest="grid_max_ratio",
                   help="largest grid penalty as a fraction of lambda_max")
    g.add_argument("--n-fit", type=int, dest="n_fit",
                   help="fit samples per layer (default min(N, 64), first by sample id)")
    g.add_argument("--nonnegative", action=argparse.BooleanOptionalAction, default=None,
                   help="constrain coefficients to be non-negative")
    g.add_argument("--loss-ref", choices=bottleneck.LOSS_REFS, dest="loss_ref",
                   help="reference reconstruction for the loss (default init)")
    g.add_argument("--seed", type=int, help="seed recorded in the config")


def _resolve_config(args) -> BottleneckConfig:
    config = bottleneck.load_config(args.config) if args.config else BottleneckConfig()
    overrides = {f: getattr(args, f) for f in CONFIG_FIELDS if getattr(args, f, None) is not None}
    return dataclasses.replace(config, **overrides) if overrides else config


def _data_path(args, config: BottleneckConfig) -> str:
    path = getattr(args, "data", None) or config.data
    if not path:
        raise DatasetError("no dataset given: pass --data or set `data` in the config")
    return path


def _parse_layers(arg, num_layers: int) -> list[int]:
    if not arg:
        return list(range(1, num_layers + 1))
    try:
        ids = [int(s) for s in arg.split(",")]
    except ValueError:
        raise DatasetError(f"bad layer list {arg!r}, expected comma-separated ids") from None
    for lid in ids:
        if not 1 <= lid <= num_layers:
            raise DatasetError(f"layer_id {lid} out of range 1..{num_layers}")
    return ids


def _out_dir(args, config: BottleneckConfig | None = None) -> Path | None:
    path = getattr(args, "out", None) or (config.out if config else "")
    if not path:
        return None
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _figures_enabled(args, out: Path | None) -> bool:
    return out is not None and not getattr(args, "no_figures", False)


def _emit(lines: list[str], out_path: Path | None) -> None:
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if out_path is not None:
        atomic_write_text(out_path, text)


def cmd_synth(args) -> int:
    manifest = synth.generate_dataset(
        args.out, num_layers=args.layers, num_samples=args.samples,
        shape=tuple(args.shape), seed=args.seed, zero_frac=args.zero_frac,
        sigma=args.sigma, outlier_frac=args.outlier_frac,
        outlier_mult=args.outlier_mult)
    print(manifest)
    return 0


def cmd_stats(args) -> int:
    config = _resolve_config(args)
    manifest = load_dataset(_data_path(args, config))
    layer_ids = _parse_layers(args.layers, manifest.num_layers)
    out = _out_dir(args, config)
    render = _figures_enabled(args, out)
    lines = ["layer\tshape\tsamples\tmin\tmax\tmean\tzero_frac\tclip_hi\tplane_fill"]
    failed = []
    for lid in layer_ids:
        try:
            stats = bottleneck.layer_stats(manifest, lid, config)
        except DatasetError as exc:
            print(f"layer {lid}: {exc}", file=sys.stderr)
            failed.append(lid)
            continue
        fill = ";".join(f"{v:.4f}" for v in stats.plane_fill)
        shape = "x".join(str(s) for s in stats.shape)
        lines.append(f"{stats.layer_id}\t{shape}\t{stats.num_samples}"
                     f"\t{stats.minimum:.6g}\t{stats.maximum:.6g}\t{stats.mean:.6g}"
                     f"\t{stats.zero_fraction:.4f}\t{stats.clip_hi:.6g}\t{fill}")
        if out is not None:
            plane_csv = ["plane,fill"]
            plane_csv += [f"{j},{float(v)!r}"
                          for j, v in enumerate(stats.plane_fill, start=1)]
            atomic_write_text(out / f"stats_layer_{lid}_planes.csv",
                              "\n".join(plane_csv) + "\n")
            fit = bottleneck.prepare_layer(manifest, lid, config)
            pooled = np.concatenate(fit.values)
            counts, edges = np.histogram(pooled[pooled != 0.0], bins=64)
            hist_csv = ["bin_lo,bin_hi,count"]
            hist_csv += [f"{float(lo)!r},{float(hi)!r},{int(c)}"
                         for lo, hi, c in zip(edges[:-1], edges[1:], counts)]
            atomic_write_text(out / f"stats_layer_{lid}_hist.csv",
                              "\n".join(hist_csv) + "\n")
            if render:
                from . import figures

                figures.plot_layer_histogram(pooled, stats,
                                             out / f"stats_layer_{lid}_hist.png")
                figures.plot_plane_fill(stats, out / f"stats_layer_{lid}_planes.png")
    _emit(lines, out / "stats.tsv" if out else None)
    return 1 if failed else 0


def cmd_sweep(args) -> int:
    config = _resolve_config(args)
    manifest = load_dataset(_data_path(args, config))
    layer_ids = _parse_layers(args.layers, manifest.num_layers)
    out = _out_dir(args, config)
    if out is None:
        raise DatasetError("sweep needs --out to store schemes and traces")
    render = _figures_enabled(args, out)
    results, failures = bottleneck.run_all_layers(manifest, config, layer_ids,
                                                  jobs=args.jobs)
    for lid, message in failures:
        print(f"layer {lid}: {message}", file=sys.stderr)
    lines = ["layer\td\tlambda\tpsnr_db\tpsnr_loss_db\tthreshold_unmet"]
    for lid, (scheme, trace) in results.items():
        write_scheme(scheme, out / f"scheme_layer_{lid}.txt")
        atomic_write_text(out / f"trace_layer_{lid}.csv", bottleneck.trace_to_csv(trace))
        lines.append(f"{lid}\t{scheme.effective_rate}\t{scheme.lam:.6g}"
                     f"\t{scheme.psnr_db:.4f}\t{scheme.psnr_loss_db:.4f}"
                     f"\t{int(scheme.threshold_unmet)}")
        if render:
            from . import figures

            figures.plot_sweep_trace(trace, config.threshold_db,
                                     out / f"sweep_layer_{lid}.png")
    if results:
        avg = sum(s.effective_rate for s, _ in results.values()) / len(results)
        lines.append(f"average_d\t{avg:.4f}")
    _emit(lines, out / "sweep.tsv")
    return 1 if failures else 0


def cmd_oracle(args) -> int:
    config = _resolve_config(args)
    manifest = load_dataset(_data_path(args, config))
    layer_ids = _parse_layers(args.layers, manifest.num_layers)
    out = _out_dir(args, config)
    render = _figures_enabled(args, out)
    lines = ["layer\trate\tpsnr_trunc_db\tpsnr_path_db\tpsnr_oracle_db\tsupport"]
    failed = []
    for lid in layer_ids:
        try:
            _, rows = bottleneck.oracle_layer(manifest, lid, config, max_rate=args.max_rate)
        except DatasetError as exc:
            print(f"layer {lid}: {exc}", file=sys.stderr)
            failed.append(lid)
            continue
        for r in rows:
            support = ",".join(str(j) for j in r.oracle_support)
            lines.append(f"{lid}\t{r.rate}\t{r.psnr_trunc_db:.4f}\t{r.psnr_path_db:.4f}"
                         f"\t{r.psnr_oracle_db:.4f}\t{support}")
        if out is not None:
            csv = ["rate,psnr_trunc_db,psnr_path_db,psnr_oracle_db"
                   ",trunc_sse,path_sse,oracle_sse,path_support,oracle_support"]
            csv += [f"{r.rate},{r.psnr_trunc_db!r},{r.psnr_path_db!r},{r.psnr_oracle_db!r}"
                    f",{r.trunc_sse!r},{r.path_sse!r},{r.oracle_sse!r}"
                    f",{';'.join(str(j) for j in r.path_support)}"
                    f",{';'.join(str(j) for j in r.oracle_support)}" for r in rows]
            atomic_write_text(out / f"oracle_layer_{lid}.csv", "\n".join(csv) + "\n")
        if render:
            from . import figures

            figures.plot_rate_distortion(rows, lid, out / f"oracle_layer_{lid}.png")
    _emit(lines, out / "oracle.tsv" if out else None)
    return 1 if failed else 0


def cmd_efficiency(args) -> int:
    if args.bits:
        try:
            bits_list = [int(s) for s in args.bits.split(",")]
        except ValueError:
            raise DatasetError(f"bad bits list {args.bits!r}") from None
    else:
        bits_list = None
    rows = metrics.efficiency_table(bits_list)
    lines = ["bits\tops_b\tmem_mb\timprovement"]
    lines += [f"{r.bits:g}\t{r.ops_b}\t{r.mem_mb}\t{r.improvement}" for r in rows]
    rates = []
    for scheme_path in args.scheme or ():
        scheme = read_scheme(scheme_path)
        if scheme.effective_rate == 0:
            print(f"{scheme_path}: empty support, skipped in the average", file=sys.stderr)
            continue
        rates.append((scheme.layer_id, scheme.effective_rate))
    if rates:
        for layer_id, rate in rates:
            r = metrics.efficiency_row(rate)
            lines.append(f"layer_{layer_id}\t{r.ops_b}\t{r.mem_mb}\t{r.improvement}")
        avg = metrics.efficiency_row(sum(rate for _, rate in rates) / len(rates))
        lines.append(f"average_d={avg.bits:g}\t{avg.ops_b}\t{avg.mem_mb}\t{avg.improvement}")
    out = _out_dir(args)
    _emit(lines, out / "efficiency.tsv" if out else None)
    if out is not None and args.figures:
        from . import figures

        figures.plot_efficiency(rows, out / "efficiency.png")
    return 0


def cmd_reconstruct(args) -> int:
    manifest = load_dataset(args.data)
    scheme = read_scheme(args.scheme)
    if not 1 <= scheme.layer_id <= manifest.num_layers:
        raise DatasetError(f"scheme targets layer {scheme.layer_id}, "
                           f"dataset has 1..{manifest.num_layers}")
    tensor = read_tensor(manifest, scheme.layer_id, args.sample)
    recon = bottleneck.reconstruct_with_scheme(scheme, tensor)
    err = metrics.mse(tensor.values, recon)
    print("layer\tsample\td\tmse\tpsnr_db")
    print(f"{scheme.layer_id}\t{args.sample}\t{scheme.effective_rate}"
          f"\t{err:.6g}\t{metrics.psnr(err, scheme.spec.bits):.4f}")
    if args.out:
        np.save(args.out, recon.reshape(tensor.shape).astype(np.float32))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bitbottleneck",
        description="Bit-plane activation quantization with penalized rate selection.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic activation dataset")
    p.add_argument("--out", required=True, help="output container directory")
    p.add_argument("--layers", type=int, default=synth.DEFAULT_LAYERS)
    p.add_argument("--samples", type=int, default=synth.DEFAULT_SAMPLES)
    p.add_argument("--shape", type=lambda s: [int(v) for v in s.split(",")],
                   default=list(synth.DEFAULT_SHAPE), metavar="P,Q,K")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zero-frac", type=float, default=synth.DEFAULT_ZERO_FRAC,
                   dest="zero_frac", help="fraction of exact zeros")
    p.add_argument("--sigma", type=float, default=synth.DEFAULT_SIGMA,
                   help="bulk scale of the nonzero values")
    p.add_argument("--outlier-frac", type=float, default=synth.DEFAULT_OUTLIER_FRAC,
                   dest="outlier_frac", help="fraction of large outliers (0 disables)")
    p.add_argument("--outlier-mult", type=float, default=synth.DEFAULT_OUTLIER_MULT,
                   dest="outlier_mult", help="outlier band center in bulk sigmas")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("stats", help="profile layers and their bit planes")
    p.add_argument("--data", help="dataset directory or manifest path")
    p.add_argument("--layers", help="comma-separated layer ids (default all)")
    p.add_argument("--out", help="directory for stats.tsv and figures")
    p.add_argument("--no-figures", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("sweep", help="select per-layer schemes under a loss threshold")
    p.add_argument("--data")
    p.add_argument("--layers")
    p.add_argument("--out", help="directory for schemes, traces, figures")
    p.add_argument("--jobs", type=int, default=1, help="worker processes across layers")
    p.add_argument("--no-figures", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle", help="exhaustive best-support comparison")
    p.add_argument("--data")
    p.add_argument("--layers")
    p.add_argument("--out")
    p.add_argument("--max-rate", type=int, dest="max_rate",
                   help="largest support size to search (default D)")
    p.add_argument("--no-figures", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("efficiency", help="print the bit-width cost model")
    p.add_argument("--bits", help="comma-separated bit widths (default 1..8,32)")
    p.add_argument("--scheme", action="append", help="scheme file; adds its rate row")
    p.add_argument("--out")
    p.add_argument("--figures", action="store_true", help="also render the cost plot")
    p.set_defaults(func=cmd_efficiency)

    p = sub.add_parser("reconstruct", help="apply a stored scheme to one sample")
    p.add_argument("--data", required=True)
    p.add_argument("--scheme", required=True)
    p.add_argument("--sample", type=int, default=1)
    p.add_argument("--out", help="write the reconstruction as .npy")
    p.set_defaults(func=cmd_reconstruct)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DatasetError, SchemeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
