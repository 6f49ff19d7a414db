"""Export post-activation tensors into the shared container format.

The container is the same text-manifest-plus-raw-payload layout the
quantization toolkit reads: `manifest.txt` with `version`, `num_layers`,
`num_samples`, `dtype = f32le`, `order = c` and per-layer `shape_l` /
`file_l` entries, each payload a C-order little-endian float32 array of
shape (num_samples, P, Q, K). Layer l is capture point number l of the
export spec; activations leave the network as (channels, height, width)
and are stored as (P, Q, K) = (height, width, channels).

Exports are deterministic: weights and inputs are seeded, inference runs
single-threaded one sample at a time, so the same spec always produces
bit-identical files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .model import MODELS, build_model, input_sample

MANIFEST_NAME = "manifest.txt"
MANIFEST_VERSION = 1


class ExporterError(ValueError):
    """Bad export spec or unwritable output."""


@dataclass(frozen=True)
class ExportSpec:
    """What to export: which model, which post-activation points, how many samples."""

    model_id: str
    captures: tuple[str, ...]
    num_samples: int
    out_dir: Path

    def __post_init__(self):
        object.__setattr__(self, "captures", tuple(self.captures))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.model_id not in MODELS:
            raise ExporterError(f"unknown model {self.model_id!r}; "
                                f"available: {', '.join(sorted(MODELS))}")
        known = MODELS[self.model_id].captures
        for name in self.captures:
            if name not in known:
                raise ExporterError(f"unknown capture point {name!r}; "
                                    f"available: {', '.join(known)}")
        if not self.captures:
            raise ExporterError("no capture points given")
        if len(set(self.captures)) != len(self.captures):
            raise ExporterError(f"duplicate capture points in {self.captures}")
        if self.num_samples < 1:
            raise ExporterError(f"num_samples must be >= 1, got {self.num_samples}")


def _format_manifest(spec: ExportSpec, shapes: list[tuple[int, int, int]]) -> str:
    lines = [
        "# activation export",
        f"# model = {spec.model_id}",
    ]
    lines += [f"# capture_{i} = {name}" for i, name in enumerate(spec.captures, start=1)]
    lines += [
        f"version = {MANIFEST_VERSION}",
        f"num_layers = {len(spec.captures)}",
        f"num_samples = {spec.num_samples}",
        "dtype = f32le",
        "order = c",
    ]
    for i, (p, q, k) in enumerate(shapes, start=1):
        lines.append(f"shape_{i} = {p},{q},{k}")
        lines.append(f"file_{i} = layer_{i}.bin")
    return "\n".join(lines) + "\n"


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def export_activations(spec: ExportSpec) -> Path:
    """Run the model over the canonical input stream and write the container.

    Returns the output directory. Raises ExporterError for a bad spec and
    OSError if the directory cannot be written.
    """
    entry = MODELS[spec.model_id]
    model = build_model(spec.model_id)

    grabbed: dict[str, torch.Tensor] = {}

    def _hook(name):
        def fn(_module, _inputs, output):
            grabbed[name] = output.detach()
        return fn

    handles = [model.get_submodule(entry.captures[name]).register_forward_hook(_hook(name))
               for name in spec.captures]

    # Per-capture list of (P, Q, K) float32 arrays, one per sample.
    stacks: dict[str, list[np.ndarray]] = {name: [] for name in spec.captures}
    threads = torch.get_num_threads()
    torch.set_num_threads(1)
    try:
        with torch.no_grad():
            for i in range(1, spec.num_samples + 1):
                grabbed.clear()
                model(input_sample(spec.model_id, i))
                for name in spec.captures:
                    t = grabbed[name].squeeze(0).permute(1, 2, 0).contiguous()
                    stacks[name].append(np.ascontiguousarray(t.numpy(), dtype="<f4"))
    finally:
        torch.set_num_threads(threads)
        for h in handles:
            h.remove()

    spec.out_dir.mkdir(parents=True, exist_ok=True)
    shapes = []
    for i, name in enumerate(spec.captures, start=1):
        block = np.stack(stacks[name])
        shapes.append(tuple(block.shape[1:]))
        _atomic_write(spec.out_dir / f"layer_{i}.bin", block.tobytes(order="C"))
    # Manifest last: a readable manifest implies complete payloads.
    _atomic_write(spec.out_dir / MANIFEST_NAME,
                  _format_manifest(spec, shapes).encode("utf-8"))
    return spec.out_dir
