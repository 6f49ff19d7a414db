"""Activation dataset container: manifest + raw per-layer tensor files.

A dataset is a directory holding one manifest (``key = value`` text) and one
raw binary file per layer with all samples concatenated as little-endian
float32 in C order. Single-tensor NPY v1.0 files are accepted as layer files
and converted on load. Quantization scheme files round-trip through the same
key/value syntax with reals encoded as hex-floats so nothing is ever rounded.
"""

from __future__ import annotations

import ast
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MANIFEST_NAME = "manifest.txt"
MANIFEST_VERSION = 1
SCHEME_VERSION = 1

_NPY_MAGIC = b"\x93NUMPY"


class DatasetError(Exception):
    """Manifest or tensor file failed validation."""


class SchemeError(Exception):
    """Quantization scheme file is malformed or has the wrong version."""


@dataclass(eq=False)
class ActivationTensor:
    """One layer/sample activation block, flattened row-major over (P, Q, K)."""

    layer_id: int
    sample_id: int
    shape: tuple[int, int, int]
    values: np.ndarray  # float32, length P*Q*K

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 1:
            self.values = self.values.reshape(-1)
        expected = int(np.prod(self.shape))
        if any(s <= 0 for s in self.shape) or len(self.shape) != 3:
            raise DatasetError(f"layer {self.layer_id}: shape {self.shape} is not a positive (P, Q, K) triple")
        if self.values.size != expected:
            raise DatasetError(
                f"layer {self.layer_id} sample {self.sample_id}: "
                f"{self.values.size} values, shape {self.shape} needs {expected}"
            )
        finite = np.isfinite(self.values)
        if not finite.all():
            idx = int(np.argmin(finite))
            raise DatasetError(
                f"layer {self.layer_id} sample {self.sample_id}: "
                f"non-finite value {self.values[idx]!r} at flat index {idx}"
            )

    @property
    def size(self) -> int:
        return self.values.size


@dataclass
class LayerSource:
    """Where one layer's samples live on disk."""

    shape: tuple[int, int, int]
    path: Path
    data_offset: int = 0  # byte offset of the first sample (NPY header skip)


@dataclass
class DatasetManifest:
    root: Path
    num_layers: int
    num_samples: int
    layers: dict[int, LayerSource] = field(default_factory=dict)
    dtype: str = "f32le"
    order: str = "c"

    def shape(self, layer_id: int) -> tuple[int, int, int]:
        return self.layers[layer_id].shape


def parse_kv(text: str, *, source: str = "<text>") -> list[tuple[str, str]]:
    """Parse ``key = value`` lines; '#' starts a comment, blank lines skipped."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DatasetError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, _, value = line.partition("=")
        pairs.append((key.strip(), value.strip()))
    return pairs


def format_kv(pairs, comments=()) -> str:
    lines = [f"# {c}" for c in comments]
    lines += [f"{k} = {v}" for k, v in pairs]
    return "\n".join(lines) + "\n"


def atomic_write_bytes(path: Path, data: bytes) -> None:
    """Write via temp file + rename so readers never see partial content."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _require_int(pairs: dict[str, str], key: str, source: str) -> int:
    if key not in pairs:
        raise DatasetError(f"{source}: missing field {key!r}")
    try:
        return int(pairs[key])
    except ValueError:
        raise DatasetError(f"{source}: field {key!r} is not an integer: {pairs[key]!r}") from None


def read_npy_header(path: Path) -> tuple[tuple[int, ...], int]:
    """Validate a strict NPY v1.0 float32/C-order header; return (shape, data offset)."""
    with open(path, "rb") as fh:
        magic = fh.read(6)
        if magic != _NPY_MAGIC:
            raise DatasetError(f"{path}: not an NPY file (bad magic {magic!r})")
        major, minor = fh.read(2)
        if (major, minor) != (1, 0):
            raise DatasetError(f"{path}: unsupported NPY version {major}.{minor}, need 1.0")
        (hlen,) = struct.unpack("<H", fh.read(2))
        header = fh.read(hlen).decode("latin1")
        offset = 6 + 2 + 2 + hlen
    try:
        meta = ast.literal_eval(header)
    except (ValueError, SyntaxError):
        raise DatasetError(f"{path}: unparseable NPY header {header!r}") from None
    if not isinstance(meta, dict) or set(meta) != {"descr", "fortran_order", "shape"}:
        raise DatasetError(f"{path}: malformed NPY header dict {meta!r}")
    if meta["descr"] != "<f4":
        raise DatasetError(f"{path}: unsupported dtype, descr is {meta['descr']!r}, need '<f4'")
    if meta["fortran_order"] is not False:
        raise DatasetError(f"{path}: fortran_order must be False")
    shape = tuple(int(s) for s in meta["shape"])
    return shape, offset


def read_npy(path: Path) -> np.ndarray:
    """Load a strict NPY v1.0 little-endian float32 C-order array."""
    path = Path(path)
    shape, offset = read_npy_header(path)
    count = int(np.prod(shape)) if shape else 1
    with open(path, "rb") as fh:
        fh.seek(offset)
        data = fh.read()
    if len(data) != count * 4:
        raise DatasetError(f"{path}: NPY data holds {len(data)} bytes, shape {shape} needs {count * 4}")
    return np.frombuffer(data, dtype="<f4").reshape(shape)


def load_dataset(manifest_path) -> DatasetManifest:
    """Load and validate a dataset manifest. Tensor data stays on disk."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / MANIFEST_NAME
    if not manifest_path.is_file():
        raise DatasetError(f"manifest not found: {manifest_path}")
    pairs = parse_kv(manifest_path.read_text("utf-8"), source=str(manifest_path))
    kv = dict(pairs)
    if len(kv) != len(pairs):
        dupes = sorted({k for k, _ in pairs if sum(1 for k2, _ in pairs if k2 == k) > 1})
        raise DatasetError(f"{manifest_path}: duplicate fields {dupes}")

    src = str(manifest_path)
    version = _require_int(kv, "version", src)
    if version != MANIFEST_VERSION:
        raise DatasetError(f"{src}: unsupported manifest version {version}")
    num_layers = _require_int(kv, "num_layers", src)
    num_samples = _require_int(kv, "num_samples", src)
    if num_layers < 1 or num_samples < 1:
        raise DatasetError(f"{src}: num_layers and num_samples must be >= 1")
    dtype = kv.get("dtype")
    if dtype != "f32le":
        raise DatasetError(f"{src}: unsupported dtype {dtype!r}, need 'f32le'")
    order = kv.get("order")
    if order != "c":
        raise DatasetError(f"{src}: unsupported order {order!r}, need 'c'")

    known = {"version", "num_layers", "num_samples", "dtype", "order"}
    for key in kv:
        if key in known:
            continue
        kind, _, idx = key.partition("_")
        if kind not in ("shape", "file") or not idx.isdigit():
            raise DatasetError(f"{src}: unknown field {key!r}")
        if not 1 <= int(idx) <= num_layers:
            raise DatasetError(
                f"{src}: layer index {idx} out of the contiguous range 1..{num_layers} (field {key!r})"
            )

    root = manifest_path.parent
    manifest = DatasetManifest(root=root, num_layers=num_layers, num_samples=num_samples,
                               dtype=dtype, order=order)
    for layer_id in range(1, num_layers + 1):
        skey, fkey = f"shape_{layer_id}", f"file_{layer_id}"
        if skey not in kv or fkey not in kv:
            raise DatasetError(f"{src}: layer {layer_id} is missing {skey!r} or {fkey!r} "
                               f"(layer indices must be contiguous from 1)")
        parts = kv[skey].split(",")
        try:
            shape = tuple(int(p) for p in parts)
        except ValueError:
            raise DatasetError(f"{src}: layer {layer_id}: bad shape {kv[skey]!r}") from None
        if len(shape) != 3 or any(s <= 0 for s in shape):
            raise DatasetError(f"{src}: layer {layer_id}: shape must be three positive ints P,Q,K")
        rel = kv[fkey]
        if os.path.isabs(rel):
            raise DatasetError(f"{src}: layer {layer_id}: file path must be relative, got {rel!r}")
        path = root / rel
        if not path.is_file():
            raise DatasetError(f"{src}: layer {layer_id}: missing tensor file {path}")
        expected = num_samples * int(np.prod(shape)) * 4
        if path.suffix == ".npy":
            npy_shape, offset = read_npy_header(path)
            want = (num_samples, *shape)
            if npy_shape != want:
                raise DatasetError(
                    f"{src}: layer {layer_id}: NPY shape {npy_shape} does not match manifest {want}"
                )
            actual = path.stat().st_size - offset
        else:
            offset = 0
            actual = path.stat().st_size
        if actual != expected:
            raise DatasetError(
                f"{src}: layer {layer_id}: tensor file {path.name} holds {actual} bytes, "
                f"expected {expected}"
            )
        manifest.layers[layer_id] = LayerSource(shape=shape, path=path, data_offset=offset)
    return manifest


def read_tensor(manifest: DatasetManifest, layer_id: int, sample_id: int) -> ActivationTensor:
    """Read one sample of one layer; validates finiteness on the way in."""
    if not 1 <= layer_id <= manifest.num_layers:
        raise DatasetError(f"layer_id {layer_id} out of range 1..{manifest.num_layers}")
    if not 1 <= sample_id <= manifest.num_samples:
        raise DatasetError(f"sample_id {sample_id} out of range 1..{manifest.num_samples}")
    layer = manifest.layers[layer_id]
    count = int(np.prod(layer.shape))
    offset = layer.data_offset + (sample_id - 1) * count * 4
    with open(layer.path, "rb") as fh:
        fh.seek(offset)
        raw = fh.read(count * 4)
    if len(raw) != count * 4:
        raise DatasetError(f"layer {layer_id} sample {sample_id}: short read from {layer.path}")
    values = np.frombuffer(raw, dtype="<f4")
    return ActivationTensor(layer_id=layer_id, sample_id=sample_id, shape=layer.shape, values=values)


def read_layer(manifest: DatasetManifest, layer_id: int, num_samples=None) -> list[ActivationTensor]:
    """Read the first `num_samples` samples of a layer (all by default)."""
    n = manifest.num_samples if num_samples is None else min(num_samples, manifest.num_samples)
    return [read_tensor(manifest, layer_id, i) for i in range(1, n + 1)]


def write_container(out_dir, layer_arrays, comments=()) -> Path:
    """Write a dataset container from per-layer (N, P, Q, K) float32 arrays.

    Returns the manifest path. All writes are atomic (temp + rename).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    arrays = [np.ascontiguousarray(a, dtype="<f4") for a in layer_arrays]
    if not arrays:
        raise DatasetError("no layers to write")
    num_samples = arrays[0].shape[0]
    pairs = [("version", str(MANIFEST_VERSION)),
             ("num_layers", str(len(arrays))),
             ("num_samples", str(num_samples))]
    for layer_id, arr in enumerate(arrays, start=1):
        if arr.ndim != 4:
            raise DatasetError(f"layer {layer_id}: array must be (N, P, Q, K), got shape {arr.shape}")
        if arr.shape[0] != num_samples:
            raise DatasetError(f"layer {layer_id}: {arr.shape[0]} samples, expected {num_samples}")
        name = f"layer_{layer_id}.bin"
        atomic_write_bytes(out_dir / name, arr.tobytes(order="C"))
        pairs.append((f"shape_{layer_id}", ",".join(str(s) for s in arr.shape[1:])))
        pairs.append((f"file_{layer_id}", name))
    pairs.append(("dtype", "f32le"))
    pairs.append(("order", "c"))
    manifest_path = out_dir / MANIFEST_NAME
    atomic_write_text(manifest_path, format_kv(pairs, comments))
    return manifest_path


def _hex(x: float) -> str:
    return float(x).hex()


def _unhex(s: str, key: str, source: str) -> float:
    try:
        return float.fromhex(s)
    except ValueError:
        raise SchemeError(f"{source}: field {key!r} is not a hex-float: {s!r}") from None


def write_scheme(scheme, path) -> None:
    """Serialize a QuantScheme; reals go out as hex-floats so read_scheme is exact."""
    from .bottleneck import validate_scheme

    validate_scheme(scheme)
    spec = scheme.spec
    pairs = [
        ("schema_version", str(SCHEME_VERSION)),
        ("layer", str(scheme.layer_id)),
        ("D", str(spec.bits)),
        ("init_quantizer", spec.kind),
        ("clip_lo", _hex(spec.clip_lo)),
        ("clip_hi", _hex(spec.clip_hi)),
        ("scale", _hex(spec.scale)),
    ]
    coeffs = scheme.coeffs
    for j, a in enumerate(coeffs.alpha, start=1):
        pairs.append((f"alpha[{j}]", _hex(a)))
    pairs.append(("support", ",".join(str(j) for j in coeffs.support)))
    pairs.append(("effective_rate", str(scheme.effective_rate)))
    pairs.append(("lambda", _hex(scheme.lam)))
    pairs.append(("residual_sse", _hex(coeffs.residual_sse)))
    pairs.append(("psnr_db", _hex(scheme.psnr_db)))
    pairs.append(("psnr_loss_db", _hex(scheme.psnr_loss_db)))
    pairs.append(("threshold_unmet", "1" if scheme.threshold_unmet else "0"))
    for i, t in enumerate(scheme.t_per_sample, start=1):
        pairs.append((f"t[{i}]", _hex(t)))
    atomic_write_text(Path(path), format_kv(pairs))


def read_scheme(path):
    """Read a QuantScheme file written by write_scheme; bit-exact round trip."""
    from .bitplane_codec import InitQuantizerSpec
    from .bottleneck import QuantScheme
    from .sparse_solver import CoefficientVector

    path = Path(path)
    if not path.is_file():
        raise SchemeError(f"scheme file not found: {path}")
    src = str(path)
    try:
        pairs = parse_kv(path.read_text("utf-8"), source=src)
    except DatasetError as exc:
        raise SchemeError(str(exc)) from None
    kv = dict(pairs)

    version = kv.get("schema_version")
    if version != str(SCHEME_VERSION):
        raise SchemeError(f"{src}: unsupported schema_version {version!r}, expected {SCHEME_VERSION}")
    for key in ("layer", "D", "init_quantizer", "scale", "lambda", "psnr_db", "psnr_loss_db"):
        if key not in kv:
            raise SchemeError(f"{src}: missing field {key!r}")

    bits = int(kv["D"])
    spec = InitQuantizerSpec(
        kind=kv["init_quantizer"],
        bits=bits,
        clip_lo=_unhex(kv["clip_lo"], "clip_lo", src),
        clip_hi=_unhex(kv["clip_hi"], "clip_hi", src),
        scale=_unhex(kv["scale"], "scale", src),
    )
    alpha = np.empty(bits, dtype=np.float64)
    for j in range(1, bits + 1):
        key = f"alpha[{j}]"
        if key not in kv:
            raise SchemeError(f"{src}: missing coefficient {key!r}")
        alpha[j - 1] = _unhex(kv[key], key, src)
    support = tuple(int(s) for s in kv["support"].split(",")) if kv.get("support") else ()
    coeffs = CoefficientVector(
        alpha=alpha,
        support=support,
        lam=_unhex(kv["lambda"], "lambda", src),
        residual_sse=_unhex(kv["residual_sse"], "residual_sse", src),
    )
    t_keys = sorted((k for k in kv if k.startswith("t[")), key=lambda k: int(k[2:-1]))
    t_per_sample = tuple(_unhex(kv[k], k, src) for k in t_keys)
    return QuantScheme(
        layer_id=int(kv["layer"]),
        spec=spec,
        coeffs=coeffs,
        lam=coeffs.lam,
        psnr_db=_unhex(kv["psnr_db"], "psnr_db", src),
        psnr_loss_db=_unhex(kv["psnr_loss_db"], "psnr_loss_db", src),
        t_per_sample=t_per_sample,
        threshold_unmet=kv.get("threshold_unmet", "0") == "1",
    )
