"""Synthetic phantom volumes, the on-disk volume format, splits, checkpoints.

Volume format: a text sidecar header ``<base>.json`` describing shape,
element type, byte order, spacing and class count, next to a raw
little-endian payload ``<base>.raw`` (float32 intensities, uint8 labels).
Checkpoints are one file: magic, an 8-byte little-endian header length, a
JSON manifest (tensor names, shapes, dtypes, offsets, sha256) and the
concatenated raw little-endian tensor payloads.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError
from .model import ModelConfig, SegModel
from .tensor import Tensor

CHECKPOINT_MAGIC = b"AFNOSEG1\n"

_ELEM_TYPES = {"float32": np.dtype("<f4"), "uint8": np.dtype("|u1")}
_SHAPE_KINDS = ("ellipsoid", "box", "tube")


@dataclass(frozen=True)
class PhantomSpec:
    """Procedural phantom description; later shapes overwrite earlier ones."""

    grid: tuple[int, int, int] = (16, 16, 16)
    num_classes: int = 2
    count_range: tuple[int, int] = (1, 3)
    radius_range: tuple[int, int] = (3, 6)
    kinds: tuple[str, ...] = _SHAPE_KINDS
    class_means: tuple[float, ...] | None = None
    class_sigma: float = 0.05
    noise_sigma: float = 0.02
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0

    def means(self) -> np.ndarray:
        if self.class_means is not None:
            if len(self.class_means) != self.num_classes:
                raise ConfigError(
                    f"data.class_means: expected {self.num_classes} values, "
                    f"got {len(self.class_means)}"
                )
            return np.asarray(self.class_means, dtype=np.float64)
        return np.linspace(0.15, 0.85, self.num_classes)


def validate_phantom_spec(spec: PhantomSpec, field_prefix: str = "data"):
    def err(name, msg):
        raise ConfigError(f"{field_prefix}.{name}: {msg}")

    if len(spec.grid) != 3 or any(g < 1 for g in spec.grid):
        err("grid", f"must be 3 positive extents, got {spec.grid!r}")
    if spec.grid[2] % 2:
        err("grid", f"width {spec.grid[2]} must be even (half-spectrum constraint)")
    if spec.num_classes < 2:
        err("num_classes", f"must be >= 2, got {spec.num_classes}")
    if spec.count_range[0] < 0 or spec.count_range[1] < spec.count_range[0]:
        err("count_range", f"must be a non-negative range, got {spec.count_range!r}")
    if spec.radius_range[0] < 1 or spec.radius_range[1] < spec.radius_range[0]:
        err("radius_range", f"must be a positive range, got {spec.radius_range!r}")
    if spec.radius_range[0] > min(spec.grid):
        err("radius_range",
            f"minimum radius {spec.radius_range[0]} exceeds the grid {spec.grid}: "
            "impossible geometry")
    for k in spec.kinds:
        if k not in _SHAPE_KINDS:
            err("kinds", f"unknown shape kind {k!r}")
    if spec.class_sigma < 0 or spec.noise_sigma < 0:
        err("class_sigma", "noise levels must be >= 0")
    spec.means()


def _rasterize(kind: str, mask_shape, center, radii, axis, rng) -> np.ndarray:
    d, h, w = mask_shape
    zz, yy, xx = np.meshgrid(np.arange(d), np.arange(h), np.arange(w),
                             indexing="ij")
    cz, cy, cx = center
    rz, ry, rx = radii
    if kind == "ellipsoid":
        q = (((zz - cz) / rz) ** 2 + ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
        return q <= 1.0
    if kind == "box":
        return ((np.abs(zz - cz) <= rz) & (np.abs(yy - cy) <= ry)
                & (np.abs(xx - cx) <= rx))
    # tube: a cylinder along one grid axis
    coords = (zz, yy, xx)
    centers = (cz, cy, cx)
    radials = [i for i in range(3) if i != axis]
    r = min(radii[radials[0]], radii[radials[1]])
    half_len = radii[axis]
    radial = sum(((coords[i] - centers[i]) / r) ** 2 for i in radials)
    return (radial <= 1.0) & (np.abs(coords[axis] - centers[axis]) <= half_len)


def generate_phantom(spec: PhantomSpec, sample_seed: int | None = None):
    """Deterministic (volume, mask) pair: float32 intensities, uint8 labels."""
    validate_phantom_spec(spec)
    seed = spec.seed if sample_seed is None else sample_seed
    rng = np.random.default_rng([seed, 0x70686E74])
    d, h, w = spec.grid
    mask = np.zeros(spec.grid, dtype=np.uint8)
    for cls in range(1, spec.num_classes):
        count = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))
        for _ in range(count):
            kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
            radii = rng.integers(spec.radius_range[0], spec.radius_range[1] + 1,
                                 size=3)
            center = [int(rng.integers(0, extent)) for extent in spec.grid]
            axis = int(rng.integers(3))
            region = _rasterize(kind, spec.grid, center, radii.astype(float),
                                axis, rng)
            mask[region] = cls
    means = spec.means()
    volume = means[mask].astype(np.float64)
    if spec.class_sigma > 0:
        volume += spec.class_sigma * rng.standard_normal(spec.grid)
    if spec.noise_sigma > 0:
        volume += spec.noise_sigma * rng.standard_normal(spec.grid)
    return volume.astype(np.float32), mask


# ---------------------------------------------------------------------------
# volume files


def write_volume(base_path, array: np.ndarray, spacing=(1.0, 1.0, 1.0),
                 num_classes: int | None = None) -> Path:
    """Write a volume or label mask as sidecar header + raw payload."""
    base = Path(base_path)
    if array.size == 0 or any(s == 0 for s in array.shape):
        raise FormatError(f"refusing to write empty shape {array.shape}")
    if array.dtype == np.uint8:
        elem = "uint8"
    elif array.dtype == np.float32:
        elem = "float32"
    else:
        raise FormatError(f"unsupported element type {array.dtype}")
    payload = np.ascontiguousarray(array, dtype=_ELEM_TYPES[elem])
    header = {
        "shape": list(array.shape),
        "elem": elem,
        "byte_order": "little",
        "spacing": list(spacing),
        "num_classes": num_classes,
    }
    base.with_suffix(".raw").write_bytes(payload.tobytes())
    base.with_suffix(".json").write_text(json.dumps(header, indent=1) + "\n")
    return base


def read_volume(base_path):
    """Read a volume written by :func:`write_volume`; returns (array, header)."""
    base = Path(base_path)
    header_path = base.with_suffix(".json")
    payload_path = base.with_suffix(".raw")
    if not header_path.exists():
        raise FormatError(f"missing header file {header_path}")
    try:
        header = json.loads(header_path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"unparseable header {header_path}: {e}") from e
    for key in ("shape", "elem", "byte_order"):
        if key not in header:
            raise FormatError(f"header {header_path} missing field {key!r}")
    if header["byte_order"] != "little":
        raise FormatError(f"unsupported byte order {header['byte_order']!r}")
    if header["elem"] not in _ELEM_TYPES:
        raise FormatError(f"unknown element type {header['elem']!r}")
    shape = tuple(int(s) for s in header["shape"])
    if any(s < 1 for s in shape):
        raise FormatError(f"non-positive extent in shape {shape}")
    dtype = _ELEM_TYPES[header["elem"]]
    expected = int(np.prod(shape)) * dtype.itemsize
    raw = payload_path.read_bytes()
    if len(raw) != expected:
        raise FormatError(
            f"payload {payload_path} has {len(raw)} bytes, header implies {expected}"
        )
    return np.frombuffer(raw, dtype=dtype).reshape(shape).copy(), header


# ---------------------------------------------------------------------------
# datasets


@dataclass
class Dataset:
    samples: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    num_classes: int = 2

    def __len__(self):
        return len(self.samples)


def generate_dataset(spec: PhantomSpec, n_samples: int) -> Dataset:
    """n deterministic phantoms with per-sample seeds derived from the master."""
    if n_samples < 1:
        raise ConfigError(f"data.n_samples: must be >= 1, got {n_samples}")
    ds = Dataset(spacing=spec.spacing, num_classes=spec.num_classes)
    for i in range(n_samples):
        vol, mask = generate_phantom(spec, sample_seed=spec.seed * 100003 + i)
        ds.samples.append((vol, mask))
    return ds


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_dataset(ds: Dataset, out_dir, spec: PhantomSpec | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, (vol, mask) in enumerate(ds.samples):
        vbase = out / f"vol_{i:04d}"
        mbase = out / f"mask_{i:04d}"
        write_volume(vbase, vol, ds.spacing, ds.num_classes)
        write_volume(mbase, mask, ds.spacing, ds.num_classes)
        entries.append({
            "volume": vbase.name,
            "mask": mbase.name,
            "sha256_volume": _sha256(vbase.with_suffix(".raw")),
            "sha256_mask": _sha256(mbase.with_suffix(".raw")),
        })
    manifest = {
        "n_samples": len(ds.samples),
        "num_classes": ds.num_classes,
        "spacing": list(ds.spacing),
        "phantom_spec": asdict(spec) if spec is not None else None,
        "samples": entries,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def load_dataset(data_dir) -> Dataset:
    root = Path(data_dir)
    manifest_path = root / "manifest.json"
    if not root.is_dir():
        raise FormatError(f"dataset directory {root} does not exist")
    if not manifest_path.exists():
        raise FormatError(f"dataset manifest {manifest_path} does not exist")
    manifest = json.loads(manifest_path.read_text())
    if not manifest.get("samples"):
        raise FormatError(f"no samples listed in {manifest_path}")
    ds = Dataset(spacing=tuple(manifest.get("spacing", (1.0, 1.0, 1.0))),
                 num_classes=int(manifest.get("num_classes", 2)))
    for entry in manifest["samples"]:
        vol, _ = read_volume(root / entry["volume"])
        mask, _ = read_volume(root / entry["mask"])
        ds.samples.append((vol, mask))
    return ds


def make_splits(n_samples: int, train_fraction: float, seed: int):
    """Disjoint, exhaustive, seeded-shuffled (train, test) index lists."""
    if not 0 < train_fraction < 1:
        raise ConfigError(
            f"data.train_fraction: must lie in (0, 1), got {train_fraction}"
        )
    if n_samples < 2:
        raise ConfigError(
            f"data.n_samples: {n_samples} is too small to give both splits >= 1 sample"
        )
    n_train = int(round(train_fraction * n_samples))
    n_train = min(max(n_train, 1), n_samples - 1)
    order = np.random.default_rng([seed, 0x73706C74]).permutation(n_samples)
    return sorted(int(i) for i in order[:n_train]), sorted(int(i) for i in order[n_train:])


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: SegModel, extra: dict | None = None) -> Path:
    path = Path(path)
    tensors: list[tuple[str, np.ndarray]] = []
    for name, t in model.named_parameters():
        tensors.append((name, t.data))
    buffer_names = set()
    for name, buf in model.named_buffers():
        tensors.append((name, buf))
        buffer_names.add(name)
    manifest = {
        "model_config": asdict(model.config),
        "precision": 64 if model.dtype == np.float64 else 32,
        "extra": extra or {},
        "tensors": [],
        "buffers": sorted(buffer_names),
    }
    offset = 0
    blobs = []
    for name, arr in tensors:
        blob = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes()
        manifest["tensors"].append({
            "name": name,
            "shape": list(arr.shape),
            "dtype": str(arr.dtype),
            "offset": offset,
            "nbytes": len(blob),
            "sha256": hashlib.sha256(blob).hexdigest(),
        })
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(manifest).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for blob in blobs:
            f.write(blob)
    return path


def read_checkpoint(path):
    """Returns (manifest dict, {tensor name: ndarray})."""
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise FormatError(f"{path} is not a checkpoint (bad magic)")
    hlen_at = len(CHECKPOINT_MAGIC)
    header_len = int.from_bytes(raw[hlen_at: hlen_at + 8], "little")
    body_at = hlen_at + 8
    try:
        manifest = json.loads(raw[body_at: body_at + header_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"unparseable checkpoint manifest in {path}: {e}") from e
    payload = raw[body_at + header_len:]
    arrays = {}
    for entry in manifest["tensors"]:
        start, n = entry["offset"], entry["nbytes"]
        if start + n > len(payload):
            raise FormatError(
                f"checkpoint {path} truncated: tensor {entry['name']} needs bytes "
                f"[{start}, {start + n}) of {len(payload)}"
            )
        blob = payload[start: start + n]
        arrays[entry["name"]] = np.frombuffer(
            blob, dtype=np.dtype(entry["dtype"]).newbyteorder("<")
        ).reshape(entry["shape"]).copy()
    return manifest, arrays


def load_model(path) -> SegModel:
    manifest, arrays = read_checkpoint(path)
    cfg_dict = dict(manifest["model_config"])
    for key in ("stage_dims", "depths", "strides", "afno_blocks", "heads"):
        cfg_dict[key] = tuple(cfg_dict[key])
    cfg = ModelConfig(**cfg_dict)
    model = SegModel.build(cfg, seed=0, precision=manifest.get("precision", 32))
    buffers = {n: arrays[n] for n in manifest.get("buffers", []) if n in arrays}
    params = {n: a for n, a in arrays.items() if n not in buffers}
    model.load_state(params, buffers)
    return model
