"""Raw tensor files, PGM previews and the dataset manifest."""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .synthetic import SPLITS, Dataset, DatasetSpec, Sample

TENSOR_MAGIC = b"LETEN1\n"
MANIFEST_FIELDS = ("id", "image_path", "mask_path", "split", "tags")


def write_tensor(path: str | Path, arr: np.ndarray) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = TENSOR_MAGIC + struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    Path(path).write_bytes(head + arr.tobytes())


def read_tensor(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if not blob.startswith(TENSOR_MAGIC):
        raise ValueError(f"{path}: not a tensor file")
    pos = len(TENSOR_MAGIC)
    (rank,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    shape = struct.unpack_from(f"<{rank}I", blob, pos)
    pos += 4 * rank
    count = int(np.prod(shape)) if rank else 1
    if len(blob) - pos != 8 * count:
        raise ValueError(f"{path}: payload size does not match shape {shape}")
    return np.frombuffer(blob, dtype="<f8", offset=pos).reshape(shape).astype(np.float64)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    """8-bit binary PGM, min-max scaled."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 3:
        img = img[0]
    lo, hi = img.min(), img.max()
    scaled = np.zeros_like(img) if hi == lo else (img - lo) / (hi - lo)
    px = np.round(scaled * 255).astype(np.uint8)
    h, w = px.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    parts = blob.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval > 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def save_dataset(ds: Dataset, root: str | Path, previews: bool = False) -> Path:
    """Write every sample plus ``manifest.csv``; returns the manifest path."""
    root = Path(root)
    rows = []
    for split in SPLITS:
        folder = root / split
        folder.mkdir(parents=True, exist_ok=True)
        for s in ds.splits.get(split, []):
            img_path = folder / f"{s.id}_image.ten"
            mask_path = folder / f"{s.id}_mask.ten"
            write_tensor(img_path, s.image)
            write_tensor(mask_path, s.mask.astype(np.float64))
            if previews:
                write_pgm(folder / f"{s.id}_image.pgm", s.image)
            rows.append({
                "id": s.id,
                "image_path": img_path.relative_to(root).as_posix(),
                "mask_path": mask_path.relative_to(root).as_posix(),
                "split": split,
                "tags": ";".join(sorted(s.tags)),
            })
    manifest = root / "manifest.csv"
    with manifest.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return manifest


def load_dataset(root: str | Path, spec: DatasetSpec | None = None) -> Dataset:
    root = Path(root)
    ds = Dataset(spec or DatasetSpec(), {s: [] for s in SPLITS})
    with (root / "manifest.csv").open(newline="") as fh:
        for row in csv.DictReader(fh):
            tags = frozenset(t for t in row["tags"].split(";") if t)
            mask = read_tensor(root / row["mask_path"])
            sample = Sample(
                image=read_tensor(root / row["image_path"]),
                mask=np.rint(mask).astype(np.int64),
                id=row["id"],
                tags=tags,
            )
            ds.splits[row["split"]].append(sample)
    return ds
