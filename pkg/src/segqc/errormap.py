"""3D error maps: per-view normalized slice differences aggregated and
post-processed (threshold, then Gaussian smoothing).

For each view, every MRI slice is compared against the slice reconstructed
from the matching segmentation slice; the absolute difference of the two
intensity-normalized slices fills that view's buffer.  The final map is the
arithmetic mean of the three per-view buffers, so values stay in [0, 1] and
the result is independent of slice/view processing order.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .recon import Reconstructor, encode_onehot, reconstruct
from .volume import (
    LabelVolume,
    Slice2D,
    ViewAxis,
    Volume3D,
    extract_slice,
    gaussian_smooth,
    load_json,
    load_sqv,
    normalize_slice,
    save_json,
    save_sqv,
    write_pgm,
)

VIEW_ORDER = (ViewAxis.AXIAL, ViewAxis.CORONAL, ViewAxis.SAGITTAL)


@dataclass(frozen=True)
class PostprocessConfig:
    threshold: float = 0.15
    sigma: float = 1.0

    def validate(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in [0,1], got {self.threshold}")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass
class ErrorMap:
    volume: Volume3D
    provenance: dict

    @property
    def dims(self):
        return self.volume.dims


def slice_difference(orig: Slice2D, gen: Slice2D) -> Slice2D:
    """|normalize(orig) - normalize(gen)| elementwise; values in [0, 1]."""
    if orig.dims != gen.dims:
        raise ValueError(f"slice dims mismatch: {orig.dims} vs {gen.dims}")
    a = normalize_slice(orig).data
    b = normalize_slice(gen).data
    return Slice2D(np.abs(a - b))


def build_error_map(mri: Volume3D, seg: LabelVolume, recon: Reconstructor) -> ErrorMap:
    """Mean over views of per-slice |normalized MRI - normalized recon|."""
    if mri.dims != seg.dims:
        raise ValueError(f"MRI dims {mri.dims} != segmentation dims {seg.dims}")
    buffers = {}
    for view in VIEW_ORDER:
        buf = np.zeros(mri.dims, dtype=np.float32)
        extent = mri.dims[view.stack_axis]
        index = [slice(None)] * 3
        for k in range(extent):
            try:
                onehot = encode_onehot(extract_slice(seg, view, k))
                gen = reconstruct(recon, onehot, view)
            except Exception as exc:
                raise RuntimeError(
                    f"reconstruction failed at {view.value} slice {k}: {exc}") from exc
            diff = slice_difference(extract_slice(mri, view, k), gen)
            index[view.stack_axis] = k
            buf[tuple(index)] = diff.data
        buffers[view] = buf
    total = (buffers[ViewAxis.AXIAL] + buffers[ViewAxis.CORONAL]
             + buffers[ViewAxis.SAGITTAL]) / np.float32(3.0)
    provenance = {
        "reconstructor": getattr(recon, "name", type(recon).__name__),
        "postprocess": None,
    }
    return ErrorMap(Volume3D(total, spacing=mri.spacing), provenance)


def postprocess(em: ErrorMap, cfg: PostprocessConfig) -> ErrorMap:
    """Zero voxels below the threshold, then Gaussian-smooth (in that order)."""
    cfg.validate()
    vals = em.volume.data
    kept = np.where(vals < np.float32(cfg.threshold), np.float32(0.0), vals)
    smoothed = gaussian_smooth(
        Volume3D(kept, spacing=em.volume.spacing, meta=dict(em.volume.meta)), cfg.sigma)
    provenance = dict(em.provenance)
    provenance["postprocess"] = {"threshold": cfg.threshold, "sigma": cfg.sigma}
    return ErrorMap(smoothed, provenance)


def save_error_map(em: ErrorMap, path) -> None:
    """SQV volume plus a JSON sidecar at <path>.json with the provenance."""
    path = Path(path)
    save_sqv(em.volume, path)
    save_json({"dims": list(em.dims), "provenance": em.provenance},
              path.with_name(path.name + ".json"))


def load_error_map(path) -> ErrorMap:
    path = Path(path)
    vol = load_sqv(path)
    if not isinstance(vol, Volume3D):
        raise ValueError(f"{path}: error map must be a scalar volume")
    sidecar = path.with_name(path.name + ".json")
    provenance = {}
    if sidecar.exists():
        provenance = load_json(sidecar).get("provenance", {})
    return ErrorMap(vol, provenance)


def export_view_pgms(vol: Volume3D, view: ViewAxis, out_dir, prefix: str = "slice"):
    """One 8-bit PGM per slice along the view; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k in range(vol.dims[view.stack_axis]):
        p = out_dir / f"{prefix}_{view.value}_{k:04d}.pgm"
        write_pgm(extract_slice(vol, view, k), p)
        paths.append(p)
    return paths
