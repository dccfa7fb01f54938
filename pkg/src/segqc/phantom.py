"""Synthetic data: nested-ellipsoid brain phantoms with controlled
segmentation-error injection and ground-truth change masks.

A phantom's anatomy is three nested ellipsoids (WM core inside a GM ribbon
inside a CSF shell) rendered to MRI intensities as class mean x multiplicative
trilinear bias ramp + Gaussian noise, clamped to [0, 1].  Everything is a pure
function of (spec, injection, seed).
"""

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeding import rng_for, subseed
from .volume import (
    LABEL_CSF,
    LABEL_GM,
    LABEL_WM,
    DataFormatError,
    LabelVolume,
    Volume3D,
    load_json,
    load_sqv,
    save_json,
    save_sqv,
)

INJECTION_KINDS = ("DilateWMintoGM", "SwapGMCSFBlob", "DeleteCSFRegion")

# Relative tolerance band on the achieved altered fraction, binding for
# severity >= SEVERITY_FLOOR.
SEVERITY_BAND = 0.30
SEVERITY_FLOOR = 0.005
_MAX_EXTRA_BLOBS = 64


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (64, 64, 64)
    csf_radii: tuple = (26.0, 23.0, 21.0)
    gm_radii: tuple = (21.0, 18.5, 16.5)
    wm_radii: tuple = (13.0, 11.0, 9.5)
    mu_bg: float = 0.05
    mu_csf: float = 0.25
    mu_gm: float = 0.55
    mu_wm: float = 0.85
    noise_sigma: float = 0.02
    bias_amplitude: float = 0.1
    seed: int = 0

    def validate(self):
        if len(self.dims) != 3 or any(int(n) < 8 for n in self.dims):
            raise ValueError(f"phantom dims must be 3 extents >= 8, got {self.dims}")
        for name in ("csf_radii", "gm_radii", "wm_radii"):
            radii = getattr(self, name)
            if len(radii) != 3 or any(r <= 0 for r in radii):
                raise ValueError(f"{name} must be 3 positive semi-axes, got {radii}")
        for a, b in zip(self.wm_radii, self.gm_radii):
            if not a < b:
                raise ValueError(f"WM radii {self.wm_radii} not strictly inside GM {self.gm_radii}")
        for a, b in zip(self.gm_radii, self.csf_radii):
            if not a < b:
                raise ValueError(f"GM radii {self.gm_radii} not strictly inside CSF {self.csf_radii}")
        center = [(n - 1) / 2.0 for n in self.dims]
        for c, r in zip(center, self.csf_radii):
            if r > c:
                raise ValueError(f"CSF radii {self.csf_radii} exceed volume half-extent {center}")
        mus = (self.mu_bg, self.mu_csf, self.mu_gm, self.mu_wm)
        if len(set(mus)) != 4:
            raise ValueError(f"class intensities must be pairwise distinct, got {mus}")
        if any(not 0.0 <= m <= 1.0 for m in mus):
            raise ValueError(f"class intensities must lie in [0,1], got {mus}")
        if self.noise_sigma < 0 or self.bias_amplitude < 0:
            raise ValueError("noise_sigma and bias_amplitude must be >= 0")

    def intensity_lut(self) -> np.ndarray:
        """Class mean per label code (bg, GM, WM, CSF), float32."""
        return np.array([self.mu_bg, self.mu_gm, self.mu_wm, self.mu_csf], dtype=np.float32)


@dataclass(frozen=True)
class ErrorInjection:
    kind: str = "DilateWMintoGM"
    blob_count: int = 1
    radius_range: tuple = (3.0, 6.0)
    severity: float = 0.02

    def validate(self):
        if self.kind not in INJECTION_KINDS:
            raise ValueError(f"unknown injection kind {self.kind!r}; valid: {INJECTION_KINDS}")
        if self.blob_count < 0:
            raise ValueError(f"blob_count must be >= 0, got {self.blob_count}")
        lo, hi = self.radius_range
        if not (0 < lo <= hi):
            raise ValueError(f"radius_range must satisfy 0 < lo <= hi, got {self.radius_range}")
        if not 0.0 <= self.severity <= 1.0:
            raise ValueError(f"severity must lie in [0,1], got {self.severity}")


@dataclass
class PhantomSample:
    mri: Volume3D
    seg_good: LabelVolume
    seg_bad: LabelVolume
    error_mask: Volume3D
    quality_label: int

    def __post_init__(self):
        differs = self.seg_bad.data != self.seg_good.data
        if not np.array_equal(self.error_mask.data != 0, differs):
            raise ValueError("error_mask must be nonzero exactly where seg_bad != seg_good")
        if self.quality_label not in (0, 1):
            raise ValueError(f"quality_label must be 0 or 1, got {self.quality_label}")
        if self.quality_label == 0 and differs.any():
            raise ValueError("quality_label 0 requires seg_bad == seg_good")


def _ellipsoid_mask(dims, radii):
    center = [(n - 1) / 2.0 for n in dims]
    axes = np.ogrid[0:dims[0], 0:dims[1], 0:dims[2]]
    q = sum(((ax - c) / r) ** 2 for ax, c, r in zip(axes, center, radii))
    return q <= 1.0


def generate_anatomy(spec: PhantomSpec):
    """Render one phantom: (LabelVolume, Volume3D), deterministic in spec.seed."""
    spec.validate()
    rng = rng_for(spec.seed)
    dims = tuple(int(n) for n in spec.dims)

    labels = np.zeros(dims, dtype=np.uint8)
    labels[_ellipsoid_mask(dims, spec.csf_radii)] = LABEL_CSF
    labels[_ellipsoid_mask(dims, spec.gm_radii)] = LABEL_GM
    labels[_ellipsoid_mask(dims, spec.wm_radii)] = LABEL_WM

    direction = rng.normal(size=3)
    norm = np.linalg.norm(direction)
    direction = direction / norm if norm > 0 else np.array([1.0, 0.0, 0.0])

    mri = spec.intensity_lut()[labels]
    if spec.bias_amplitude > 0:
        axes = np.ogrid[0:dims[0], 0:dims[1], 0:dims[2]]
        ramp = sum(
            d * (ax / max(n - 1, 1) - 0.5) for d, ax, n in zip(direction, axes, dims)
        )
        peak = np.abs(ramp).max()
        if peak > 0:
            ramp = ramp / peak
        mri = mri * (1.0 + spec.bias_amplitude * ramp)
    if spec.noise_sigma > 0:
        mri = mri + rng.normal(0.0, spec.noise_sigma, size=dims)
    if spec.bias_amplitude > 0 or spec.noise_sigma > 0:
        mri = np.clip(mri, 0.0, 1.0).astype(np.float32)

    return LabelVolume(labels), Volume3D(mri)


def _neighbor_of(mask):
    """Voxels with a 6-neighbor inside ``mask``."""
    out = np.zeros_like(mask)
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        out[tuple(lo)] |= mask[tuple(hi)]
        out[tuple(hi)] |= mask[tuple(lo)]
    return out


def _center_candidates(labels, kind):
    if kind == "DilateWMintoGM":
        cand = (labels == LABEL_GM) & _neighbor_of(labels == LABEL_WM)
    elif kind == "SwapGMCSFBlob":
        cand = (labels == LABEL_GM) & _neighbor_of(labels == LABEL_CSF)
    else:  # DeleteCSFRegion
        cand = labels == LABEL_CSF
    return np.argwhere(cand)


def _apply_blob(labels, kind, center, radius):
    """Flip the kind's eligible voxels within a ball; returns a new array."""
    dims = labels.shape
    lo = [max(0, int(np.floor(c - radius))) for c in center]
    hi = [min(n, int(np.ceil(c + radius)) + 1) for c, n in zip(center, dims)]
    box = tuple(slice(a, b) for a, b in zip(lo, hi))
    axes = np.ogrid[box[0], box[1], box[2]]
    ball = sum((ax - c) ** 2 for ax, c in zip(axes, center)) <= radius**2
    region = labels[box]
    patch = region.copy()
    if kind == "DilateWMintoGM":
        patch[ball & (region == LABEL_GM)] = LABEL_WM
    elif kind == "SwapGMCSFBlob":
        patch[ball & (region == LABEL_GM)] = LABEL_CSF
        patch[ball & (region == LABEL_CSF)] = LABEL_GM
    else:
        patch[ball & (region == LABEL_CSF)] = 0
    out = labels.copy()
    out[box] = patch
    return out


def inject_errors(seg: LabelVolume, inj: ErrorInjection, seed: int):
    """Corrupt a segmentation; returns (LabelVolume, binary change-mask Volume3D).

    Places ``blob_count`` blobs with radii from ``radius_range``.  For
    severity >= 0.005 the achieved altered fraction of brain voxels must land
    within +/-30% (relative) of ``severity``: blobs are budget-sized, extra
    blobs are added below the band, and a blob that would overshoot the band
    is shrunk within the radius range or dropped.  Unreachable bands raise
    with the achieved fraction.  Severity 0 or blob_count 0 is a no-op.
    """
    inj.validate()
    original = seg.data
    n_brain = int((original != 0).sum())
    if n_brain == 0:
        raise ValueError("segmentation has no brain voxels to corrupt")

    if inj.severity == 0.0 or inj.blob_count == 0:
        return (
            LabelVolume(original.copy(), spacing=seg.spacing),
            Volume3D(np.zeros(original.shape, dtype=np.float32), spacing=seg.spacing),
        )

    rng = rng_for(seed)
    lo_r, hi_r = float(inj.radius_range[0]), float(inj.radius_range[1])
    banded = inj.severity >= SEVERITY_FLOOR
    target = inj.severity * n_brain
    band_lo = (1.0 - SEVERITY_BAND) * target
    band_hi = (1.0 + SEVERITY_BAND) * target

    candidates = _center_candidates(original, inj.kind)
    if len(candidates) == 0:
        raise ValueError(f"no eligible voxels for injection kind {inj.kind}")

    labels = original.copy()
    altered = 0
    placed = 0
    while placed < inj.blob_count or (banded and altered < band_lo):
        if placed >= inj.blob_count + _MAX_EXTRA_BLOBS:
            raise ValueError(
                f"severity {inj.severity} unreachable with blob radius range "
                f"{inj.radius_range}: achieved fraction {altered / n_brain:.6f} "
                f"after {placed} blobs"
            )
        if banded:
            remaining = max(target - altered, 0.0)
            blobs_left = max(inj.blob_count - placed, 1)
            # rough half-eligibility inside a boundary-centered ball
            r_budget = (remaining / blobs_left * 3.0 / (4.0 * np.pi * 0.5)) ** (1.0 / 3.0)
            radius = float(np.clip(r_budget, lo_r, hi_r))
        else:
            radius = float(rng.uniform(lo_r, hi_r))
        center = candidates[int(rng.integers(len(candidates)))]

        applied = False
        while True:
            tentative = _apply_blob(labels, inj.kind, center, radius)
            new_altered = int((tentative != original).sum())
            if banded and new_altered > band_hi:
                if radius > lo_r:
                    radius = max(radius * 0.8, lo_r)
                    continue
                if altered >= band_lo:
                    break  # band already met; drop the overshooting blob
                raise ValueError(
                    f"severity {inj.severity} unreachable with blob radius range "
                    f"{inj.radius_range}: achieved fraction {altered / n_brain:.6f}, "
                    f"smallest blob overshoots the band"
                )
            labels = tentative
            altered = new_altered
            applied = True
            break
        placed += 1
        if not applied and banded and altered >= band_lo:
            break

    if banded and not (band_lo <= altered <= band_hi):
        raise ValueError(
            f"severity {inj.severity} unreachable: achieved fraction "
            f"{altered / n_brain:.6f} outside +/-30% band"
        )

    mask = (labels != original).astype(np.float32)
    return LabelVolume(labels, spacing=seg.spacing), Volume3D(mask, spacing=seg.spacing)


def _jitter_radii(radii, rng, scale=1.5):
    return tuple(float(r + rng.uniform(-scale, scale)) for r in radii)


def generate_sample(spec: PhantomSpec, inj: ErrorInjection, master_seed: int,
                    index: int, bad: bool) -> PhantomSample:
    """Sample ``index`` of a dataset: jittered anatomy, optional corruption."""
    jit = rng_for(master_seed, index, 0)
    spec_i = dataclasses.replace(
        spec,
        csf_radii=_jitter_radii(spec.csf_radii, jit),
        gm_radii=_jitter_radii(spec.gm_radii, jit),
        wm_radii=_jitter_radii(spec.wm_radii, jit),
        seed=subseed(master_seed, index, 1),
    )
    seg_good, mri = generate_anatomy(spec_i)
    if bad:
        seg_bad, mask = inject_errors(seg_good, inj, subseed(master_seed, index, 2))
    else:
        seg_bad = LabelVolume(seg_good.data.copy(), spacing=seg_good.spacing)
        mask = Volume3D(np.zeros(seg_good.dims, dtype=np.float32))
    return PhantomSample(mri, seg_good, seg_bad, mask, int(bad))


def make_dataset(n_good: int, n_bad: int, spec: PhantomSpec, inj: ErrorInjection,
                 seed: int, out_dir) -> dict:
    """Write SQV volumes + manifest.json for a balanced-by-construction dataset.

    Sample i is good for i < n_good, bad after.  The manifest echoes the spec
    and injection, records per-sample sub-seeds, and lists file paths relative
    to its own directory.
    """
    if n_good < 0 or n_bad < 0:
        raise ValueError("n_good and n_bad must be >= 0")
    spec.validate()
    inj.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    samples = []
    for index in range(n_good + n_bad):
        bad = index >= n_good
        sample = generate_sample(spec, inj, seed, index, bad)
        sid = f"s{index:04d}"
        paths = {
            "mri_path": f"{sid}_mri.sqv",
            "seg_good_path": f"{sid}_seg_good.sqv",
            "seg_bad_path": f"{sid}_seg_bad.sqv",
            "mask_path": f"{sid}_mask.sqv",
        }
        save_sqv(sample.mri, out_dir / paths["mri_path"])
        save_sqv(sample.seg_good, out_dir / paths["seg_good_path"])
        save_sqv(sample.seg_bad, out_dir / paths["seg_bad_path"])
        save_sqv(sample.error_mask, out_dir / paths["mask_path"])
        samples.append({
            "id": sid,
            **paths,
            "label": sample.quality_label,
            "seed": subseed(seed, index),
        })

    manifest = {
        "spec": dataclasses.asdict(spec),
        "injection": dataclasses.asdict(inj),
        "seed": seed,
        "samples": samples,
    }
    save_json(manifest, out_dir / "manifest.json")
    return manifest


def load_manifest(path) -> dict:
    manifest = load_json(path)
    if not isinstance(manifest, dict) or "samples" not in manifest:
        raise DataFormatError(f"{path}: manifest missing 'samples'")
    return manifest


def load_sample(manifest_dir, entry) -> PhantomSample:
    base = Path(manifest_dir)
    return PhantomSample(
        mri=load_sqv(base / entry["mri_path"]),
        seg_good=load_sqv(base / entry["seg_good_path"]),
        seg_bad=load_sqv(base / entry["seg_bad_path"]),
        error_mask=load_sqv(base / entry["mask_path"]),
        quality_label=int(entry["label"]),
    )
