"""Slice reconstructors: segmentation slice -> predicted MRI slice.

One interface, two implementations.  ``OracleRecon`` paints each tissue class
at its known mean intensity — an analytic stand-in that makes ground-truth
pipeline tests possible.  ``GANReconstructor`` wraps three toy pix2pix models
(one per view): a 3-level encoder/decoder generator against a PatchGAN
discriminator, trained with adversarial + L1 loss on (one-hot labels, MRI)
slice pairs.

Inputs are 3-channel one-hot arrays (GM, WM, CSF; background = all zero),
mirroring an RGB rendering of the tissue classes.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .seeding import rng_for, subseed
from .volume import (
    LABEL_CSF,
    LABEL_GM,
    LABEL_WM,
    DataFormatError,
    Slice2D,
    ViewAxis,
    extract_slice,
    load_sqv,
)


def encode_onehot(label_slice: Slice2D) -> np.ndarray:
    """(3, w, h) float32 one-hot of a label slice: channels GM, WM, CSF."""
    codes = label_slice.data
    if not np.isin(codes, (0, LABEL_GM, LABEL_WM, LABEL_CSF)).all():
        bad = sorted(set(np.unique(codes)) - {0, LABEL_GM, LABEL_WM, LABEL_CSF})
        raise ValueError(f"label slice contains invalid codes {bad}")
    return np.stack([
        (codes == LABEL_GM).astype(np.float32),
        (codes == LABEL_WM).astype(np.float32),
        (codes == LABEL_CSF).astype(np.float32),
    ])


def validate_onehot(onehot: np.ndarray) -> np.ndarray:
    onehot = np.asarray(onehot)
    if onehot.ndim != 3 or onehot.shape[0] != 3:
        raise ValueError(f"one-hot slice must be (3, w, h), got {onehot.shape}")
    if not np.isin(onehot, (0.0, 1.0)).all():
        raise ValueError("invalid one-hot encoding: values must be 0 or 1")
    if (onehot.sum(axis=0) > 1).any():
        raise ValueError("invalid one-hot encoding: more than one channel set per pixel")
    return onehot.astype(np.float32, copy=False)


class Reconstructor:
    """Interface: one-hot label slice (3, w, h) -> intensity array (w, h) in [0,1]."""

    name = "reconstructor"

    def reconstruct_slice(self, onehot: np.ndarray, view: ViewAxis | None = None) -> np.ndarray:
        raise NotImplementedError


@dataclass
class OracleRecon(Reconstructor):
    """Paints class mean intensities; exact inverse of noise-free rendering."""

    mu_bg: float = 0.05
    mu_csf: float = 0.25
    mu_gm: float = 0.55
    mu_wm: float = 0.85
    name: str = field(default="oracle", init=False)

    def reconstruct_slice(self, onehot, view=None):
        onehot = validate_onehot(onehot)
        out = np.full(onehot.shape[1:], np.float32(self.mu_bg), dtype=np.float32)
        out[onehot[0] == 1.0] = np.float32(self.mu_gm)
        out[onehot[1] == 1.0] = np.float32(self.mu_wm)
        out[onehot[2] == 1.0] = np.float32(self.mu_csf)
        return out


def reconstruct(model: Reconstructor, onehot, view=None) -> Slice2D:
    """Validated reconstruction: checks encoding, output dims and range."""
    onehot = validate_onehot(np.asarray(onehot))
    out = np.asarray(model.reconstruct_slice(onehot, view))
    if out.shape != onehot.shape[1:]:
        raise ValueError(f"reconstructor returned {out.shape}, expected {onehot.shape[1:]}")
    if not np.isfinite(out).all():
        raise ValueError("reconstructor returned non-finite values")
    if out.min() < -1e-6 or out.max() > 1.0 + 1e-6:
        raise ValueError(f"reconstructor output outside [0,1]: [{out.min()}, {out.max()}]")
    return Slice2D(np.clip(out, 0.0, 1.0).astype(np.float32))


# ---------------------------------------------------------------------------
# Toy pix2pix
# ---------------------------------------------------------------------------

GEN_CHANNELS = (32, 64, 128)
DISC_CHANNELS = (32, 64, 128)


def build_generator(rng, dtype=np.float32) -> nn.Sequential:
    """3 stride-2 down blocks, 2 same-resolution blocks, 3 transposed-conv up
    blocks, tanh rescaled to [0,1].  Input (N, 3, h, w) -> (N, 1, h, w)."""
    c1, c2, c3 = GEN_CHANNELS
    return nn.Sequential([
        nn.Conv(2, 3, c1, 4, stride=2, padding=1, rng=rng, dtype=dtype, name="g_d1"),
        nn.LeakyReLU(0.2),
        nn.Conv(2, c1, c2, 4, stride=2, padding=1, rng=rng, dtype=dtype, name="g_d2"),
        nn.BatchNorm(c2, dtype=dtype, name="g_d2_bn"),
        nn.LeakyReLU(0.2),
        nn.Conv(2, c2, c3, 4, stride=2, padding=1, rng=rng, dtype=dtype, name="g_d3"),
        nn.BatchNorm(c3, dtype=dtype, name="g_d3_bn"),
        nn.LeakyReLU(0.2),
        nn.Conv(2, c3, c3, 3, stride=1, padding=1, rng=rng, dtype=dtype, name="g_m1"),
        nn.BatchNorm(c3, dtype=dtype, name="g_m1_bn"),
        nn.ReLU(),
        nn.Conv(2, c3, c3, 3, stride=1, padding=1, rng=rng, dtype=dtype, name="g_m2"),
        nn.BatchNorm(c3, dtype=dtype, name="g_m2_bn"),
        nn.ReLU(),
        nn.ConvTranspose(2, c3, c2, 4, stride=2, padding=1, rng=rng, dtype=dtype, name="g_u1"),
        nn.BatchNorm(c2, dtype=dtype, name="g_u1_bn"),
        nn.ReLU(),
        nn.ConvTranspose(2, c2, c1, 4, stride=2, padding=1, rng=rng, dtype=dtype, name="g_u2"),
        nn.BatchNorm(c1, dtype=dtype, name="g_u2_bn"),
        nn.ReLU(),
        nn.ConvTranspose(2, c1, 1, 4, stride=2, padding=1, rng=rng, dtype=dtype, name="g_u3"),
        nn.Tanh(),
        nn.Affine(0.5, 0.5),
    ])


def build_discriminator(rng, dtype=np.float32) -> nn.Sequential:
    """PatchGAN on (one-hot, image) channel concat: (N, 4, h, w) -> sigmoid map."""
    c1, c2, c3 = DISC_CHANNELS
    return nn.Sequential([
        nn.Conv(2, 4, c1, 4, stride=2, padding=1, rng=rng, dtype=dtype, name="d_1"),
        nn.LeakyReLU(0.2),
        nn.Conv(2, c1, c2, 4, stride=2, padding=1, rng=rng, dtype=dtype, name="d_2"),
        nn.BatchNorm(c2, dtype=dtype, name="d_2_bn"),
        nn.LeakyReLU(0.2),
        nn.Conv(2, c2, c3, 4, stride=2, padding=1, rng=rng, dtype=dtype, name="d_3"),
        nn.BatchNorm(c3, dtype=dtype, name="d_3_bn"),
        nn.LeakyReLU(0.2),
        nn.Conv(2, c3, 1, 3, stride=1, padding=1, rng=rng, dtype=dtype, name="d_out"),
        nn.Sigmoid(),
    ])


class Pix2PixModel:
    """Generator/discriminator pair for one view."""

    def __init__(self, generator: nn.Sequential, discriminator: nn.Sequential,
                 lambda_l1: float = 100.0):
        self.generator = generator
        self.discriminator = discriminator
        self.lambda_l1 = lambda_l1

    @staticmethod
    def build(seed: int, lambda_l1: float = 100.0) -> "Pix2PixModel":
        rng = rng_for(seed)
        return Pix2PixModel(build_generator(rng), build_discriminator(rng), lambda_l1)

    def generate(self, onehot_batch: np.ndarray, train: bool = False) -> np.ndarray:
        return self.generator.forward(onehot_batch, train=train)


@dataclass(frozen=True)
class ReconTrainConfig:
    slice_fraction: float = 0.10
    epochs: int = 6
    batch_size: int = 4
    lr: float = 2e-4
    lambda_l1: float = 100.0
    seed: int = 0

    def validate(self):
        if not 0.0 < self.slice_fraction <= 1.0:
            raise ValueError(f"slice_fraction must lie in (0,1], got {self.slice_fraction}")
        if self.lambda_l1 < 0:
            raise ValueError(f"lambda_l1 must be >= 0, got {self.lambda_l1}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")


VIEW_ORDER = (ViewAxis.AXIAL, ViewAxis.CORONAL, ViewAxis.SAGITTAL)


def sample_training_slices(manifest: dict, fraction: float, seed: int):
    """Per subject and view, draw round(fraction * extent) slice indices
    uniformly without replacement.  Returns [(view, subject_id, index), ...]."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must lie in (0,1], got {fraction}")
    samples = manifest.get("samples", [])
    if not samples:
        raise ValueError("empty dataset: manifest lists no samples")
    dims = tuple(int(n) for n in manifest["spec"]["dims"])
    rng = rng_for(seed)
    selection = []
    for entry in samples:
        for view in VIEW_ORDER:
            extent = dims[view.stack_axis]
            count = int(math.floor(fraction * extent + 0.5))
            if count == 0:
                continue
            picks = sorted(int(i) for i in rng.choice(extent, size=count, replace=False))
            selection.extend((view, entry["id"], k) for k in picks)
    return selection


def build_training_pairs(manifest: dict, manifest_dir, selection):
    """Load the selected slices: {view: [(label Slice2D, mri Slice2D), ...]}.

    Labels come from each sample's good segmentation; targets from its MRI.
    """
    base = Path(manifest_dir)
    by_id = {e["id"]: e for e in manifest["samples"]}
    cache = {}
    pairs = {view: [] for view in VIEW_ORDER}
    for view, sid, k in selection:
        if sid not in cache:
            entry = by_id[sid]
            cache[sid] = (
                load_sqv(base / entry["seg_good_path"]),
                load_sqv(base / entry["mri_path"]),
            )
        seg, mri = cache[sid]
        pairs[view].append((extract_slice(seg, view, k), extract_slice(mri, view, k)))
    return pairs


def _stack_pairs(pairs):
    if not pairs:
        raise ValueError("train_pix2pix requires a non-empty pair list")
    dims = pairs[0][0].dims
    xs, ys = [], []
    for label_slice, mri_slice in pairs:
        if label_slice.dims != dims or mri_slice.dims != dims:
            raise ValueError(
                f"slice dims mismatch: {label_slice.dims}/{mri_slice.dims} vs {dims}")
        xs.append(encode_onehot(label_slice))
        ys.append(mri_slice.data.astype(np.float32)[None])
    return np.stack(xs), np.stack(ys)


def train_pix2pix(pairs, cfg: ReconTrainConfig):
    """Alternating discriminator/generator Adam updates on slice pairs.

    Returns (Pix2PixModel, history); one history row per minibatch with the
    discriminator loss, the generator's adversarial and L1 terms, and the
    combined generator loss (gan + lambda_l1 * l1).
    """
    cfg.validate()
    x_all, y_all = _stack_pairs(pairs)
    model = Pix2PixModel.build(cfg.seed, cfg.lambda_l1)
    G, D = model.generator, model.discriminator
    opt_g = nn.Adam(G.params(), lr=cfg.lr, beta1=0.5)
    opt_d = nn.Adam(D.params(), lr=cfg.lr, beta1=0.5)
    rng = rng_for(cfg.seed, 1)
    history = []
    for _epoch in range(cfg.epochs):
        for idx in nn.minibatch_indices(len(pairs), cfg.batch_size, rng):
            x, y = x_all[idx], y_all[idx]
            fake = G.forward(x, train=True)

            # Discriminator: average of real and fake BCE.
            d_real = D.forward(np.concatenate([x, y], axis=1), train=True)
            loss_d_real, g_real = nn.bce_loss(d_real, np.ones_like(d_real))
            D.backward(0.5 * g_real)
            d_fake = D.forward(np.concatenate([x, fake], axis=1), train=True)
            loss_d_fake, g_fake = nn.bce_loss(d_fake, np.zeros_like(d_fake))
            D.backward(0.5 * g_fake)
            opt_d.step()
            D.zero_grads()

            # Generator: fool the discriminator + weighted L1.
            d_fake2 = D.forward(np.concatenate([x, fake], axis=1), train=True)
            loss_gan, g_gan = nn.gan_generator_loss(d_fake2)
            d_input_grad = D.backward(g_gan)
            loss_l1, g_l1 = nn.l1_loss(fake, y)
            G.backward(d_input_grad[:, 3:] + cfg.lambda_l1 * g_l1)
            opt_g.step()
            G.zero_grads()
            D.zero_grads()

            history.append({
                "d": 0.5 * (loss_d_real + loss_d_fake),
                "g_gan": loss_gan,
                "l1": loss_l1,
                "g": loss_gan + cfg.lambda_l1 * loss_l1,
            })
    return model, history


def train_recon_views(manifest: dict, manifest_dir, cfg: ReconTrainConfig):
    """Train one pix2pix per view on slices sampled at cfg.slice_fraction.

    Returns ({view: Pix2PixModel}, {view: history}).  Views train from
    independent sub-seeds of cfg.seed, so training one never affects another.
    """
    cfg.validate()
    selection = sample_training_slices(manifest, cfg.slice_fraction, subseed(cfg.seed, 0))
    pairs = build_training_pairs(manifest, manifest_dir, selection)
    models, histories = {}, {}
    for i, view in enumerate(VIEW_ORDER):
        view_cfg = ReconTrainConfig(
            slice_fraction=cfg.slice_fraction, epochs=cfg.epochs,
            batch_size=cfg.batch_size, lr=cfg.lr, lambda_l1=cfg.lambda_l1,
            seed=subseed(cfg.seed, 1 + i),
        )
        models[view], histories[view] = train_pix2pix(pairs[view], view_cfg)
    return models, histories


class GANReconstructor(Reconstructor):
    """Per-view pix2pix generators behind the Reconstructor interface."""

    name = "gan"

    def __init__(self, models: dict):
        missing = [v.value for v in VIEW_ORDER if v not in models]
        if missing:
            raise ValueError(f"GANReconstructor missing views {missing}")
        self.models = models

    def reconstruct_slice(self, onehot, view=None):
        if view is None:
            raise ValueError("GANReconstructor requires the view to select a model")
        onehot = validate_onehot(onehot)
        out = self.models[view].generate(onehot[None], train=False)
        return out[0, 0]


def save_pix2pix(model: Pix2PixModel, path) -> None:
    params = model.generator.params() + model.discriminator.params()
    nn.save_checkpoint(path, params, meta={"kind": "pix2pix", "lambda_l1": model.lambda_l1})


def load_pix2pix(path) -> Pix2PixModel:
    model = Pix2PixModel.build(seed=0)
    meta = nn.load_into(model.generator.params() + model.discriminator.params(), path)
    if meta.get("kind") != "pix2pix":
        raise DataFormatError(f"{path}: not a pix2pix checkpoint (kind={meta.get('kind')!r})")
    model.lambda_l1 = float(meta.get("lambda_l1", 100.0))
    return model


def view_checkpoint_name(view: ViewAxis) -> str:
    return f"recon_{view.value}.ckpt"


def save_recon_views(models: dict, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for view, model in models.items():
        save_pix2pix(model, out_dir / view_checkpoint_name(view))


def load_recon_views(ckpt_dir) -> GANReconstructor:
    ckpt_dir = Path(ckpt_dir)
    models = {}
    for view in VIEW_ORDER:
        path = ckpt_dir / view_checkpoint_name(view)
        if not path.exists():
            raise DataFormatError(f"{path}: missing reconstructor checkpoint")
        models[view] = load_pix2pix(path)
    return GANReconstructor(models)
