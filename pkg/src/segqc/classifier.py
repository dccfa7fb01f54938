"""Quality classifier: a 3D CNN over (error map, MRI) channel pairs.

The network is six 3x3x3 conv layers (units 32/32/64/64/128/128 by default),
each followed by batch norm and relu, with stride 2 on layers 2/4/6, then
global average pooling and two dense layers (128 relu, 1 sigmoid).  The
output is the probability that the segmentation is bad; ``classify`` cuts it
at an inclusive threshold (default 0.4).
"""

from dataclasses import dataclass

import numpy as np

from . import nn
from .seeding import rng_for, subseed
from .volume import DataFormatError, Volume3D

N_CONV_LAYERS = 6


@dataclass(frozen=True)
class QCNetConfig:
    in_channels: int = 2  # channel 0 = error map, channel 1 = MRI
    conv_units: tuple = (32, 32, 64, 64, 128, 128)
    kernel: int = 3
    strides: tuple = (1, 2, 1, 2, 1, 2)
    padding: int = 1
    dense_units: int = 128
    threshold: float = 0.4

    def validate(self):
        units = tuple(int(u) for u in self.conv_units)
        if len(units) != N_CONV_LAYERS:
            raise ValueError(
                f"conv_units must list exactly {N_CONV_LAYERS} layers, got {len(units)}")
        if any(u < 1 for u in units):
            raise ValueError(f"conv_units must be positive, got {units}")
        strides = tuple(int(s) for s in self.strides)
        if len(strides) != N_CONV_LAYERS or any(s < 1 for s in strides):
            raise ValueError(
                f"strides must list {N_CONV_LAYERS} positive entries, got {self.strides}")
        if self.kernel != 3:
            raise ValueError(f"kernel must be 3, got {self.kernel}")
        if self.padding != 1:
            raise ValueError(f"padding must be 1, got {self.padding}")
        if self.in_channels < 1 or self.dense_units < 1:
            raise ValueError("in_channels and dense_units must be >= 1")
        if not 0.0 <= self.threshold <= 1.0:
            raise ValueError(f"threshold must lie in [0,1], got {self.threshold}")


class QCNet:
    def __init__(self, config: QCNetConfig, net: nn.Sequential, seed: int):
        self.config = config
        self.net = net
        self.seed = seed

    def params(self):
        return self.net.params()

    def trainable_param_count(self) -> int:
        return sum(p.size for p in self.params() if p.trainable)

    def forward(self, x, train=False):
        return self.net.forward(x, train=train)

    def backward(self, dy):
        return self.net.backward(dy)


def build_qcnet(cfg: QCNetConfig, seed: int) -> QCNet:
    """Initialized QCNet; identical weights for identical (cfg, seed)."""
    cfg.validate()
    rng = rng_for(seed)
    layers = []
    c_in = cfg.in_channels
    for i, (units, stride) in enumerate(zip(cfg.conv_units, cfg.strides), start=1):
        layers.append(nn.Conv(3, c_in, int(units), cfg.kernel, stride=int(stride),
                              padding=cfg.padding, rng=rng, name=f"conv{i}"))
        layers.append(nn.BatchNorm(int(units), name=f"bn{i}"))
        layers.append(nn.ReLU())
        c_in = int(units)
    layers.append(nn.GlobalAvgPool())
    layers.append(nn.Dense(c_in, cfg.dense_units, rng=rng, name="fc1"))
    layers.append(nn.ReLU())
    layers.append(nn.Dense(cfg.dense_units, 1, rng=rng, name="fc2"))
    layers.append(nn.Sigmoid())
    return QCNet(cfg, nn.Sequential(layers), seed)


def _check_predict_input(vol: Volume3D, what: str):
    if any(n < 8 for n in vol.dims):
        raise ValueError(f"{what} dims {vol.dims} too small; need >= 8 per axis")
    if vol.data.min() < -1e-6 or vol.data.max() > 1.0 + 1e-6:
        raise ValueError(
            f"{what} must be normalized to [0,1], got range "
            f"[{vol.data.min():.4g}, {vol.data.max():.4g}]")


def predict(net: QCNet, mri_half: Volume3D, errmap_half: Volume3D) -> float:
    """Probability in (0,1) that the segmentation is bad; eval-mode batch norm."""
    if mri_half.dims != errmap_half.dims:
        raise ValueError(
            f"MRI dims {mri_half.dims} != error map dims {errmap_half.dims}")
    _check_predict_input(mri_half, "MRI")
    _check_predict_input(errmap_half, "error map")
    x = np.stack([errmap_half.data, mri_half.data])[None].astype(np.float32)
    out = net.forward(x, train=False)
    return float(out[0, 0])


def classify(p: float, threshold: float = 0.4) -> int:
    """1 (bad) iff p >= threshold, else 0 (good); boundary inclusive."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0,1], got {p}")
    return 1 if p >= threshold else 0


def train_qcnet(dataset, cfg: QCNetConfig, epochs: int, seed: int,
                lr: float = 1e-3, batch_size: int = 8):
    """Adam + BCE training on (mri_half, errmap_half, label) triples.

    Returns (QCNet, history) with one mean train loss per epoch.
    Deterministic in seed (init and shuffling use independent sub-streams).
    """
    cfg.validate()
    if not dataset:
        raise ValueError("train_qcnet requires a non-empty dataset")
    if epochs < 1 or batch_size < 1:
        raise ValueError("epochs and batch_size must be >= 1")
    dims = dataset[0][0].dims
    xs, ys = [], []
    for mri_half, errmap_half, label in dataset:
        if mri_half.dims != dims or errmap_half.dims != dims:
            raise ValueError(
                f"dataset dims inconsistent: {mri_half.dims}/{errmap_half.dims} vs {dims}")
        xs.append(np.stack([errmap_half.data, mri_half.data]))
        ys.append(float(label))
    x_all = np.stack(xs).astype(np.float32)
    y_all = np.array(ys, dtype=np.float32)[:, None]

    net = build_qcnet(cfg, subseed(seed, 0))
    opt = nn.Adam(net.params(), lr=lr)
    rng = rng_for(seed, 1)
    history = []
    for _epoch in range(epochs):
        losses = []
        for idx in nn.minibatch_indices(len(dataset), batch_size, rng):
            pred = net.forward(x_all[idx], train=True)
            loss, grad = nn.bce_loss(pred, y_all[idx])
            net.backward(grad)
            opt.step()
            opt.zero_grads()
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return net, history


def save_qcnet(net: QCNet, path) -> None:
    import dataclasses

    meta = {"kind": "qcnet", "config": dataclasses.asdict(net.config), "seed": net.seed}
    nn.save_checkpoint(path, net.params(), meta=meta)


def load_qcnet(path) -> QCNet:
    meta, _ = nn.load_checkpoint(path)
    if meta.get("kind") != "qcnet":
        raise DataFormatError(f"{path}: not a qcnet checkpoint (kind={meta.get('kind')!r})")
    raw = dict(meta.get("config", {}))
    raw["conv_units"] = tuple(raw.get("conv_units", ()))
    raw["strides"] = tuple(raw.get("strides", ()))
    cfg = QCNetConfig(**raw)
    net = build_qcnet(cfg, int(meta.get("seed", 0)))
    nn.load_into(net.params(), path)
    return net
