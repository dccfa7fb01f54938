"""Command-line driver for the full pipeline.

Commands: phantom, train-recon, errormap, train-qc, classify, evaluate,
export-slices.  One sectioned JSON config feeds all of them; --seed/--out
override the config; every run drops a resolved-config copy (minus the
output-directory and worker-count keys, so reruns into fresh directories
stay byte-identical) next to its outputs.

Exit codes: 0 success, 1 usage or configuration error, 2 data or file
format error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .classifier import (QCNetConfig, classify, load_qcnet, predict,
                         save_qcnet, train_qcnet)
from .errormap import (PostprocessConfig, build_error_map, export_view_pgms,
                       load_error_map, postprocess, save_error_map)
from .evaluation import cross_validate, summarize, threshold_sweep, write_fold_csv
from .phantom import (ErrorInjection, PhantomSpec, load_manifest, load_sample,
                      make_dataset)
from .recon import (GANReconstructor, OracleRecon, ReconTrainConfig,
                    load_recon_views, save_recon_views, train_recon_views)
from .volume import (DataFormatError, ViewAxis, downsample_half, load_json,
                     load_sqv, save_json)

log = logging.getLogger("segqc")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class ConfigError(Exception):
    """Invalid invocation or configuration; maps to exit code 1."""


# Allowed keys per config section; anything else is rejected with its path.
_SCHEMA = {
    "seed": None,
    "out": None,
    "jobs": None,
    "phantom": {
        "n_good": None, "n_bad": None,
        "dims": None, "csf_radii": None, "gm_radii": None, "wm_radii": None,
        "mu_bg": None, "mu_gm": None, "mu_wm": None, "mu_csf": None,
        "noise_sigma": None, "bias_amplitude": None,
        "injection": {"kind": None, "blob_count": None,
                      "radius_range": None, "severity": None},
    },
    "recon": {
        "dataset": None, "slice_fraction": None, "epochs": None,
        "batch_size": None, "lr": None, "lambda_l1": None,
    },
    "errormap": {
        "dataset": None, "segmentation": None,
        "mri": None, "seg": None,
        "reconstructor": None, "recon_dir": None,
        "intensities": {"mu_bg": None, "mu_gm": None, "mu_wm": None, "mu_csf": None},
        "postprocess": {"threshold": None, "sigma": None},
        "volume": None, "prefix": None, "views": None,
    },
    "classifier": {
        "dataset": None, "errormap_dir": None,
        "epochs": None, "batch_size": None, "lr": None,
        "in_channels": None, "conv_units": None, "strides": None,
        "kernel": None, "padding": None, "dense_units": None, "threshold": None,
        "checkpoint": None, "mri": None, "seg": None, "errmap": None,
        "reconstructor": None, "recon_dir": None,
        "intensities": {"mu_bg": None, "mu_gm": None, "mu_wm": None, "mu_csf": None},
    },
    "eval": {
        "dataset": None, "errormap_dir": None, "k": None,
        "epochs": None, "batch_size": None, "lr": None,
        "threshold": None, "sweep": None,
        "in_channels": None, "conv_units": None, "strides": None,
        "kernel": None, "padding": None, "dense_units": None,
    },
}


def _reject_unknown(section, schema, where):
    if not isinstance(section, dict):
        raise ConfigError(f"config: {where} must be a JSON object")
    unknown = sorted(set(section) - set(schema))
    if unknown:
        raise ConfigError(f"config: unknown key(s) {unknown} in {where}")
    for key, sub in schema.items():
        if sub is not None and key in section and section[key] is not None:
            _reject_unknown(section[key], sub, f"{where}.{key}")


def load_config(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config: file not found: {path}")
    try:
        config = load_json(path)
    except DataFormatError as exc:
        raise ConfigError(f"config: {exc}") from exc
    _reject_unknown(config, _SCHEMA, "top level")
    return config


def _section(config, name, command) -> dict:
    sec = config.get(name)
    if sec is None:
        raise ConfigError(f"config: section '{name}' required by '{command}'")
    return sec


def _require(section, key, where):
    if key not in section or section[key] is None:
        raise ConfigError(f"config: '{where}.{key}' is required")
    return section[key]


def _build(factory, kwargs, where):
    """Construct + validate a config dataclass, mapping bad values to exit 1."""
    try:
        obj = factory(**kwargs)
        obj.validate()
        return obj
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config: invalid {where}: {exc}") from exc


class _RunContext:
    """Merged flags + config: seed, output dir, resolved-config writer."""

    def __init__(self, config, args):
        merged = dict(config)
        if getattr(args, "seed", None) is not None:
            merged["seed"] = args.seed
        if getattr(args, "out", None) is not None:
            merged["out"] = args.out
        if getattr(args, "jobs", None) is not None:
            merged["jobs"] = args.jobs
        try:
            self.seed = int(merged.get("seed", 0))
        except (TypeError, ValueError):
            raise ConfigError(f"config: 'seed' must be an integer, got {merged.get('seed')!r}")
        if merged.get("out") is None:
            raise ConfigError("config: output directory required ('out' key or --out)")
        self.out = Path(merged["out"])
        jobs = merged.get("jobs", 1)
        if not isinstance(jobs, int) or jobs < 1:
            raise ConfigError(f"config: 'jobs' must be a positive integer, got {jobs!r}")
        self.jobs = jobs
        self.config = merged

    def write_resolved(self, command):
        self.out.mkdir(parents=True, exist_ok=True)
        resolved = {k: v for k, v in self.config.items() if k not in ("out", "jobs")}
        save_json(resolved, self.out / f"resolved-config.{command}.json")


def _phantom_spec(section) -> PhantomSpec:
    kwargs = {}
    for key in ("dims", "csf_radii", "gm_radii", "wm_radii"):
        if key in section:
            kwargs[key] = tuple(section[key])
    for key in ("mu_bg", "mu_gm", "mu_wm", "mu_csf", "noise_sigma", "bias_amplitude"):
        if key in section:
            kwargs[key] = float(section[key])
    return _build(PhantomSpec, kwargs, "phantom spec")


def _injection(section) -> ErrorInjection:
    kwargs = dict(section)
    if "radius_range" in kwargs:
        kwargs["radius_range"] = tuple(kwargs["radius_range"])
    return _build(ErrorInjection, kwargs, "phantom.injection")


def cmd_phantom(config, args) -> int:
    ctx = _RunContext(config, args)
    sec = _section(config, "phantom", "phantom")
    n_good = int(_require(sec, "n_good", "phantom"))
    n_bad = int(_require(sec, "n_bad", "phantom"))
    spec = _phantom_spec(sec)
    inj = _injection(sec.get("injection") or {})
    ctx.write_resolved("phantom")
    manifest = make_dataset(n_good, n_bad, spec, inj, ctx.seed, ctx.out)
    log.info("phantom: wrote %d samples (good=%d bad=%d) to %s",
             len(manifest["samples"]), n_good, n_bad, ctx.out)
    return EXIT_OK


def cmd_train_recon(config, args) -> int:
    ctx = _RunContext(config, args)
    sec = _section(config, "recon", "train-recon")
    manifest_path = Path(_require(sec, "dataset", "recon"))
    kwargs = {k: sec[k] for k in
              ("slice_fraction", "epochs", "batch_size", "lr", "lambda_l1")
              if k in sec}
    cfg = _build(ReconTrainConfig, {**kwargs, "seed": ctx.seed}, "recon config")
    ctx.write_resolved("train-recon")
    manifest = load_manifest(manifest_path)
    models, history = train_recon_views(manifest, manifest_path.parent, cfg)
    save_recon_views(models, ctx.out)
    save_json({view.value: rows for view, rows in history.items()},
              ctx.out / "recon-history.json")
    for view, rows in history.items():
        log.info("train-recon: view=%s minibatches=%d final_l1=%.4f",
                 view.value, len(rows), rows[-1]["l1"])
    return EXIT_OK


def _oracle_from(intensities, fallback: dict) -> OracleRecon:
    source = dict(fallback)
    source.update(intensities or {})
    kwargs = {k: float(source[k]) for k in ("mu_bg", "mu_gm", "mu_wm", "mu_csf")}
    recon = OracleRecon(**kwargs)
    if any(not 0.0 <= v <= 1.0 for v in kwargs.values()):
        raise ConfigError(f"config: oracle intensities must lie in [0,1], got {kwargs}")
    return recon


def _reconstructor(sec, manifest=None):
    kind = sec.get("reconstructor", "oracle")
    if kind == "oracle":
        fallback = {k: getattr(PhantomSpec, k) for k in ("mu_bg", "mu_gm", "mu_wm", "mu_csf")}
        if manifest is not None:
            spec_echo = manifest.get("spec", {})
            fallback.update({k: spec_echo[k] for k in fallback if k in spec_echo})
        return _oracle_from(sec.get("intensities"), fallback)
    if kind == "gan":
        recon_dir = _require(sec, "recon_dir", "errormap")
        return load_recon_views(recon_dir)
    raise ConfigError(f"config: unknown reconstructor {kind!r}; valid: oracle, gan")


def _postprocess_config(sec):
    pp = sec.get("postprocess")
    if pp is None:
        return None
    kwargs = {k: float(pp[k]) for k in ("threshold", "sigma") if k in pp}
    return _build(PostprocessConfig, kwargs, "errormap.postprocess")


def _pick_segmentation(entry, choice, sample):
    if choice == "auto":
        return sample.seg_bad if entry["label"] == 1 else sample.seg_good
    if choice == "good":
        return sample.seg_good
    if choice == "bad":
        return sample.seg_bad
    raise ConfigError(
        f"config: errormap.segmentation must be auto|good|bad, got {choice!r}")


def cmd_errormap(config, args) -> int:
    ctx = _RunContext(config, args)
    sec = _section(config, "errormap", "errormap")
    pp_cfg = _postprocess_config(sec)
    ctx.write_resolved("errormap")

    if "dataset" in sec and sec["dataset"] is not None:
        manifest_path = Path(sec["dataset"])
        manifest = load_manifest(manifest_path)
        recon = _reconstructor(sec, manifest)
        choice = sec.get("segmentation", "auto")
        for i, entry in enumerate(manifest["samples"]):
            sample = load_sample(manifest_path.parent, entry)
            seg = _pick_segmentation(entry, choice, sample)
            em = build_error_map(sample.mri, seg, recon)
            if pp_cfg is not None:
                em = postprocess(em, pp_cfg)
            save_error_map(em, ctx.out / f"{entry['id']}_errmap.sqv")
            log.info("errormap: sample=%s max=%.4f", entry["id"], em.volume.data.max())
        log.info("errormap: wrote %d maps to %s", len(manifest["samples"]), ctx.out)
        return EXIT_OK

    mri_path = _require(sec, "mri", "errormap")
    seg_path = _require(sec, "seg", "errormap")
    recon = _reconstructor(sec)
    mri = load_sqv(mri_path)
    seg = load_sqv(seg_path)
    em = build_error_map(mri, seg, recon)
    if pp_cfg is not None:
        em = postprocess(em, pp_cfg)
    save_error_map(em, ctx.out / "errmap.sqv")
    log.info("errormap: wrote %s max=%.4f", ctx.out / "errmap.sqv", em.volume.data.max())
    return EXIT_OK


def _qcnet_config(sec) -> QCNetConfig:
    kwargs = {}
    for key in ("in_channels", "kernel", "padding", "dense_units"):
        if key in sec:
            kwargs[key] = int(sec[key])
    for key in ("conv_units", "strides"):
        if key in sec:
            kwargs[key] = tuple(int(u) for u in sec[key])
    if "threshold" in sec:
        kwargs["threshold"] = float(sec["threshold"])
    return _build(QCNetConfig, kwargs, "classifier config")


def _load_qc_dataset(manifest_path: Path, errormap_dir: Path):
    """(mri_half, errmap_half, label) per manifest sample, plus the labels."""
    manifest = load_manifest(manifest_path)
    dataset, labels = [], []
    for entry in manifest["samples"]:
        mri = load_sqv(manifest_path.parent / entry["mri_path"])
        em_path = errormap_dir / f"{entry['id']}_errmap.sqv"
        if not em_path.exists():
            raise FileNotFoundError(
                f"{em_path} (expected error map for sample {entry['id']})")
        em = load_error_map(em_path)
        dataset.append((downsample_half(mri), downsample_half(em.volume),
                        int(entry["label"])))
        labels.append(int(entry["label"]))
    return dataset, np.asarray(labels)


def cmd_train_qc(config, args) -> int:
    ctx = _RunContext(config, args)
    sec = _section(config, "classifier", "train-qc")
    manifest_path = Path(_require(sec, "dataset", "classifier"))
    errormap_dir = Path(_require(sec, "errormap_dir", "classifier"))
    cfg = _qcnet_config(sec)
    epochs = int(sec.get("epochs", 8))
    batch_size = int(sec.get("batch_size", 8))
    lr = float(sec.get("lr", 1e-3))
    ctx.write_resolved("train-qc")
    dataset, _ = _load_qc_dataset(manifest_path, errormap_dir)
    net, history = train_qcnet(dataset, cfg, epochs=epochs, seed=ctx.seed,
                               lr=lr, batch_size=batch_size)
    save_qcnet(net, ctx.out / "qcnet.ckpt")
    save_json({"loss": history}, ctx.out / "qc-history.json")
    log.info("train-qc: %d samples, %d epochs, final_loss=%.4f",
             len(dataset), epochs, history[-1])
    return EXIT_OK


def _half_pair(mri, em_vol):
    return downsample_half(mri), downsample_half(em_vol)


def cmd_classify(config, args) -> int:
    ctx = _RunContext(config, args)
    sec = _section(config, "classifier", "classify")
    ckpt = Path(_require(sec, "checkpoint", "classifier"))
    net = load_qcnet(ckpt)
    threshold = net.config.threshold
    if "threshold" in sec and sec["threshold"] is not None:
        threshold = float(sec["threshold"])
    if getattr(args, "threshold", None) is not None:
        threshold = float(args.threshold)
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"config: threshold must lie in [0,1], got {threshold}")

    mri = load_sqv(Path(_require(sec, "mri", "classifier")))
    if sec.get("errmap") is not None:
        em_vol = load_error_map(Path(sec["errmap"])).volume
    elif sec.get("seg") is not None:
        seg = load_sqv(Path(sec["seg"]))
        recon = _reconstructor(sec)
        em_vol = build_error_map(mri, seg, recon).volume
    else:
        raise ConfigError("config: classify needs 'classifier.errmap' or 'classifier.seg'")

    mri_half, em_half = _half_pair(mri, em_vol)
    prob = predict(net, mri_half, em_half)
    label = classify(prob, threshold)
    result = {"probability": prob, "label": label, "threshold": threshold}
    ctx.write_resolved("classify")
    save_json(result, ctx.out / "classify.json")
    print(json.dumps(result, sort_keys=True))
    log.info("classify: probability=%.4f label=%d threshold=%.2f", prob, label, threshold)
    return EXIT_OK


def cmd_evaluate(config, args) -> int:
    ctx = _RunContext(config, args)
    sec = _section(config, "eval", "evaluate")
    manifest_path = Path(_require(sec, "dataset", "eval"))
    errormap_dir = Path(_require(sec, "errormap_dir", "eval"))
    k = int(sec.get("k", 10))
    epochs = int(sec.get("epochs", 8))
    batch_size = int(sec.get("batch_size", 8))
    lr = float(sec.get("lr", 1e-3))
    threshold = float(sec.get("threshold", 0.4))
    if getattr(args, "threshold", None) is not None:
        threshold = float(args.threshold)
    sweep_grid = [float(t) for t in sec.get("sweep", (0.3, 0.4))]
    cfg = _qcnet_config(sec)
    ctx.write_resolved("evaluate")

    dataset, labels = _load_qc_dataset(manifest_path, errormap_dir)

    def fit_predict(train_idx, test_idx, fold_seed):
        net, _ = train_qcnet([dataset[i] for i in train_idx], cfg,
                             epochs=epochs, seed=fold_seed,
                             lr=lr, batch_size=batch_size)
        return [predict(net, dataset[i][0], dataset[i][1]) for i in test_idx]

    result = cross_validate(labels, k, fit_predict, ctx.seed, threshold=threshold)
    write_fold_csv(result, ctx.out / "folds.csv")
    summary = summarize(result)
    summary["sweep"] = [
        {"threshold": t, "accuracy": m.accuracy,
         "precision": m.precision, "recall": m.recall,
         "tp": m.tp, "fp": m.fp, "tn": m.tn, "fn": m.fn}
        for t, m in threshold_sweep(result.pooled_scores, labels, sweep_grid)
    ]
    save_json(summary, ctx.out / "summary.json")
    log.info("evaluate: k=%d pooled_auc=%.4f mean_auc=%.4f",
             k, result.pooled_auc, summary["mean"]["auc"])
    return EXIT_OK


def cmd_export_slices(config, args) -> int:
    ctx = _RunContext(config, args)
    sec = _section(config, "errormap", "export-slices")
    vol_path = Path(_require(sec, "volume", "errormap"))
    prefix = sec.get("prefix", "slice")
    view_names = sec.get("views", [v.value for v in ViewAxis])
    try:
        views = [ViewAxis(v) for v in view_names]
    except ValueError as exc:
        raise ConfigError(f"config: invalid errormap.views: {exc}") from exc
    ctx.write_resolved("export-slices")
    vol = load_sqv(vol_path)
    total = 0
    for view in views:
        total += len(export_view_pgms(vol, view, ctx.out, prefix=prefix))
    log.info("export-slices: wrote %d PGM files to %s", total, ctx.out)
    return EXIT_OK


_COMMANDS = {
    "phantom": cmd_phantom,
    "train-recon": cmd_train_recon,
    "errormap": cmd_errormap,
    "train-qc": cmd_train_qc,
    "classify": cmd_classify,
    "evaluate": cmd_evaluate,
    "export-slices": cmd_export_slices,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="segqc", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    for name in _COMMANDS:
        p = sub.add_parser(name, add_help=True)
        p.add_argument("--config", required=True, help="sectioned JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override config output directory")
        p.add_argument("--jobs", type=int, default=None, help="worker cap")
        if name in ("classify", "evaluate"):
            p.add_argument("--threshold", type=float, default=None,
                           help="decision threshold override")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise ConfigError("a command is required (see --help)")
        return _COMMANDS[args.command](load_config(args.config), args)
    except ConfigError as exc:
        log.error("usage: %s", exc)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        log.error("missing file: %s", exc)
        return EXIT_DATA
    except (DataFormatError, ValueError, RuntimeError) as exc:
        log.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
