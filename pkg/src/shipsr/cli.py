"""Single entry point for the pipeline stages.

Stages: dataset-build, train-classifier, train-sr, upsample, evaluate,
report. Every stage persists the effective config (with a content
fingerprint) into the run directory before doing work, reads and writes only
inside --run-dir, and appends progress to per-stage JSONL logs.

Exit codes: 0 success, 1 failure, 2 usage error, 3 missing prerequisite.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classifier as clf
from . import manifest as man
from .degradation import DegradationPolicy, bicubic_upsample
from .image_io import load_image, save_image
from .metrics import comparison_report
from .model import ModelConfig, SuperResolutionModel
from .prompts import DEFAULT_TEMPLATE_PATTERNS, HashTextEncoder, make_templates, text_gate
from .train import SRTrainData, train_autoencoder, train_super_resolution

STAGES = ("dataset-build", "train-classifier", "train-sr", "upsample", "evaluate", "report")


class DependencyError(RuntimeError):
    """A prerequisite artifact for this stage is missing."""


@dataclass
class RunConfig:
    seed: int = 0
    factor: int = 8
    hr_side: int = 64
    taxonomy: str | list[str] = "auto"

    deg_kernel_size: int = 21
    deg_sigma_range: tuple[float, float] = (0.2, 3.0)
    deg_noise_sigma: float = 0.01
    deg_compression_quality: int | None = None

    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_test_count: int | None = None

    schedule_kind: str = "linear"
    timesteps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.05

    model_depth: int = 3
    model_base_channels: int = 32
    model_channel_mults: tuple[int, ...] = (1, 2, 2)
    latent_mode: str = "identity"
    ae_down: int = 2
    ae_base_channels: int = 32
    ae_latent_channels: int = 4
    ae_steps: int = 600
    ae_lr: float = 2e-3
    class_dim: int = 64
    time_dim: int = 64
    temb_dim: int = 128
    text_len: int = 16
    text_dim: int = 64

    clf_input_side: int = 64
    clf_base_channels: int = 16
    clf_epochs: int = 6
    clf_batch_size: int = 32
    clf_lr: float = 2e-3
    clf_augment_sigmas: tuple[float, ...] = (0.0, 0.05, 0.1)

    sr_epochs: int = 6
    sr_batch_size: int = 16
    sr_lr: float = 2e-3

    sample_steps: int = 50
    sample_eta: float = 0.0

    prompt_templates: tuple[str, ...] = DEFAULT_TEMPLATE_PATTERNS

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known - {"fingerprint"}
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        kwargs = {k: v for k, v in data.items() if k in known}
        for key in ("deg_sigma_range", "split_fractions", "model_channel_mults",
                    "clf_augment_sigmas", "prompt_templates"):
            if key in kwargs and kwargs[key] is not None:
                kwargs[key] = tuple(kwargs[key])
        return cls(**kwargs)

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def resolved_taxonomy(self, root=None) -> tuple[str, ...]:
        if isinstance(self.taxonomy, (list, tuple)):
            return clf.validate_taxonomy(self.taxonomy)
        if self.taxonomy == "default":
            return clf.DEFAULT_TAXONOMY
        if self.taxonomy == "auto":
            if root is None:
                raise ValueError("taxonomy 'auto' needs a corpus root to scan")
            names = sorted(p.name for p in Path(root).iterdir() if p.is_dir())
            if not names:
                raise ValueError(f"no category subdirectories under {root}")
            return clf.validate_taxonomy(names)
        raise ValueError(f"taxonomy must be 'auto', 'default', or a list, got {self.taxonomy!r}")


# ---------------------------------------------------------------------------
# run-directory plumbing
# ---------------------------------------------------------------------------

def _paths(run_dir: Path) -> dict[str, Path]:
    return {
        "config": run_dir / "config.json",
        "manifest": run_dir / "dataset" / "manifest.jsonl",
        "corpus_meta": run_dir / "dataset" / "corpus_meta.json",
        "pairs": run_dir / "dataset" / "pairs",
        "classifier": run_dir / "checkpoints" / "classifier.pt",
        "sr_model": run_dir / "checkpoints" / "sr_model.pt",
        "outputs": run_dir / "outputs",
        "logs": run_dir / "logs",
    }


def _stage_logger(run_dir: Path, stage: str):
    log_path = _paths(run_dir)["logs"] / f"{stage.replace('-', '_')}.jsonl"
    log_path.parent.mkdir(parents=True, exist_ok=True)

    def log(entry: dict) -> None:
        with log_path.open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    return log


def _resolve_config(args) -> RunConfig:
    run_dir = Path(args.run_dir)
    cfg_path = _paths(run_dir)["config"]
    if getattr(args, "config", None):
        cfg = RunConfig.from_dict(json.loads(Path(args.config).read_text(encoding="utf-8")))
    elif cfg_path.exists():
        cfg = RunConfig.from_dict(json.loads(cfg_path.read_text(encoding="utf-8")))
    else:
        cfg = RunConfig()
    for name in ("seed", "factor", "hr_side"):
        value = getattr(args, name.replace("-", "_"), None)
        if value is not None:
            setattr(cfg, name, value)
    if getattr(args, "taxonomy", None):
        raw = args.taxonomy
        cfg.taxonomy = raw if raw in ("auto", "default") else [s.strip() for s in raw.split(",")]
    return cfg


def _persist_config(cfg: RunConfig, run_dir: Path) -> str:
    fingerprint = cfg.fingerprint()
    payload = {"fingerprint": fingerprint, **cfg.to_dict()}
    cfg_path = _paths(run_dir)["config"]
    cfg_path.parent.mkdir(parents=True, exist_ok=True)
    cfg_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return fingerprint


def _require(path: Path, what: str, hint: str) -> Path:
    if not path.exists():
        raise DependencyError(f"missing {what} at {path}; run `sr {hint}` first")
    return path


def _load_split_images(m: man.Manifest, run_dir: Path, split: str):
    records = m.by_split(split)
    if not records:
        raise ValueError(f"manifest has no records in split {split!r}")
    base = _paths(run_dir)["manifest"].parent
    taxonomy = list(m.meta.get("taxonomy") or [])
    hr = np.stack([load_image(base / r.hr_path) for r in records])
    lr = np.stack([load_image(base / r.lr_path) for r in records])
    refs = np.stack([load_image(base / r.ref_path) for r in records])
    labels = np.array([taxonomy.index(r.category) for r in records], dtype=np.int64)
    return records, hr, lr, refs, labels


def _read_corpus_meta(run_dir: Path) -> dict:
    meta_path = _require(_paths(run_dir)["corpus_meta"], "corpus metadata", "dataset-build")
    return json.loads(meta_path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

def _materialize_record(rec: man.ShipRecord, hr_side: int, factor: int,
                        policy: DegradationPolicy, pairs_dir: Path, manifest_dir: Path):
    pair = man.make_pair(rec, hr_side, factor, policy, pairs_dir, manifest_dir)
    return rec, pair is not None


def cmd_dataset_build(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = _resolve_config(args)
    fingerprint = _persist_config(cfg, run_dir)
    log = _stage_logger(run_dir, "dataset-build")
    paths = _paths(run_dir)

    taxonomy = cfg.resolved_taxonomy(args.root)
    m = man.build_manifest(args.root, taxonomy)
    policy = DegradationPolicy(
        downscale_factor=cfg.factor, kernel_size=cfg.deg_kernel_size,
        sigma_range=tuple(cfg.deg_sigma_range), noise_sigma=cfg.deg_noise_sigma,
        compression_quality=cfg.deg_compression_quality, seed=cfg.seed)

    manifest_dir = paths["manifest"].parent
    workers = int(os.environ.get("SR_NUM_WORKERS", "1"))
    kept: list[man.ShipRecord] = []
    jobs = [(rec, cfg.hr_side, cfg.factor, policy, paths["pairs"], manifest_dir)
            for rec in m.records]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_materialize_star, jobs))
    else:
        results = [_materialize_star(job) for job in jobs]
    for rec, ok in results:
        if ok:
            kept.append(rec)

    m = man.Manifest(records=kept, meta=m.meta)
    m = man.split_manifest(m, fractions=tuple(cfg.split_fractions), seed=cfg.seed,
                           test_count=cfg.split_test_count)
    man.write_manifest(m, paths["manifest"])
    man.write_corpus_meta(m, paths["corpus_meta"], factor=cfg.factor, seed=cfg.seed)
    log({"stage": "dataset-build", "fingerprint": fingerprint, "counts": m.counts(),
         "skipped": len(m.meta.get("skipped", []))})
    print(f"dataset: {len(m)} records -> {paths['manifest']}")
    return 0


def _materialize_star(job):
    return _materialize_record(*job)


def cmd_train_classifier(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = _resolve_config(args)
    fingerprint = _persist_config(cfg, run_dir)
    log = _stage_logger(run_dir, "train-classifier")
    paths = _paths(run_dir)

    manifest_path = _require(paths["manifest"], "dataset manifest", "dataset-build")
    meta = _read_corpus_meta(run_dir)
    m = man.read_manifest(manifest_path, meta={"taxonomy": meta["taxonomy"]})
    _, hr, _, _, labels = _load_split_images(m, run_dir, "train")

    ccfg = clf.ClassifierConfig(
        input_side=cfg.clf_input_side, base_channels=cfg.clf_base_channels,
        epochs=cfg.clf_epochs, batch_size=cfg.clf_batch_size, lr=cfg.clf_lr,
        augment_sigmas=tuple(cfg.clf_augment_sigmas), seed=cfg.seed)
    model = clf.train_classifier(hr, labels, meta["taxonomy"], ccfg, log=log)
    clf.save_classifier(paths["classifier"], model)
    log({"stage": "train-classifier", "fingerprint": fingerprint,
         "val_accuracy": model.val_accuracy})
    print(f"classifier: val accuracy {model.val_accuracy:.3f} -> {paths['classifier']}")
    return 0


def _build_model(cfg: RunConfig, num_classes: int) -> SuperResolutionModel:
    mcfg = ModelConfig(
        factor=cfg.factor, num_classes=num_classes, depth=cfg.model_depth,
        base_channels=cfg.model_base_channels,
        channel_mults=tuple(cfg.model_channel_mults), latent_mode=cfg.latent_mode,
        latent_channels=cfg.ae_latent_channels, ae_down=cfg.ae_down,
        ae_base_channels=cfg.ae_base_channels, class_dim=cfg.class_dim,
        time_dim=cfg.time_dim, temb_dim=cfg.temb_dim, text_len=cfg.text_len,
        text_dim=cfg.text_dim, text_seed=cfg.seed, schedule_kind=cfg.schedule_kind,
        timesteps=cfg.timesteps, beta_start=cfg.beta_start, beta_end=cfg.beta_end)
    return SuperResolutionModel(mcfg)


def cmd_train_sr(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = _resolve_config(args)
    fingerprint = _persist_config(cfg, run_dir)
    log = _stage_logger(run_dir, "train-sr")
    paths = _paths(run_dir)

    manifest_path = _require(paths["manifest"], "dataset manifest", "dataset-build")
    # Classifier pre-training strictly precedes SR training.
    classifier_path = _require(paths["classifier"], "classifier checkpoint", "train-classifier")
    meta = _read_corpus_meta(run_dir)
    m = man.read_manifest(manifest_path, meta={"taxonomy": meta["taxonomy"]})
    records, hr, lr, _, labels = _load_split_images(m, run_dir, "train")

    classifier = clf.load_classifier(classifier_path)
    model = _build_model(cfg, num_classes=len(classifier.taxonomy))
    model.to(args.device)
    model.attach_classifier(classifier)

    if cfg.latent_mode == "learned":
        ae_losses = train_autoencoder(model.autoencoder, hr, steps=cfg.ae_steps,
                                      lr=cfg.ae_lr, seed=cfg.seed, log=log)
        log({"stage": "train-sr", "ae_final_loss": ae_losses[-1]})

    data = SRTrainData(hr=hr, lr=lr, labels=labels,
                       names=[r.name for r in records],
                       categories=[r.category for r in records])
    encoder = HashTextEncoder(cfg.text_len, cfg.text_dim, cfg.seed)
    provider = text_gate("train", encoder, rng=np.random.default_rng(cfg.seed),
                         templates=make_templates(cfg.prompt_templates))
    epochs = args.epochs if args.epochs is not None else cfg.sr_epochs
    losses = train_super_resolution(
        model, data, epochs=epochs, batch_size=cfg.sr_batch_size, lr=cfg.sr_lr,
        seed=cfg.seed, strict_paper=args.strict_paper, text_provider=provider, log=log)

    model.save(paths["sr_model"])
    log({"stage": "train-sr", "fingerprint": fingerprint, "epoch_losses": losses,
         "trainable_parameters": model.trainable_parameter_count(args.strict_paper)})
    print(f"sr model: epoch losses {['%.4f' % l for l in losses]} -> {paths['sr_model']}")
    return 0


def _load_models(run_dir: Path, device: str = "cpu") -> SuperResolutionModel:
    paths = _paths(run_dir)
    sr_path = _require(paths["sr_model"], "trained SR checkpoint", "train-sr")
    classifier_path = _require(paths["classifier"], "classifier checkpoint", "train-classifier")
    model = SuperResolutionModel.load(sr_path)
    model.to(device)
    # The classifier stays on CPU; its inputs are small resized crops.
    model.attach_classifier(clf.load_classifier(classifier_path))
    return model


def cmd_upsample(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = _resolve_config(args)
    _persist_config(cfg, run_dir)
    model = _load_models(run_dir, args.device)
    lr = load_image(args.input)
    out = model.sample(lr, steps=args.steps, eta=args.eta, seed=args.seed if args.seed is not None else cfg.seed)
    out_path = Path(args.output) if args.output else _paths(run_dir)["outputs"] / "sr.png"
    save_image(out, out_path)
    print(f"wrote {out_path}")
    return 0


def cmd_evaluate(args) -> int:
    run_dir = Path(args.run_dir)
    cfg = _resolve_config(args)
    fingerprint = _persist_config(cfg, run_dir)
    log = _stage_logger(run_dir, "evaluate")
    paths = _paths(run_dir)

    model = _load_models(run_dir, args.device)
    manifest_path = _require(paths["manifest"], "dataset manifest", "dataset-build")
    meta = _read_corpus_meta(run_dir)
    m = man.read_manifest(manifest_path, meta={"taxonomy": meta["taxonomy"]})
    records, hr, lr, refs, labels = _load_split_images(m, run_dir, "test")
    if args.max_images is not None:
        records, hr, lr, refs, labels = (records[:args.max_images], hr[:args.max_images],
                                         lr[:args.max_images], refs[:args.max_images],
                                         labels[:args.max_images])

    steps = args.steps if args.steps is not None else cfg.sample_steps
    eta = args.eta if args.eta is not None else cfg.sample_eta
    seed = args.seed if args.seed is not None else cfg.seed

    sr_out = []
    chunk = 16
    for start in range(0, len(lr), chunk):
        batch = model.sample_batch(lr[start:start + chunk], steps=steps, eta=eta,
                                   seed=seed + start)
        sr_out.append(batch)
        log({"stage": "evaluate", "sampled": min(start + chunk, len(lr))})
    sr_out = np.concatenate(sr_out)

    samples_dir = paths["outputs"] / "samples"
    for rec, img in zip(records, sr_out):
        save_image(img, samples_dir / f"{rec.id.replace('/', '__')}_sr.png")

    classifier = model.classifier
    embedder = clf.feature_embedder(classifier)
    report = comparison_report(
        {"model": sr_out, "lr_reference": refs}, hr, labels, classifier, embedder,
        embedder_id=classifier.embedder_id, config_fingerprint=fingerprint,
        out_dir=paths["outputs"])
    log({"stage": "evaluate", "fingerprint": fingerprint, "methods": report.methods})
    for name, vals in report.methods.items():
        print(f"{name}: psnr {vals['psnr']:.2f} dB  ssim {vals['ssim']:.4f}  "
              f"fid {vals['fid']:.2f}  accuracy {vals['accuracy']:.3f}")
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir)
    report_path = _paths(run_dir)["outputs"] / "report.json"
    _require(report_path, "evaluation report", "evaluate")
    data = json.loads(report_path.read_text(encoding="utf-8"))
    print(f"config fingerprint: {data['config_fingerprint']}")
    print(f"embedder: {data['embedder_id']}")
    header = f"{'method':<16} {'psnr':>8} {'ssim':>8} {'fid':>10} {'accuracy':>9}"
    print(header)
    print("-" * len(header))
    for name, vals in sorted(data["methods"].items()):
        print(f"{name:<16} {vals['psnr']:>8.2f} {vals['ssim']:>8.4f} "
              f"{vals['fid']:>10.2f} {vals['accuracy']:>9.3f}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--run-dir", required=True, help="run directory (all outputs live here)")
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--device", default="cpu", help="torch device (cpu default)")

    p = sub.add_parser("dataset-build", help="materialize HR/LR/reference pairs and the manifest")
    common(p)
    p.add_argument("--root", required=True, help="source corpus with category subdirectories")
    p.add_argument("--factor", type=int, default=None)
    p.add_argument("--hr-side", dest="hr_side", type=int, default=None)
    p.add_argument("--taxonomy", default=None, help="'auto', 'default', or comma-separated names")
    p.set_defaults(func=cmd_dataset_build)

    p = sub.add_parser("train-classifier", help="pre-train and freeze the category classifier")
    common(p)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("train-sr", help="train the conditional SR diffusion model")
    common(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--strict-paper", action="store_true",
                   help="freeze the denoiser; train only the conditioning path")
    p.set_defaults(func=cmd_train_sr)

    p = sub.add_parser("upsample", help="super-resolve one LR image")
    common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", default=None)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--eta", type=float, default=0.0)
    p.set_defaults(func=cmd_upsample)

    p = sub.add_parser("evaluate", help="sample the test split and compute metrics")
    common(p)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--max-images", dest="max_images", type=int, default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="print the stored evaluation report")
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DependencyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # one-line diagnostic, nonzero exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
