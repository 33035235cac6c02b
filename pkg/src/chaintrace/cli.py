"""Command-line front end.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 model error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import bundle as bundle_io
from .cascade import EmptyInput, MissingHead, ModelMismatch, aggregate_image
from .chain_sim import (InvalidProfile, PlatformProfile, TooSmall, capture, default_profiles,
                        emit_jpeg_stub, simulate_chain, synthetic_scene, write_pgm)
from .config import ConfigInvalid, RunConfig, load_config
from .dataset import (CacheError, ClassTooSmall, ImageTooSmall, ManifestEntry, ManifestError,
                      load_luma, load_manifest, load_patchset, make_patch_sets, q_lookup,
                      save_patchset, write_manifest)
from .evaluate import SizeMismatch, evaluate, write_report
from .jpeg_meta import JpegError, extract_dqt, q_feature, read_q_feature, select_luma
from .labels import SYNTHETIC_TAXONOMY, ChainLabel, InvalidChain, Taxonomy, UnknownPrimary
from .nn import EmptyDataset
from .training import (NoSuchHead, forest_accuracy, primary_targets, stage1_fused, train_stage1,
                       train_stage2)

log = logging.getLogger("chaintrace")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class MissingCache(FileNotFoundError):
    pass


DATA_ERRORS = (JpegError, ManifestError, CacheError, MissingCache, ClassTooSmall, ImageTooSmall,
               EmptyDataset, InvalidChain, TooSmall, InvalidProfile, SizeMismatch, OSError)
MODEL_ERRORS = (bundle_io.BundleError, ModelMismatch, MissingHead, NoSuchHead, UnknownPrimary)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _sidecar_log(path: Path, message: str) -> None:
    with open(path, "a") as fh:
        fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {message}\n")


# parse-dqt

def cmd_parse_dqt(args) -> int:
    data = Path(args.file).read_bytes()
    tables = extract_dqt(data)
    luma, fallback = select_luma(tables)
    out = {"file": str(args.file), "tables": [t.to_json() for t in tables],
           "luma_table_id": luma.table_id, "luma_fallback": fallback,
           "q_feature": list(q_feature(luma).coefficients)}
    print(json.dumps(out, indent=None if args.compact else 2))
    return EXIT_OK


# simulate

def chain_profiles(code: str, profiles: dict[str, PlatformProfile], native: str = "NAT"):
    c = ChainLabel.parse(code)
    if c.primary == native:
        if c.secondary != native.lower():
            raise InvalidChain(f"{code}: an unshared image cannot have a previous platform")
        return []
    seq = [] if c.secondary == native.lower() else [c.secondary.upper()]
    seq.append(c.primary)
    try:
        return [profiles[name] for name in seq]
    except KeyError as exc:
        raise InvalidProfile(f"chain {code} needs profile {exc.args[0]}") from None


def simulate_dataset(out_dir, n_images: int, size: int, seed: int, chains=None,
                     profiles=None, taxonomy: Taxonomy = SYNTHETIC_TAXONOMY):
    """Generate seeded scenes, push each through every chain, write PGM + stub + manifest."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    profiles = profiles or default_profiles()
    chains = list(chains or taxonomy.valid_chains)
    plan = {code: chain_profiles(code, profiles, taxonomy.native) for code in chains}
    entries = []
    for i in range(n_images):
        base = capture(synthetic_scene(size, seed * 1_000_003 + i))
        group = f"scene{i:05d}"
        for code, seq in plan.items():
            img, rec = simulate_chain(base, seq)
            ident = f"{group}_{code}"
            write_pgm(out / "images" / f"{ident}.pgm", img)
            (out / "images" / f"{ident}.jpg").write_bytes(emit_jpeg_stub(img, rec))
            entries.append(ManifestEntry(ident, out / "images" / f"{ident}.pgm",
                                         out / "images" / f"{ident}.jpg", code, group))
    write_manifest(out / "manifest.csv", entries)
    (out / "profiles.json").write_text(json.dumps(
        {k: p.to_json() for k, p in sorted(profiles.items())}, indent=2, sort_keys=True) + "\n")
    (out / "taxonomy.json").write_text(json.dumps(taxonomy.to_json(), indent=2) + "\n")
    return entries


def cmd_simulate(args) -> int:
    profiles = None
    if args.profiles:
        raw = json.loads(Path(args.profiles).read_text())
        profiles = {k: PlatformProfile.from_json(v) for k, v in raw.items()}
    taxonomy = Taxonomy.from_json(json.loads(Path(args.taxonomy).read_text())) \
        if args.taxonomy else SYNTHETIC_TAXONOMY
    chains = args.chains.split(",") if args.chains else None
    entries = simulate_dataset(args.out, args.images, args.size, args.seed, chains, profiles,
                               taxonomy)
    print(json.dumps({"images": len(entries), "manifest": str(Path(args.out) / "manifest.csv")}))
    return EXIT_OK


# make-patches

def _config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    return cfg


def cmd_make_patches(args) -> int:
    cfg = _config(args)
    manifest = Path(args.manifest) if args.manifest else cfg.path("manifest")
    size = args.size or cfg.patch_size
    train_n = args.train_count or cfg.train_patches
    test_n = args.test_count if args.test_count is not None else cfg.test_patches
    frac = args.test_fraction if args.test_fraction is not None else cfg.test_fraction
    seed = args.seed if args.seed is not None else cfg.seeds["patches"]
    out_train = Path(args.out_train) if args.out_train else cfg.path("train_cache")
    out_test = Path(args.out_test) if args.out_test else cfg.path("test_cache")
    entries = load_manifest(manifest)
    train, test = make_patch_sets(entries, size, train_n, test_n, frac, seed)
    save_patchset(out_train, train)
    save_patchset(out_test, test)
    report = {"train": train.class_counts(), "test": test.class_counts(),
              "shortfall": {"train": train.shortfall, "test": test.shortfall}}
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


# training

def _load_cache(path) -> object:
    if not Path(path).exists():
        raise MissingCache(f"patch cache {path} does not exist; run make-patches first")
    return load_patchset(path)


def _epoch_printer(tag):
    def show(stats):
        print(f"[{tag}] epoch {stats.epoch} lr={stats.lr:.6g} loss={stats.mean_loss:.4f} "
              f"acc={stats.accuracy:.4f}", flush=True)
    return show


def _bundle_meta(cfg: RunConfig) -> dict:
    return {"config": cfg.to_json()}


def cmd_train_stage1(args) -> int:
    cfg = _config(args)
    train = _load_cache(cfg.path("train_cache"))
    if train.size != cfg.patch_size:
        raise SizeMismatch(f"train cache holds {train.size}px patches, config says {cfg.patch_size}")
    lookup = q_lookup(load_manifest(cfg.path("manifest")))
    model = train_stage1(cfg, train, lookup, on_epoch=_epoch_printer("stage1"))
    result = {}
    if "test_cache" in cfg.paths and cfg.path("test_cache").exists():
        test = load_patchset(cfg.path("test_cache"))
        fused, _ = stage1_fused(model.stage1_cnn, test, lookup)
        result = {"stage1_test_accuracy": forest_accuracy(
            model.stage1_forest, fused, primary_targets(test, cfg.taxonomy))}
    digest = bundle_io.save_bundle(cfg.path("bundle"), model, _bundle_meta(cfg))
    _sidecar_log(Path(str(cfg.path("bundle")) + ".log"), f"train-stage1 sha256={digest}")
    print(json.dumps({"bundle": str(cfg.path("bundle")), "sha256": digest, **result}))
    return EXIT_OK


def cmd_train_stage2(args) -> int:
    cfg = _config(args)
    model, meta = bundle_io.load_bundle(cfg.path("bundle"))
    if not model.taxonomy.head_classes(args.primary):
        raise NoSuchHead(f"primary {args.primary} has a single valid secondary; no head to train")
    train = _load_cache(cfg.path("train_cache"))
    head = train_stage2(cfg, model, train, args.primary, on_epoch=_epoch_printer(f"stage2/{args.primary}"))
    digest = bundle_io.save_bundle(cfg.path("bundle"), model, meta or _bundle_meta(cfg))
    _sidecar_log(Path(str(cfg.path("bundle")) + ".log"),
                 f"train-stage2 {args.primary} sha256={digest}")
    print(json.dumps({"bundle": str(cfg.path("bundle")), "sha256": digest, "head": args.primary,
                      "classes": list(model.taxonomy.head_classes(args.primary)),
                      "epochs": head.training_meta["epochs_trained"]}))
    return EXIT_OK


# classify

def _image_sources(path: Path, manifest_index):
    """(id, pixel path, header path) for a CLI image argument."""
    if manifest_index and str(path) in manifest_index:
        e = manifest_index[str(path)]
        return e.id, e.pixels, e.jpeg
    stem = path.with_suffix("")
    pixels = next((p for p in (stem.with_suffix(".pgm"), stem.with_suffix(".png")) if p.exists()),
                  path)
    header = next((p for p in (stem.with_suffix(".jpg"), stem.with_suffix(".jpeg")) if p.exists()),
                  path)
    return stem.name, pixels, header


def classify_image(model, pixels, header_bytes, n_patches: int, seed: int):
    """Classify `n_patches` random patches of one image and vote."""
    size = model.patch_size
    img = load_luma(pixels)
    if img.shape[0] < size or img.shape[1] < size:
        raise ImageTooSmall(f"image {img.shape} smaller than {size}px patches")
    status = "ok"
    try:
        q, fallback = read_q_feature(header_bytes)
        qv = q.as_array()
        if fallback:
            status = "luma-fallback"
    except JpegError:
        qv = np.zeros(9)
        status = "no-metadata"
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, img.shape[0] - size + 1, n_patches)
    cols = rng.integers(0, img.shape[1] - size + 1, n_patches)
    patches = np.stack([img[r:r + size, c:c + size] for r, c in zip(rows, cols)])
    patches = patches.astype(np.float32) / np.float32(255.0)
    chains = model.classify_patches(patches[:, None], qv)
    chain, conf = aggregate_image(chains)
    return chain, conf, status


def cmd_classify(args) -> int:
    if not args.images:
        raise UsageError("classify needs at least one image path")
    model, _ = bundle_io.load_bundle(args.bundle)
    index = None
    if args.manifest:
        index = {e.id: e for e in load_manifest(args.manifest)}
    caveat = False
    for k, raw in enumerate(args.images):
        ident, pixels, header = _image_sources(Path(raw), index)
        try:
            header_bytes = Path(header).read_bytes()
        except OSError:
            header_bytes = b""
        try:
            chain, conf, status = classify_image(model, pixels, header_bytes, args.patches,
                                                 args.seed + k)
        except (ImageTooSmall, OSError) as exc:
            print(json.dumps({"id": ident, "chain": None, "confidence": 0.0, "patches": 0,
                              "status": "error", "error": str(exc)}))
            continue
        line = {"id": ident, "chain": chain.code, "confidence": round(conf, 6),
                "patches": args.patches}
        if status != "ok":
            line["status"] = status
            caveat = caveat or status == "no-metadata"
        print(json.dumps(line), flush=True)
    if caveat:
        print("warning: some images had no quantization table; stage 1 ran with a zero "
              "Q vector and is less reliable for them", file=sys.stderr)
    return EXIT_OK


# evaluate

def cmd_evaluate(args) -> int:
    cfg = _config(args)
    bundle_path = Path(args.bundle) if args.bundle else cfg.path("bundle")
    cache = Path(args.cache) if args.cache else cfg.path("test_cache")
    manifest = Path(args.manifest) if args.manifest else cfg.path("manifest")
    out_dir = Path(args.out) if args.out else cfg.path("out_dir")
    model, _ = bundle_io.load_bundle(bundle_path)
    test = _load_cache(cache)
    lookup = q_lookup(load_manifest(manifest))
    report = evaluate(model, test, lookup, args.balance or cfg.eval_balance,
                      cfg.seeds["classify"])
    summary = write_report(report, out_dir)
    print(report["matrices"]["table4"].to_text(), file=sys.stderr)
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="chaintrace", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("parse-dqt", help="print quantization tables and the Q feature as JSON")
    s.add_argument("file")
    s.add_argument("--compact", action="store_true")
    s.set_defaults(func=cmd_parse_dqt)

    s = sub.add_parser("simulate", help="generate a synthetic chain dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--images", type=int, default=200)
    s.add_argument("--size", type=int, default=192)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--chains", help="comma-separated chain codes (default: all valid chains)")
    s.add_argument("--profiles", help="JSON file of platform profiles")
    s.add_argument("--taxonomy", help="JSON taxonomy file (default: synthetic)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("make-patches", help="split a manifest and write patch caches")
    s.add_argument("--config")
    s.add_argument("--manifest")
    s.add_argument("--size", type=int)
    s.add_argument("--train-count", type=int)
    s.add_argument("--test-count", type=int)
    s.add_argument("--test-fraction", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out-train")
    s.add_argument("--out-test")
    s.set_defaults(func=cmd_make_patches)

    s = sub.add_parser("train-stage1", help="train the stage-1 CNN and forest")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train_stage1)

    s = sub.add_parser("train-stage2", help="train one stage-2 head into the bundle")
    s.add_argument("--config", required=True)
    s.add_argument("--primary", required=True)
    s.set_defaults(func=cmd_train_stage2)

    s = sub.add_parser("classify", help="classify images, one JSON line each")
    s.add_argument("--bundle", required=True)
    s.add_argument("--manifest", help="resolve arguments as manifest ids")
    s.add_argument("--patches", type=int, default=16)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("images", nargs="*")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("evaluate", help="confusion matrices and accuracy for a test cache")
    s.add_argument("--config")
    s.add_argument("--bundle")
    s.add_argument("--cache")
    s.add_argument("--manifest")
    s.add_argument("--out")
    s.add_argument("--balance", choices=("chain", "primary"))
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigInvalid) as exc:
        print(f"chaintrace: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MODEL_ERRORS as exc:
        print(f"chaintrace: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except DATA_ERRORS as exc:
        print(f"chaintrace: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EmptyInput as exc:
        print(f"chaintrace: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
