"""``mscmr`` command line: the three-step framework as subcommands.

Step 1 ``augment``: resample LGE onto the b-SSFP grid and histogram-match
every b-SSFP slice to its LGE slice (labels carried over unchanged).
``preprocess`` resizes slices to 256x256 and center-crops to 144x144,
recording the crop for the inverse.  Step 2, the CNN ensemble, is external:
its per-member probability stacks enter ``postprocess`` (step 3), which
averages them, takes the argmax, reconstructs the original geometry and keeps
the largest component per class.  ``evaluate`` writes JSON and CSV reports.

Exit codes: 0 success, 1 internal error (or a failed ``gradcheck``),
2 usage or input error.

CSV report columns, in this fixed order::

    volume, RV_dice, RV_jaccard, RV_assd_mm, RV_hd_mm, LV_..., LVM_..., mean_...

Undefined distances (an empty mask) are empty cells in CSV and ``null`` in
JSON.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .config import PipelineConfig, load_config
from .geometry import CropRecord, preprocess_volume, reconstruct_inverse, resample_volume
from .histmatch import make_fake_lge
from .loss import class_weights, gradcheck, inverse_class_weights
from .metrics import evaluate, reports_to_csv, reports_to_json
from .phantom import PhantomSpec, make_phantom, synthetic_predictions
from .postprocess import (argmax_labels, component_stats, ensemble_mean, ensemble_vote,
                          largest_component_per_class)
from .volume_io import (CLASS_NAMES, GridError, LabelGrid3D, VolumeFormatError,
                        atomic_write_bytes, encode_for_path, load)

log = logging.getLogger("mscmr")

TOOL = "mscmr"


class InputError(Exception):
    """Bad usage or unreadable input; exit code 2."""


def _stem(path: str | Path) -> str:
    name = Path(path).name
    for suffix in (".nii.gz", ".nii", ".json", ".raw"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return Path(name).stem


def _file_hash(path: str | Path) -> str:
    path = Path(path)
    h = hashlib.sha256()
    if path.suffix in (".json", ".raw") and path.with_suffix(".raw").exists():
        for part in (path.with_suffix(".json"), path.with_suffix(".raw")):
            h.update(part.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def _read(path, kind: str, cfg: PipelineConfig):
    try:
        grid = load(path, kind, remap=cfg.remap() if kind == "label" else None,
                    class_count=cfg.class_count)
    except FileNotFoundError as exc:
        raise InputError(f"{path}: file not found") from exc
    except (OSError, VolumeFormatError, GridError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    return grid


def _input_entry(path) -> dict:
    return {"path": str(path), "sha256": _file_hash(path)}


def _json_bytes(doc) -> bytes:
    return (json.dumps(doc, indent=2) + "\n").encode()


class _Outputs:
    """Collects every output in memory; nothing touches disk until `commit`."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.files: list[tuple[Path, bytes]] = []

    def grid(self, grid, path) -> str:
        remap = self.cfg.remap() if isinstance(grid, LabelGrid3D) else None
        self.files.extend(encode_for_path(grid, path, remap=remap))
        return str(path)

    def json(self, doc, path) -> str:
        self.files.append((Path(path), _json_bytes(doc)))
        return str(path)

    def text(self, text: str, path) -> str:
        self.files.append((Path(path), text.encode("utf-8")))
        return str(path)

    def commit(self) -> None:
        for path, payload in self.files:
            atomic_write_bytes(path, payload)


def _manifest(step: str, inputs: dict, cfg: PipelineConfig, **extra) -> dict:
    return {"tool": TOOL, "version": __version__, "step": step, "inputs": inputs,
            "config": cfg.to_json(), **extra}


def _class_names(cfg: PipelineConfig):
    if cfg.class_count == len(CLASS_NAMES):
        return CLASS_NAMES
    return ("background",) + tuple(f"class{c}" for c in range(1, cfg.class_count))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_augment(bssfp_path, label_path, lge_path, out_dir, cfg: PipelineConfig,
                dump_mappings: bool = False) -> dict:
    """Fake LGE from a b-SSFP volume, its labels and an LGE volume."""
    bssfp = _read(bssfp_path, "intensity", cfg)
    labels = _read(label_path, "label", cfg)
    lge = _read(lge_path, "intensity", cfg)
    if labels.meta.dims != bssfp.meta.dims:
        raise InputError(f"{label_path}: labels do not match the b-SSFP grid: "
                         + bssfp.meta.describe_mismatch(labels.meta))
    lge_on_bssfp = resample_volume(lge, bssfp.meta.dims, "linear")
    mappings = [] if dump_mappings else None
    fake, fake_labels = make_fake_lge(bssfp, labels, lge_on_bssfp, cfg.bins,
                                      workers=cfg.workers, mappings=mappings)
    out_dir = Path(out_dir)
    outs = _Outputs(cfg)
    outputs = {
        "fake_lge": outs.grid(fake, out_dir / "fake_lge.nii.gz"),
        "fake_lge_label": outs.grid(fake_labels, out_dir / "fake_lge_label.nii.gz"),
    }
    if mappings is not None:
        outputs["mappings"] = outs.json({"slices": [m.to_json() for m in mappings]},
                                        out_dir / "mappings.json")
    manifest = _manifest(
        "augment",
        {"bssfp": _input_entry(bssfp_path), "bssfp_label": _input_entry(label_path),
         "lge": _input_entry(lge_path)},
        cfg,
        lge_resampled_from=list(lge.meta.dims),
        outputs=outputs,
    )
    outs.json(manifest, out_dir / "augment_manifest.json")
    outs.commit()
    return manifest


def cmd_preprocess(volume_path, out_dir, cfg: PipelineConfig, kind: str = "intensity") -> dict:
    """Resize every slice and center-crop; the manifest keeps the crop record."""
    grid = _read(volume_path, kind, cfg)
    try:
        cropped, record = preprocess_volume(grid, cfg.resize, cfg.crop)
    except GridError as exc:
        raise InputError(f"{volume_path}: {exc}") from exc
    stem = _stem(volume_path)
    out_dir = Path(out_dir)
    outs = _Outputs(cfg)
    outputs = {"volume": outs.grid(cropped, out_dir / f"{stem}_prep.nii.gz")}
    manifest = _manifest(
        "preprocess",
        {"volume": _input_entry(volume_path)},
        cfg,
        kind=kind,
        original=grid.meta.to_json(),
        crop_record=record.to_json(),
        outputs=outputs,
    )
    manifest_path = out_dir / f"{stem}_prep.manifest.json"
    outs.json(manifest, manifest_path)
    outs.commit()
    manifest["manifest_path"] = str(manifest_path)
    return manifest


def _load_manifest(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise InputError(f"{path}: manifest not found") from exc
    except (OSError, ValueError) as exc:
        raise InputError(f"{path}: unreadable manifest: {exc}") from exc
    if "crop_record" not in doc:
        raise InputError(f"{path}: manifest has no crop_record (expected a preprocess manifest)")
    return doc


def postprocess_members(members, record: CropRecord, cfg: PipelineConfig):
    """Ensemble -> argmax -> inverse geometry -> largest component per class."""
    fuse = ensemble_mean if cfg.ensemble == "mean" else ensemble_vote
    labels = argmax_labels(fuse(members))
    restored = reconstruct_inverse(labels, record)
    before = component_stats(restored, cfg.connectivity, cfg.per_slice_components)
    cleaned = largest_component_per_class(restored, cfg.connectivity, cfg.per_slice_components)
    return cleaned, before


def cmd_postprocess(prob_paths, manifest_path, out_path, cfg: PipelineConfig) -> dict:
    if not prob_paths:
        raise InputError("postprocess needs at least one probability stack")
    manifest = _load_manifest(manifest_path)
    try:
        record = CropRecord.from_json(manifest["crop_record"])
    except (KeyError, TypeError, GridError) as exc:
        raise InputError(f"{manifest_path}: invalid crop record: {exc}") from exc
    members = [_read(p, "probability", cfg) for p in prob_paths]
    try:
        cleaned, before = postprocess_members(members, record, cfg)
    except GridError as exc:
        raise InputError(str(exc)) from exc
    for cls, sizes in before.items():
        log.info("class %s: %d component(s) %s, kept %s", cls, len(sizes), sizes[:5],
                 sizes[:1])
    out_path = Path(out_path)
    outs = _Outputs(cfg)
    stats_path = out_path.parent / f"{_stem(out_path)}.components.json"
    outputs = {"labels": outs.grid(cleaned, out_path)}
    entry = _manifest(
        "postprocess",
        {"members": [_input_entry(p) for p in prob_paths],
         "manifest": _input_entry(manifest_path)},
        cfg,
        components_before_cleanup=before,
        outputs=outputs,
    )
    outs.json(entry, stats_path)
    outs.commit()
    return entry


def cmd_evaluate(pairs, out_dir, cfg: PipelineConfig) -> dict:
    """Score (prediction, ground truth) pairs; writes report.json and report.csv."""
    if not pairs:
        raise InputError("evaluate needs at least one PRED GT pair")
    loaded = [(_read(p, "label", cfg), _read(g, "label", cfg), p, g) for p, g in pairs]
    for pred, gt, p, g in loaded:
        if not pred.meta.same_grid(gt.meta):
            raise InputError(f"{p} vs {g}: grid mismatch: {pred.meta.describe_mismatch(gt.meta)}")
    names = _class_names(cfg)
    classes = tuple(range(1, cfg.class_count))

    def one(item):
        pred, gt, p, _g = item
        return evaluate(pred, gt, classes=classes, class_names=names,
                        surface_aggregate=cfg.surface_aggregate, name=_stem(p))

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            reports = list(pool.map(one, loaded))
    else:
        reports = [one(item) for item in loaded]
    for rep in reports:
        for w in rep.warnings:
            log.warning("%s: %s", rep.name, w)
    # workers only change scheduling, so the echo leaves them out
    echo = {k: v for k, v in cfg.to_json().items() if k != "workers"}
    out_dir = Path(out_dir)
    outs = _Outputs(cfg)
    json_text = reports_to_json(reports, echo)
    outs.text(json_text, out_dir / "report.json")
    outs.text(reports_to_csv(reports), out_dir / "report.csv")
    outs.commit()
    return json.loads(json_text)


def cmd_phantom(seed: int, out_dir, cfg: PipelineConfig) -> dict:
    try:
        spec = PhantomSpec.from_json(cfg.phantom)
    except (TypeError, ValueError) as exc:
        raise InputError(f"invalid phantom spec: {exc}") from exc
    ph = make_phantom(spec, seed)
    out_dir = Path(out_dir)
    outs = _Outputs(cfg)
    outputs = {
        "bssfp": outs.grid(ph.bssfp, out_dir / "bssfp.nii.gz"),
        "bssfp_label": outs.grid(ph.bssfp_labels, out_dir / "bssfp_label.nii.gz"),
        "lge": outs.grid(ph.lge, out_dir / "lge.nii.gz"),
        "lge_label": outs.grid(ph.lge_labels, out_dir / "lge_label.nii.gz"),
    }
    doc = {"tool": TOOL, "version": __version__, "step": "phantom", "seed": seed,
           "spec": spec.to_json(), "outputs": outputs}
    outs.json(doc, out_dir / "phantom.json")
    outs.commit()
    return doc


def cmd_gradcheck(seed: int, cfg: PipelineConfig, corrupt: bool = False):
    return gradcheck(seed, class_count=cfg.class_count, reduction=cfg.reduction, corrupt=corrupt)


def cmd_weights(label_paths, out_dir, cfg: PipelineConfig) -> dict:
    """Class weights over a whole labelled set."""
    grids = [_read(p, "label", cfg) for p in label_paths]
    fn = class_weights if cfg.weight_mode == "eq1" else inverse_class_weights
    w = fn(grids, cfg.class_count)
    doc = {"tool": TOOL, "version": __version__, "step": "weights",
           "weight_mode": cfg.weight_mode, "weights": [float(v) for v in w.w],
           "inputs": [_input_entry(p) for p in label_paths]}
    outs = _Outputs(cfg)
    outs.json(doc, Path(out_dir) / "class_weights.json")
    outs.commit()
    return doc


def cmd_pipeline(args, cfg: PipelineConfig) -> dict:
    """augment -> preprocess -> (external model) -> postprocess -> evaluate."""
    out = Path(args.out)
    steps = {}
    steps["augment"] = cmd_augment(args.bssfp, args.bssfp_label, args.lge, out / "augment", cfg)
    fake = steps["augment"]["outputs"]
    steps["preprocess_fake_lge"] = cmd_preprocess(fake["fake_lge"], out / "preprocess", cfg)
    steps["preprocess_fake_lge_label"] = cmd_preprocess(fake["fake_lge_label"], out / "preprocess",
                                                        cfg, kind="label")
    target = cmd_preprocess(args.target, out / "preprocess", cfg)
    steps["preprocess_target"] = target
    prob_paths = list(args.probs or [])
    if not prob_paths:
        if args.gt is None:
            raise InputError("pipeline needs --probs, or --gt to build placeholder model outputs")
        # placeholder for the external CNN ensemble: noisy one-hot ground truth
        gt_prep = cmd_preprocess(args.gt, out / "preprocess", cfg, kind="label")
        steps["preprocess_gt"] = gt_prep
        gt_crop = _read(gt_prep["outputs"]["volume"], "label", cfg)
        members, _ = synthetic_predictions(gt_crop, args.placeholder_members,
                                           noise=args.placeholder_noise, seed=args.seed)
        outs = _Outputs(cfg)
        prob_paths = [outs.grid(m, out / "model" / f"member{k}_prob.nii.gz")
                      for k, m in enumerate(members)]
        outs.commit()
        steps["model_placeholder"] = {"members": prob_paths, "noise": args.placeholder_noise,
                                      "seed": args.seed}
    pred_path = out / "postprocess" / f"{_stem(args.target)}_pred.nii.gz"
    steps["postprocess"] = cmd_postprocess(prob_paths, target["manifest_path"], pred_path, cfg)
    if args.gt is not None:
        steps["evaluate"] = cmd_evaluate([(pred_path, args.gt)], out / "evaluate", cfg)
    doc = {"tool": TOOL, "version": __version__, "step": "pipeline", "steps": steps}
    atomic_write_bytes(out / "pipeline_manifest.json", _json_bytes(doc))
    return doc


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON config file (missing fields take defaults)")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="random seed (u64)")
    p.add_argument("--connectivity", type=int, choices=(6, 26))
    p.add_argument("--ensemble", choices=("mean", "vote"))
    p.add_argument("--workers", type=int, help="worker threads")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="mscmr", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("augment", parents=[common], help="histogram-match b-SSFP onto LGE")
    p.add_argument("bssfp")
    p.add_argument("bssfp_label")
    p.add_argument("lge")
    p.add_argument("--dump-mappings", action="store_true")

    p = sub.add_parser("preprocess", parents=[common], help="resize slices and center-crop")
    p.add_argument("volume")
    p.add_argument("--kind", choices=("intensity", "label"), default="intensity")

    p = sub.add_parser("postprocess", parents=[common],
                       help="ensemble, argmax, reconstruct and clean up")
    p.add_argument("probs", nargs="+", help="probability stacks, one per ensemble member")
    p.add_argument("--manifest", required=True, help="preprocess manifest of the target volume")
    p.add_argument("--output", help="output label file (default: <out>/pred.nii.gz)")

    p = sub.add_parser("evaluate", parents=[common], help="Dice/Jaccard/ASSD/HD report")
    p.add_argument("volumes", nargs="+", metavar="PRED GT", help="prediction / ground-truth pairs")

    p = sub.add_parser("phantom", parents=[common], help="write a synthetic phantom pair")

    p = sub.add_parser("gradcheck", parents=[common],
                       help="finite-difference check of the loss gradient")
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)

    p = sub.add_parser("weights", parents=[common], help="class weights over label volumes")
    p.add_argument("labels", nargs="+")

    p = sub.add_parser("pipeline", parents=[common], help="run every step end to end")
    p.add_argument("--bssfp", required=True)
    p.add_argument("--bssfp-label", required=True)
    p.add_argument("--lge", required=True)
    p.add_argument("--target", required=True, help="LGE volume to segment")
    p.add_argument("--gt", help="ground truth of the target, for evaluation")
    p.add_argument("--probs", nargs="+",
                   help="external model probability stacks on the cropped target grid")
    p.add_argument("--placeholder-members", type=int, default=5)
    p.add_argument("--placeholder-noise", type=float, default=0.3)
    return parser


def _config(args) -> PipelineConfig:
    try:
        cfg = load_config(args.config)
        return cfg.with_overrides(connectivity=args.connectivity, ensemble=args.ensemble,
                                  workers=args.workers)
    except FileNotFoundError as exc:
        raise InputError(f"{args.config}: config file not found") from exc
    except (OSError, ValueError, TypeError) as exc:
        raise InputError(f"{args.config}: invalid config: {exc}") from exc


def run(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    if args.command == "augment":
        cmd_augment(args.bssfp, args.bssfp_label, args.lge, out, cfg, args.dump_mappings)
    elif args.command == "preprocess":
        m = cmd_preprocess(args.volume, out, cfg, args.kind)
        print(f"crop offsets {tuple(m['crop_record']['offsets'])} -> {m['outputs']['volume']}")
    elif args.command == "postprocess":
        cmd_postprocess(args.probs, args.manifest, args.output or out / "pred.nii.gz", cfg)
    elif args.command == "evaluate":
        if len(args.volumes) % 2:
            raise InputError("evaluate takes PRED GT pairs")
        pairs = list(zip(args.volumes[0::2], args.volumes[1::2]))
        doc = cmd_evaluate(pairs, out, cfg)
        for vol in doc["volumes"]:
            mean = vol["mean"]
            print(f"{vol['volume']}: " + "  ".join(
                f"{k}={'n/a' if v is None else f'{v:.4f}'}" for k, v in mean.items()))
    elif args.command == "phantom":
        cmd_phantom(args.seed, out, cfg)
    elif args.command == "gradcheck":
        res = cmd_gradcheck(args.seed, cfg, args.corrupt_gradient)
        verdict = "PASS" if res.passed else "FAIL"
        print(f"gradcheck {verdict}: {res.cases} cases, max relative error {res.max_rel_err:.3e} "
              f"(tolerance {res.tolerance:.0e}), zero-weight gradient "
              f"{'ok' if res.zero_weight_ok else 'NONZERO'}")
        return 0 if res.passed else 1
    elif args.command == "weights":
        doc = cmd_weights(args.labels, out, cfg)
        print(" ".join(f"{w:.6g}" for w in doc["weights"]))
    elif args.command == "pipeline":
        doc = cmd_pipeline(args, cfg)
        if "evaluate" in doc["steps"]:
            mean = doc["steps"]["evaluate"]["volumes"][0]["mean"]
            print("mean: " + "  ".join(f"{k}={v}" for k, v in mean.items()))
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except InputError as exc:
        print(f"mscmr: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"mscmr: internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
