"""Command-line pipeline: simulate -> featurize -> train-loco -> baselines
-> explain -> report, all driven by one JSON config plus dotted overrides."""

from __future__ import annotations

import copy
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import baselines as bl
from . import dataset as ds
from . import evalharness as ev
from . import explain as ex
from . import nncore
from .errors import ConfigError, DataError, PipelineError
from .featurize import FeaturizeConfig
from .nncore import CLASS_NAMES, TrainConfig

DEFAULT_CONFIG = {
    "seed": 0,
    "sim": {},
    "layout": None,  # inline layout dict or path string; None = default cage
    "featurize": {},
    "train": {},
    "baselines": {},
    "paths": {"manifest": None, "weights": None},
    "explain": {"formats": ["pgm", "csv"], "figures": True},
    "save_fold_weights": False,
    "full_model": True,
}


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def _apply_override(cfg: dict, spec: str):
    if "=" not in spec:
        raise ConfigError(f"override must look like key.path=value, got {spec!r}")
    dotted, raw = spec.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    keys = dotted.split(".")
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {dotted!r} crosses a non-dict value")
    node[keys[-1]] = value


def load_config(path: str | None, overrides=()) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            with open(p) as fh:
                user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{p}: config must be a JSON object")
        cfg = _deep_merge(cfg, user)
    for spec in overrides:
        _apply_override(cfg, spec)
    return cfg


def _from_keys(cls, section: dict, name: str, **extra):
    known = set(cls.__dataclass_fields__)
    unknown = set(section) - known
    if unknown:
        raise ConfigError(f"unknown {name} config keys: {sorted(unknown)}")
    return cls(**{**section, **extra})


def build_featurize_config(cfg: dict) -> FeaturizeConfig:
    return _from_keys(FeaturizeConfig, cfg.get("featurize", {}), "featurize")


def build_train_config(cfg: dict) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    section.setdefault("rng_seed", cfg.get("seed", 0))
    return _from_keys(TrainConfig, section, "train")


def build_sim_config(cfg: dict) -> ds.SimConfig:
    section = dict(cfg.get("sim", {}))
    section.setdefault("rng_seed", cfg.get("seed", 0))
    profiles = section.pop("class_profiles", None)
    if profiles is not None:
        profiles = {
            label: ds.ClassProfile(**{
                **spec, "mixture": [tuple(m) for m in spec["mixture"]]
            })
            for label, spec in profiles.items()
        }
    return _from_keys(ds.SimConfig, section, "sim", class_profiles=profiles)


def build_baseline_config(cfg: dict) -> bl.BaselineConfig:
    section = dict(cfg.get("baselines", {}))
    svm = section.pop("svm", {})
    return _from_keys(
        bl.BaselineConfig, section, "baselines",
        svm=_from_keys(bl.SvmConfig, svm, "baselines.svm"),
    )


def build_layout(cfg: dict) -> ds.CageLayout:
    spec = cfg.get("layout")
    if spec is None:
        return ds.CageLayout()
    if isinstance(spec, str):
        return ds.load_layout(spec)
    anchors = {k: tuple(v) for k, v in spec.get("anchors", {}).items()}
    kwargs = {k: spec[k] for k in ("width", "height") if k in spec}
    if anchors:
        kwargs["anchors"] = anchors
    return ds.CageLayout(**kwargs)


# ---------------------------------------------------------------------------
# artifacts


def _manifest_path(cfg: dict, out: Path) -> Path:
    explicit = cfg.get("paths", {}).get("manifest")
    return Path(explicit) if explicit else out / "data" / "manifest.json"


def _load_items(cfg: dict, out: Path, fcfg: FeaturizeConfig, normalization: str):
    """Items from the feature cache when present, else from the manifest."""
    cache = out / "features.json"
    if cache.exists():
        with open(cache) as fh:
            doc = json.load(fh)
        cached_norm = doc.get("config", {}).get("normalization")
        if cached_norm != normalization:
            raise ConfigError(
                f"feature cache was built with normalization={cached_norm!r}, "
                f"config asks for {normalization!r}; re-run featurize"
            )
        items = []
        for rec_id, entry in doc["tensors"].items():
            meta = doc["meta"][rec_id]
            arr = np.array(entry["data"], dtype=float).reshape(entry["shape"])
            items.append(
                (rec_id, meta["cage_id"], arr, CLASS_NAMES.index(meta["label"]))
            )
        return items
    manifest = _manifest_path(cfg, out)
    recordings = ds.load_manifest(manifest, fcfg.cage_w, fcfg.cage_h)
    return ev.featurize_items(recordings, fcfg, normalization)


def _write_feature_cache(items, fcfg: FeaturizeConfig, normalization: str, path: Path):
    doc = {
        "config": {**vars(fcfg), "normalization": normalization},
        "tensors": {},
        "meta": {},
    }
    for rec_id, cage_id, arr, label_idx in items:
        doc["tensors"][rec_id] = {
            "shape": list(arr.shape),
            "data": arr.ravel().tolist(),
        }
        doc["meta"][rec_id] = {"cage_id": cage_id, "label": CLASS_NAMES[label_idx]}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def _fail(stage: str, exc: PipelineError):
    click.echo(f"{stage}: error: {exc}", err=True)
    sys.exit(exc.exit_code)


# ---------------------------------------------------------------------------
# commands


@click.group()
@click.option("--config", "config_path", default=None,
              help="JSON pipeline config; defaults apply when omitted.")
@click.option("--set", "overrides", multiple=True, metavar="KEY.PATH=VALUE",
              help="Override a config entry (repeatable).")
@click.option("--out", default="out", show_default=True,
              help="Output directory for all stage artifacts.")
@click.option("--jobs", default=1, show_default=True,
              help="Parallel workers for CV folds.")
@click.pass_context
def main(ctx, config_path, overrides, out, jobs):
    """Stop-position stereotype classification pipeline."""
    try:
        cfg = load_config(config_path, overrides)
    except PipelineError as exc:
        _fail("config", exc)
    ctx.obj = {"cfg": cfg, "out": Path(out), "jobs": jobs}
    ctx.obj["out"].mkdir(parents=True, exist_ok=True)


@main.command()
@click.pass_obj
def simulate(obj):
    """Generate the synthetic dataset (manifest + trajectory CSVs)."""
    try:
        cfg = obj["cfg"]
        sim_cfg = build_sim_config(cfg)
        layout = build_layout(cfg)
        recordings = ds.simulate(sim_cfg, layout)
        data_dir = obj["out"] / "data"
        manifest = ds.write_dataset(recordings, data_dir)
        ds.save_layout(layout, data_dir / "layout.json")
        click.echo(f"simulate: wrote {len(recordings)} recordings, manifest {manifest}")
    except PipelineError as exc:
        _fail("simulate", exc)


@main.command()
@click.pass_obj
def featurize(obj):
    """Detect stops, build histogram stacks, write the feature cache."""
    try:
        cfg = obj["cfg"]
        fcfg = build_featurize_config(cfg)
        tcfg = build_train_config(cfg)
        manifest = _manifest_path(cfg, obj["out"])
        recordings = ds.load_manifest(manifest, fcfg.cage_w, fcfg.cage_h)
        items = ev.featurize_items(recordings, fcfg, tcfg.normalization)
        cache = obj["out"] / "features.json"
        _write_feature_cache(items, fcfg, tcfg.normalization, cache)
        click.echo(f"featurize: cached {len(items)} feature stacks to {cache}")
    except PipelineError as exc:
        _fail("featurize", exc)


@main.command("train-loco")
@click.pass_obj
def train_loco(obj):
    """Leave-one-cage-out CNN training; writes eval_report.json."""
    try:
        cfg = obj["cfg"]
        out = obj["out"]
        fcfg = build_featurize_config(cfg)
        tcfg = build_train_config(cfg)
        items = _load_items(cfg, out, fcfg, tcfg.normalization)
        fold_params = {} if cfg.get("save_fold_weights") else None
        report = ev.run_loco_items(
            items, tcfg, jobs=obj["jobs"], save_fold_params=fold_params,
            config_echo={"featurize": vars(fcfg), "train": vars(tcfg)},
        )
        report.save(out / "eval_report.json")
        if fold_params:
            wdir = out / "weights"
            wdir.mkdir(exist_ok=True)
            for cage_id, params in fold_params.items():
                nncore.save_params(params, wdir / f"{cage_id}.json")
        if cfg.get("full_model", True):
            params, losses = ev.train([(it[2], it[3]) for it in items], tcfg)
            nncore.save_params(params, out / "model_full.json")
            from .figures import save_loss_figure

            save_loss_figure(losses, out / "training_loss.png")
        acc = report.overall_accuracy
        click.echo(
            f"train-loco: {report.aggregate.total} recordings, "
            f"overall accuracy {acc:.3f}" if acc is not None else "train-loco: done"
        )
    except PipelineError as exc:
        _fail("train-loco", exc)


@main.command("baselines")
@click.pass_obj
def baselines_cmd(obj):
    """PCA + 1-NN and SVM baselines on the same LOCO folds."""
    try:
        cfg = obj["cfg"]
        out = obj["out"]
        fcfg = build_featurize_config(cfg)
        tcfg = build_train_config(cfg)
        bcfg = build_baseline_config(cfg)
        items = _load_items(cfg, out, fcfg, tcfg.normalization)
        report = bl.run_loco_baseline_items(
            items, bcfg, config_echo={"normalization": tcfg.normalization}
        )
        bl.save_baseline_report(report, out / "baseline_report.json")
        knn = report["methods"]["knn"]["overall_accuracy"]
        svm = report["methods"]["svm"]["overall_accuracy"]
        click.echo(f"baselines: 1-NN accuracy {knn:.3f}, SVM accuracy {svm:.3f}")
    except PipelineError as exc:
        _fail("baselines", exc)


@main.command("explain")
@click.pass_obj
def explain_cmd(obj):
    """Class-averaged activation maps exported as PGM/CSV (+ PNG montages)."""
    try:
        cfg = obj["cfg"]
        out = obj["out"]
        fcfg = build_featurize_config(cfg)
        tcfg = build_train_config(cfg)
        items = _load_items(cfg, out, fcfg, tcfg.normalization)
        weights = cfg.get("paths", {}).get("weights") or out / "model_full.json"
        weights = Path(weights)
        if weights.exists():
            params = nncore.load_params(weights)
        else:
            params, _ = ev.train([(it[2], it[3]) for it in items], tcfg)
            nncore.save_params(params, out / "model_full.json")
        sets = [
            ex.capture_activations(params, arr, rec_id, CLASS_NAMES[label_idx])
            for rec_id, _, arr, label_idx in items
        ]
        cam = ex.class_average(sets)
        ecfg = cfg.get("explain", {})
        index = ex.export_class_maps(
            cam, out / "activation_maps",
            formats=tuple(ecfg.get("formats", ("pgm", "csv"))),
            figures=bool(ecfg.get("figures", True)),
        )
        click.echo(f"explain: wrote activation maps, index {index}")
    except PipelineError as exc:
        _fail("explain", exc)


@main.command("report")
@click.pass_obj
def report_cmd(obj):
    """Print the confusion table and accuracies; render CSV + figure."""
    try:
        out = obj["out"]
        path = out / "eval_report.json"
        if not path.exists():
            raise DataError(f"no eval report at {path}; run train-loco first")
        report = ev.EvalReport.load(path)
        counts = report.aggregate.counts

        click.echo("Confusion matrix (rows = true, cols = predicted)")
        click.echo("      " + "".join(f"{c:>6}" for c in CLASS_NAMES))
        for i, name in enumerate(CLASS_NAMES):
            click.echo(f"  {name:>4}" + "".join(f"{v:>6}" for v in counts[i]))

        def pct(v):
            return "n/a" if v is None else f"{100 * v:.1f}%"

        click.echo(f"Overall accuracy: {pct(report.overall_accuracy)}")
        click.echo(f"Male accuracy:    {pct(report.male_accuracy)}")
        click.echo(f"Female accuracy:  {pct(report.female_accuracy)}")

        with open(out / "report.csv", "w") as fh:
            fh.write("true\\pred," + ",".join(CLASS_NAMES) + "\n")
            for i, name in enumerate(CLASS_NAMES):
                fh.write(name + "," + ",".join(str(v) for v in counts[i]) + "\n")
            fh.write(f"overall_accuracy,{report.overall_accuracy}\n")
            fh.write(f"male_accuracy,{report.male_accuracy}\n")
            fh.write(f"female_accuracy,{report.female_accuracy}\n")

        from .figures import save_confusion_figure

        save_confusion_figure(counts, out / "confusion_matrix.png")
        click.echo(f"report: wrote {out / 'report.csv'} and confusion_matrix.png")
    except PipelineError as exc:
        _fail("report", exc)


if __name__ == "__main__":
    main()
