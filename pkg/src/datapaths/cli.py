"""Batch front door: fixtures, attacks, extraction, scoring, layouts, server.

Every command is a thin wrapper over library calls; anything a command does
can be reproduced by importing the module it delegates to. Output goes to
stdout as a small human-readable table, or as the underlying JSON document
with --format doc. Errors print one machine-parsable JSON line on stderr and
exit nonzero.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import formats as F
from .analytics import river_distances, set_relations
from .attack import AttackParams
from .contribution import NeuronMask, contribution_area, contribution_whole, rank_contributions
from .errors import DatapathsError, ValidationError
from .extract import ExtractionParams, binarize, extract_constrained, extract_datapath
from .layout import Rect, river_layout, river_svg, treemap_layout, treemap_objective, treemap_svg
from .model import model_from_doc, model_to_doc
from .pipeline import attack_cases, sample_targets, score_cases, score_methods
from .toydata import texture_dataset, toy_model_init
from .train import accuracy, train_toy


def _load_model(path):
    doc = F.load_doc(path)
    return model_from_doc(doc), F.content_id(doc)


def _load_image(path):
    doc = F.load_doc(path)
    x, label = F.image_from_doc(doc)
    return x, label, F.content_id(doc)


def _emit(out, text: str) -> None:
    if out is None:
        click.echo(text)
    else:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"wrote {out}")


FORMATS = click.Choice(["table", "doc"])


def extraction_options(include_gamma: bool = True):
    def wrap(fn):
        fn = click.option("--seed", type=int, default=0, show_default=True,
                          help="extraction rng seed")(fn)
        fn = click.option("--noise", type=float, default=0.0, show_default=True,
                          help="gradient noise scale")(fn)
        fn = click.option("--tau", type=float, default=0.5, show_default=True,
                          help="binarization threshold")(fn)
        fn = click.option("--iterations", type=int, default=500, show_default=True)(fn)
        fn = click.option("--lr", type=float, default=0.05, show_default=True,
                          help="gate learning rate")(fn)
        if include_gamma:
            fn = click.option("--gamma", type=float, default=0.0, show_default=True,
                              help="chain coupling weight")(fn)
        fn = click.option("--l1", type=float, default=0.01, show_default=True,
                          help="gate sparsity weight")(fn)
        return fn
    return wrap


def _params(l1, lr, iterations, tau, noise, seed, gamma=0.0) -> ExtractionParams:
    return ExtractionParams(l1_weight=l1, coupling_weight=gamma, learning_rate=lr,
                            iterations=iterations, seed=seed, binarize_tau=tau,
                            noise_scale=noise)


def attack_options(fn):
    fn = click.option("--steps", type=int, default=10, show_default=True)(fn)
    fn = click.option("--mu", type=float, default=0.9, show_default=True)(fn)
    fn = click.option("--alpha", type=float, default=0.01, show_default=True)(fn)
    fn = click.option("--epsilon", type=float, default=0.1, show_default=True)(fn)
    return fn


@click.group()
def cli():
    """Critical feature-map analysis for small CNN classifiers."""


# -- fixtures -----------------------------------------------------------------

@cli.command("train-toy")
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@click.option("--train-size", type=int, default=240, show_default=True)
@click.option("--test-size", type=int, default=100, show_default=True)
@click.option("--data-seed", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=7, show_default=True, help="init seed")
@click.option("--size", type=int, default=16, show_default=True)
@click.option("--channels", type=int, default=8, show_default=True)
@click.option("--warm-epochs", type=int, default=20, show_default=True)
@click.option("--warm-lr", type=float, default=0.25, show_default=True)
@click.option("--cool-epochs", type=int, default=40, show_default=True)
@click.option("--cool-lr", type=float, default=0.08, show_default=True)
@click.option("--format", "fmt", type=FORMATS, default="table", show_default=True)
def train_toy_cmd(out_dir, train_size, test_size, data_seed, seed, size, channels,
                  warm_epochs, warm_lr, cool_epochs, cool_lr, fmt):
    """Train the texture classifier and write model plus datasets."""
    train = texture_dataset(train_size, seed=data_seed, size=size)
    test = texture_dataset(test_size, seed=data_seed + 1, size=size)
    model = toy_model_init(seed, size=size, channels=channels)
    # two-stage schedule: a hot stage finds the basin, a cool one settles it
    model = train_toy(model, train, warm_epochs, warm_lr, seed + 4)
    model = train_toy(model, train, cool_epochs, cool_lr, seed + 24)

    out_dir.mkdir(parents=True, exist_ok=True)
    F.save_doc(out_dir / "model.json", model_to_doc(model))
    F.save_doc(out_dir / "train.json", F.dataset_doc(train))
    F.save_doc(out_dir / "test.json", F.dataset_doc(test))
    result = {
        "model": str(out_dir / "model.json"),
        "train": str(out_dir / "train.json"),
        "test": str(out_dir / "test.json"),
        "train_accuracy": accuracy(model, train),
        "test_accuracy": accuracy(model, test),
    }
    if fmt == "doc":
        click.echo(F.json_dumps(result))
    else:
        click.echo(f"train accuracy {result['train_accuracy']:.3f}  "
                   f"test accuracy {result['test_accuracy']:.3f}")
        click.echo(f"wrote {out_dir}/model.json, train.json, test.json")


# -- attack -------------------------------------------------------------------

@cli.command("attack")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(path_type=Path), required=True)
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@attack_options
@click.option("--limit", type=int, default=None, help="stop after this many flips")
@click.option("--targets", type=int, default=5, show_default=True,
              help="candidate targets per case")
@click.option("--target-seed", type=int, default=0, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--format", "fmt", type=FORMATS, default="table", show_default=True)
def attack_cmd(model_path, dataset_path, out_dir, epsilon, alpha, mu, steps, limit,
               targets, target_seed, jobs, fmt):
    """Attack a dataset and write flipped cases as a triplet manifest."""
    model, _ = _load_model(model_path)
    dataset = F.dataset_from_doc(F.load_doc(dataset_path))
    params = AttackParams(epsilon=epsilon, alpha=alpha, mu=mu, steps=steps)
    cases = attack_cases(model, dataset, params, limit=limit, jobs=jobs)

    images = out_dir / "images"
    images.mkdir(parents=True, exist_ok=True)
    written: dict[int, str] = {}

    def target_file(index: int) -> str:
        if index not in written:
            rel = f"images/tgt_{index}.json"
            F.save_doc(out_dir / rel, F.image_doc(dataset.images[index],
                                                  int(dataset.labels[index])))
            written[index] = rel
        return written[index]

    manifest_cases = []
    for case in cases:
        picked = sample_targets(dataset, case.predicted_label, targets,
                                seed=target_seed + case.index, exclude={case.index})
        if not picked:
            continue
        src_rel = f"images/src_{case.index}.json"
        adv_rel = f"images/adv_{case.index}.json"
        F.save_doc(out_dir / src_rel, F.image_doc(case.source, case.source_label))
        F.save_doc(out_dir / adv_rel, F.image_doc(case.adversarial))
        manifest_cases.append(F.TripletCase(
            source_path=src_rel,
            adversarial_path=adv_rel,
            target_paths=tuple(target_file(t) for t in picked),
            source_label=case.source_label,
            predicted_label=case.predicted_label,
        ))
    F.save_doc(out_dir / "manifest.json", F.manifest_doc(manifest_cases))
    result = {
        "manifest": str(out_dir / "manifest.json"),
        "attacked": len(dataset),
        "flipped": len(cases),
        "cases": len(manifest_cases),
    }
    if fmt == "doc":
        click.echo(F.json_dumps(result))
    else:
        click.echo(f"flipped {len(cases)}/{len(dataset)} images, "
                   f"kept {len(manifest_cases)} cases with {targets} targets each")
        click.echo(f"wrote {result['manifest']}")


# -- extraction ---------------------------------------------------------------

def _describe_datapath(dp, params):
    active = len(binarize(dp, params.binarize_tau))
    return (f"gates>{params.binarize_tau:g}: {active}/{len(dp.gates)}  "
            f"loss {dp.converged_loss:.4f}  preserved {dp.label_preserved}")


@cli.command("extract")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--image", "image_path", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@extraction_options()
@click.option("--format", "fmt", type=FORMATS, default="table", show_default=True)
def extract_cmd(model_path, image_path, out, l1, gamma, lr, iterations, tau, noise,
                seed, fmt):
    """Extract one datapath from one image."""
    model, model_id = _load_model(model_path)
    x, _, example_id = _load_image(image_path)
    params = _params(l1, lr, iterations, tau, noise, seed, gamma)
    dp = extract_datapath(model, x, params, model_ref=model_id, example_ref=example_id)
    doc = F.datapath_doc(dp, params)
    if out is not None:
        F.save_doc(out, doc)
    if fmt == "doc":
        click.echo(F.json_dumps(doc))
    else:
        click.echo(_describe_datapath(dp, params))
        if out is not None:
            click.echo(f"wrote {out}")


@cli.command("extract-chain")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--out-dir", type=click.Path(path_type=Path), required=True)
@extraction_options()
@click.option("--format", "fmt", type=FORMATS, default="table", show_default=True)
@click.argument("images", nargs=-1, required=True, type=click.Path(path_type=Path))
def extract_chain_cmd(model_path, out_dir, l1, gamma, lr, iterations, tau, noise,
                      seed, fmt, images):
    """Extract a coupled chain of datapaths, one per image, in order."""
    model, model_id = _load_model(model_path)
    loaded = [_load_image(p) for p in images]
    params = _params(l1, lr, iterations, tau, noise, seed, gamma)
    dps = extract_constrained(model, [x for x, _, _ in loaded], params,
                              model_ref=model_id,
                              example_refs=[ref for _, _, ref in loaded])
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, dp in enumerate(dps):
        path = out_dir / f"datapath_{i}.json"
        F.save_doc(path, F.datapath_doc(dp, params))
        paths.append(str(path))
    if fmt == "doc":
        click.echo(F.json_dumps({"datapaths": paths}))
    else:
        for i, dp in enumerate(dps):
            click.echo(f"[{i}] {_describe_datapath(dp, params)}")
        click.echo(f"wrote {len(paths)} files to {out_dir}")


@cli.command("contribute")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--target-fm", type=int, required=True)
@click.option("--mask", "mask_path", type=click.Path(path_type=Path), default=None,
              help="run-length mask document restricting the preserved area")
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--top", type=int, default=10, show_default=True)
@extraction_options()
@click.option("--format", "fmt", type=FORMATS, default="table", show_default=True)
@click.argument("images", nargs=-1, required=True, type=click.Path(path_type=Path))
def contribute_cmd(model_path, target_fm, mask_path, out, top, l1, gamma, lr,
                   iterations, tau, noise, seed, fmt, images):
    """Rank predecessor feature maps by contribution to a target map."""
    model, _ = _load_model(model_path)
    xs = [_load_image(p)[0] for p in images]
    params = _params(l1, lr, iterations, tau, noise, seed, gamma)
    mask = None
    if mask_path is not None:
        mask = F.mask_from_rle(F.load_doc(mask_path))
        result = contribution_area(model, xs, target_fm, NeuronMask(target_fm, mask), params)
    else:
        result = contribution_whole(model, xs, target_fm, params)
    doc = F.contribution_doc(result, params, mask)
    if out is not None:
        F.save_doc(out, doc)
    if fmt == "doc":
        click.echo(F.json_dumps(doc))
    else:
        click.echo(f"contributions to feature map {target_fm} "
                   f"over {len(result.feature_maps)} predecessors")
        for fm, value in rank_contributions(result, min(top, len(result.feature_maps))):
            click.echo(f"  fm {fm:>4d}  {value:7.4f}")
        if out is not None:
            click.echo(f"wrote {out}")


# -- scoring ------------------------------------------------------------------

@cli.command("score")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(path_type=Path), default=None,
              help="run the whole pipeline, attack included")
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), default=None,
              help="score pre-attacked triplets instead")
@attack_options
@extraction_options(include_gamma=False)
@click.option("--gamma", type=float, default=0.1, show_default=True,
              help="coupling weight of the coupled method")
@click.option("--cases", type=int, default=3, show_default=True)
@click.option("--targets", type=int, default=5, show_default=True)
@click.option("--k", "ks", type=int, multiple=True, default=(1, 3, 5), show_default=True)
@click.option("--r", type=int, default=8, show_default=True, help="detection window")
@click.option("--target-seed", type=int, default=0, show_default=True)
@click.option("--jobs", type=int, default=1, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--format", "fmt", type=FORMATS, default="table", show_default=True)
def score_cmd(model_path, dataset_path, manifest_path, epsilon, alpha, mu, steps,
              l1, lr, iterations, tau, noise, seed, gamma, cases, targets, ks, r,
              target_seed, jobs, out, fmt):
    """Top-K pattern scores comparing independent and coupled extraction."""
    if (dataset_path is None) == (manifest_path is None):
        raise ValidationError("pass exactly one of --dataset or --manifest", "inputs")
    model, _ = _load_model(model_path)
    base = _params(l1, lr, iterations, tau, noise, seed)
    ks = sorted(set(ks))

    if dataset_path is not None:
        dataset = F.dataset_from_doc(F.load_doc(dataset_path))
        attack = AttackParams(epsilon=epsilon, alpha=alpha, mu=mu, steps=steps)
        result = score_methods(model, dataset, attack, base, gamma, cases, targets,
                               ks, target_seed=target_seed, r=r, jobs=jobs)
    else:
        root = Path(manifest_path).parent
        triplets = F.manifest_from_doc(F.load_doc(manifest_path))
        cases_data = []
        for i, case in enumerate(triplets):
            source, _, _ = _load_image(root / case.source_path)
            adversarial, _, _ = _load_image(root / case.adversarial_path)
            tars = [(p, _load_image(root / p)[0]) for p in case.target_paths]
            meta = {"source_label": case.source_label,
                    "predicted_label": case.predicted_label,
                    "targets": list(case.target_paths)}
            cases_data.append((i, source, adversarial, tars, meta))
        result = score_cases(model, cases_data, base, gamma, ks, r)

    doc = F.score_report_doc(result["rows"])
    doc["cases"] = [
        dict(d, independent=[list(p) for p in d["independent"]],
             coupled=[list(p) for p in d["coupled"]])
        for d in result["cases"]
    ]
    if out is not None:
        F.save_doc(out, doc)
    if fmt == "doc":
        click.echo(F.json_dumps(doc))
    else:
        click.echo(F.render_score_table(doc))
        if out is not None:
            click.echo(f"wrote {out}")


# -- layouts ------------------------------------------------------------------

LAYOUT_FORMATS = click.Choice(["svg", "doc"])


@cli.group("layout")
def layout_group():
    """Render river and treemap layouts from datapath documents."""


def _load_datapath(path):
    return F.datapath_from_doc(F.load_doc(path))


@layout_group.command("river")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--source", type=click.Path(path_type=Path), required=True)
@click.option("--adversarial", type=click.Path(path_type=Path), required=True)
@click.option("--target", type=click.Path(path_type=Path), required=True)
@click.option("--width", type=float, default=960.0, show_default=True)
@click.option("--height", type=float, default=320.0, show_default=True)
@click.option("--scale", type=float, default=1.0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--format", "fmt", type=LAYOUT_FORMATS, default="svg", show_default=True)
def layout_river_cmd(model_path, source, adversarial, target, width, height, scale,
                     out, fmt):
    """Three-curve river of per-layer datapath distances."""
    model, _ = _load_model(model_path)
    src, _ = _load_datapath(source)
    adv, _ = _load_datapath(adversarial)
    tar, _ = _load_datapath(target)
    d1, d2, d3 = river_distances(model, src, adv, tar)
    layout = river_layout(d1, d2, d3, Rect(0.0, 0.0, width, height), scale=scale)
    if fmt == "doc":
        _emit(out, F.json_dumps(F.river_layout_doc(layout)))
    else:
        _emit(out, river_svg(layout, width, height))


@layout_group.command("treemap")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--datapath", "datapath_paths", type=click.Path(path_type=Path),
              multiple=True, required=True, help="repeat for up to 3 datapaths")
@click.option("--layer", type=int, required=True,
              help="index into the model's gated layers")
@click.option("--width", type=float, default=600.0, show_default=True)
@click.option("--height", type=float, default=400.0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@click.option("--format", "fmt", type=LAYOUT_FORMATS, default="svg", show_default=True)
def layout_treemap_cmd(model_path, datapath_paths, layer, width, height, out, fmt):
    """Nested treemap of binarized gate sets at one layer."""
    model, _ = _load_model(model_path)
    if not 0 <= layer < len(model.gated_layers):
        raise ValidationError(f"layer must lie in [0, {len(model.gated_layers)})", "layer")
    layer_fms = set(model.layer_fms[model.gated_layers[layer]])
    tagged = []
    for path in datapath_paths:
        dp, params = _load_datapath(path)
        members = binarize(dp, params.binarize_tau) & layer_fms
        if members:
            tagged.append((Path(path).stem, members))
    if not tagged:
        raise ValidationError("no feature maps survive binarization at this layer",
                              "datapaths")
    relation = set_relations(tagged)
    result = treemap_layout(relation, Rect(0.0, 0.0, width, height))
    if fmt == "doc":
        doc = F.treemap_layout_doc(result)
        doc["objective"] = treemap_objective(result, relation)
        _emit(out, F.json_dumps(doc))
    else:
        _emit(out, treemap_svg(result))


# -- server -------------------------------------------------------------------

@cli.command("serve")
@click.option("--data-dir", type=click.Path(path_type=Path), required=True,
              envvar="DATAPATHS_DATA_DIR")
@click.option("--host", default="127.0.0.1", show_default=True, envvar="DATAPATHS_HOST")
@click.option("--port", type=int, default=8000, show_default=True, envvar="DATAPATHS_PORT")
@click.option("--workers", type=int, default=2, show_default=True,
              envvar="DATAPATHS_WORKERS")
@click.option("--ui-origin", default="*", show_default=True, envvar="DATAPATHS_UI_ORIGIN")
def serve_cmd(data_dir, host, port, workers, ui_origin):
    """Run the HTTP analysis server."""
    from .server import run_server

    click.echo(f"serving on http://{host}:{port} (data in {data_dir})")
    run_server(data_dir, host=host, port=port, workers=workers, ui_origin=ui_origin)


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(exc.exit_code or 2)
    except click.Abort:
        sys.exit(130)
    except DatapathsError as exc:
        click.echo(json.dumps({"error": {"code": exc.code, "message": str(exc)}}), err=True)
        sys.exit(1)
    sys.exit(0)


if __name__ == "__main__":
    main()
