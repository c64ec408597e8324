"""``cdsm`` command-line interface.

Every command writes into a run directory (``--run-dir``, default
``$CDSM_RUN_DIR/<command>`` or ``./runs/<command>``) and leaves a
``manifest.json`` there listing resolved parameters, input hashes, library
versions and output hashes.  No timestamps are recorded, so repeating a
command with the same inputs and seeds reproduces the directory byte for
byte.

Run config files are INI key-value text::

    [common]
    run-dir = runs/exp1

    [stylize]
    level = 4
    steps = 300

Keys in ``[common]`` apply to every command, keys in ``[<command>]`` to that
command only; flags given on the command line win.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import click
import numpy as np
import torch

from . import __version__
from .archive import load_weights, save_weights
from .errors import CdsmError, MissingInputError, SelfcheckFailed, TrainingDiverged
from .analysis import structure_invariance_report
from .generator import GeneratorConfig, init_weights, map_z_to_w, sample_z, styles_from_wplus, synthesize
from .images import load_png, save_png
from .inversion import (
    ProjectionConfig,
    build_character_bank,
    load_bank,
    project,
    query_bank,
    reconstruction_mse,
    save_bank,
)
from .latent_ops import DEFAULT_MIX_LEVEL
from .layer_swap import provenance_report, swap_layers
from .pipeline import stylize
from .selfcheck import run_selfcheck
from .toydata import ToyDatasetSpec, generate_dataset
from .training import TrainConfig, finetune, write_log_csv

RUN_DIR_ENV = "CDSM_RUN_DIR"


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Run directory plus the manifest being assembled for it."""

    def __init__(self, command: str, run_dir, params: dict):
        if run_dir is None:
            run_dir = Path(os.environ.get(RUN_DIR_ENV, "runs")) / command
        self.dir = Path(run_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.params = {k: v for k, v in params.items() if k != "run_dir"}
        self.inputs = {}
        self.outputs = []

    def input(self, key: str, path) -> Path:
        path = Path(path)
        if not path.exists():
            raise MissingInputError(f"--{key.replace('_', '-')}: {path} does not exist")
        if path.is_dir():
            files = sorted(p for p in path.rglob("*") if p.is_file())
            digest = hashlib.sha256()
            for p in files:
                digest.update(str(p.relative_to(path)).encode() + b"\0" + _sha256(p).encode())
            self.inputs[key] = {"path": str(path), "sha256": digest.hexdigest(), "files": len(files)}
        else:
            self.inputs[key] = {"path": str(path), "sha256": _sha256(path)}
        return path

    def path(self, name: str) -> Path:
        p = self.dir / name
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(p)
        return p

    def write_manifest(self, extra=None):
        outputs = {}
        for p in sorted(set(self.outputs)):
            if p.exists():
                outputs[str(p.relative_to(self.dir))] = _sha256(p)
        manifest = {
            "command": self.command,
            "params": self.params,
            "inputs": self.inputs,
            "outputs": outputs,
            "versions": {
                "cdsm": __version__,
                "torch": torch.__version__,
                "numpy": np.__version__,
                "python": ".".join(map(str, sys.version_info[:3])),
            },
        }
        if extra:
            manifest.update(extra)
        (self.dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


class CdsmGroup(click.Group):
    """Maps library errors to one-line messages and distinct exit codes."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except CdsmError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(exc.exit_code)


def _load_config(path) -> dict:
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise click.BadParameter(f"cannot read config file {path}", param_hint="--config")
    common = dict(parser["common"]) if parser.has_section("common") else {}
    default_map = {}
    for section in parser.sections():
        if section == "common":
            continue
        values = dict(common)
        values.update(parser[section])
        default_map[section] = {k.replace("-", "_"): v for k, v in values.items()}
    for name in COMMANDS:
        default_map.setdefault(name, {k.replace("-", "_"): v for k, v in common.items()})
    return default_map


@click.group(cls=CdsmGroup)
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
              help="INI run config; flags override it.")
@click.version_option(__version__, prog_name="cdsm")
@click.pass_context
def cli(ctx, config_path):
    """Cross-domain style mixing on a toy style-based generator."""
    if config_path:
        ctx.default_map = _load_config(config_path)


run_dir_option = click.option("--run-dir", type=click.Path(file_okay=False), default=None,
                              help=f"Output directory (default ${RUN_DIR_ENV}/<command> or runs/<command>).")


def _projection_options(f):
    f = click.option("--lr", type=float, default=0.1, show_default=True, help="Initial projection step size.")(f)
    f = click.option("--steps", type=int, default=500, show_default=True, help="Projection steps.")(f)
    return f


def _load_image_dir(directory: Path):
    labels = {}
    label_file = directory / "labels.csv"
    if label_file.exists():
        with label_file.open() as f:
            labels = {row["name"]: row["label"] for row in csv.DictReader(f)}
    items = []
    for p in sorted((directory / "images").glob("*.png") if (directory / "images").is_dir() else directory.glob("*.png")):
        label = labels.get(p.stem, p.stem.rsplit("_", 1)[0])
        items.append((label, load_png(p), p.stem))
    if not items:
        raise MissingInputError(f"no PNG images found in {directory}")
    return items


@cli.command("init")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--resolution", type=int, default=32, show_default=True)
@click.option("--latent-dim", type=int, default=64, show_default=True)
@click.option("--mapping-depth", type=int, default=4, show_default=True)
@run_dir_option
def init_cmd(seed, resolution, latent_dim, mapping_depth, run_dir):
    """Create a freshly seeded generator (the stand-in pretrained source)."""
    run = Run("init", run_dir, locals())
    cfg = GeneratorConfig(latent_dim=latent_dim, mapping_depth=mapping_depth, output_resolution=resolution)
    save_weights(init_weights(cfg, seed), run.path("generator.cdsmw"))
    run.write_manifest()
    click.echo(str(run.dir / "generator.cdsmw"))


@cli.command("make-data")
@click.option("--domain", type=click.Choice(["faceish", "cartoonish"]), default="cartoonish", show_default=True)
@click.option("--count", type=int, default=64, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--resolution", type=int, default=32, show_default=True)
@click.option("--num-characters", type=int, default=4, show_default=True)
@run_dir_option
def make_data_cmd(domain, count, seed, resolution, num_characters, run_dir):
    """Render a procedural toy dataset as PNGs plus labels.csv."""
    run = Run("make-data", run_dir, locals())
    spec = ToyDatasetSpec(domain=domain, count=count, seed=seed, resolution=resolution,
                          num_characters=num_characters)
    samples = generate_dataset(spec)
    for s in samples:
        save_png(s.image, run.path(f"images/{s.name}.png"))
    with run.path("labels.csv").open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["name", "label"])
        w.writerows([(s.name, s.label) for s in samples])
    run.write_manifest()
    click.echo(f"{len(samples)} images -> {run.dir}")


@cli.command("finetune")
@click.option("--source", required=True, type=click.Path(), help="Source generator archive.")
@click.option("--data", required=True, type=click.Path(), help="Directory from make-data.")
@click.option("--steps", type=int, default=200, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--batch-size", type=int, default=8, show_default=True)
@click.option("--g-lr", type=float, default=2e-3, show_default=True)
@click.option("--d-lr", type=float, default=1e-3, show_default=True)
@click.option("--r1-gamma", type=float, default=2.0, show_default=True)
@run_dir_option
def finetune_cmd(source, data, steps, seed, batch_size, g_lr, d_lr, r1_gamma, run_dir):
    """Adversarially fine-tune the source generator on a toy dataset."""
    run = Run("finetune", run_dir, locals())
    weights = load_weights(run.input("source", source))
    items = _load_image_dir(run.input("data", data))
    images = torch.stack([img for _, img, _ in items])
    cfg = TrainConfig(steps=steps, batch_size=batch_size, g_lr=g_lr, d_lr=d_lr, r1_gamma=r1_gamma, seed=seed)
    torch.set_num_threads(1)  # single-threaded for run-to-run reproducibility
    try:
        result = finetune(weights, images, cfg)
    except TrainingDiverged as exc:
        if exc.last_good is not None:
            save_weights(exc.last_good, run.path("last_good.cdsmw"))
        run.write_manifest({"diverged_at_step": exc.step})
        raise
    save_weights(result.weights, run.path("target.cdsmw"))
    write_log_csv(result.log, run.path("train_log.csv"))
    run.write_manifest({"mixing_events": result.mixing_events,
                        "critic_g_loss": {"start": result.g_loss_start, "end": result.g_loss_end}})
    click.echo(str(run.dir / "target.cdsmw"))


@cli.command("swap")
@click.option("--source", required=True, type=click.Path())
@click.option("--target", required=True, type=click.Path())
@click.option("--resolution", type=int, default=32, show_default=True,
              help="Layers at (or above) this resolution come from the target.")
@click.option("--exclusive", is_flag=True, help="Keep the layers at exactly --resolution from the source.")
@run_dir_option
def swap_cmd(source, target, resolution, exclusive, run_dir):
    """Build the layer-swapped generator."""
    run = Run("swap", run_dir, locals())
    src = load_weights(run.input("source", source))
    tgt = load_weights(run.input("target", target))
    swapped = swap_layers(src, tgt, resolution, inclusive=not exclusive)
    save_weights(swapped, run.path("swapped.cdsmw"))
    with run.path("provenance.csv").open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["tensor", "parent"])
        w.writerows(provenance_report(swapped, src, tgt).items())
    run.write_manifest()
    click.echo(str(run.dir / "swapped.cdsmw"))


@cli.command("invert")
@click.option("--weights", required=True, type=click.Path())
@click.option("--image", required=True, type=click.Path())
@click.option("--space", type=click.Choice(["W", "W+"]), default="W+", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_projection_options
@run_dir_option
def invert_cmd(weights, image, space, seed, steps, lr, run_dir):
    """Project an image into W or W+ of a generator."""
    run = Run("invert", run_dir, locals())
    G = load_weights(run.input("weights", weights))
    img = load_png(run.input("image", image))
    res = project(G, img, ProjectionConfig(space=space, steps=steps, learning_rate=lr, seed=seed))
    mse = reconstruction_mse(G, res, img)
    run.path("code.json").write_text(json.dumps(
        {"space": space, "shape": list(res.code.shape), "code": res.code.tolist(), "loss": res.loss, "mse": mse},
        sort_keys=True) + "\n")
    with torch.no_grad():
        save_png(synthesize(G, res.wplus(G.config)), run.path("reconstruction.png"))
    run.write_manifest()
    click.echo(f"loss {res.loss:.6g} mse {mse:.6g}")


@cli.command("build-bank")
@click.option("--weights", required=True, type=click.Path(), help="Layer-swapped generator.")
@click.option("--data", required=True, type=click.Path(), help="Cartoon dataset directory.")
@click.option("--k", type=int, default=8, show_default=True, help="Images averaged per character.")
@click.option("--seed", type=int, default=0, show_default=True)
@_projection_options
@run_dir_option
def build_bank_cmd(weights, data, k, seed, steps, lr, run_dir):
    """Invert k images per character and store the averaged W+ codes."""
    run = Run("build-bank", run_dir, locals())
    G = load_weights(run.input("weights", weights))
    items = _load_image_dir(run.input("data", data))
    bank = build_character_bank(G, items, k, ProjectionConfig(steps=steps, learning_rate=lr, seed=seed), seed)
    save_bank(bank, run.path("bank.json"))
    run.write_manifest()
    click.echo(f"{len(bank.codes)} characters: {', '.join(bank.ids)}")


@cli.command("stylize")
@click.option("--weights", required=True, type=click.Path(), help="Layer-swapped generator.")
@click.option("--bank", required=True, type=click.Path())
@click.option("--face", required=True, type=click.Path())
@click.option("--id", "character_id", required=True, help="Character ID in the bank.")
@click.option("--level", type=int, default=DEFAULT_MIX_LEVEL, show_default=True, help="Mixing level m.")
@click.option("--noise-seed", type=int, default=0, show_default=True)
@click.option("--out", default="stylized.png", show_default=True, help="Output PNG (relative to the run dir).")
@click.option("--seed", type=int, default=0, show_default=True)
@_projection_options
@run_dir_option
def stylize_cmd(weights, bank, face, character_id, level, noise_seed, out, seed, steps, lr, run_dir):
    """Stylize a face image into a bank character."""
    run = Run("stylize", run_dir, locals())
    G = load_weights(run.input("weights", weights))
    B = load_bank(run.input("bank", bank))
    query_bank(B, character_id, G)  # fail fast, before the projection
    img = load_png(run.input("face", face))
    cfg = ProjectionConfig(steps=steps, learning_rate=lr, seed=seed)
    result = stylize(G, B, img, character_id, level, noise_seed, projection=cfg)
    if Path(out).is_absolute():
        out_path = save_png(result, out)
        run.write_manifest({"external_outputs": {str(out_path): _sha256(out_path)}})
    else:
        out_path = save_png(result, run.path(out))
        run.write_manifest()
    click.echo(str(out_path))


@cli.command("perturb")
@click.option("--weights", required=True, type=click.Path())
@click.option("--bank", type=click.Path(), default=None, help="Take the style code from a bank entry.")
@click.option("--id", "character_id", default=None)
@click.option("--seed", type=int, default=0, show_default=True, help="z seed when no bank is given.")
@click.option("--strengths", default="0.25,0.5,1.0", show_default=True)
@click.option("--randomized", is_flag=True, help="Multiply N by per-element normal noise.")
@click.option("--noise-seed", type=int, default=0, show_default=True)
@run_dir_option
def perturb_cmd(weights, bank, character_id, seed, strengths, randomized, noise_seed, run_dir):
    """tRGB perturbation report: images, diffs.csv and a plot."""
    run = Run("perturb", run_dir, locals())
    G = load_weights(run.input("weights", weights))
    if bank is not None:
        B = load_bank(run.input("bank", bank))
        wplus = query_bank(B, character_id or B.ids[0], G)
    else:
        with torch.no_grad():
            wplus = map_z_to_w(G, sample_z(G.config, G.config.num_ws, seed))
    styles = styles_from_wplus(G, wplus.detach())
    values = [float(s) for s in strengths.split(",") if s.strip()]
    report = structure_invariance_report(G, styles, values, noise_seed, run.dir / "report", randomized, seed)
    run.outputs.extend(report.files)
    run.write_manifest()
    for r in report.rows:
        click.echo(f"N={r.strength:+.3f} max_feature_diff={r.max_feature_diff:.3g} mean_rgb_diff={r.mean_rgb_diff:.4g}")


@cli.command("selfcheck")
@click.option("--seed", type=int, default=0, show_default=True)
def selfcheck_cmd(seed):
    """Run the invariant suite on a fresh toy generator; nonzero exit on failure."""
    results = run_selfcheck(seed, echo=click.echo)
    failed = [r.name for r in results if not r.ok]
    if failed:
        raise SelfcheckFailed(f"{len(failed)} check(s) failed: {', '.join(failed)}")
    click.echo(f"all {len(results)} checks passed")


COMMANDS = list(cli.commands)


def main(argv=None):
    return cli.main(args=argv, prog_name="cdsm")


if __name__ == "__main__":
    main()
