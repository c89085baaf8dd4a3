"""The forge command line: corpus building, training, generation, sweeps, serving."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import appearance as app_mod
from .codec import CodecSpec, load_colored_grid, load_grid
from .corpus import CATEGORY_TOKENS, COLOR_TOKENS, Dataset, build_dataset, coarse_control_latent
from .flow import make_schedule
from .geometry import scene_from_json
from .guidance import GuidanceConfig, generate_structure
from .metrics import sweep_tau
from .nets import ShapeConditionedNet, StructureNet, control_tokens
from .training import Checkpoint, TrainConfig, build_net, train

LABELS = {**CATEGORY_TOKENS, **COLOR_TOKENS}


def _fail(message: str):
    click.echo(f"forge: {message}", err=True)
    sys.exit(1)


def _atomic_write_text(path: Path, text: str):
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _atomic_write_bytes(path: Path, blob: bytes):
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(blob)
    os.replace(tmp, path)


def _load_config_file(path: str | None) -> dict:
    """key=value overrides; '#' comments and blank lines ignored."""
    path = path or os.environ.get("FORGE_CONFIG")
    if not path:
        return {}
    overrides = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"bad config line (want key=value): {line!r}")
        key, value = line.split("=", 1)
        overrides[key.strip().replace("-", "_")] = value.strip()
    return overrides


def _resolve(ctx: click.Context, config: str | None, **values):
    """Apply config-file overrides to parameters the user left at defaults."""
    overrides = _load_config_file(config)
    out = {}
    for key, current in values.items():
        if key in overrides and ctx.get_parameter_source(key) == click.core.ParameterSource.DEFAULT:
            raw = overrides[key]
            out[key] = type(current)(raw) if current is not None else raw
        else:
            out[key] = current
    return out


def _resolve_label(label: str) -> int:
    if label in LABELS:
        return LABELS[label]
    try:
        return int(label)
    except ValueError:
        _fail(f"unknown label {label!r}; known: {sorted(LABELS)}")


@click.group()
def main():
    """Spatially controlled shape generation toolkit."""


@main.group()
def corpus():
    """Dataset commands."""


@corpus.command("build")
@click.option("--out", required=True, type=click.Path())
@click.option("--n", default=500, show_default=True, help="samples per category")
@click.option("--seed", default=0, show_default=True)
@click.option("--res", default=32, show_default=True)
@click.option("--config", default=None, type=click.Path(exists=True))
@click.pass_context
def corpus_build(ctx, out, n, seed, res, config):
    """Generate the labeled shape corpus and write its manifest."""
    p = _resolve(ctx, config, out=out, n=n, seed=seed, res=res)
    try:
        manifest = build_dataset(p["out"], n_per_category=p["n"], seed=p["seed"], resolution=p["res"])
    except Exception as exc:
        _fail(str(exc))
    click.echo(f"wrote {manifest}")


@main.group()
def train_cmd():
    """Training commands."""


main.add_command(train_cmd, name="train")


def _train_common(ctx, config, **kw):
    p = _resolve(ctx, config, **kw)
    dataset = Dataset(p["dataset"])
    spec = CodecSpec(resolution=dataset.resolution)
    schedule = make_schedule(p["steps"], p["rescale"])
    cfg = TrainConfig(
        learning_rate=p["lr"],
        batch_size=p["batch"],
        iterations=p["iters"],
        seed=p["seed"],
    )
    return p, dataset, spec, schedule, cfg


@train_cmd.command("structure")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--iters", default=20000, show_default=True)
@click.option("--batch", default=32, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--steps", default=25, show_default=True, help="schedule step count T")
@click.option("--rescale", default=3.0, show_default=True, help="schedule rescale factor")
@click.option("--hidden", default=256, show_default=True)
@click.option("--depth", default=4, show_default=True)
@click.option("--log-every", default=0, show_default=True)
@click.option("--config", default=None, type=click.Path(exists=True))
@click.pass_context
def train_structure(ctx, dataset, out, iters, batch, lr, seed, steps, rescale, hidden, depth, log_every, config):
    """Train the structure-stage velocity field."""
    try:
        p, ds, spec, schedule, cfg = _train_common(
            ctx, config, dataset=dataset, out=out, iters=iters, batch=batch, lr=lr,
            seed=seed, steps=steps, rescale=rescale, hidden=hidden, depth=depth, log_every=log_every,
        )
        net = StructureNet(
            spec.latent_dim, ds.vocab, hidden=p["hidden"], depth=p["depth"], seed=p["seed"], dtype=np.float32
        )
        ckpt = train(net, ds.grids("train"), ds.labels("train"), cfg, spec, schedule, log_every=p["log_every"])
        ckpt.save(p["out"])
    except Exception as exc:
        _fail(str(exc))
    click.echo(f"wrote {p['out']} ({ckpt.checkpoint_id()})")


@train_cmd.command("spicet")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--base", default=None, type=click.Path(exists=True), help="structure checkpoint to initialize from")
@click.option("--iters", default=2000, show_default=True)
@click.option("--batch", default=4, show_default=True)
@click.option("--lr", default=2e-4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--steps", default=25, show_default=True)
@click.option("--rescale", default=3.0, show_default=True)
@click.option("--hidden", default=256, show_default=True)
@click.option("--depth", default=4, show_default=True)
@click.option("--log-every", default=0, show_default=True)
@click.option("--config", default=None, type=click.Path(exists=True))
@click.pass_context
def train_spicet(ctx, dataset, out, base, iters, batch, lr, seed, steps, rescale, hidden, depth, log_every, config):
    """Train the shape-conditioned baseline (control = each sample's own voxelization)."""
    try:
        p, ds, spec, schedule, cfg = _train_common(
            ctx, config, dataset=dataset, out=out, iters=iters, batch=batch, lr=lr,
            seed=seed, steps=steps, rescale=rescale, hidden=hidden, depth=depth, log_every=log_every,
        )
        net = ShapeConditionedNet(
            spec.latent_dim, ds.vocab,
            tokens=spec.grid_size**3, token_width=spec.channels,
            hidden=p["hidden"], depth=p["depth"], seed=p["seed"],
        )
        if base is not None:
            base_ckpt = Checkpoint.load(base)
            for name, value in base_ckpt.params.items():
                net.params[name] = value.astype(net.dtype)
        latents = ds.latents(spec, "train")
        # condition on the coarse (bounding-cuboid) decomposition of each shape
        controls = np.stack(
            [
                coarse_control_latent(ds.load_scene(i), spec).reshape(-1, spec.channels)
                for i in ds.ids("train")
            ]
        )
        ckpt = train(net, latents, ds.labels("train"), cfg, spec, schedule,
                     controls=controls, log_every=p["log_every"])
        ckpt.save(p["out"])
    except Exception as exc:
        _fail(str(exc))
    click.echo(f"wrote {p['out']} ({ckpt.checkpoint_id()})")


@train_cmd.command("appearance")
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--iters", default=2000, show_default=True)
@click.option("--batch", default=8, show_default=True)
@click.option("--lr", default=1e-3, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--steps", default=25, show_default=True)
@click.option("--rescale", default=3.0, show_default=True)
@click.option("--local-prob", default=0.5, show_default=True)
@click.option("--max-voxels", default=512, show_default=True)
@click.option("--log-every", default=0, show_default=True)
@click.option("--config", default=None, type=click.Path(exists=True))
@click.pass_context
def train_appearance_cmd(ctx, dataset, out, iters, batch, lr, seed, steps, rescale,
                         local_prob, max_voxels, log_every, config):
    """Train the appearance-stage velocity field on colored corpus voxels."""
    try:
        p = _resolve(ctx, config, dataset=dataset, out=out, iters=iters, batch=batch, lr=lr,
                     seed=seed, steps=steps, rescale=rescale, local_prob=local_prob,
                     max_voxels=max_voxels, log_every=log_every)
        ds = Dataset(p["dataset"])
        spec = CodecSpec(resolution=ds.resolution)
        schedule = make_schedule(p["steps"], p["rescale"])
        cfg = TrainConfig(learning_rate=p["lr"], batch_size=p["batch"], iterations=p["iters"], seed=p["seed"])
        samples = []
        for item_id in ds.ids("train"):
            grid, colors = ds.load_colored(item_id)
            scene = ds.load_scene(item_id)
            samples.append(app_mod.prepare_appearance_sample(grid, colors, scene, ds.item(item_id)["label"]))
        net = app_mod.AppearanceNet(vocab=ds.vocab, seed=p["seed"])
        ckpt = app_mod.train_appearance(net, samples, cfg, spec, schedule,
                                        local_prob=p["local_prob"], max_voxels=p["max_voxels"],
                                        log_every=p["log_every"])
        ckpt.save(p["out"])
    except Exception as exc:
        _fail(str(exc))
    click.echo(f"wrote {p['out']} ({ckpt.checkpoint_id()})")


@main.command()
@click.option("--scene", "scene_path", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--tau0", default=6, show_default=True)
@click.option("--label", default="chair", show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--appearance", "appearance_path", default=None, type=click.Path(exists=True))
@click.option("--config", default=None, type=click.Path(exists=True))
@click.pass_context
def generate(ctx, scene_path, checkpoint, tau0, label, seed, out, appearance_path, config):
    """Generate a structure (and optionally appearance) from a scene JSON."""
    from .service import generation_payload

    try:
        p = _resolve(ctx, config, tau0=tau0, label=label, seed=seed)
        scene = scene_from_json(Path(scene_path).read_text())
        ckpt = Checkpoint.load(checkpoint)
        net = build_net(ckpt)
        label_id = _resolve_label(str(p["label"]))
        gconf = GuidanceConfig(schedule=ckpt.schedule, tau0=p["tau0"], label=label_id, seed=p["seed"])
        if isinstance(net, ShapeConditionedNet):
            from .codec import encode
            from .geometry import voxelize
            from .guidance import normalize_to_unit_cube

            norm_scene, _ = normalize_to_unit_cube(scene)
            zc = encode(voxelize(norm_scene, ckpt.codec.resolution), ckpt.codec)
            field_obj = net.bind_control(control_tokens(zc.values))
        else:
            field_obj = net
        result = generate_structure(scene, field_obj, gconf, ckpt.codec)
        colors = None
        if appearance_path:
            app_ckpt = Checkpoint.load(appearance_path)
            app_net = app_mod.build_appearance_net(app_ckpt)
            locals_ = None
            if result.norm_scene is not None and result.norm_scene.local_labels is not None:
                locals_ = app_mod.assign_local_tokens(result.structure, result.norm_scene)
            cond = app_mod.LocalConditioning(global_token=label_id, local_tokens=locals_)
            colors = app_mod.generate_appearance(result.structure, app_net, cond, p["seed"], ckpt.schedule)
        payload = generation_payload(result, ckpt.codec, colors)

        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        from .codec import dump_grid

        _atomic_write_bytes(out_dir / "structure.bin", dump_grid(result.structure))
        _atomic_write_text(out_dir / "mesh.obj", payload["mesh_obj"])
        doc = {k: payload[k] for k in ("metrics", "config", "voxel_count")}
        doc["timings"] = result.timing
        _atomic_write_text(out_dir / "result.json", json.dumps(doc, sort_keys=True, indent=1))
    except Exception as exc:
        _fail(str(exc))
    click.echo(f"wrote {out_dir}/structure.bin mesh.obj result.json")


@main.command("sweep-tau")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--tau0", default="0,5,10,15,20,25", show_default=True)
@click.option("--seeds", default="0,1,2,3,4,5,6,7,8", show_default=True)
@click.option("--controls", default=64, show_default=True)
@click.option("--out", required=True, type=click.Path(), help="output stem; writes .csv and .json")
@click.option("--config", default=None, type=click.Path(exists=True))
@click.pass_context
def sweep_tau_cmd(ctx, checkpoint, dataset, tau0, seeds, controls, out, config):
    """Sweep the control-strength dial and tabulate CD / IoU / Frechet."""
    try:
        p = _resolve(ctx, config, tau0=tau0, seeds=seeds, controls=controls)
        ckpt = Checkpoint.load(checkpoint)
        ds = Dataset(dataset)
        tau_list = [int(v) for v in str(p["tau0"]).split(",") if v != ""]
        seed_list = [int(v) for v in str(p["seeds"]).split(",") if v != ""]
        report = sweep_tau(ckpt, ds, tau_list, seeds=seed_list, n_controls=p["controls"])
        stem = Path(out)
        _atomic_write_text(stem.with_suffix(".csv"), report.to_csv())
        _atomic_write_text(stem.with_suffix(".json"), report.to_json())
    except Exception as exc:
        _fail(str(exc))
    click.echo(f"wrote {stem.with_suffix('.csv')} and {stem.with_suffix('.json')}")


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--dataset", required=True, type=click.Path(exists=True))
@click.option("--tau0", default=6, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--controls", default=32, show_default=True)
@click.option("--out", required=True, type=click.Path())
@click.option("--config", default=None, type=click.Path(exists=True))
@click.pass_context
def eval_cmd(ctx, checkpoint, dataset, tau0, seed, controls, out, config):
    """Evaluate a checkpoint at a single control strength."""
    try:
        p = _resolve(ctx, config, tau0=tau0, seed=seed, controls=controls)
        ckpt = Checkpoint.load(checkpoint)
        ds = Dataset(dataset)
        report = sweep_tau(ckpt, ds, [p["tau0"]], seeds=[p["seed"]], n_controls=p["controls"])
        _atomic_write_text(Path(out), report.to_json())
    except Exception as exc:
        _fail(str(exc))
    click.echo(f"wrote {out}")


@main.command("export-obj")
@click.option("--grid", "grid_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--colors", "colors_path", default=None, type=click.Path(exists=True),
              help="colored grid dump supplying per-voxel RGB")
def export_obj_cmd(grid_path, out, colors_path):
    """Convert a grid dump to a surface OBJ."""
    try:
        blob = Path(grid_path).read_bytes()
        colors = None
        if colors_path:
            grid, rgb = load_colored_grid(Path(colors_path).read_bytes())
            idx = grid.occupied_indices()
            colors = rgb[idx[:, 0], idx[:, 1], idx[:, 2]]
            if Path(colors_path) != Path(grid_path):
                grid = load_grid(blob)
        else:
            grid = load_grid(blob)
        verts, faces, vcolors = app_mod.extract_surface(grid, colors)
        _atomic_write_text(Path(out), app_mod.export_obj(verts, faces, vcolors))
    except Exception as exc:
        _fail(str(exc))
    click.echo(f"wrote {out}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--appearance", "appearance_path", default=None, type=click.Path(exists=True))
@click.option("--dataset", default=None, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8078, show_default=True)
@click.option("--max-concurrent", default=2, show_default=True)
@click.option("--ui", "ui_dir", default=None, type=click.Path(exists=True), help="static UI directory to mount")
@click.option("--config", default=None, type=click.Path(exists=True))
@click.pass_context
def serve(ctx, checkpoint, appearance_path, dataset, host, port, max_concurrent, ui_dir, config):
    """Run the HTTP generation service."""
    from .service import ServerConfig
    from .service import serve as run_server

    try:
        p = _resolve(ctx, config, host=host, port=port, max_concurrent=max_concurrent)
        server_config = ServerConfig(
            structure_checkpoint=checkpoint,
            appearance_checkpoint=appearance_path,
            dataset=dataset,
            host=p["host"],
            port=p["port"],
            max_concurrent=p["max_concurrent"],
        )
        run_server(server_config, ui_dir=ui_dir)
    except Exception as exc:
        _fail(str(exc))


if __name__ == "__main__":
    main()
