"""
Command-line surface: ``pahs <command>``.

Exit codes: 0 ok, 1 usage, 2 config/shape/contract, 3 I/O.
"""

import logging
import sys
from pathlib import Path

import click
from dotenv import load_dotenv

from pahs import __version__, settings
from pahs.errors import (
    EXIT_CONTRACT,
    EXIT_IO,
    EXIT_OK,
    EXIT_USAGE,
    ContractError,
    PahsError,
)
from pahs.model.config import (
    ATTENTION_MODES,
    ATTENTIONS,
    PP_INPUTS,
    PP_ORDERS,
    PRECISIONS,
    PRESETS,
)
from pahs.model.parameters import check_compatible, load_checkpoint, save_checkpoint
from pahs.sequence.engine import debug_dump, restore
from pahs.sequence.frames_io import (
    frame_dirs,
    list_frames,
    load_dataset,
    load_sequence,
    save_sequence,
)
from pahs.tensorcore import gradcheck as gc
from pahs.traineval import ablation
from pahs.traineval.metrics import evaluate_pairs, format_metric
from pahs.traineval.synth import SynthSpec, generate_synthetic, write_dataset
from pahs.traineval.trainer import TrainConfig, train, write_loss_log

logger = logging.getLogger(__name__)

LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]


class PahsGroup(click.Group):
    """Group that maps failures onto the package exit codes"""

    def main(
        self,
        args=None,
        prog_name=None,
        complete_var=None,
        standalone_mode=True,
        **extra,
    ):
        try:
            rv = super().main(
                args=args,
                prog_name=prog_name,
                complete_var=complete_var,
                standalone_mode=False,
                **extra,
            )
        except click.UsageError as e:
            e.show()
            code = EXIT_USAGE
        except click.ClickException as e:
            e.show()
            code = EXIT_USAGE
        except click.Abort:
            click.echo("Aborted!", err=True)
            code = EXIT_USAGE
        except PahsError as e:
            logger.debug(f"command failed: {e!r}")
            click.echo(f"Error: {e}", err=True)
            code = e.exit_code
        except OSError as e:
            click.echo(f"Error: {e}", err=True)
            code = EXIT_IO
        else:
            code = rv if isinstance(rv, int) else EXIT_OK
        if standalone_mode:
            sys.exit(code)
        return code


def model_options(f):
    """Model hyperparameter flags shared by the compute commands"""
    options = [
        click.option(
            "--preset",
            type=click.Choice(sorted(PRESETS)),
            default=None,
            help="Model preset (default: desk, or the checkpoint's config).",
        ),
        click.option("--c", "c", type=int, default=None, help="Feature channels c."),
        click.option("--n-pp", type=int, default=None, help="Ping-Pong recurrences."),
        click.option(
            "--attn-stride", type=int, default=None, help="Attention patch stride."
        ),
        click.option("--window", default=None, help="Future window W, or 'full'."),
        click.option(
            "--bidir/--no-bidir",
            "bidirectional",
            default=None,
            help="Bidirectional fusion with a bounded future window.",
        ),
        click.option(
            "--pp-order",
            type=click.Choice(PP_ORDERS),
            default=None,
            help="Ping-Pong update order.",
        ),
        click.option(
            "--pp-inputs",
            type=click.Choice(PP_INPUTS),
            default=None,
            help="Features fed to the Ping-Pong block.",
        ),
        click.option(
            "--attention",
            type=click.Choice(ATTENTIONS),
            default=None,
            help="Attention variant.",
        ),
        click.option(
            "--attention-mode",
            type=click.Choice(ATTENTION_MODES),
            default=None,
            help="Query source: blurry feature (cross) or hidden state (self).",
        ),
        click.option(
            "--precision",
            type=click.Choice(PRECISIONS),
            default=None,
            help="Float precision.",
        ),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _dir(**kwargs):
    return click.Path(file_okay=False, **kwargs)


def _file(**kwargs):
    return click.Path(dir_okay=False, **kwargs)


def _stride_option(f):
    return click.option(
        "--stride", default=1, show_default=True, help="Keep every N-th frame."
    )(f)


def _model_config(base, window, **model):
    return settings.build_model_config(base, window=window, **model)


def _load_base(ckpt, preset):
    """(params, base config) from an optional checkpoint; --preset wins"""
    if not ckpt:
        return None, preset
    params, ckpt_config = load_checkpoint(ckpt)
    return params, preset or ckpt_config


@click.group(cls=PahsGroup)
@click.option(
    "--config",
    "config_file",
    type=_file(),
    default=None,
    help="key = value file supplying option defaults; flags override it.",
)
@click.option(
    "--log-level",
    type=click.Choice(LOG_LEVELS, case_sensitive=False),
    default=None,
    help="Logging level (default: PAHS_LOG_LEVEL or INFO).",
)
@click.version_option(__version__, prog_name="pahs")
@click.pass_context
def cli(ctx, config_file, log_level):
    """PAHS recurrent video deblurring"""
    load_dotenv()
    logging.basicConfig(level=(log_level or settings.log_level()).upper())
    if config_file:
        values = settings.load_config_file(config_file)
        ctx.default_map = settings.default_map_for(ctx.command, values)


@cli.command()
@click.option("--out", "out_dir", required=True, type=_dir(), help="Dataset root.")
@click.option("--seed", default=0, show_default=True, help="Random seed.")
@click.option(
    "--height", default=64, show_default=True, help="Frame height (multiple of 16)."
)
@click.option(
    "--width", default=64, show_default=True, help="Frame width (multiple of 16)."
)
@click.option("--length", default=8, show_default=True, help="Frames per sequence.")
@click.option("--sequences", default=1, show_default=True, help="Sequence count.")
@click.option("--shapes", default=4, show_default=True, help="Moving shapes.")
@click.option(
    "--displacement",
    default=3.0,
    show_default=True,
    help="Max shape speed in px/frame.",
)
@click.option(
    "--substeps", default=7, show_default=True, help="Exposure substeps per frame."
)
def synth(
    out_dir, seed, height, width, length, sequences, shapes, displacement, substeps
):
    """Generate a synthetic blur/sharp dataset"""
    spec = SynthSpec(
        height=height,
        width=width,
        num_shapes=shapes,
        max_displacement=displacement,
        substeps=substeps,
        length=length,
        seed=seed,
        num_sequences=sequences,
    ).validate()
    dirs = write_dataset(spec, out_dir)
    click.echo(f"wrote {len(dirs)} sequences to {out_dir}")
    return EXIT_OK


@cli.command(name="train")
@click.option(
    "--data", required=True, type=_dir(), help="Dataset root with blur/ and sharp/."
)
@click.option(
    "--ckpt", "ckpt_out", required=True, type=_file(), help="Checkpoint to write."
)
@click.option("--init-ckpt", default=None, type=_file(), help="Starting checkpoint.")
@click.option(
    "--log", "log_path", default=None, type=_file(), help="Loss log CSV (iter,loss,lr)."
)
@click.option("--epochs", default=1, show_default=True, help="Passes over the data.")
@click.option(
    "--iterations", default=None, type=int, help="Iteration count; overrides --epochs."
)
@click.option("--patch", default=64, show_default=True, help="Patch size.")
@click.option("--batch-size", default=1, show_default=True, help="Patches per step.")
@click.option("--clip-length", default=None, type=int, help="Frames per clip.")
@click.option("--lr", default=1e-4, show_default=True, help="Initial learning rate.")
@click.option(
    "--halve-every", default=None, type=int, help="Halve the rate every N iterations."
)
@click.option(
    "--milestones", default="", help="Comma-separated iterations that halve the rate."
)
@_stride_option
@click.option("--seed", default=0, show_default=True, help="Init and sampling seed.")
@click.option("--progress/--no-progress", default=False, help="Show a progress bar.")
@model_options
def train_cmd(
    data,
    ckpt_out,
    init_ckpt,
    log_path,
    epochs,
    iterations,
    patch,
    batch_size,
    clip_length,
    lr,
    halve_every,
    milestones,
    stride,
    seed,
    progress,
    preset,
    window,
    **model,
):
    """Train on a paired dataset and write a checkpoint"""
    params, base = _load_base(init_ckpt, preset)
    config = _model_config(base, window, seed=seed, **model)
    tc = TrainConfig(
        epochs=epochs,
        iterations=iterations,
        patch=patch,
        batch_size=batch_size,
        clip_length=clip_length,
        lr=lr,
        halve_every=halve_every,
        milestones=tuple(settings.parse_milestones(milestones)),
        seed=seed,
        progress=progress,
    ).validate(config)
    pairs = load_dataset(data, stride)
    result = train(config, pairs, train_config=tc, params=params)
    save_checkpoint(ckpt_out, result.params, config)
    if log_path:
        write_loss_log(log_path, result)
    if result.losses:
        click.echo(f"loss {result.losses[0]:.6f} -> {result.losses[-1]:.6f}")
    return EXIT_OK


@cli.command()
@click.option("--in", "in_dir", required=True, type=_dir(), help="Input frames.")
@click.option("--out", "out_dir", required=True, type=_dir(), help="Output frames.")
@click.option("--ckpt", required=True, type=_file(), help="Checkpoint file.")
@_stride_option
@model_options
def infer(in_dir, out_dir, ckpt, stride, preset, window, **model):
    """Restore a frame directory, mirroring input names"""
    store, ckpt_config = load_checkpoint(ckpt)
    config = _model_config(preset or ckpt_config, window, **model)
    check_compatible(store, config)
    seq = load_sequence(in_dir, stride)
    outputs = restore(seq, store, config)
    suffix = list_frames(in_dir, stride)[0].suffix
    save_sequence(out_dir, outputs, seq.ids, suffix)
    return EXIT_OK


def _score_line(scores) -> str:
    return f"psnr={format_metric(scores['psnr'])} ssim={scores['ssim']:.6f}"


@cli.command(name="eval")
@click.option("--pred", required=True, type=_dir(), help="Restored frames.")
@click.option("--gt", required=True, type=_dir(), help="Ground-truth frames.")
@_stride_option
def eval_cmd(pred, gt, stride):
    """Print psnr=<v> ssim=<v>, per sequence when directories nest"""
    gt_dirs = frame_dirs(gt)
    if not gt_dirs:
        raise ContractError(f"no frames found in {gt}")
    pred_root = Path(pred)
    all_preds, all_targets = [], []
    for rel, gt_dir in gt_dirs.items():
        pred_seq = load_sequence(pred_root / rel, stride)
        gt_seq = load_sequence(gt_dir, stride)
        if pred_seq.ids != gt_seq.ids:
            raise ContractError(f"{rel}: predicted and ground-truth names differ")
        if len(gt_dirs) > 1:
            scores = evaluate_pairs(pred_seq.frames, gt_seq.frames)
            click.echo(f"{rel} {_score_line(scores)}")
        all_preds.extend(pred_seq.frames)
        all_targets.extend(gt_seq.frames)
    click.echo(_score_line(evaluate_pairs(all_preds, all_targets)))
    return EXIT_OK


@cli.command(name="ablate")
@click.option(
    "--out",
    "out_csv",
    required=True,
    type=_file(),
    help="Report CSV (variant,psnr,ssim,wall_ms).",
)
@click.option(
    "--variants",
    multiple=True,
    default=("all",),
    show_default=True,
    help="Variant or family names; repeatable.",
)
@click.option(
    "--data", default=None, type=_dir(), help="Validation set (default: synthetic)."
)
@click.option("--ckpt", default=None, type=_file(), help="Shared checkpoint.")
@click.option("--histogram", default=None, type=_file(), help="S_Sel histogram CSV.")
@click.option("--bins", default=10, show_default=True, help="Histogram bins.")
@click.option(
    "--timing",
    default=None,
    type=_file(),
    help="Recurrence timing CSV (n,wall_ms) for n in 0,1,2,4.",
)
@click.option(
    "--repeats",
    default=ablation.DEFAULT_REPEATS,
    show_default=True,
    help="Timing repeats; the best run is kept.",
)
@click.option("--size", default=32, show_default=True, help="Synthetic frame size.")
@click.option("--length", default=4, show_default=True, help="Synthetic length.")
@_stride_option
@click.option("--seed", default=0, show_default=True, help="Weights and data seed.")
@click.option("--progress/--no-progress", default=False, help="Show a progress bar.")
@model_options
def ablate_cmd(
    out_csv,
    variants,
    data,
    ckpt,
    histogram,
    bins,
    timing,
    repeats,
    size,
    length,
    stride,
    seed,
    progress,
    preset,
    window,
    **model,
):
    """Evaluate the ablation variant grid"""
    params, base = _load_base(ckpt, preset)
    config = _model_config(base, window, seed=seed, **model)
    if data:
        pairs = load_dataset(data, stride)
    else:
        spec = SynthSpec(height=size, width=size, length=length, seed=seed)
        pairs = [generate_synthetic(spec)]
    report = ablation.ablate(config, list(variants), pairs, params, repeats, progress)
    report.to_csv(out_csv, index=False)
    click.echo(f"wrote {len(report)} rows to {out_csv}")
    if histogram:
        counts = ablation.selection_histogram(
            config, list(variants), pairs, params, bins
        )
        counts.to_csv(histogram, index=False)
    if timing:
        sweep = ablation.recurrence_timing(config, pairs[0][0], params, repeats=repeats)
        sweep.to_csv(timing, index=False)
    return EXIT_OK


@cli.command(name="gradcheck")
@click.option("--seeds", default=20, show_default=True, help="Seeds per kernel case.")
@click.option(
    "--cell-seeds", default=20, show_default=True, help="Directional cell check seeds."
)
def gradcheck_cmd(seeds, cell_seeds):
    """Run the finite-difference gradient suite.

    Kernels are checked elementwise; the full cell along one random parameter
    direction per seed.
    """
    results = gc.run_suite(seeds, cell_seeds)
    worst = {}
    for r in results:
        if r.name not in worst or r.rel_error > worst[r.name].rel_error:
            worst[r.name] = r
    for name, r in worst.items():
        status = "ok" if all(x.passed for x in results if x.name == name) else "FAIL"
        click.echo(
            f"{name:28s} {r.method:11s} {r.rel_error:.3e} (tol {r.tol:g}) {status}"
        )
    failed = sum(not r.passed for r in results)
    click.echo(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CONTRACT


@cli.command()
@click.option("--in", "in_dir", required=True, type=_dir(), help="Input frames.")
@click.option("--ckpt", required=True, type=_file(), help="Checkpoint file.")
@click.option(
    "--frame", "frame_index", default=0, show_default=True, help="Frame to dump."
)
@click.option("--out", "out_dir", required=True, type=_dir(), help="Dump directory.")
@_stride_option
def dump(in_dir, ckpt, frame_index, out_dir, stride):
    """Write one frame's cell intermediates as PT4 files"""
    store, config = load_checkpoint(ckpt)
    check_compatible(store, config)
    seq = load_sequence(in_dir, stride)
    result = debug_dump(seq, store, config, frame_index, out_dir)
    click.echo(f"wrote {len(result['paths'])} tensors to {out_dir}")
    return EXIT_OK


def main():
    cli()


if __name__ == "__main__":
    main()
