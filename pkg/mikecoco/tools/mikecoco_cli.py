#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""Main functionality to run mikecoco from the command line."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from time import gmtime, strftime
from typing import Any, Callable, NoReturn

import colorama
from colorama import Fore, Style

from mikecoco import base, data, evaluation, file_io, spectral, synth
from mikecoco.mikecoco_warnings import (
    MikecocoInvalidConfigError,
    MikecocoValidationError,
)
from mikecoco.training import TrainConfig, train_stage1, train_stage2

colorama.init()

MASK_FLAGS = ('k1', 'k2', 'k3', 'c1', 'c2', 'm2', 'm4')


class CommandLineError(MikecocoValidationError):
    """Raised for an unknown subcommand or a malformed flag."""


class _Parser(argparse.ArgumentParser):
    # argparse exits with code 2 on bad input; usage errors map to 1 here
    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        raise CommandLineError(message)


def log_msg(msg: str, color_codes: tuple[str, str] | None = None) -> None:
    """
    Print a timestamped message to standard error.

    Parameters
    ----------
    msg: str
        The message.
    color_codes: tuple, optional
        Color code to prepend and reset code to append.

    """
    prefix, suffix = color_codes or ('', '')
    formatted = f'{strftime("%Y-%m-%dT%H:%M:%SZ", gmtime())} {msg}'
    print(f'{prefix}{formatted}{suffix}', file=sys.stderr)  # noqa: T201


def error_kind(exc: BaseException) -> str:
    """
    Classify an exception for the machine-readable error prefix.

    Returns
    -------
    str
        One of `usage`, `config`, `validation`, `file-not-found` or
        `runtime`.

    """
    if isinstance(exc, CommandLineError):
        return 'usage'
    if isinstance(exc, MikecocoInvalidConfigError):
        return 'config'
    if isinstance(exc, MikecocoValidationError):
        return 'validation'
    if isinstance(exc, FileNotFoundError):
        return 'file-not-found'
    return 'runtime'


def report_error(exc: BaseException) -> None:
    """Print a single `mikecoco-error:<kind>:<detail>` line."""
    detail = ' '.join(str(exc).split()) or type(exc).__name__
    log_msg(
        f'mikecoco-error:{error_kind(exc)}: {detail}',
        color_codes=(Fore.RED, Style.RESET_ALL),
    )


def make_options(args: argparse.Namespace) -> base.Options:
    """
    Runtime options from the global flags.

    Returns
    -------
    Options
        Options logging JSON lines to standard output.

    """
    return base.Options(
        {
            'Seed': getattr(args, 'seed', 0),
            'Deterministic': getattr(args, 'deterministic', False),
            'LogFile': getattr(args, 'log', None),
            'Quiet': getattr(args, 'quiet', False),
            'Verbose': getattr(args, 'verbose', False),
            'PrintLog': True,
            'LogFormat': 'jsonl',
        }
    )


def load_train_config(args: argparse.Namespace) -> TrainConfig:
    config = getattr(args, 'config', None)
    if config is None:
        return TrainConfig()
    return TrainConfig.from_file(config)


def run_make_manifest(args: argparse.Namespace, options: base.Options) -> None:
    """Write the manifest of an image tree; unrecognized files are listed."""
    records, skipped = data.make_manifest(args.root, split=args.split)
    for path in skipped:
        log_msg(f'skipped {path}', color_codes=(Fore.YELLOW, Style.RESET_ALL))
    if not records:
        msg = f'No image under {args.root} matches <id>/<camera>_<seq>.<ext>.'
        raise MikecocoValidationError(msg)
    out = Path(args.out).resolve()
    root = Path(args.root).resolve()
    for record in records:
        record['path'] = Path(
            _relative_to(root / record['path'], out.parent)
        ).as_posix()
    file_io.write_jsonl(records, out)
    options.log.msg(
        f'Wrote manifest {out}', records=len(records), skipped=len(skipped)
    )


def _relative_to(path: Path, start: Path) -> str:
    """
    Express `path` relative to `start` when possible.

    Returns
    -------
    str
        A relative path, or the absolute one on another drive.

    """
    try:
        return str(Path(path).relative_to(start))
    except ValueError:
        return str(path)


def run_preprocess(args: argparse.Namespace, options: base.Options) -> None:
    """Write DII and/or SPI renderings of every record with a sidecar."""
    log = options.log
    config = load_train_config(args)
    params = config.mask_params()
    for key in MASK_FLAGS:
        value = getattr(args, key)
        if value is not None:
            params[key] = value
    dataset = data.load_manifest(args.input_manifest, 'target', log=log)
    out_dir = Path(args.output_dir).resolve()
    modes = ('dii', 'spi') if args.mode == 'both' else (args.mode,)
    seed = options.seed or 0

    masks: dict[tuple[int, int], spectral.BandPassMask] = {}
    sidecar = []
    for record in dataset.records:
        image = record.load()
        if args.size is not None:
            image = data.resize(image, tuple(args.size))
        shape = image.shape[:2]
        if shape not in masks:
            masks[shape] = spectral.build_mask(*shape, params)
            log.debug('Built mask', shape=list(shape), cutoffs=masks[shape].cutoffs)
        noise_seed = base.derive_seed(seed, record.index)
        for mode in modes:
            rendered = spectral.transform_image(
                image, mode, masks[shape], noise_seed, raw_dii=config['RawDII']
            )
            target = out_dir / mode / f'{record.index:06d}.png'
            file_io.save_image(rendered, target)
            sidecar.append(
                {
                    'path': target.relative_to(out_dir).as_posix(),
                    'source': str(record.path),
                    'id': record.raw_id,
                    'camera': None
                    if record.camera is None
                    else _raw_camera(dataset, record.camera),
                    'mode': mode,
                    'noise_seed': noise_seed if mode == 'spi' else None,
                }
            )
    sidecar_path = out_dir / 'preprocess.jsonl'
    file_io.write_jsonl(sidecar, sidecar_path)
    log.msg(f'Wrote {len(sidecar)} images to {out_dir}', sidecar=str(sidecar_path))


def _raw_camera(dataset: data.Dataset, dense: int) -> Any:  # noqa: ANN401
    for raw, value in dataset.camera_map.items():
        if value == dense:
            return raw
    return dense


def run_inspect_spectrum(args: argparse.Namespace, options: base.Options) -> None:
    """Save the spectrum panel of one image."""
    # local import keeps matplotlib off the training path
    from mikecoco import plotting  # noqa: PLC0415

    image = file_io.load_image(args.image)
    if args.size is not None:
        image = data.resize(image, tuple(args.size))
    params = load_train_config(args).mask_params()
    mask = spectral.build_mask(*image.shape[:2], params)
    noise_seed = args.noise_seed if args.noise_seed is not None else options.seed or 0
    energy = plotting.plot_spectrum(image, mask, noise_seed, args.out)
    options.log.msg(
        f'Saved spectrum panel to {Path(args.out).resolve()}',
        cutoffs=list(mask.cutoffs or ()),
        **{f'energy_{band}': share for band, share in energy.items()},
    )


def run_train(args: argparse.Namespace, options: base.Options) -> None:
    """Run one training stage."""
    log = options.log
    config = load_train_config(args)
    dataset = data.load_manifest(args.manifest, 'source', log=log)
    if args.stage == 1:
        path = train_stage1(
            config,
            dataset,
            args.out,
            options,
            resume=args.resume,
            backbone=args.backbone,
        )
    else:
        if args.resume is None:
            msg = 'Stage 2 needs `--resume <stage1 checkpoint>`.'
            raise MikecocoValidationError(msg)
        if args.backbone is not None:
            log.warning('`--backbone` is ignored in stage 2; the stage 1 weights are used.')
        path = train_stage2(config, dataset, args.resume, args.out, options)
    log.msg(f'Saved checkpoint {path}')


def run_eval(args: argparse.Namespace, options: base.Options) -> None:
    """Evaluate a checkpoint on a target manifest pair."""
    log = options.log
    payload = file_io.load_checkpoint(args.checkpoint)
    query_ds = data.load_manifest(args.query_manifest, 'target', log=log)

    if args.protocol == 'vehicleid':
        if args.gallery_size is None:
            msg = '`--protocol vehicleid` needs `--gallery-size`.'
            raise MikecocoValidationError(msg)
        _require_identities(query_ds)
        (query_ds,) = data.align_labels(query_ds)
        query = evaluation.extract_features(payload, query_ds, options)
        report = evaluation.evaluate_vehicleid(
            query,
            args.gallery_size,
            trials=args.trials,
            seed=options.seed or 0,
            max_rank=args.max_rank,
        )
        gallery, rankings = None, None
    else:
        if args.gallery_manifest is None:
            msg = 'Single-query evaluation needs `--gallery-manifest`.'
            raise MikecocoValidationError(msg)
        gallery_ds = data.load_manifest(args.gallery_manifest, 'target', log=log)
        _require_identities(query_ds)
        _require_identities(gallery_ds)
        query_ds, gallery_ds = data.align_labels(query_ds, gallery_ds)
        query = evaluation.extract_features(payload, query_ds, options)
        gallery = evaluation.extract_features(payload, gallery_ds, options)
        report, rankings = evaluation.evaluate(query, gallery, args.max_rank)

    if args.features is not None:
        features_dir = Path(args.features)
        query.save(features_dir / 'query.mkcf')
        if gallery is not None:
            gallery.save(features_dir / 'gallery.mkcf')

    if rankings is not None and gallery is not None:
        if args.listing is not None:
            listing = evaluation.retrieval_listing(query, gallery, rankings, args.top_k)
            file_io.save_to_csv(listing, args.listing, log)
        if args.figure is not None:
            from mikecoco import plotting  # noqa: PLC0415

            plotting.plot_retrievals(query, gallery, rankings, args.figure, args.top_k)
    elif args.listing is not None or args.figure is not None:
        log.warning('Listings and figures are only produced by single-query evaluation.')

    result = report.to_dict()
    result['config_hash'] = payload['metrics'].get(
        'config_hash', base.config_hash(payload['config'])
    )
    result['checkpoint'] = str(Path(args.checkpoint).resolve())
    result['checkpoint_stage'] = payload['stage']
    file_io.save_report(result, args.out)
    log.msg(
        f'Saved report {Path(args.out).resolve()}',
        map=result['map'],
        rank1=result['rank1'],
        protocol=result['protocol'],
    )


def _require_identities(dataset: data.Dataset) -> None:
    missing = [str(r.path) for r in dataset.records if r.raw_id is None]
    if missing:
        msg = (
            f'{dataset.name}: {len(missing)} records lack an `id`, which '
            f'evaluation requires (first: {missing[0]}).'
        )
        raise MikecocoValidationError(msg)


def run_synth_dataset(args: argparse.Namespace, options: base.Options) -> None:
    """Render the synthetic domain-shift dataset."""
    spec = synth.SynthSpec(
        num_ids=args.ids,
        num_cameras=args.cameras,
        images_per_id_per_camera=args.images,
        num_styles=args.styles,
        image_size=tuple(args.size),
        seed=options.seed or 0,
        style_strength=args.style_strength,
    )
    synth.synth_dataset(spec, args.out, options.log)


def _global_flags(*, suppress: bool) -> argparse.ArgumentParser:
    # the same flags are accepted before and after the subcommand; the
    # copy on each subparser must not overwrite values given earlier
    def default(value: Any) -> Any:  # noqa: ANN401
        return argparse.SUPPRESS if suppress else value

    flags = argparse.ArgumentParser(add_help=False)
    flags.add_argument('--seed', type=int, default=default(0), help='Master seed.')
    flags.add_argument(
        '--config',
        default=default(None),
        help='Flat JSON file overriding the default training configuration.',
    )
    flags.add_argument(
        '--deterministic',
        type=base.str2bool,
        nargs='?',
        const=True,
        default=default(False),
        help='Single producer thread and deterministic torch algorithms.',
    )
    flags.add_argument('--log', default=default(None), help='Also write the log to this file.')
    flags.add_argument(
        '--quiet',
        action='store_true',
        default=default(False),
        help='Only print warnings and errors.',
    )
    flags.add_argument(
        '--verbose',
        action='store_true',
        default=default(False),
        help='Also print debug messages.',
    )
    return flags


def build_parser() -> argparse.ArgumentParser:
    """
    Assemble the argument parser.

    Returns
    -------
    argparse.ArgumentParser
        Parser with one subparser per subcommand.

    """
    parser = _Parser(
        prog='mikecoco',
        description='Domain-generalizable vehicle re-identification.',
        parents=[_global_flags(suppress=False)],
    )
    sub_flags = _global_flags(suppress=True)
    subparsers = parser.add_subparsers(dest='command', parser_class=_Parser)

    def add(name: str, handler: Callable, help_text: str) -> argparse.ArgumentParser:
        command = subparsers.add_parser(name, parents=[sub_flags], help=help_text)
        command.set_defaults(handler=handler)
        return command

    command = add('make-manifest', run_make_manifest, 'Index an image tree.')
    command.add_argument('root', help='Tree laid out as <id>/<camera>_<seq>.<ext>.')
    command.add_argument('--out', required=True, help='Manifest file to write.')
    command.add_argument('--split', default='train', help='Split tag of every record.')

    command = add('preprocess', run_preprocess, 'Write DII/SPI renderings.')
    command.add_argument('--input-manifest', required=True)
    command.add_argument('--output-dir', required=True)
    command.add_argument('--mode', choices=['dii', 'spi', 'both'], default='both')
    for key in MASK_FLAGS:
        command.add_argument(
            f'--{key}',
            type=float,
            default=None,
            help=f'Mask parameter {key} (default {spectral.MASK_DEFAULTS[key]}).',
        )
    command.add_argument(
        '--size', type=int, nargs=2, metavar=('H', 'W'), help='Resize before filtering.'
    )

    command = add('inspect-spectrum', run_inspect_spectrum, 'Plot the spectrum of an image.')
    command.add_argument('image')
    command.add_argument('--out', required=True, help='Figure file to write.')
    command.add_argument('--noise-seed', type=int, default=None)
    command.add_argument('--size', type=int, nargs=2, metavar=('H', 'W'))

    command = add('train', run_train, 'Run one training stage.')
    command.add_argument('--stage', type=int, choices=[1, 2], required=True)
    command.add_argument('--manifest', required=True, help='Source-domain manifest.')
    command.add_argument(
        '--resume',
        default=None,
        help='Stage 1 checkpoint: warm start in stage 1, required in stage 2.',
    )
    command.add_argument('--out', required=True, help='Output directory.')
    command.add_argument(
        '--backbone',
        default=None,
        help='`toy` or `external:<weights path>`; overrides the configuration.',
    )

    command = add('eval', run_eval, 'Evaluate a checkpoint.')
    command.add_argument('--checkpoint', required=True)
    command.add_argument('--query-manifest', required=True)
    command.add_argument('--gallery-manifest', default=None)
    command.add_argument('--out', required=True, help='Report file to write.')
    command.add_argument('--max-rank', type=int, default=20)
    command.add_argument(
        '--protocol', choices=['single-query', 'vehicleid'], default='single-query'
    )
    command.add_argument('--gallery-size', type=int, default=None)
    command.add_argument('--trials', type=int, default=10)
    command.add_argument('--features', default=None, help='Directory for feature files.')
    command.add_argument('--top-k', type=int, default=5)
    command.add_argument('--listing', default=None, help='CSV file of top-k results.')
    command.add_argument('--figure', default=None, help='Figure of top-k results.')

    command = add('synth-dataset', run_synth_dataset, 'Render the synthetic dataset.')
    command.add_argument('--out', required=True)
    command.add_argument('--ids', type=int, default=8)
    command.add_argument('--cameras', type=int, default=4)
    command.add_argument('--images', type=int, default=4)
    command.add_argument('--styles', type=int, default=2)
    command.add_argument('--size', type=int, nargs=2, default=[64, 64], metavar=('H', 'W'))
    command.add_argument(
        '--style-strength', type=float, default=1.0, help='Scale of the domain styles.'
    )

    return parser


def run(argv: list[str] | None = None) -> int:
    """
    Parse the arguments and dispatch a subcommand.

    Returns
    -------
    int
        0 on success, 1 on invalid input, 2 on any other failure.

    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CommandLineError as exc:
        report_error(exc)
        return 1
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)

    if getattr(args, 'handler', None) is None:
        parser.print_help(sys.stderr)
        report_error(CommandLineError('No subcommand given.'))
        return 1

    try:
        options = make_options(args)
        options.log.print_system_info()
        args.handler(args, options)
        options.log.emit_warnings()
    except (MikecocoValidationError, FileNotFoundError) as exc:
        report_error(exc)
        return 1
    except Exception as exc:  # noqa: BLE001
        report_error(exc)
        return 2
    return 0


def main() -> None:
    """Console entry point."""
    sys.exit(run(sys.argv[1:]))


if __name__ == '__main__':
    main()
