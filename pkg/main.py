# main.py
import argparse
import json
import sys
from collections.abc import Callable
from pathlib import Path
from typing import Any

from utils.error_handler import LabError, ValidationError, describe_exception
from utils.logger import get_logger
from utils.recovery_hints import get_recovery_hints

logger = get_logger('main')

EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_USAGE = 2
EXIT_EARLY_STOPPED = 3


def _require_path(field: str, value: str | None, directory: bool = False) -> None:
    if value is None:
        return
    path = Path(value)
    ok = path.is_dir() if directory else path.is_file()
    if not ok:
        kind = 'directory' if directory else 'file'
        raise ValidationError(field, value, f'{kind} does not exist')


def _print_json(payload: Any) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=str))


def _handle_init(args) -> int:
    from lab.commands import cmd_init

    result = cmd_init(args.directory, force=args.force)
    for path in result['written']:
        print(f'wrote {path}')
    return EXIT_OK


def _handle_ingest(args) -> int:
    from lab.commands import cmd_ingest

    _require_path('manifest', args.manifest)
    result = cmd_ingest(args.manifest, args.output)
    balance = result['balance']
    print(f'cache: {result["cache"]}')
    print(
        f'train: {result["train_series"]} series / {result["train_points"]} points, '
        f'test: {result["test_series"]} series / {result["test_points"]} points'
    )
    for source, info in balance['sources'].items():
        print(f'  {source:<32} {info["points"]:>12} {info["fraction"]:7.2%}')
    for warning in balance['warnings']:
        print(f'warning: {warning}', file=sys.stderr)
    return EXIT_OK


def _handle_describe(args) -> int:
    from lab.commands import cmd_describe

    _require_path('cache', args.cache)
    _print_json(cmd_describe(args.cache))
    return EXIT_OK


def _handle_train(args) -> int:
    from lab.commands import cmd_train
    from lab.trainer import RunStatus

    _require_path('config', args.config)
    result = cmd_train(args.config)
    s = result.summary
    print(
        f'{s["status"]} run={s["run_id"]} steps={s["steps_completed"]} '
        f'min_mse={s["min_test_mse"]} min_crps={s["min_test_crps"]} '
        f'min_nll={s["min_test_nll"]} compute={s["final_compute"]}'
    )
    if result.status == RunStatus.DIVERGED:
        return EXIT_RUN_FAILED
    if result.status == RunStatus.EARLY_STOPPED:
        return EXIT_EARLY_STOPPED
    return EXIT_OK


def _handle_sweep(args) -> int:
    from lab.commands import cmd_sweep

    _require_path('plan', args.plan)
    index = cmd_sweep(args.plan, parallel=args.parallel)
    statuses: dict[str, int] = {}
    for cell in index['cells']:
        statuses[cell['status']] = statuses.get(cell['status'], 0) + 1
    print(f'campaign: {index["campaign_dir"]} ({index["n_cells"]} cells)')
    for status, count in sorted(statuses.items()):
        print(f'  {status}: {count}')
    for size, best in (index.get('best_lr_per_size') or {}).items():
        print(f'  best lr_max for N_p={size}: {best["lr_max"]:g} ({best["cell_id"]})')
    return EXIT_OK


def _handle_fit(args) -> int:
    from lab.commands import cmd_fit, parse_offset

    _require_path('campaign_dir', args.campaign_dir, directory=True)
    report = cmd_fit(
        args.campaign_dir, args.axis, args.metric, parse_offset(args.offset), args.out
    )
    headline = report['headline']
    print(
        f'{args.axis}/{args.metric}: B0={headline["B0"]:.6g} log10_A0={headline["log10_A0"]:.6g} '
        f'({report["broken"]["flag"]}, {report["n_points"]} points)'
    )
    print(f'wrote {report["report_path"]}')
    print(f'wrote {report["svg_path"]}')
    return EXIT_OK


def _handle_forecast(args) -> int:
    from lab.commands import cmd_forecast

    _require_path('checkpoint', args.checkpoint)
    _require_path('series', args.series)
    result = cmd_forecast(
        args.checkpoint,
        args.series,
        args.horizon,
        n_samples=args.n_samples,
        seed=args.seed,
        holdout=args.holdout,
        column=args.column,
        out_dir=args.out,
    )
    if 'forecast_mse' in result:
        print(f'forecast mse vs holdout: {result["forecast_mse"]:.6g}')
    for path in result['written']:
        print(f'wrote {path}')
    return EXIT_OK


def _handle_report(args) -> int:
    from lab.commands import cmd_report

    _require_path('campaign_dir', args.campaign_dir, directory=True)
    for path in cmd_report(args.campaign_dir, args.out)['written']:
        print(f'wrote {path}')
    return EXIT_OK


def _handle_serve(args) -> int:
    from server import run

    run(args.transport)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='ltm-lab',
        description='LTM scaling lab - train probabilistic time-series transformers and fit scaling laws',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Exit codes:
  0  success (run COMPLETED)
  1  run failure (DIVERGED, or an error while executing)
  2  usage error (bad arguments, missing files, invalid config)
  3  run EARLY_STOPPED

Examples:
  ltm-lab init lab/                         # Write template manifest/train/plan files
  ltm-lab ingest lab/manifest.json          # Build the corpus cache
  ltm-lab train lab/train.json              # Train one model
  ltm-lab sweep lab/plan.json --parallel 4  # Run a campaign
  ltm-lab fit campaigns/param_scaling --axis params --metric crps
  ltm-lab forecast runs/train/best.ltmk series.csv --horizon 64
  ltm-lab report campaigns/param_scaling
  ltm-lab serve --transport stdio           # Expose the lab as MCP tools
        """,
    )
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('init', help='write template config files')
    p.add_argument('directory', help='directory to write manifest.json, train.json and plan.json into')
    p.add_argument('--force', action='store_true', help='overwrite existing files')
    p.set_defaults(handler=_handle_init)

    p = sub.add_parser('ingest', help='build a corpus cache from a manifest')
    p.add_argument('manifest', help='path to manifest.json')
    p.add_argument(
        '--output', '-o', default=None,
        help='cache file to write (default: $LTM_LAB_CACHE_DIR/<manifest stem>.ltmc)',
    )
    p.set_defaults(handler=_handle_ingest)

    p = sub.add_parser('describe', help='print split sizes and balance of a corpus cache')
    p.add_argument('cache', help='path to a .ltmc cache')
    p.set_defaults(handler=_handle_describe)

    p = sub.add_parser('train', help='train one model from a run config')
    p.add_argument('config', help='path to train.json')
    p.set_defaults(handler=_handle_train)

    p = sub.add_parser('sweep', help='run every cell of an experiment plan')
    p.add_argument('plan', help='path to plan.json')
    p.add_argument('--parallel', type=int, default=1, help='worker processes (default: 1)')
    p.set_defaults(handler=_handle_sweep)

    p = sub.add_parser('fit', help='fit scaling laws to a finished campaign')
    p.add_argument('campaign_dir', help='campaign output directory')
    p.add_argument('--axis', choices=['params', 'compute', 'data'], default='params')
    p.add_argument('--metric', choices=['mse', 'crps', 'nll'], default='crps')
    p.add_argument(
        '--offset', default='2',
        help="NLL offset: a number or 'auto' (smallest integer making all values positive; default: 2)",
    )
    p.add_argument('--out', default=None, help='output directory (default: the campaign directory)')
    p.set_defaults(handler=_handle_fit)

    p = sub.add_parser('forecast', help='forecast a series from a checkpoint')
    p.add_argument('checkpoint', help='path to a .ltmk checkpoint')
    p.add_argument('series', help='CSV file holding the series')
    p.add_argument('--horizon', type=int, required=True, help='steps to forecast (>= 0)')
    p.add_argument('--n-samples', type=int, default=100, help='sampled trajectories (default: 100)')
    p.add_argument('--seed', type=int, default=0, help='sampling seed (default: 0)')
    p.add_argument('--holdout', type=int, default=0, help='trailing points withheld as truth')
    p.add_argument('--column', default=None, help="series column (default: 'value' or first numeric)")
    p.add_argument('--out', default='forecast', help='output directory (default: ./forecast)')
    p.set_defaults(handler=_handle_forecast)

    p = sub.add_parser('report', help='write campaign summary tables and plots')
    p.add_argument('campaign_dir', help='campaign output directory')
    p.add_argument('--out', default=None, help='output directory (default: <campaign>/report)')
    p.set_defaults(handler=_handle_report)

    p = sub.add_parser('serve', help='run the MCP server')
    p.add_argument('--transport', choices=['stdio', 'sse'], default='stdio')
    p.set_defaults(handler=_handle_serve)

    return parser


def _report_error(exc: Exception) -> None:
    info = describe_exception(exc)
    print(f'error: {exc}', file=sys.stderr)
    for hint in get_recovery_hints(info['error_code'])['recovery_hints']:
        print(f'hint: {hint}', file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    """Main entry point for the CLI."""
    parser = build_parser()
    args = parser.parse_args(argv)
    handler: Callable[[argparse.Namespace], int] = args.handler
    logger.info(f'ltm-lab {args.command} starting')
    try:
        code = handler(args)
    except ValidationError as e:
        _report_error(e)
        code = EXIT_USAGE
    except LabError as e:
        logger.error(f'{args.command} failed: {e}', exc_info=True)
        _report_error(e)
        code = EXIT_RUN_FAILED
    except Exception as e:
        logger.error(f'{args.command} failed unexpectedly: {e!r}', exc_info=True)
        print(f'error: unexpected {type(e).__name__}: {e}', file=sys.stderr)
        code = EXIT_RUN_FAILED
    logger.info(f'ltm-lab {args.command} finished with exit code {code}')
    return code


# Entry point
if __name__ == '__main__':
    sys.exit(main())
