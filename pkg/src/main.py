import argparse
import logging
import multiprocessing
import sys

from config import ConfigError, ExperimentConfig, list_presets
from experiment import run_experiment, summarize_gains
from logger_config import setup_logger
from params import ParamsError
from result_writer import emit

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3
_MODE_ALIASES = {'analytic': 'analytic', 'mc': 'montecarlo', 'montecarlo': 'montecarlo', 'both': 'both'}


def parse_arguments(argv=None):
    """解析命令行参数"""
    parser = argparse.ArgumentParser(description='分布式 RIS 毫米波网络覆盖与速率分析（解析 + 蒙特卡洛）')
    parser.add_argument('--log_dir', default='logs', help='日志目录，默认 logs')
    parser.add_argument('--quiet', action='store_true', help='不输出控制台日志')
    subparsers = parser.add_subparsers(dest='command', required=True)

    run = subparsers.add_parser('run', help='运行实验并写出结果')
    run.add_argument('--config', required=True, help='实验配置文件，例如 config/presets/single_cell_coverage.yaml')
    run.add_argument('--mode', choices=sorted(_MODE_ALIASES), default=None, help='引擎模式，默认取配置文件')
    run.add_argument('--seed', type=int, default=None, help='随机种子')
    run.add_argument('--trials', type=int, default=None, help='蒙特卡洛试验次数')
    run.add_argument('--out', default=None, help='结果输出目录')
    run.add_argument('--workers', type=int, default=None, help='蒙特卡洛进程数')
    run.add_argument('--threads', type=int, default=None, help='扫描点并行线程数')

    validate = subparsers.add_parser('validate', help='只校验配置文件')
    validate.add_argument('--config', required=True, help='实验配置文件')

    presets = subparsers.add_parser('presets', help='预设配置')
    presets.add_argument('action', choices=['list'], help='list：列出全部预设')
    presets.add_argument('--dir', default='config/presets', help='预设目录')
    return parser.parse_args(argv)


def command_run(args) -> int:
    mode = _MODE_ALIASES[args.mode] if args.mode else None
    spec = ExperimentConfig(args.config).to_spec(mode=mode, seed=args.seed, n_trials=args.trials,
                                                 output_path=args.out, workers=args.workers,
                                                 threads=args.threads)
    table = run_experiment(spec)
    gains = summarize_gains(table)
    paths = emit(table, spec.output_path, spec.name, gains)
    logger.info(f"[DONE]实验 {spec.name} 结果保存到: {', '.join(str(p) for p in paths)}")
    failed = table[~table['converged']]
    if len(failed):
        logger.warning(f"[QUAD]{len(failed)} 行结果存在未收敛的积分")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def command_validate(args) -> int:
    spec = ExperimentConfig(args.config).to_spec()
    logger.info(f"[CHECK]配置合法: {args.config}（{spec.name}，{len(spec.sweep_values)} 个扫描点）")
    return EXIT_OK


def command_presets(args) -> int:
    presets = list_presets(args.dir)
    for name, description in presets:
        print(f"{name:<14}{description}")
    logger.info(f"共 {len(presets)} 个预设")
    return EXIT_OK


def main(argv=None) -> int:
    args = parse_arguments(argv)
    setup_logger(not args.quiet, args.log_dir)
    logger.info(f"程序启动，参数: {args}")
    handlers = {'run': command_run, 'validate': command_validate, 'presets': command_presets}
    try:
        return handlers[args.command](args)
    except (ConfigError, ParamsError) as e:
        logger.error(f"配置校验失败: {str(e)}")
        return EXIT_INVALID
    except Exception as e:
        logger.error(f"程序执行过程中发生错误: {str(e)}", exc_info=True)
        return EXIT_ERROR


if __name__ == "__main__":
    multiprocessing.set_start_method('spawn')
    sys.exit(main())
