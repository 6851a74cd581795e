import sys
import os
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'src')))
import json
import argparse
import concurrent.futures
import logging

from config import ExperimentConfig
from experiment import run_experiment, summarize_gains
from logger_config import setup_logger
from result_writer import emit

logger = logging.getLogger(__name__)


def run_one_preset(config_path, mode=None, out=None, trials=None):
    """
    运行一个预设并写出结果，返回未收敛的行数
    """
    spec = ExperimentConfig(config_path).to_spec(mode=mode, output_path=out, n_trials=trials)
    table = run_experiment(spec)
    emit(table, spec.output_path, spec.name, summarize_gains(table))
    return int((~table['converged']).sum())


def run_presets(preset_list, mode=None, out=None, trials=None, threads=1):
    """
    批量运行预设列表中的全部预设，支持多线程
    """
    with open(preset_list, 'r', encoding='utf-8') as f:
        preset_list = json.load(f)

    def process_preset(config_path):
        logger.info(f"[START]运行预设 {config_path}")
        failed = run_one_preset(config_path, mode, out, trials)
        logger.info(f"[DONE]预设 {config_path} 完成，未收敛 {failed} 行")
        return failed

    failures = 0
    with concurrent.futures.ThreadPoolExecutor(max_workers=threads) as executor:
        futures = {executor.submit(process_preset, path): path for path in preset_list}
        for future in concurrent.futures.as_completed(futures):
            try:
                future.result()
            except Exception as e:
                failures += 1
                logger.error(f"处理预设 {futures[future]} 时出错: {e}", exc_info=True)
    return failures


def main(argv=None):
    parser = argparse.ArgumentParser(description='批量运行预设实验')
    parser.add_argument('--preset_list', type=str, default='config/preset_list.json', help='预设列表的json文件路径')
    parser.add_argument('--preset', type=str, help='单个预设配置文件路径')
    parser.add_argument('--mode', type=str, default=None, help='引擎模式，可选analytic, montecarlo, both')
    parser.add_argument('--out', type=str, default=None, help='结果输出目录')
    parser.add_argument('--trials', type=int, default=None, help='蒙特卡洛试验次数')
    parser.add_argument('--threads', type=int, default=1, help='线程数，默认为1')
    parser.add_argument('--log_dir', type=str, default='logs', help='日志目录')
    parser.add_argument('--quiet', action='store_true', help='关闭控制台日志')
    args = parser.parse_args(argv)
    setup_logger(enable_console=not args.quiet, log_dir=args.log_dir)

    if args.preset:
        run_one_preset(args.preset, args.mode, args.out, args.trials)
        return 0
    return 1 if run_presets(args.preset_list, args.mode, args.out, args.trials, args.threads) else 0


if __name__ == "__main__":
    sys.exit(main())
