import sys
import os
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..', 'src')))
import argparse
import logging

from mc_sim import los_frequency
from params import SystemParams, validate

# 配置日志
logging.basicConfig(level=logging.INFO,
                    format='%(asctime)s - %(levelname)s - %(message)s',
                    datefmt='%Y-%m-%d %H:%M:%S')
logger = logging.getLogger(__name__)


def check_los_law(lambda_b, lengths, n_links, seed, output=None):
    """
    统计各链路长度下的经验视距频率，与 exp(-2λ_b·E[L]·d/π) 对比
    """
    params = validate(SystemParams(lambda_b=lambda_b))
    table = los_frequency(params, lengths, n_links, seed)
    within = table['z_score'].abs() <= 3.0
    for row, ok in zip(table.itertuples(index=False), within):
        logger.info(f"d={row.length:g} m: 经验 {row.los_freq:.4f}, 理论 {row.theory:.4f}, "
                    f"z={row.z_score:+.2f}, {'通过' if ok else '超出'}")
    if output:
        table.to_csv(output, index=False, lineterminator='\n')
        logger.info(f"结果已写入: {output}")
    return bool(within.all())


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description='检验随机线段遮挡模型下的视距概率')
    parser.add_argument('--lambda_b', type=float, default=1.59e-3, help='遮挡物密度，默认1.59e-3')
    parser.add_argument('--lengths', type=float, nargs='+', default=[25.0, 50.0, 100.0, 200.0], help='链路长度（m）')
    parser.add_argument('--links', type=int, default=100000, help='每个长度的链路数，默认100000')
    parser.add_argument('--seed', type=int, default=2024, help='随机种子')
    parser.add_argument('--output', type=str, default=None, help='结果CSV路径')
    args = parser.parse_args()

    sys.exit(0 if check_los_law(args.lambda_b, args.lengths, args.links, args.seed, args.output) else 1)
