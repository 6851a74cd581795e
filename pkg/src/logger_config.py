import logging
import os
from datetime import datetime
from typing import Iterable, Tuple, Any

BANNER_WIDTH = 62


def create_formatter() -> logging.Formatter:
    """
    创建日志格式化器（processName 用于区分蒙特卡洛工作进程）

    Returns:
        logging.Formatter: 配置好的日志格式化器
    """
    return logging.Formatter(
        '%(asctime)s - %(processName)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )


def setup_file_handler(formatter: logging.Formatter, log_dir: str = 'logs',
                       level: int = logging.INFO) -> logging.FileHandler:
    """
    设置按日期命名的文件日志处理器

    Args:
        formatter (logging.Formatter): 日志格式化器
        log_dir (str): 日志目录

    Returns:
        logging.FileHandler: 写入 <log_dir>/ris_cov_<日期>.log 的处理器
    """
    os.makedirs(log_dir, exist_ok=True)
    file_handler = logging.FileHandler(
        os.path.join(log_dir, f"ris_cov_{datetime.now().strftime('%Y-%m-%d')}.log"),
        encoding='utf-8'
    )
    file_handler.setLevel(level)
    file_handler.setFormatter(formatter)
    return file_handler


def setup_console_handler(formatter: logging.Formatter, level: int = logging.INFO) -> logging.StreamHandler:
    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    return console_handler


def clear_existing_handlers(logger: logging.Logger) -> None:
    """移除并关闭日志记录器现有的全部处理器"""
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)
        handler.close()


def setup_logger(enable_console: bool = True, log_dir: str = 'logs', level: int = logging.INFO) -> logging.Logger:
    """
    配置并返回根日志记录器

    Args:
        enable_console (bool, optional): 是否启用控制台日志输出. 默认为 True.
        log_dir (str, optional): 日志文件目录. 默认为 logs.
        level (int, optional): 日志级别. 默认为 INFO.

    Returns:
        logging.Logger: 配置好的根日志记录器
    """
    logger = logging.getLogger()
    logger.setLevel(level)
    clear_existing_handlers(logger)

    formatter = create_formatter()
    logger.addHandler(setup_file_handler(formatter, log_dir, level))
    if enable_console:
        logger.addHandler(setup_console_handler(formatter, level))
    return logger


def log_banner(logger: logging.Logger, title: str, items: Iterable[Tuple[str, Any]]) -> None:
    """以星号横幅输出一组配置项"""
    logger.info(f"{title:*^{BANNER_WIDTH}}")
    for key, value in items:
        logger.info(f"{key}: {value}")
    logger.info("*" * BANNER_WIDTH)
