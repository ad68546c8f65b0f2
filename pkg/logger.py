import logging
import os
from datetime import datetime

import colorlog
from dotenv import load_dotenv

# 全局变量存储单例logger
_logger_instance = None
_log_filename = None
_log_level_str = None

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def _initialize_logger():
    """初始化日志记录器（单例模式）"""
    global _logger_instance, _log_filename, _log_level_str

    if _logger_instance is not None:
        return _logger_instance

    # 加载环境变量
    load_dotenv()

    # 从环境变量读取日志级别配置
    _log_level_str = os.getenv("LOG_LEVEL", "INFO").upper()
    log_level_map = {
        "DEBUG": logging.DEBUG,
        "INFO": logging.INFO,
        "WARNING": logging.WARNING,
        "ERROR": logging.ERROR,
        "CRITICAL": logging.CRITICAL,
    }
    log_level = log_level_map.get(_log_level_str, logging.INFO)

    _logger_instance = logging.getLogger("kcs_bssn")

    # 检查是否已经配置过处理器，避免重复添加
    if not _logger_instance.handlers:
        _logger_instance.setLevel(log_level)
        _logger_instance.propagate = False

        # 控制台处理器，按级别着色
        console_handler = logging.StreamHandler()
        console_handler.setLevel(log_level)
        console_handler.setFormatter(
            colorlog.ColoredFormatter(
                "%(log_color)s%(asctime)s - %(levelname)s - %(message)s",
                log_colors={
                    "DEBUG": "cyan",
                    "INFO": "green",
                    "WARNING": "yellow",
                    "ERROR": "red",
                    "CRITICAL": "bold_red",
                },
            )
        )
        _logger_instance.addHandler(console_handler)

        # 文件处理器，可通过 LOG_TO_FILE=false 关闭
        if os.getenv("LOG_TO_FILE", "true").lower() != "false":
            log_dir = os.getenv(
                "LOG_DIR", os.path.join(os.path.dirname(os.path.abspath(__file__)), "logs")
            )
            os.makedirs(log_dir, exist_ok=True)
            _log_filename = os.path.join(
                log_dir, f'kcs_bssn_{datetime.now().strftime("%Y%m%d_%H%M%S")}.log'
            )
            file_handler = logging.FileHandler(_log_filename, encoding="utf-8")
            file_handler.setLevel(log_level)
            file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
            _logger_instance.addHandler(file_handler)

        _logger_instance.debug(f"日志配置: 级别={_log_level_str}, 文件={_log_filename}")

    return _logger_instance


def get_logger():
    """获取日志记录器"""
    return _initialize_logger()
