# 异常定义
# 库代码只负责抛出，退出码的转换统一在 main.py 完成


class KcsError(Exception):
    """社区搜索引擎的基础异常"""

    exit_code = 1


class DataValidationError(KcsError, ValueError):
    """数据文件、查询参数或更新批次不合法"""

    exit_code = 2


class UnknownEntityError(DataValidationError):
    """引用了不存在的用户、POI 或路网顶点"""


class InstanceTooLargeError(KcsError, ValueError):
    """暴力求解器拒绝过大的实例"""

    exit_code = 2


class SnapshotError(KcsError):
    """快照缺失或格式版本不兼容"""

    exit_code = 2


class EpochMismatchError(SnapshotError):
    """边界快照、索引快照与数据集不属于同一个版本"""

    exit_code = 3
