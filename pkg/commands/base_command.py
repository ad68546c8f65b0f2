# 命令基类
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from config import EngineConfig
from logger import get_logger
from networks import QueryParams

# 获取日志记录器
logger = get_logger()

# query / oracle 共用的查询参数
QUERY_PARAMETERS: Dict[str, Dict[str, Any]] = {
    "data_dir": {"type": "str", "description": "数据集目录", "required": True},
    "q": {"type": "str", "description": "查询用户 id", "required": True},
    "keywords": {"type": "list", "description": "查询关键词，逗号分隔", "required": True},
    "k": {"type": "int", "description": "truss 参数", "default": 3},
    "d": {"type": "int", "description": "社交跳数上限", "default": 3},
    "omega": {"type": "float", "description": "用户累计频次阈值", "default": 0.4},
    "pi": {"type": "float", "description": "POI 平均频次阈值", "default": 0.4},
    "theta": {"type": "float", "description": "影响力阈值", "default": 0.4},
    "sigma": {"type": "float", "description": "平均路网距离上限", "default": 5.0},
    "output": {"type": "str", "description": "结果 JSON 输出路径"},
}

# 可覆盖 EngineConfig 的通用参数
ENGINE_PARAMETERS: Dict[str, Dict[str, Any]] = {
    "seed": {"type": "int", "description": "随机种子（覆盖 KCS_SEED）"},
    "sound_only": {"type": "bool", "description": "关闭 π 剪枝，结果与暴力求解器一致"},
    "disable_lemmas": {"type": "list", "description": "额外关闭的剪枝引理，逗号分隔"},
}


def split_list(value: Optional[Any]) -> List[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return [str(item) for item in value]


def engine_config(
    seed: Optional[int] = None,
    sound_only: bool = False,
    disable_lemmas: Optional[Any] = None,
    **overrides: Any,
) -> EngineConfig:
    """环境变量打底，命令行参数覆盖"""
    lemmas = split_list(disable_lemmas)
    if lemmas:
        overrides["disabled_lemmas"] = lemmas
    config = EngineConfig.from_env(seed=seed, **overrides)
    return config.sound_only() if sound_only else config


def query_params(**kwargs: Any) -> QueryParams:
    fields = {name: kwargs[name] for name in QueryParams.model_fields if kwargs.get(name) is not None}
    fields["keywords"] = split_list(fields.get("keywords"))
    return QueryParams(**fields)


class Command(BaseModel):
    name: str = Field(..., description="命令名称")
    description: str = Field(..., description="命令功能描述")
    parameters: Dict[str, Dict[str, Any]] = Field(..., description="命令参数说明")

    def run(self, **kwargs) -> Any:
        """执行命令，返回可以 JSON 序列化的摘要"""
        logger.debug(f"命令基类run方法被调用，参数: {kwargs}")
        raise NotImplementedError("子类必须实现run方法")
