import os
from typing import Any, Dict, List, Literal

from dotenv import load_dotenv
from pydantic import BaseModel, Field, field_validator

from logger import get_logger

# 获取日志记录器
logger = get_logger()

# 可以单独关闭的剪枝引理（与 precompute.PruneReason 的取值一致）
LEMMA_NAMES = ("Keyword", "Omega", "Pi", "Influence", "Support", "SocialDist", "SpatialDist")


class EngineConfig(BaseModel):
    """引擎调优参数，默认值可被环境变量与命令行覆盖"""

    seed: int = Field(7, description="所有随机过程共用的种子")
    social_pivots: int = Field(8, ge=1, description="社交网络枢纽数")
    road_pivots: int = Field(8, ge=1, description="路网枢纽数")
    pivot_iterations: int = Field(200, ge=0, description="枢纽交换迭代次数")
    pivot_sample_pairs: int = Field(1000, ge=1, description="枢纽目标函数的采样对数")
    pivot_objective: Literal["maximize", "minimize"] = Field("maximize", description="枢纽目标方向")
    fanout: int = Field(8, ge=2, description="索引树扇出")
    leaf_capacity: int = Field(64, ge=1, description="叶节点容量")
    index_iterations: int = Field(50, ge=0, description="索引枢纽交换迭代次数")
    node_pivot_iterations: int = Field(20, ge=0, description="非叶枢纽交换迭代次数")
    cost_sample_pairs: int = Field(2000, ge=1, description="划分代价的采样对数")
    w_bs: float = Field(1.0 / 3.0, ge=0.0, description="二部结构权重")
    w_ss: float = Field(1.0 / 3.0, ge=0.0, description="社交结构权重")
    w_rs: float = Field(1.0 / 3.0, ge=0.0, description="空间结构权重")
    stability_margin: float = Field(0.05, ge=0.0, description="迁移所需的最小质量增益")
    exact_refine_limit: int = Field(18, ge=0, description="精确细化搜索的用户数上限")
    oracle_user_limit: int = Field(25, ge=1, description="暴力求解器允许的 d 跳内用户数")
    distance_cache_size: int = Field(512, ge=1, description="路网单源距离缓存条数")
    disabled_lemmas: List[str] = Field(default_factory=list, description="关闭的剪枝引理")
    workers: int = Field(1, ge=1, description="离线上界与 bench 的并行进程数")

    @field_validator("disabled_lemmas")
    @classmethod
    def _check_lemmas(cls, value: List[str]) -> List[str]:
        unknown = [name for name in value if name not in LEMMA_NAMES]
        if unknown:
            raise ValueError(f"未知的剪枝引理: {unknown}")
        return sorted(set(value))

    def lemma_enabled(self, reason: Any) -> bool:
        name = getattr(reason, "value", reason)
        return name not in self.disabled_lemmas

    def sound_only(self) -> "EngineConfig":
        """关闭基于 π 的剪枝，得到与暴力求解器完全一致的答案"""
        return self.model_copy(update={"disabled_lemmas": sorted(set(self.disabled_lemmas) | {"Pi"})})

    @classmethod
    def from_env(cls, **overrides: Any) -> "EngineConfig":
        """从环境变量读取配置，显式参数优先"""
        load_dotenv()
        values: Dict[str, Any] = {}
        for name in cls.model_fields:
            raw = os.getenv(f"KCS_{name.upper()}")
            if raw is None or raw == "":
                continue
            if name == "disabled_lemmas":
                values[name] = [item.strip() for item in raw.split(",") if item.strip()]
            else:
                values[name] = raw
        if os.getenv("KCS_SOUND_ONLY", "false").lower() == "true":
            values["disabled_lemmas"] = sorted(set(values.get("disabled_lemmas", [])) | {"Pi"})
        values.update({key: value for key, value in overrides.items() if value is not None})
        config = cls(**values)
        logger.debug(f"引擎配置: {config.model_dump()}")
        return config
