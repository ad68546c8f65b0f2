# 合成数据集生成命令
from typing import Dict, Optional

from datagen import GenConfig, generate_networks, import_edge_list, write_dataset
from logger import get_logger

from .base_command import Command

# 获取日志记录器
logger = get_logger()


class GenCommand(Command):
    def __init__(self):
        super().__init__(
            name="gen",
            description="生成 Unif/Gaus/Skew 合成数据集，或导入真实社交边表后补全路网、POI 与签到",
            parameters={
                "out": {"type": "str", "description": "输出目录", "required": True},
                "seed": {"type": "int", "description": "随机种子", "default": 7},
                "users": {"type": "int", "description": "社交网络用户数", "default": 30000},
                "distribution": {
                    "type": "str",
                    "description": "度与关键词流行度的分布",
                    "default": "uniform",
                    "choices": ["uniform", "gaussian", "skew"],
                },
                "degree_min": {"type": "int", "description": "最小出度", "default": 8},
                "degree_max": {"type": "int", "description": "最大出度", "default": 40},
                "road_vertices": {"type": "int", "description": "路网顶点数", "default": 20000},
                "pois": {"type": "int", "description": "POI 数", "default": 10000},
                "dictionary": {"type": "int", "description": "关键词词表大小", "default": 50},
                "horizon": {"type": "int", "description": "生成带时间戳访问事件时的时间跨度"},
                "tau": {"type": "int", "description": "记录到 manifest 的窗口长度"},
                "edge_list": {"type": "str", "description": "SNAP 格式社交边表，设置后替代合成社交网络"},
                "limit": {"type": "int", "description": "导入边表时最多保留的用户数"},
            },
        )

    def run(
        self,
        out: str,
        edge_list: Optional[str] = None,
        limit: Optional[int] = None,
        **kwargs,
    ) -> Dict:
        cfg = GenConfig(**{key: value for key, value in kwargs.items() if value is not None})
        logger.info(f"生成数据集: 目录={out}, 种子={cfg.seed}, 分布={cfg.distribution}")
        social = import_edge_list(edge_list, cfg, limit) if edge_list else None
        networks, events = generate_networks(cfg, social)
        manifest = write_dataset(out, networks, cfg, events)
        return {
            "out": out,
            "users": len(networks.social),
            "social_edges": len(networks.social.edges),
            "road_vertices": len(networks.road),
            "pois": len(networks.pois),
            "checkins": sum(1 for _ in networks.bipartite.edges()),
            "visits": len(events) if events is not None else 0,
            "files": manifest["files"],
        }
