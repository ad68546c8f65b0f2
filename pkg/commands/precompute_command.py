# 离线预计算命令
import os
from typing import Dict, Optional

from logger import get_logger
from networks import load_networks
from precompute import build_offline_bounds
from snapshot import BOUNDS_SNAPSHOT, dataset_fingerprint, save_snapshot

from .base_command import Command, engine_config

# 获取日志记录器
logger = get_logger()


class PrecomputeCommand(Command):
    def __init__(self):
        super().__init__(
            name="precompute",
            description="计算用户级上界、社交枢纽与路网枢纽，保存 bounds.pkl",
            parameters={
                "data_dir": {"type": "str", "description": "数据集目录", "required": True},
                "seed": {"type": "int", "description": "随机种子（覆盖 KCS_SEED）"},
                "social_pivots": {"type": "int", "description": "社交枢纽数"},
                "road_pivots": {"type": "int", "description": "路网枢纽数"},
                "pivot_objective": {
                    "type": "str",
                    "description": "枢纽目标方向",
                    "choices": ["maximize", "minimize"],
                },
            },
        )

    def run(
        self,
        data_dir: str,
        seed: Optional[int] = None,
        social_pivots: Optional[int] = None,
        road_pivots: Optional[int] = None,
        pivot_objective: Optional[str] = None,
    ) -> Dict:
        config = engine_config(
            seed=seed,
            social_pivots=social_pivots,
            road_pivots=road_pivots,
            pivot_objective=pivot_objective,
        )
        fingerprint = dataset_fingerprint(data_dir)
        networks = load_networks(data_dir)
        bounds = build_offline_bounds(networks, config)
        bounds.fingerprint = fingerprint
        bounds.epoch = 0
        path = os.path.join(data_dir, BOUNDS_SNAPSHOT)
        save_snapshot(path, "bounds", bounds, fingerprint, bounds.epoch)
        return {
            "snapshot": path,
            "users": len(bounds.users),
            "social_pivots": bounds.pivots.social,
            "road_pivots": bounds.pivots.road,
            "seconds": round(bounds.build_seconds, 3),
        }
