# 索引构建命令
import os
from typing import Dict, Optional

from index_tree import build_index
from logger import get_logger
from networks import load_networks
from snapshot import INDEX_SNAPSHOT, dataset_fingerprint, load_bounds, save_snapshot

from .base_command import Command, engine_config

# 获取日志记录器
logger = get_logger()


class BuildIndexCommand(Command):
    def __init__(self):
        super().__init__(
            name="build-index",
            description="在 bounds.pkl 之上选择索引枢纽、划分用户并构建树索引，保存 index.pkl",
            parameters={
                "data_dir": {"type": "str", "description": "数据集目录", "required": True},
                "seed": {"type": "int", "description": "随机种子（覆盖 KCS_SEED）"},
                "fanout": {"type": "int", "description": "索引树扇出"},
                "leaf_capacity": {"type": "int", "description": "叶节点容量"},
                "index_iterations": {"type": "int", "description": "索引枢纽交换迭代次数"},
            },
        )

    def run(
        self,
        data_dir: str,
        seed: Optional[int] = None,
        fanout: Optional[int] = None,
        leaf_capacity: Optional[int] = None,
        index_iterations: Optional[int] = None,
    ) -> Dict:
        config = engine_config(
            seed=seed,
            fanout=fanout,
            leaf_capacity=leaf_capacity,
            index_iterations=index_iterations,
        )
        bounds = load_bounds(data_dir, dataset_fingerprint(data_dir))
        networks = load_networks(data_dir)
        tree = build_index(networks, bounds, config)
        path = os.path.join(data_dir, INDEX_SNAPSHOT)
        save_snapshot(path, "index", tree, tree.bounds_fingerprint, tree.epoch)
        return {
            "snapshot": path,
            "nodes": len(tree.nodes),
            "leaves": len(tree.index_pivots),
            "height": tree.height(),
            "seconds": round(tree.build_seconds, 3),
        }
