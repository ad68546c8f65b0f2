# KCS-BSSN 查询命令
import json
from typing import Dict, Optional

from logger import get_logger
from metrics import RoadDistances
from query_engine import answer_query
from snapshot import load_engine

from .base_command import ENGINE_PARAMETERS, QUERY_PARAMETERS, Command, engine_config, query_params

# 获取日志记录器
logger = get_logger()


def write_document(document: Dict, output: Optional[str]) -> None:
    if not output:
        return
    with open(output, "w", encoding="utf-8") as handle:
        json.dump(document, handle, ensure_ascii=False, indent=2)
    logger.info(f"结果已写入: {output}")


class QueryCommand(Command):
    def __init__(self):
        super().__init__(
            name="query",
            description="用树索引回答一次 KCS-BSSN 查询，输出社区成员、签到边与剪枝统计",
            parameters={**QUERY_PARAMETERS, **ENGINE_PARAMETERS},
        )

    def run(
        self,
        data_dir: str,
        output: Optional[str] = None,
        seed: Optional[int] = None,
        sound_only: bool = False,
        disable_lemmas: Optional[str] = None,
        **kwargs,
    ) -> Dict:
        params = query_params(**kwargs)
        config = engine_config(seed=seed, sound_only=sound_only, disable_lemmas=disable_lemmas)
        networks, bounds, tree = load_engine(data_dir)
        distances = RoadDistances(networks.road, max_sources=config.distance_cache_size)
        result = answer_query(tree, bounds, networks, params, config, distances=distances)
        document = result.to_document()
        write_document(document, output)
        return document
