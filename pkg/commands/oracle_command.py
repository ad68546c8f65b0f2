# 暴力求解命令
import time
from typing import Dict, Optional

from logger import get_logger
from networks import load_networks
from query_engine import brute_force_oracle

from .base_command import QUERY_PARAMETERS, Command, engine_config, query_params
from .query_command import write_document

# 获取日志记录器
logger = get_logger()


class OracleCommand(Command):
    def __init__(self):
        super().__init__(
            name="oracle",
            description="在小实例上枚举全部用户子集，给出参考答案",
            parameters={
                **QUERY_PARAMETERS,
                "user_limit": {"type": "int", "description": "q 的 d 跳内允许的最多用户数"},
            },
        )

    def run(
        self,
        data_dir: str,
        output: Optional[str] = None,
        user_limit: Optional[int] = None,
        **kwargs,
    ) -> Dict:
        params = query_params(**kwargs)
        config = engine_config(oracle_user_limit=user_limit)
        networks = load_networks(data_dir)
        start = time.perf_counter()
        answer = brute_force_oracle(networks, params, config)
        seconds = time.perf_counter() - start
        logger.info(f"暴力求解完成: {len(answer.users)} 个用户, 耗时 {seconds:.2f} 秒")
        document = {
            "query": params.model_dump(),
            "users": answer.users,
            "pois": answer.pois,
            "edges": [list(edge) for edge in answer.edges],
            "seconds": seconds,
        }
        write_document(document, output)
        return document
