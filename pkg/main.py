import json
import sys

from dotenv import load_dotenv
from pydantic import ValidationError

from command_manager import CommandManager
from errors import KcsError
from logger import get_logger

# 获取日志记录器
logger = get_logger()

# 加载环境变量
load_dotenv()


def main(argv=None) -> int:
    manager = CommandManager()
    try:
        result = manager.execute(argv)
    except ValidationError as e:
        logger.error(f"参数校验失败: {e}")
        print(f"参数错误: {e}", file=sys.stderr)
        return 2
    except KcsError as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return e.exit_code

    # 结果摘要输出到控制台
    print(json.dumps(result, ensure_ascii=False, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
