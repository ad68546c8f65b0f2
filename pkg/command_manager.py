import argparse
from typing import Any, Dict, Optional

from commands.base_command import Command
from logger import get_logger

# 获取日志记录器
logger = get_logger()

# parameters 中的类型名 -> argparse type
ARG_TYPES = {"int": int, "float": float, "str": str, "list": str}


# 命令管理器
class CommandManager:
    def __init__(self):
        from commands.bench_command import BenchCommand
        from commands.build_index_command import BuildIndexCommand
        from commands.gen_command import GenCommand
        from commands.oracle_command import OracleCommand
        from commands.precompute_command import PrecomputeCommand
        from commands.query_command import QueryCommand
        from commands.stream_command import StreamCommand

        commands = [
            GenCommand(),
            PrecomputeCommand(),
            BuildIndexCommand(),
            QueryCommand(),
            OracleCommand(),
            StreamCommand(),
            BenchCommand(),
        ]
        self.commands: Dict[str, Command] = {command.name: command for command in commands}
        logger.debug(f"已注册{len(self.commands)}个命令: {', '.join(self.commands.keys())}")

    def get_command(self, command_name: str) -> Optional[Command]:
        command = self.commands.get(command_name)
        if command is None:
            logger.warning(f"获取命令: {command_name} - 未找到")
        return command

    def get_all_command_descriptions(self) -> str:
        descriptions = []
        for command in self.commands.values():
            descriptions.append(f"  {command.name:<12} {command.description}")
        return "\n".join(descriptions)

    def build_parser(self) -> argparse.ArgumentParser:
        """由各命令的 parameters 生成子命令解析器"""
        parser = argparse.ArgumentParser(
            prog="kcs-bssn",
            description="二部空间-社交网络上的关键词感知社区搜索",
            epilog="命令:\n" + self.get_all_command_descriptions(),
            formatter_class=argparse.RawDescriptionHelpFormatter,
        )
        subparsers = parser.add_subparsers(dest="command", required=True)
        for command in self.commands.values():
            sub = subparsers.add_parser(command.name, help=command.description, description=command.description)
            for name, info in command.parameters.items():
                _add_argument(sub, name, info)
        return parser

    def execute(self, argv=None) -> Any:
        args = vars(self.build_parser().parse_args(argv))
        name = args.pop("command")
        command = self.commands[name]
        logger.info(f"执行命令: {name}")
        return command.run(**args)


def _add_argument(parser: argparse.ArgumentParser, name: str, info: Dict[str, Any]) -> None:
    flag = "--" + name.replace("_", "-")
    if info["type"] == "bool":
        parser.add_argument(flag, dest=name, action="store_true", help=info["description"])
        return
    options: Dict[str, Any] = {
        "dest": name,
        "type": ARG_TYPES[info["type"]],
        "help": info["description"],
        "default": info.get("default"),
    }
    if info.get("required"):
        options["required"] = True
    if "choices" in info:
        options["choices"] = info["choices"]
    parser.add_argument(flag, **options)
