"""
离线数据与索引树的版本化快照
"""

import hashlib
import os
import pickle
from typing import Any, Tuple

from errors import EpochMismatchError, SnapshotError
from logger import get_logger
from networks import DATASET_FILES, load_networks

# 获取日志记录器
logger = get_logger()

SNAPSHOT_FORMAT = "kcs-bssn-snapshot"
SNAPSHOT_VERSION = 1
BOUNDS_SNAPSHOT = "bounds.pkl"
INDEX_SNAPSHOT = "index.pkl"


def dataset_fingerprint(directory: str) -> str:
    """按固定顺序对数据文件做 SHA-256"""
    digest = hashlib.sha256()
    for name in DATASET_FILES:
        path = os.path.join(directory, name)
        if not os.path.exists(path):
            logger.error(f"数据文件缺失: {path}")
            raise SnapshotError(f"数据文件缺失: {path}")
        digest.update(name.encode("utf-8"))
        with open(path, "rb") as handle:
            for chunk in iter(lambda: handle.read(1 << 20), b""):
                digest.update(chunk)
    return digest.hexdigest()


def save_snapshot(path: str, kind: str, payload: Any, fingerprint: str, epoch: int) -> None:
    header = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "kind": kind,
        "fingerprint": fingerprint,
        "epoch": epoch,
    }
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as handle:
        pickle.dump(header, handle, protocol=pickle.HIGHEST_PROTOCOL)
        pickle.dump(payload, handle, protocol=pickle.HIGHEST_PROTOCOL)
    logger.info(f"快照已保存: {path} ({kind}, epoch={epoch})")


def load_snapshot(path: str, kind: str) -> Tuple[dict, Any]:
    if not os.path.exists(path):
        logger.error(f"快照不存在: {path}")
        raise SnapshotError(f"快照不存在: {path}，请先运行对应的构建命令")
    try:
        with open(path, "rb") as handle:
            header = pickle.load(handle)
            if (
                not isinstance(header, dict)
                or header.get("format") != SNAPSHOT_FORMAT
                or header.get("version") != SNAPSHOT_VERSION
            ):
                raise SnapshotError(f"快照格式或版本不兼容: {path}")
            if header.get("kind") != kind:
                raise SnapshotError(f"快照类型应为 {kind}，实际为 {header.get('kind')}: {path}")
            payload = pickle.load(handle)
    except (pickle.UnpicklingError, EOFError) as e:
        logger.error(f"快照读取失败 {path}: {e}")
        raise SnapshotError(f"快照损坏: {path}") from e
    return header, payload


def load_bounds(directory: str, fingerprint: str):
    header, bounds = load_snapshot(os.path.join(directory, BOUNDS_SNAPSHOT), "bounds")
    if header["fingerprint"] != fingerprint:
        logger.error("离线数据快照与当前数据集不一致")
        raise EpochMismatchError("离线数据快照基于另一个版本的数据集，请重新运行 precompute")
    return bounds


def load_index(directory: str, bounds):
    header, tree = load_snapshot(os.path.join(directory, INDEX_SNAPSHOT), "index")
    if header["fingerprint"] != bounds.fingerprint or header["epoch"] != bounds.epoch:
        logger.error("索引快照与离线数据快照版本不一致")
        raise EpochMismatchError("索引快照与离线数据快照不匹配，请重新运行 build-index")
    return tree


def load_engine(directory: str):
    """加载数据集、离线数据与索引，并检查三者属于同一版本"""
    networks = load_networks(directory)
    bounds = load_bounds(directory, dataset_fingerprint(directory))
    tree = load_index(directory, bounds)
    logger.info(f"引擎加载完成: {directory} (epoch={bounds.epoch})")
    return networks, bounds, tree
