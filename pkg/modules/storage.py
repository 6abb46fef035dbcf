# -*- coding: utf-8 -*-
"""产物存储：原子写入 JSON / CSV 并返回内容摘要"""

import csv
import hashlib
import io
import json
import os
import tempfile
from typing import Any, Dict, Iterable, Optional, Sequence

from .errors import MissingInputError


class ArtifactStore:
    """实验产物的本地存储工具类，写入均为原子操作"""

    def __init__(self, root: str, enable_cache: bool = True):
        """
        初始化产物存储

        Args:
            root: 输出根目录
            enable_cache: 是否缓存已写入文件的摘要，默认为True
        """
        if not root:
            raise ValueError("root must be provided")
        self.root = os.path.abspath(root)
        self.enable_cache = enable_cache
        self.digest_cache: Optional[Dict[str, str]] = {} if enable_cache else None

    def path(self, relpath: str) -> str:
        return os.path.join(self.root, relpath)

    def exists(self, relpath: str) -> bool:
        return os.path.exists(self.path(relpath))

    def write_bytes(self, relpath: str, content: bytes) -> str:
        """
        先写同目录临时文件再 os.replace，中途失败不会留下半截文件

        Returns:
            内容的 SHA-256 摘要
        """
        target = self.path(relpath)
        directory = os.path.dirname(target)
        os.makedirs(directory, exist_ok=True)
        fd, temp_path = tempfile.mkstemp(prefix=".tmp_", dir=directory)
        try:
            with os.fdopen(fd, "wb") as temp_file:
                temp_file.write(content)
            os.replace(temp_path, target)
        finally:
            if os.path.exists(temp_path):
                os.unlink(temp_path)

        digest = hashlib.sha256(content).hexdigest()
        if self.enable_cache:
            self.digest_cache[relpath] = digest
        return digest

    def write_json(self, relpath: str, data: Any, indent: Optional[int] = 2) -> str:
        text = json.dumps(data, sort_keys=True, ensure_ascii=False, indent=indent)
        return self.write_bytes(relpath, (text + "\n").encode("utf-8"))

    def write_csv(self, relpath: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.6f}" if isinstance(v, float) else v for v in row])
        return self.write_bytes(relpath, buf.getvalue().encode("utf-8"))

    def write_text(self, relpath: str, text: str) -> str:
        return self.write_bytes(relpath, text.encode("utf-8"))

    def read_json(self, relpath: str) -> Any:
        target = self.path(relpath)
        if not os.path.exists(target):
            raise MissingInputError(f"缺少输入文件: {target}")
        with open(target, "r", encoding="utf-8") as f:
            return json.load(f)

    def list_dir(self, reldir: str, suffix: str = ".json") -> list:
        target = self.path(reldir)
        if not os.path.isdir(target):
            return []
        return sorted(name for name in os.listdir(target) if name.endswith(suffix) and not name.startswith("."))

    def digest(self, relpath: str) -> str:
        """获取文件摘要，优先读缓存"""
        if self.enable_cache and relpath in self.digest_cache:
            return self.digest_cache[relpath]
        target = self.path(relpath)
        if not os.path.exists(target):
            raise MissingInputError(f"缺少输入文件: {target}")
        with open(target, "rb") as f:
            return hashlib.sha256(f.read()).hexdigest()

    def clear_cache(self):
        """清空摘要缓存"""
        if self.digest_cache:
            self.digest_cache.clear()

    def get_cache_size(self) -> int:
        return len(self.digest_cache) if self.digest_cache else 0
