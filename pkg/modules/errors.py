# -*- coding: utf-8 -*-
"""
工作台统一异常类型
库层抛出这些异常，模块层与命令行负责转换为响应或退出码
"""

from typing import Optional


class ShapeMismatchError(ValueError):
    """网格、点云或梯度形状不一致"""


class GeometryError(ValueError):
    """位姿不满足几何前提（例如接近万向锁）"""


class PlacementError(RuntimeError):
    """场景生成时拒绝采样失败，配置过于拥挤"""


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class SchemaVersionError(ConfigError):
    def __init__(self, found: Optional[str], supported: str):
        super().__init__("schema_version", f"不支持的版本 {found!r}，当前支持 {supported}")


class MissingInputError(FileNotFoundError):
    """命令所需的场景或攻击结果文件不存在"""
