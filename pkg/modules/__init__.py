# -*- coding: utf-8 -*-
"""
GPS位姿对抗攻击实验模块包
场景生成、感知代理模型、攻击与评估的模块化实现
"""

__version__ = "1.0.0"
__author__ = "GPSAttackBoard Team"
