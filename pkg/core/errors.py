# core/errors.py
# -*- coding: utf-8 -*-
"""
统一异常与退出码：
- 业务异常都继承 LACBError，并同时继承最贴近的内置异常，调用方两种 except 都能接住
- guarded(fn)：包裹 CLI 命令，记录 traceback；DEBUG 模式下打印完整堆栈
- 退出码：0 成功，2 用法错误，3 不变量被破坏，4 I/O
"""

from __future__ import annotations

import functools
import logging
import sys
import traceback
from typing import Any, Callable, Tuple

from config.settings import settings

logger = logging.getLogger("lacb.errors")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INVARIANT = 3
EXIT_IO = 4


class LACBError(Exception):
    """通用业务异常"""
    exit_code = EXIT_INVARIANT


class UsageError(LACBError, ValueError):
    """参数/配置不合法"""
    exit_code = EXIT_USAGE


class InvariantViolation(LACBError, RuntimeError):
    """运行中检测到不变量被破坏（容量超限、一对一被破坏等）"""
    exit_code = EXIT_INVARIANT


class StorageError(LACBError, OSError):
    """读写实验文件失败"""
    exit_code = EXIT_IO


class MissingUtilityError(LACBError, KeyError):
    """匹配对没有效用记录"""

    def __init__(self, request_id: Any, broker_id: Any) -> None:
        super().__init__(f"no utility for pair (request={request_id}, broker={broker_id})")
        self.pair: Tuple[Any, Any] = (request_id, broker_id)

    def __str__(self) -> str:  # KeyError 默认会给消息加引号
        return str(self.args[0])


class DimensionMismatchError(LACBError, ValueError):
    """上下文维度与网络输入不一致"""


class CovarianceError(LACBError, ArithmeticError):
    """D⁻¹ 已失去正定性"""


class TemporalOrderError(LACBError, ValueError):
    """剩余容量在一天内不可能增长"""


class NonSquareGraphError(LACBError, ValueError):
    """KM 求解前图必须已平衡为方阵"""


class ReassignError(LACBError, ValueError):
    """对未匹配的请求发起改派"""


class WorldConfigError(UsageError):
    """世界参数组合不可行"""


class SchemaMismatchError(UsageError):
    """输入文件缺少约定的列"""

    def __init__(self, path: str, column: str) -> None:
        super().__init__(f"{path}: missing column '{column}'")
        self.column = column


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, LACBError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_INVARIANT


def guarded(fn: Callable[..., int]) -> Callable[..., int]:
    """
    CLI 命令包装：
        - 正常返回命令自己的退出码
        - 异常：记录日志并转换为退出码，不向外抛
    """

    @functools.wraps(fn)
    def wrapper(*args: Any, **kwargs: Any) -> int:
        try:
            return fn(*args, **kwargs)
        except Exception as e:
            code = exit_code_for(e)
            tb_str = "".join(traceback.format_exception(type(e), e, e.__traceback__))
            logger.error("command %s failed (exit=%s): %s", fn.__name__, code, e)
            logger.debug("%s", tb_str)
            if settings.DEBUG:
                print(tb_str, file=sys.stderr)
            else:
                print(f"error: {e}", file=sys.stderr)
            return code

    return wrapper


__all__ = [
    "EXIT_OK", "EXIT_USAGE", "EXIT_INVARIANT", "EXIT_IO",
    "LACBError", "UsageError", "InvariantViolation", "StorageError",
    "MissingUtilityError", "DimensionMismatchError", "CovarianceError",
    "TemporalOrderError", "NonSquareGraphError", "ReassignError",
    "WorldConfigError", "SchemaMismatchError",
    "exit_code_for", "guarded",
]
