from __future__ import annotations

from typing import Any, Dict, Optional


# ----------------------------
# 例外の基底クラス
# ----------------------------
class ChromaSiftError(RuntimeError):
    """
    chromasift の全例外の基底。
    - reason: 機械判定用の理由コード（例: "INSUFFICIENT_POINTS"）
    - context: フレーム番号・パス・N・k などの付帯情報（メッセージにも展開する）
    """

    reason = "CHROMASIFT_ERROR"

    def __init__(self, message: str, **context: Any) -> None:
        self.message = message
        self.context: Dict[str, Any] = dict(context)
        super().__init__(self._render())

    def _render(self) -> str:
        if not self.context:
            return self.message
        detail = " ".join(f"{k}={v}" for k, v in sorted(self.context.items()))
        return f"{self.message} ({detail})"

    def with_context(self, **extra: Any) -> "ChromaSiftError":
        # 同じ型のまま context を追記した例外を返す
        merged = {**self.context, **extra}
        err = self.__class__(self.message, **merged)
        err.__cause__ = self.__cause__
        return err


class EmptyInput(ChromaSiftError):
    reason = "EMPTY_INPUT"


class IoError(ChromaSiftError):
    reason = "IO_ERROR"


class DecodeError(ChromaSiftError):
    reason = "DECODE_ERROR"


class InvalidStride(ChromaSiftError):
    reason = "INVALID_STRIDE"


class InsufficientPoints(ChromaSiftError):
    reason = "INSUFFICIENT_POINTS"


class NonFiniteInput(ChromaSiftError):
    reason = "NON_FINITE_INPUT"


class TooFewFrames(ChromaSiftError):
    reason = "TOO_FEW_FRAMES"


class LengthMismatch(ChromaSiftError):
    reason = "LENGTH_MISMATCH"


class InvalidRecipe(ChromaSiftError):
    reason = "INVALID_RECIPE"


class InvalidConfig(ChromaSiftError):
    reason = "INVALID_CONFIG"


class UsageError(ChromaSiftError):
    reason = "USAGE_ERROR"


def reason_of(exc: BaseException) -> Optional[str]:
    return getattr(exc, "reason", None)
