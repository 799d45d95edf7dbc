from enum import Enum


class TraceFlag(Enum):
    PIVOT_LIMIT = 0
    CALLBACK_STOP = 1
    TICK_LIMIT = 2


class TraceBitflag:
    def __init__(self, default: int | None = None) -> None:
        if default is not None:
            self.current_flags: int = default
        else:
            self.current_flags: int = 0

    def add(self, flag: TraceFlag) -> None:
        self.current_flags |= 1 << flag.value

    def zip(self) -> int:
        return self.current_flags

    @staticmethod
    def unzip(flags: int) -> "TraceBitflag":
        return TraceBitflag(default=flags)

    def has(self, flag: TraceFlag) -> bool:
        return (self.current_flags & (1 << flag.value)) != 0
