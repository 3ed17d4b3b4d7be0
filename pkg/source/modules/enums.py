from __future__ import annotations

from enum import Enum, IntEnum


class ExitCode(IntEnum):
    SUCCESS = 0
    USAGE = 2
    DATA = 3
    NUMERICAL = 4


class ActionClass(IntEnum):
    """Eight action classes; the integer value is the stable label encoding."""

    HAND_WAVING = 0
    THROWING = 1
    KICKING = 2
    PICKING_UP = 3
    WALKING = 4
    LYING_DOWN = 5
    SITTING = 6
    STANDING = 7

    @property
    def slug(self) -> str:
        return self.name.lower().replace("_", "-")

    @classmethod
    def from_slug(cls, s: str) -> ActionClass:
        try:
            return cls[s.strip().upper().replace("-", "_")]
        except KeyError:
            raise ValueError(f"Unknown action class: {s!r}") from None


class FeatureKind(Enum):
    F_REF = "F_ref"
    F_RENV = "F_renv"
    F_IR = "F_ir"
    F_IENV = "F_ienv"

    @classmethod
    def parse(cls, s: str) -> FeatureKind:
        for kind in cls:
            if kind.value.lower() == s.strip().lower():
                return kind
        raise ValueError(f"Unknown feature kind: {s!r}")


class GroupBy(Enum):
    SUBJECT = "subject"
    ROOM = "room"
    NONE = "none"


class ReportFormat(Enum):
    TEXT = "text"
    CSV = "csv"
