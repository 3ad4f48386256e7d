"""Pipeline phase names shared by the memory store and the orchestrator."""

from __future__ import annotations

import enum


class Phase(str, enum.Enum):
    ARCH = "arch"
    SKELETON = "skeleton"
    CODEFILL = "codefill"
    END = "end"

    def __str__(self) -> str:  # keep trace/jsonl output compact
        return self.value


# Generation phases in pipeline order; END is terminal and never generates.
GENERATION_PHASES: tuple[Phase, ...] = (Phase.ARCH, Phase.SKELETON, Phase.CODEFILL)

NEXT_PHASE: dict[Phase, Phase] = {
    Phase.ARCH: Phase.SKELETON,
    Phase.SKELETON: Phase.CODEFILL,
    Phase.CODEFILL: Phase.END,
}
