"""Pause green instances during the statistically most expensive hours."""
from __future__ import annotations

from datetime import datetime
from typing import Iterable

from ..cloudmodel import PAUSE, UNPAUSE, Action, CloudState
from ..geotemporal import is_expensive


def peak_pauser(expensive: Iterable[int], green_vms: Iterable, t: datetime, state: CloudState) -> list[Action]:
    expensive = frozenset(expensive)
    allocated = state.allocated()
    green = sorted(v for v in green_vms if v in allocated)
    if is_expensive(t, expensive):
        return [Action(t, PAUSE, vm=v) for v in green if v not in state.paused]
    return [Action(t, UNPAUSE, vm=v) for v in green if v in state.paused]
