"""Best-fit-decreasing placement; ignores prices and temperatures entirely."""
from __future__ import annotations

from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ..cloudmodel import VM, CloudState, PM, Schedule, migrate
from ..errors import CapacityExhaustedError


class BinState:
    """Resource loads of a set of PMs, indexed in PM id order."""

    def __init__(self, pms: Sequence[PM], state: CloudState, vms: Mapping):
        self.pms = sorted(pms, key=lambda p: p.id)
        self.index = {p.id: i for i, p in enumerate(self.pms)}
        self.cap = np.array([p.capacity for p in self.pms], dtype=float)
        self.ref = self.cap.max(axis=0)
        self.load = np.zeros_like(self.cap)
        self.hosted = [set() for _ in self.pms]
        self.vms = vms
        for pm_id, vm_ids in state.alloc.items():
            if pm_id in self.index:
                for v in vm_ids:
                    if v in vms:
                        self.add(v, self.index[pm_id])

    def add(self, vm_id, j):
        self.hosted[j].add(vm_id)
        self.load[j] += self.vms[vm_id].requested

    def remove(self, vm_id, j):
        self.hosted[j].discard(vm_id)
        self.load[j] -= self.vms[vm_id].requested

    def util(self) -> np.ndarray:
        return (self.load / self.cap).mean(axis=1)

    def best_fit(self, vm: VM, exclude: Iterable[int] = ()) -> Optional[int]:
        """Active PM with least normalised room left after placing ``vm``; else an idle one."""
        req = np.asarray(vm.requested, float)
        after = self.cap - self.load - req
        fit = (after >= -1e-9).all(axis=1)
        for j in exclude:
            fit[j] = False
        room = (after / self.cap).mean(axis=1)
        active = np.array([bool(h) for h in self.hosted])
        for mask in (fit & active, fit & ~active):
            cand = np.flatnonzero(mask)
            if len(cand):
                return int(cand[np.lexsort((cand, room[cand]))[0]])
        return None


def demand(vm: VM, ref: np.ndarray) -> float:
    return float((np.asarray(vm.requested, float) / ref).sum())


def bfd_place(vms_to_place: Sequence[VM], state: CloudState, pms: Sequence[PM],
              vms: Optional[Mapping] = None) -> Schedule:
    """Place VMs largest first, each on the best-fitting PM.

    ``vms`` lists the VMs already allocated in ``state`` (needed for their loads).
    """
    known = dict(vms or {})
    known.update({v.id: v for v in vms_to_place})
    bins = BinState(pms, state, known)
    t = state.time
    actions, failed = [], []
    for vm in sorted(vms_to_place, key=lambda v: (-demand(v, bins.ref), v.id)):
        j = bins.best_fit(vm)
        if j is None:
            failed.append(vm.id)
            continue
        bins.add(vm.id, j)
        actions.append(migrate(t, vm.id, bins.pms[j].id))
    if failed:
        raise CapacityExhaustedError(sorted(failed))
    return Schedule(tuple(actions), t, t)


def bfd_consolidate(state: CloudState, pms: Sequence[PM], vms: Mapping,
                    underutil_threshold: float) -> list:
    """Relieve overloaded PMs and empty the least-utilised underloaded PM if possible."""
    bins = BinState(pms, state, vms)
    t = state.time
    actions = []
    for j in range(len(bins.pms)):
        while (bins.load[j] > bins.cap[j] + 1e-9).any() and bins.hosted[j]:
            v = min(bins.hosted[j], key=lambda v: (vms[v].ram, v))
            bins.remove(v, j)
            k = bins.best_fit(vms[v], exclude=[j])
            if k is None:
                bins.add(v, j)
                break
            bins.add(v, k)
            actions.append(migrate(t, v, bins.pms[k].id))
    util = bins.util()
    under = [j for j in range(len(bins.pms)) if bins.hosted[j] and util[j] < underutil_threshold]
    if under:
        j = min(under, key=lambda j: (util[j], bins.pms[j].id))
        moves = []
        for v in sorted(bins.hosted[j], key=lambda v: (-demand(vms[v], bins.ref), v)):
            bins.remove(v, j)
            active_only = [i for i in range(len(bins.pms)) if not bins.hosted[i]] + [j]
            k = bins.best_fit(vms[v], exclude=active_only)
            if k is None:
                break
            bins.add(v, k)
            moves.append(migrate(t, v, bins.pms[k].id))
        else:
            actions.extend(moves)
    return actions
