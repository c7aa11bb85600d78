"""Client-side view of the decoded control channel.

A :class:`CellObserver` watches every grant a cell issues, keeps a sliding
window as long as the connection's RTprop (in subframes) and reports the
averaged own allocation, idle PRBs, own bits-per-PRB rate and the number of
users that look like real data users.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional

from .cellmac import SubframeAllocation

# control-traffic filter: keep users active for more than one subframe
# and holding more than four PRBs on average
MIN_ACTIVE_SUBFRAMES = 1
MIN_AVG_PRBS = 4


class ModelError(AssertionError):
    """The allocation stream violates the PRB accounting identity."""


@dataclass(frozen=True)
class UserActivity:
    user: str
    active_subframes: int  # T_a
    avg_prbs: float  # P_ave over the subframes the user was active


def idle_prbs(alloc: SubframeAllocation) -> int:
    """PRBs left unassigned in one subframe, counting every identified user."""
    idle = alloc.n_prb - alloc.allocated
    if idle < 0:
        raise ModelError(f"cell {alloc.cell_id} subframe {alloc.subframe}: grants exceed {alloc.n_prb} PRBs")
    return idle


def filter_active_users(activities: Iterable[UserActivity], min_active: int = MIN_ACTIVE_SUBFRAMES,
                        min_prbs: float = MIN_AVG_PRBS) -> int:
    """Number of competing data users, always counting the observer itself."""
    return 1 + sum(1 for a in activities if a.active_subframes > min_active and a.avg_prbs > min_prbs)


class CellObserver:
    def __init__(self, cell_id: str, n_prb: int, self_id: str, window: int = 40):
        self.cell_id = cell_id
        self.n_prb = n_prb
        self.self_id = self_id
        self.window = max(1, int(window))
        self._frames: deque = deque()  # (own prbs, idle, own rw, {other: prbs})
        self._own_sum = 0.0
        self._idle_sum = 0.0
        self._rw_sum = 0.0
        self._ta: dict[str, int] = {}
        self._prb_sum: dict[str, int] = {}
        self.last_own_rw: Optional[float] = None

    def __len__(self) -> int:
        return len(self._frames)

    def set_window(self, subframes: int) -> None:
        self.window = max(1, int(subframes))
        while len(self._frames) > self.window:
            self._pop()

    def _pop(self) -> None:
        own, idle, rw, others = self._frames.popleft()
        self._own_sum -= own
        self._idle_sum -= idle
        self._rw_sum -= rw
        for u, n in others.items():
            self._ta[u] -= 1
            self._prb_sum[u] -= n
            if self._ta[u] == 0:
                del self._ta[u]
                del self._prb_sum[u]

    def observe(self, alloc: SubframeAllocation, own_rw: Optional[float] = None) -> None:
        """Push one subframe.  ``own_rw`` is used when the observer got no grant."""
        if alloc.cell_id != self.cell_id:
            raise ValueError(f"observer for {self.cell_id} fed allocation of {alloc.cell_id}")
        idle = idle_prbs(alloc)
        own = 0
        others: dict[str, int] = {}
        rw = None
        for g in alloc.grants:
            if g.user == self.self_id:
                own += g.prbs
                rw = g.rw
            else:
                others[g.user] = others.get(g.user, 0) + g.prbs
        if rw is None:
            rw = own_rw if own_rw is not None else (self.last_own_rw or 0.0)
        self.last_own_rw = rw
        self._frames.append((own, idle, rw, others))
        self._own_sum += own
        self._idle_sum += idle
        self._rw_sum += rw
        for u, n in others.items():
            self._ta[u] = self._ta.get(u, 0) + 1
            self._prb_sum[u] = self._prb_sum.get(u, 0) + n
        while len(self._frames) > self.window:
            self._pop()

    def windowed_params(self) -> tuple[float, float, float]:
        """Window means of (own bits/PRB, own PRBs, idle PRBs)."""
        n = len(self._frames)
        if n == 0:
            raise ValueError("no subframes observed yet")
        return self._rw_sum / n, self._own_sum / n, self._idle_sum / n

    def activities(self) -> list[UserActivity]:
        return [UserActivity(u, ta, self._prb_sum[u] / ta) for u, ta in sorted(self._ta.items())]

    def n_users(self, min_active: int = MIN_ACTIVE_SUBFRAMES, min_prbs: float = MIN_AVG_PRBS) -> int:
        return filter_active_users(self.activities(), min_active, min_prbs)


def windowed_params(obs: CellObserver) -> tuple[float, float, float]:
    return obs.windowed_params()


def replay(allocations: Iterable[SubframeAllocation], self_id: str, n_prb: dict,
           window: int = 40) -> list[tuple]:
    """Run observers over a recorded allocation log.

    Returns ``(subframe, cell, N, P_a, P_idle, R_w)`` after every subframe,
    the same series the live client would compute.
    """
    observers: dict[str, CellObserver] = {}
    out = []
    for alloc in allocations:
        obs = observers.get(alloc.cell_id)
        if obs is None:
            obs = observers[alloc.cell_id] = CellObserver(alloc.cell_id, n_prb[alloc.cell_id], self_id, window)
        obs.observe(alloc)
        rw, pa, pidle = obs.windowed_params()
        out.append((alloc.subframe, alloc.cell_id, obs.n_users(), pa, pidle, rw))
    return out
