"""Max-min fair sharing of DRAM bandwidth and compute among concurrent kernels.

Every active kernel segment is described by what it consumes when running
at its solo speed: bytes/s of DRAM traffic and the fraction of the device's
compute it occupies. Progressive filling raises all segments' speed
(as a fraction of solo speed) in lockstep; a segment stops rising once it
reaches solo speed or once a resource it uses is saturated.
"""

from __future__ import annotations

from typing import Sequence

_EPS = 1e-12


def fair_speeds(bandwidth_demand: Sequence[float], compute_demand: Sequence[float],
                bandwidth_capacity: float, compute_capacity: float = 1.0) -> list[float]:
    """Return each segment's speed as a fraction of its solo speed, in (0, 1]."""
    n = len(bandwidth_demand)
    if n == 1:
        # a lone segment never exceeds capacity: solo demand is capped by efficiency
        return [1.0]
    demand = (list(bandwidth_demand), list(compute_demand))
    caps = (bandwidth_capacity, compute_capacity)
    used = [0.0, 0.0]
    speed = [0.0] * n
    active = list(range(n))
    level = 0.0
    while active:
        step = 1.0 - level
        slopes = [sum(demand[k][i] for i in active) for k in (0, 1)]
        for k in (0, 1):
            if slopes[k] > 0:
                step = min(step, max(caps[k] - used[k], 0.0) / slopes[k])
        level += step
        for k in (0, 1):
            used[k] += step * slopes[k]
        saturated = [used[k] >= caps[k] * (1 - _EPS) for k in (0, 1)]
        still = []
        for i in active:
            speed[i] = level
            blocked = any(saturated[k] and demand[k][i] > 0 for k in (0, 1))
            if level < 1.0 - _EPS and not blocked:
                still.append(i)
        if len(still) == len(active):  # numerical stall guard
            break
        active = still
    return speed
