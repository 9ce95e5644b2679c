"""Empirical QoE (MOS) model of a virtualized HTTP video server.

The quadratic fit maps the number of parallel streams served by a single
vCPU to an expected MOS.  Performance is assumed to scale linearly with the
vCPU count, and a flavor's normalized price may add a small bonus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidQoeTarget

BASE_MOS = 5.0
QUAD_COEFF = 1.046e-8
MOS_FLOOR = 1.0


@dataclass(frozen=True)
class QoeModelParams:
    base_mos: float = BASE_MOS
    quad_coeff: float = QUAD_COEFF
    sigma: float = 0.1
    # Fitted so that 2.5 stalls/min and a 0.29 stall ratio land near the
    # 12000-stream endpoint of the quadratic model (~3.49).
    playout_alpha: float = 0.3
    playout_beta: float = 2.6

    def __post_init__(self):
        if self.base_mos != BASE_MOS:
            raise ValueError("base_mos is fixed at 5.0")
        if self.quad_coeff <= 0:
            raise ValueError("quad_coeff must be positive")
        if not 0.0 <= self.sigma <= 1.0:
            raise ValueError("sigma must lie in [0, 1]")
        if self.playout_alpha < 0 or self.playout_beta < 0:
            raise ValueError("playout penalties must be non-negative")


@dataclass(frozen=True)
class PlayoutReport:
    stall_count_per_min: float
    stall_time_ratio: float
    avg_qp: float = 0.0  # carried for interface fidelity; unused by the surrogate
    window_seconds: float = 16.0

    def __post_init__(self):
        if not 0.0 <= self.stall_time_ratio <= 1.0:
            raise ValueError("stall_time_ratio must lie in [0, 1]")
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be positive")
        if self.stall_count_per_min < 0:
            raise ValueError("stall_count_per_min must be non-negative")


def clamp_mos(value: float) -> float:
    return min(BASE_MOS, max(MOS_FLOOR, value))


def mos_single_vcpu(x: float, quad_coeff: float = QUAD_COEFF) -> float:
    """MOS for ``x`` parallel streams on a 1-vCPU server (unclamped)."""
    return BASE_MOS - quad_coeff * x * x


def max_streams_for_qoe(q_min: float, quad_coeff: float = QUAD_COEFF) -> int:
    """Largest stream count a single vCPU sustains with MOS >= ``q_min``."""
    if not 1.0 <= q_min < BASE_MOS:
        raise InvalidQoeTarget(f"q_min must lie in [1, 5), got {q_min}")
    n = math.floor(math.sqrt((BASE_MOS - q_min) / quad_coeff))
    # the analytic inverse can be off by one after float rounding
    while mos_single_vcpu(n + 1, quad_coeff) >= q_min:
        n += 1
    while n > 0 and mos_single_vcpu(n, quad_coeff) < q_min:
        n -= 1
    return n


def mos_flavored(rho: float, flavor_cpu: int, eta: float, sigma: float,
                 quad_coeff: float = QUAD_COEFF) -> float:
    """MOS of an instance serving ``rho`` streams on ``flavor_cpu`` vCPUs.

    ``eta`` is the flavor's normalized price within its cloud and ``sigma``
    weighs its contribution.  The value is raw: it can exceed 5 when
    ``sigma * eta > 0`` and turns negative past :func:`rho_max`.
    """
    per_cpu = rho / flavor_cpu
    return BASE_MOS - quad_coeff * per_cpu * per_cpu + 5.0 * sigma * eta


def rho_max(flavor_cpu: int, quad_coeff: float = QUAD_COEFF) -> int:
    """Session cap keeping the load term of the MOS non-negative."""
    n = math.floor(flavor_cpu * math.sqrt(BASE_MOS / quad_coeff))
    while mos_flavored(n + 1, flavor_cpu, 0.0, 0.0, quad_coeff) >= 0.0:
        n += 1
    while n > 0 and mos_flavored(n, flavor_cpu, 0.0, 0.0, quad_coeff) < 0.0:
        n -= 1
    return n


def mos_from_playout(report: PlayoutReport, params: QoeModelParams | None = None) -> float:
    """Surrogate per-user MOS from playout interruption statistics."""
    params = params or QoeModelParams()
    raw = (BASE_MOS
           - params.playout_alpha * report.stall_count_per_min
           - params.playout_beta * report.stall_time_ratio)
    return clamp_mos(raw)
