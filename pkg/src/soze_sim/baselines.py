"""Delay-threshold AIMD rate control, the contrast baseline.

Window semantics on a fluid rate: the congestion window is a real-valued
packet count, ``rate = cwnd * packet_size / base_rtt``.  Once per RTT the
controller adds one packet when the observed queueing delay sits below the
threshold and multiplicatively backs off when it does not.  Weights are
ignored: this baseline only serves the oscillation and utilization
comparison on equal-weight scenarios.
"""

from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class AimdConfig:
    threshold: float = 20e-6     # s; queueing delay that triggers backoff
    md: float = 0.20             # multiplicative decrease fraction
    packet_size: float = 8000.0  # bits
    base_rtt: float | None = None  # s; per-flow value may override

    def validate(self) -> None:
        if not self.threshold > 0:
            raise ValueError("threshold must be > 0")
        if not 0.0 < self.md < 1.0:
            raise ValueError("md must be in (0, 1)")
        if not self.packet_size > 0:
            raise ValueError("packet_size must be > 0")
        if self.base_rtt is not None and not self.base_rtt > 0:
            raise ValueError("base_rtt must be > 0")


@dataclass(frozen=True)
class AimdState:
    cwnd: float          # packets, real-valued, never below 1
    rate: float          # bits/s
    last_update: float   # s


def aimd_adjust(
    state: AimdState,
    signal: float,
    now: float,
    config: AimdConfig,
    *,
    base_rtt: float | None = None,
    gate_tolerance: float = 0.0,
) -> AimdState:
    """One AIMD step, gated once per RTT.

    Below the delay threshold the window grows by one packet; at or above
    it the window shrinks by the configured fraction, never below one
    packet.  The rate is recomputed from the window after either move.
    """
    rtt = base_rtt if base_rtt is not None else config.base_rtt
    if rtt is None:
        raise ValueError("no base RTT: pass base_rtt or set it in the config")
    if not now - state.last_update > rtt - gate_tolerance:
        return state
    if signal < config.threshold:
        cwnd = state.cwnd + 1.0
    else:
        cwnd = state.cwnd * (1.0 - config.md)
    cwnd = max(cwnd, 1.0)
    return replace(
        state,
        cwnd=cwnd,
        rate=cwnd * config.packet_size / rtt,
        last_update=now,
    )
