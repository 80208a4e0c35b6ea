"""Decentralized rate-control law: target delay, its inverse, and the MIMD update.

The controller maps a flow's rate-per-weight ``s = rate / weight`` to a target
queueing delay through a monotonically decreasing function ``T``, and nudges
the rate multiplicatively so that the observed queueing delay matches the
flow's own target:

    T(s)   = p * (ln(alpha) - ln(s)) / (ln(alpha) - ln(beta)) + k
    U(s,D) = (T_inv(D) / s) ** m

``alpha`` and ``beta`` bound the expected rate-per-weight range, ``p`` scales
the usable delay band above the base delay ``k``, and ``m < 2`` smooths the
multiplicative step.  All functions accept scalars or numpy arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import FlowState


@dataclass(frozen=True)
class ControlParams:
    """Controller constants.  Times in seconds, rates in bits/s.

    ``alpha``, ``beta``, ``update_interval`` and ``rate_cap`` may be left
    unset (None); the simulator resolves them per scenario:
    alpha = max link bandwidth / min configured weight, beta = alpha / 1000,
    update interval = each flow's base RTT, rate cap = first-hop bandwidth.
    """

    p: float = 20e-6
    k: float = 3e-6
    m: float = 0.25
    alpha: float | None = None
    beta: float | None = None
    update_interval: float | None = None
    rate_floor: float = 1e6
    rate_cap: float | None = None

    def validate(self) -> None:
        if not self.p > 0:
            raise ValueError("p must be > 0")
        if self.k < 0:
            raise ValueError("k must be >= 0")
        # m >= 2 is deliberately representable: falsification runs sweep it
        if not self.m > 0:
            raise ValueError("m must be > 0")
        if self.alpha is not None and self.beta is not None:
            if not self.alpha > self.beta > 0:
                raise ValueError("need alpha > beta > 0")
        if not self.rate_floor > 0:
            raise ValueError("rate_floor must be > 0")
        if self.rate_cap is not None and not self.rate_cap > self.rate_floor:
            raise ValueError("rate_cap must exceed rate_floor")
        if self.update_interval is not None and not self.update_interval > 0:
            raise ValueError("update_interval must be > 0")

    def _require_range(self) -> tuple[float, float]:
        if self.alpha is None or self.beta is None:
            raise ValueError("alpha/beta not resolved; set them or resolve the scenario")
        return self.alpha, self.beta


def target_delay(s, params: ControlParams):
    """Target queueing delay for rate-per-weight ``s``; decreasing in s."""
    alpha, beta = params._require_range()
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr <= 0):
        raise ValueError("rate-per-weight must be > 0")
    span = math.log(alpha) - math.log(beta)
    out = params.p * (math.log(alpha) - np.log(s_arr)) / span + params.k
    return float(out) if np.isscalar(s) or s_arr.ndim == 0 else out


def inverse_target(delay, params: ControlParams):
    """Rate-per-weight whose target delay equals ``delay``.

    Exact inverse of :func:`target_delay`; extrapolates smoothly outside
    [k, k+p], so callers clamp the resulting rates, not the delay.
    """
    alpha, beta = params._require_range()
    d_arr = np.asarray(delay, dtype=float)
    out = alpha * (beta / alpha) ** ((d_arr - params.k) / params.p)
    return float(out) if np.isscalar(delay) or d_arr.ndim == 0 else out


def update_ratio(s, delay, params: ControlParams):
    """Multiplicative rate-update ratio ``(T_inv(D)/s) ** m``.

    Greater than one exactly when the signalled fair share exceeds the
    flow's own rate-per-weight.  Depends only on (s, D): flows observing the
    same delay with equal rate-per-weight move identically.
    """
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr <= 0):
        raise ValueError("rate-per-weight must be > 0")
    out = (inverse_target(delay, params) / s_arr) ** params.m
    return float(out) if np.isscalar(s) or s_arr.ndim == 0 else out


def adjust_rate(
    state: FlowState,
    signal: float,
    now: float,
    params: ControlParams,
    *,
    update_interval: float | None = None,
    gate_tolerance: float = 0.0,
) -> FlowState:
    """One control step: apply the update ratio if the gate interval elapsed.

    The gate opens when ``now - last_update > interval``; otherwise the state
    is returned unchanged.  ``update_interval`` overrides the interval in
    ``params`` (the simulator passes the flow's base RTT).  ``gate_tolerance``
    lets a fixed-step caller open the gate at the step nearest the exact
    schedule instead of one step late.
    """
    interval = update_interval
    if interval is None:
        interval = params.update_interval
    if interval is None:
        raise ValueError("no update interval: pass update_interval or set params")
    if not now - state.last_update > interval - gate_tolerance:
        return state
    ratio = update_ratio(state.rate / state.weight, signal, params)
    cap = params.rate_cap if params.rate_cap is not None else math.inf
    new_rate = min(max(state.rate * ratio, params.rate_floor), cap)
    return replace(state, rate=new_rate, last_update=now, last_signal=signal)


@dataclass(frozen=True)
class LemmaReport:
    """Whether the configured constants satisfy the convergence conditions."""

    fairness_ok: bool          # 0 < m < 2
    queue_osc_ok: bool         # p > (dt/2) ln(alpha/beta): converges, may ring
    queue_noosc_ok: bool       # p > dt ln(alpha/beta): settles monotonically
    m_range: tuple[float, float]
    p_osc_threshold: float     # s
    p_noosc_threshold: float   # s

    def as_dict(self) -> dict:
        return {
            "fairness_ok": self.fairness_ok,
            "queue_osc_ok": self.queue_osc_ok,
            "queue_noosc_ok": self.queue_noosc_ok,
            "m_range": list(self.m_range),
            "p_osc_threshold": self.p_osc_threshold,
            "p_noosc_threshold": self.p_noosc_threshold,
        }


def check_lemma_conditions(params: ControlParams) -> LemmaReport:
    """Evaluate the fairness and queue-stability conditions for ``params``."""
    alpha, beta = params._require_range()
    if params.update_interval is None:
        raise ValueError("update_interval must be set to check queue conditions")
    span = math.log(alpha / beta)
    osc = params.update_interval / 2.0 * span
    noosc = params.update_interval * span
    return LemmaReport(
        fairness_ok=0.0 < params.m < 2.0,
        queue_osc_ok=params.p > osc,
        queue_noosc_ok=params.p > noosc,
        m_range=(0.0, 2.0),
        p_osc_threshold=osc,
        p_noosc_threshold=noosc,
    )
