"""Weighted local-error norm and step-size controllers."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .core import ToleranceSpec

_TINY = 1e-300


class AdaptKind(enum.Enum):
    NONE = "none"
    BASIC = "basic"
    DSP = "dsp"


@dataclass(frozen=True)
class AdaptConfig:
    kind: AdaptKind = AdaptKind.BASIC
    clip_low: float = 0.1
    clip_high: float = 10.0
    safety: float = 0.9
    reject_factor: float = 0.5
    dsp_filter: tuple[float, float, float] = (0.25, 0.25, 0.25)  # (beta1, beta2, alpha2)
    dt_min: float = 0.0
    dt_max: float = np.inf
    norm: str = "inf"

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", AdaptKind(self.kind.lower()))
        if not 0 < self.clip_low < 1 < self.clip_high:
            raise ValueError("need 0 < clip_low < 1 < clip_high")
        if not 0 < self.safety <= 1:
            raise ValueError("safety must lie in (0, 1]")
        if not 0 < self.reject_factor <= 1:
            raise ValueError("reject_factor must lie in (0, 1]")
        if self.norm not in ("inf", "2"):
            raise ValueError("norm must be 'inf' or '2'")


@dataclass(frozen=True)
class AdaptDecision:
    accept: bool
    next_dt: float
    werr: float
    factor: float = 1.0


def weighted_error_norm(u, u_tilde, tol: ToleranceSpec, norm: str | int = "inf") -> float:
    """``||(u - u~) / (atol + rtol * max(|u|, |u~|))||``; the 2-norm is RMS."""
    u = np.asarray(u, dtype=float)
    ut = np.asarray(u_tilde, dtype=float)
    scale = np.asarray(tol.atol, dtype=float) + tol.rtol * np.maximum(np.abs(u), np.abs(ut))
    w = (u - ut) / scale
    if str(norm) == "2":
        return float(np.sqrt(np.mean(w * w)))
    return float(np.max(np.abs(w), initial=0.0))


def _clip(cfg: AdaptConfig, factor: float) -> float:
    return min(max(factor, cfg.clip_low), cfg.clip_high)


@dataclass
class Controller:
    """Stateful controller; the DSP filter keeps the last accepted (werr, dt)."""

    cfg: AdaptConfig = field(default_factory=AdaptConfig)
    prev_werr: float | None = None
    prev_dt: float | None = None

    def reset(self) -> None:
        self.prev_werr = None
        self.prev_dt = None

    def raw_factor(self, werr: float, order: int, dt: float) -> float:
        cfg = self.cfg
        k = order + 1
        w = max(werr, _TINY)
        if cfg.kind is AdaptKind.DSP and self.prev_werr is not None:
            b1, b2, a2 = cfg.dsp_filter
            wp = max(self.prev_werr, _TINY)
            return cfg.safety * w ** (-b1 / k) * wp ** (-b2 / k) * (dt / self.prev_dt) ** (-a2)
        return cfg.safety * w ** (-1.0 / k)

    def decide(self, werr: float, order: int, dt: float, just_rejected: bool = False) -> AdaptDecision:
        """Accept iff ``werr <= 1``.  An accepted retry (``just_rejected``)
        never grows the step."""
        cfg = self.cfg
        if cfg.kind is AdaptKind.NONE:
            return AdaptDecision(True, dt, werr, 1.0)
        accept = werr <= 1.0
        if accept:
            factor = _clip(cfg, self.raw_factor(werr, order, dt))
            if just_rejected:
                factor = min(factor, 1.0)
        else:
            # rejections use the proportional rule; the filter only sees accepted history
            factor = _clip(cfg, cfg.safety * max(werr, _TINY) ** (-1.0 / (order + 1)))
            factor *= cfg.reject_factor
        next_dt = min(max(dt * factor, cfg.dt_min), cfg.dt_max)
        if accept and cfg.kind is AdaptKind.DSP:
            self.prev_werr = werr
            self.prev_dt = dt
        return AdaptDecision(accept, next_dt, werr, factor)


def adapt_decide(
    cfg: AdaptConfig,
    werr: float,
    order_for_control: int,
    dt: float,
    just_rejected: bool = False,
    controller: Controller | None = None,
) -> AdaptDecision:
    """Stateless entry point; pass a :class:`Controller` to keep DSP history."""
    ctl = controller if controller is not None else Controller(cfg)
    return ctl.decide(werr, order_for_control, dt, just_rejected)
