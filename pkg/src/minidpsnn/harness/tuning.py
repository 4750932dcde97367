"""One-off calibration of the external drive against a target firing rate."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

from .config import RunConfig
from .runner import PlanCache, run_simulation

log = logging.getLogger(__name__)


@dataclass
class TuningStep:
    weight: float
    rate_hz: float


def tune_external_weight(config: RunConfig, target_hz: float = 5.0, lo: float = 0.40, hi: float = 0.65,
                         rel_tol: float = 0.02, max_iter: int = 12, decimals: int = 4) -> tuple[float, list[TuningStep]]:
    """Bisect the external synaptic weight until the mean rate hits ``target_hz``.

    The mean rate grows monotonically with the external weight in the working
    range, so the bracket ``[lo, hi]`` must straddle the target.  Returns the
    weight (rounded to ``decimals``) and the evaluation trail.
    """
    cache = PlanCache()
    trail: list[TuningStep] = []

    def rate(w: float) -> float:
        cfg = replace(config, stimulus=replace(config.stimulus, weight=w))
        r = run_simulation(cfg, cache, keep_raster=False).report.mean_rate_hz
        trail.append(TuningStep(w, r))
        log.info("external weight %.5f -> %.3f Hz", w, r)
        return r

    r_lo, r_hi = rate(lo), rate(hi)
    if not r_lo <= target_hz <= r_hi:
        raise ValueError(f"bracket [{lo}, {hi}] gives {r_lo:.2f}-{r_hi:.2f} Hz, not around {target_hz} Hz")
    mid = round(0.5 * (lo + hi), decimals)
    for _ in range(max_iter):
        mid = round(0.5 * (lo + hi), decimals)
        r = rate(mid)
        if abs(r - target_hz) <= rel_tol * target_hz:
            break
        if r < target_hz:
            lo = mid
        else:
            hi = mid
    return mid, trail
