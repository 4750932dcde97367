"""LIFCA neurons: leaky integrate-and-fire with calcium-driven adaptation.

Per step (explicit Euler)::

    v <- v + dt * (-(v - v_rest) / tau_m - g_c * c) + I
    c <- c * (1 - dt / tau_c)

and on ``v >= v_threshold`` the neuron spikes, resets, gains ``alpha_c``
calcium and stays refractory for ``tau_arp / dt`` steps (input is discarded
while refractory).

Synaptic input is accumulated in fixed point (multiples of
:data:`WEIGHT_QUANTUM` mV held in int64) so the summed current is exact and
independent of the order events arrive in.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numba as nb
import numpy as np

from . import rng

WEIGHT_QUANTUM = 2.0**-16  # mV


def quantize_weight(w: float) -> int:
    return int(round(w / WEIGHT_QUANTUM))


def dequantize(q) -> float:
    return q * WEIGHT_QUANTUM


class DynamicsError(ValueError):
    pass


@dataclass(frozen=True)
class LifcaParams:
    tau_m: float = 20.0  # ms
    v_rest: float = 0.0  # mV
    v_reset: float = 0.0
    v_threshold: float = 20.0
    tau_arp: float = 2.0  # ms
    g_c: float = 0.02  # mV/ms per unit calcium
    tau_c: float = 500.0  # ms
    alpha_c: float = 1.0
    dt: float = 1.0  # ms

    def validate(self) -> None:
        if not (self.tau_m > 0 and self.tau_c > 0 and self.dt > 0):
            raise DynamicsError("tau_m, tau_c and dt must be positive")
        if not self.v_threshold > self.v_reset:
            raise DynamicsError("v_threshold must exceed v_reset")
        if self.tau_arp < 0 or self.g_c < 0 or self.alpha_c < 0:
            raise DynamicsError("tau_arp, g_c and alpha_c must be non-negative")

    @property
    def refractory_steps(self) -> int:
        return int(round(self.tau_arp / self.dt))

    @property
    def calcium_decay(self) -> float:
        return 1.0 - self.dt / self.tau_c


@dataclass(frozen=True)
class LifcaState:
    v: float = 0.0
    c: float = 0.0
    refractory_until: int = -1  # last refractory step, inclusive


@dataclass(frozen=True)
class ExternalStimulus:
    equivalent_synapses: int = 594
    rate: float = 3.0  # Hz per equivalent synapse
    weight: float = 0.5109  # mV per event, calibrated by harness.tuning

    def validate(self) -> None:
        if self.rate < 0 or self.equivalent_synapses < 0:
            raise DynamicsError("stimulus rate and synapse count must be non-negative")

    def mean_events(self, dt_ms: float = 1.0) -> float:
        return self.equivalent_synapses * self.rate * dt_ms * 1e-3


def step_lifca(
    state: LifcaState, params: LifcaParams, input_current: float, now: int
) -> tuple[LifcaState, bool]:
    """Advance one neuron by one step; returns the new state and whether it fired."""
    if not math.isfinite(input_current):
        raise DynamicsError(f"non-finite input current {input_current}")
    v, c, until = state.v, state.c, state.refractory_until
    if now <= until:
        v_new = params.v_reset
    else:
        v_new = v + params.dt * (-(v - params.v_rest) / params.tau_m - params.g_c * c) + input_current
    c_new = c * params.calcium_decay
    if now > until and v_new >= params.v_threshold:
        return LifcaState(params.v_reset, c_new + params.alpha_c, now + params.refractory_steps), True
    return LifcaState(v_new, c_new, until), False


@nb.njit(cache=True, nogil=True)
def step_population(
    v, c, until, input_q, ext_counts, ext_wq, now,
    dt, tau_m, v_rest, v_reset, v_th, g_c, decay, alpha_c, refr_steps, quantum, spikes,
):
    """Vectorized ``step_lifca`` over a population.

    ``input_q`` holds the fixed-point synaptic input; local indices of the
    neurons that fired are written to ``spikes`` and their count returned.
    """
    n_spk = 0
    for i in range(v.shape[0]):
        cur = (input_q[i] + ext_counts[i] * ext_wq) * quantum
        if now <= until[i]:
            vn = v_reset
        else:
            vn = v[i] + dt * (-(v[i] - v_rest) / tau_m - g_c * c[i]) + cur
        cn = c[i] * decay
        if now > until[i] and vn >= v_th:
            v[i] = v_reset
            c[i] = cn + alpha_c
            until[i] = now + refr_steps
            spikes[n_spk] = i
            n_spk += 1
        else:
            v[i] = vn
            c[i] = cn
    return n_spk


def population_args(params: LifcaParams) -> tuple:
    return (
        params.dt, params.tau_m, params.v_rest, params.v_reset, params.v_threshold,
        params.g_c, params.calcium_decay, params.alpha_c, params.refractory_steps, WEIGHT_QUANTUM,
    )


def external_poisson_events(neuron_id: int, step: int, stimulus: ExternalStimulus, seed: int,
                            dt_ms: float = 1.0) -> int:
    """Poisson count of external events for one neuron at one step.

    Keyed on ``(seed, neuron_id, step)`` only, so any worker computing it gets
    the same value.
    """
    mean = stimulus.mean_events(dt_ms)
    if mean == 0.0:
        return 0
    u = rng.counter_uniform(np.uint64(seed), rng.STREAM_EXTERNAL, neuron_id, step)
    return int(rng.poisson_from_uniform(u, rng.poisson_cdf_table(mean)))


def accumulate_input(synaptic_weights, stimulus_events: int, external_weight: float) -> float:
    """Total current for one neuron in one step, consuming ``synaptic_weights``."""
    total = math.fsum(synaptic_weights)
    synaptic_weights.clear()
    return total + stimulus_events * external_weight


def simulate_single(params: LifcaParams, drive: float, n_steps: int,
                    state: LifcaState | None = None) -> list[int]:
    """Spike steps of one neuron under constant drive (mV per step)."""
    params.validate()
    state = state or LifcaState(v=params.v_rest)
    out = []
    for t in range(n_steps):
        state, fired = step_lifca(state, params, drive, t)
        if fired:
            out.append(t)
    return out


def lif_isi_closed_form(params: LifcaParams, drive_per_ms: float) -> float:
    """Interspike interval (ms) of the non-adapting LIF under constant drive."""
    gap = params.v_threshold - params.v_rest
    i_tau = drive_per_ms * params.tau_m
    if i_tau <= gap:
        return math.inf
    return params.tau_arp + params.tau_m * math.log(i_tau / (i_tau - gap))


def without_adaptation(params: LifcaParams) -> LifcaParams:
    return replace(params, g_c=0.0)
