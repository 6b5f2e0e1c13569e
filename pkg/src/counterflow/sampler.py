"""Deterministic explicit-Euler integration of the guided velocity field."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backend import VelocityBackend
from .core import TimestepGrid, check_latent, init_latent
from .errors import CounterflowError, SamplingError
from .guidance import PhaseSchedule, guided_velocity, select_spec


@dataclass
class Trajectory:
    """States visited by one sampling run.

    `states` holds every Z_{t_i} when the run kept its trajectory, or just
    [initial, final] in endpoint-only mode (`full` says which).  `forms`
    records the guidance form applied at each of the N steps.
    """

    states: list[np.ndarray]
    grid: TimestepGrid
    forms: list[str]
    full: bool = True

    @property
    def initial(self) -> np.ndarray:
        return self.states[0]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def euler_sample(
    backend: VelocityBackend,
    schedule: PhaseSchedule,
    grid: TimestepGrid,
    shape: tuple[int, int] | None = None,
    seed: int | None = None,
    *,
    initial: np.ndarray | None = None,
    start_index: int = 0,
    keep_trajectory: bool = True,
    trace_fn=None,
) -> Trajectory:
    """Integrate Z' = v_guided(Z, t) over the grid with explicit Euler.

    The start state is either seeded noise (`shape` + `seed`) or an explicit
    `initial` array (used to resume from a stored state; `start_index` then
    gives the absolute step index of grid.steps[0] so the phase schedule
    lines up).  The trajectory is a pure function of its inputs: same seed
    and configuration, same bits.

    trace_fn, when given, is called as trace_fn(step_index, t, spec, velocity)
    after each velocity evaluation.
    """
    n_total = start_index + grid.n_steps
    schedule.validate_for(n_total)

    if initial is None:
        if shape is None or seed is None:
            raise SamplingError("need shape and seed when no initial state is given", 0)
        z = init_latent(shape, seed)
    else:
        z = check_latent(initial).copy()

    states = [z.copy()]
    forms: list[str] = []
    for i in range(grid.n_steps):
        t_now = grid.steps[i]
        t_next = grid.steps[i + 1]
        step = start_index + i
        spec = select_spec(schedule, step, n_total)
        try:
            v = guided_velocity(backend, z, t_now, spec)
        except CounterflowError as exc:
            raise SamplingError(f"backend failed: {exc}", step) from exc
        if trace_fn is not None:
            trace_fn(step, t_now, spec, v)
        z = z + (t_next - t_now) * v
        if not np.isfinite(z).all():
            raise SamplingError("state became non-finite", step)
        forms.append(spec.form)
        if keep_trajectory:
            states.append(z.copy())
    if not keep_trajectory:
        states.append(z.copy())
    return Trajectory(states=states, grid=grid, forms=forms, full=keep_trajectory)
