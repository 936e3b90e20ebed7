"""Time-discrete trajectories, reflection measures, and their serialization.

A trajectory stores every time-step state (K+1 of them, including t = 0)
together with per-step diagnostic series, so every report downstream is
computed on the solver's own time grid and is invariant under the
snapshot stride, which only thins the serialized output.

The reflection measure collects the penalty increments

    eta(step k, point j) = n_pen * gamma(u) * |u - pi(u)| * dt * dx

as a vector density per (step, point), plus the scalar magnitude channel
k with the same increments stripped of their direction.  Its total
variation is the sum of the Euclidean norms of the vector increments.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .fields import Field, SpatialGrid, field_from_csv, field_to_csv


@dataclass
class ReflectionMeasure:
    grid: SpatialGrid
    dt: float
    increments: np.ndarray  # (K, d, J) vector increments, dt*dx included
    magnitude: np.ndarray   # (K, J) scalar channel increments

    @property
    def total_variation(self) -> float:
        norms = np.sqrt(np.einsum("kdj,kdj->kj", self.increments, self.increments))
        return float(np.sum(norms))

    def cumulative(self) -> np.ndarray:
        """Total vector mass deposited per grid point, (d, J)."""
        return self.increments.sum(axis=0)

    def magnitude_total(self) -> float:
        return float(np.sum(self.magnitude))


@dataclass
class TrajectorySeries:
    """Per-state diagnostic series, each of length K+1.

    h_sq/v_sq/lap_sq are the squared H, V, and discrete-H^2 norms of the
    state; pen_* measure the penetration u - pi(u) in the H, L^1, and
    sup norms; pen_gamma is the alignment integral
    dx * sum_j <u_j, gamma(u_j)> |u_j - pi(u_j)| feeding the
    energy-weighted penetration estimate.
    """

    h_sq: np.ndarray
    v_sq: np.ndarray
    lap_sq: np.ndarray
    pen_h: np.ndarray
    pen_l1: np.ndarray
    pen_linf: np.ndarray
    pen_gamma: np.ndarray

    FIELDS = ("h_sq", "v_sq", "lap_sq", "pen_h", "pen_l1", "pen_linf", "pen_gamma")


@dataclass
class Trajectory:
    grid: SpatialGrid
    dt: float
    n_pen: float
    states: np.ndarray  # (K+1, d, J)
    series: TrajectorySeries
    measure: ReflectionMeasure = None
    stride: int = 1
    epsilon: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.states.shape[0] - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    @property
    def T(self) -> float:
        return self.steps * self.dt

    def field_at(self, k: int) -> Field:
        return Field(self.grid, self.states[k])

    @property
    def terminal(self) -> Field:
        return Field(self.grid, self.states[-1])

    def snapshot_indices(self) -> np.ndarray:
        idx = np.arange(0, self.steps + 1, self.stride)
        if idx[-1] != self.steps:
            idx = np.append(idx, self.steps)
        return idx

    # -- serialization -------------------------------------------------

    def save(self, directory) -> None:
        """Write snapshot CSVs, an index JSON, and the per-step series.

        Layout: index.json, series.csv, snapshots/state_<k>.csv for every
        stride-spaced step index k (terminal state always included).
        """
        os.makedirs(directory, exist_ok=True)
        snap_dir = os.path.join(directory, "snapshots")
        os.makedirs(snap_dir, exist_ok=True)
        idx = self.snapshot_indices()
        for k in idx:
            field_to_csv(self.field_at(int(k)),
                         os.path.join(snap_dir, f"state_{int(k):06d}.csv"))
        index = {
            "times": [repr(float(t)) for t in self.times[idx]],
            "J": self.grid.J,
            "d": self.grid.d,
            "dt": repr(float(self.dt)),
            "n_pen": self.n_pen,
            "stride": self.stride,
            "epsilon": self.epsilon,
            "steps": self.steps,
            "snapshot_steps": [int(k) for k in idx],
            "eta_total_variation": (repr(self.measure.total_variation)
                                    if self.measure is not None else None),
            "meta": self.meta,
        }
        with open(os.path.join(directory, "index.json"), "w") as fh:
            json.dump(index, fh, indent=1, sort_keys=True)
            fh.write("\n")
        series = self.series
        with open(os.path.join(directory, "series.csv"), "w", newline="") as fh:
            fh.write("t," + ",".join(TrajectorySeries.FIELDS) + "\n")
            for k, t in enumerate(self.times):
                row = [repr(float(t))] + [repr(float(getattr(series, name)[k]))
                                          for name in TrajectorySeries.FIELDS]
                fh.write(",".join(row) + "\n")

    @classmethod
    def load(cls, directory) -> "Trajectory":
        """Rebuild a trajectory from ``save`` output.

        States are populated at the serialized snapshot steps (all steps
        when stride = 1); the diagnostic series comes back exactly thanks
        to repr round-tripping.
        """
        with open(os.path.join(directory, "index.json")) as fh:
            index = json.load(fh)
        grid = SpatialGrid(J=index["J"], d=index["d"])
        steps = index["steps"]
        states = np.full((steps + 1, grid.d, grid.J), np.nan)
        for k in index["snapshot_steps"]:
            f = field_from_csv(grid, os.path.join(directory, "snapshots",
                                                  f"state_{int(k):06d}.csv"))
            states[k] = f.values
        raw = np.loadtxt(os.path.join(directory, "series.csv"),
                         delimiter=",", skiprows=1)
        raw = np.atleast_2d(raw)
        series = TrajectorySeries(*[raw[:, i + 1] for i in range(len(TrajectorySeries.FIELDS))])
        meta = dict(index["meta"])
        if index.get("eta_total_variation") is not None:
            meta["eta_total_variation"] = float(index["eta_total_variation"])
        return cls(grid=grid, dt=float(index["dt"]), n_pen=index["n_pen"],
                   states=states, series=series, measure=None,
                   stride=index["stride"], epsilon=index["epsilon"], meta=meta)


def state_gap(a: Trajectory, b: Trajectory) -> tuple:
    """Cauchy gap between two runs on identical grids and time steps:

        cauchy_H = sup_t |u_a - u_b|_H^2
        cauchy_V = int_0^T |u_a - u_b|_V^2 dt   (left endpoint)
    """
    if a.states.shape != b.states.shape or a.dt != b.dt:
        raise ValueError("state_gap needs identical grids and time steps")
    from .fields import sup_series, v_series

    diff = a.states - b.states
    h = sup_series(diff, a.grid.dx)
    v = v_series(diff, a.grid.dx)
    return float(np.max(h)), float(np.sum(v[:-1]) * a.dt)
