"""Hyper-parameter selection: log-grid scan followed by Nelder-Mead refinement."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize


class ObjectiveError(RuntimeError):
    """An objective evaluation raised (``xi`` is the offending point), or no
    evaluation was finite (``xi`` is None)."""

    def __init__(self, xi, cause):
        where = "" if xi is None else f" at xi={np.asarray(xi).tolist()}"
        super().__init__(f"objective failed{where}: {cause}")
        self.xi = None if xi is None else np.asarray(xi)
        self.cause = cause


@dataclass(frozen=True)
class XiSearchSpace:
    """Box in ``log10 xi``, one interval per group.

    ``grid_points`` per group on the coarse scan; ``simplex_budget`` bounds
    the Nelder-Mead evaluations (0 means grid only).
    """

    q: int = 1
    log_lo: tuple = (-3.0,)
    log_hi: tuple = (3.0,)
    grid_points: int = 15
    simplex_budget: int = 200
    simplex_tol: float = 1e-4

    def __post_init__(self):
        lo = tuple(float(v) for v in np.broadcast_to(np.atleast_1d(self.log_lo), (self.q,)))
        hi = tuple(float(v) for v in np.broadcast_to(np.atleast_1d(self.log_hi), (self.q,)))
        if not all(math.isfinite(a) and math.isfinite(b) and a < b for a, b in zip(lo, hi)):
            raise ValueError("each group needs finite bounds with log_lo < log_hi")
        if self.grid_points < 1 or self.simplex_budget < 0:
            raise ValueError("grid_points >= 1 and simplex_budget >= 0 required")
        object.__setattr__(self, "log_lo", lo)
        object.__setattr__(self, "log_hi", hi)

    @classmethod
    def from_dict(cls, q: int, d: dict | None) -> "XiSearchSpace":
        d = dict(d or {})
        keys = ("log_lo", "log_hi", "grid_points", "simplex_budget", "simplex_tol")
        return cls(q=q, **{k: d[k] for k in keys if k in d})

    def axes(self):
        return [np.linspace(a, b, self.grid_points) if self.grid_points > 1
                else np.array([0.5 * (a + b)]) for a, b in zip(self.log_lo, self.log_hi)]

    def grid(self) -> np.ndarray:
        """All grid points in log10 units, in lexicographic order."""
        return np.array(list(itertools.product(*self.axes())), dtype=float)

    def spacing(self) -> np.ndarray:
        if self.grid_points < 2:
            return np.subtract(self.log_hi, self.log_lo)
        return (np.subtract(self.log_hi, self.log_lo)) / (self.grid_points - 1)


@dataclass
class SearchResult:
    xi_hat: np.ndarray
    value: float
    trace: list

    @property
    def n_evals(self) -> int:
        return len(self.trace)


def minimize_criterion(objective, space: XiSearchSpace, initial_points=()) -> SearchResult:
    """Minimise ``objective(xi)`` over ``xi`` in natural units.

    Scans the log-grid (ties go to the lexicographically smallest point),
    then runs a bounded Nelder-Mead in ``log10 xi`` from the best grid point
    and from each of ``initial_points``. Non-finite values count as ``+inf``.
    Returns the best point evaluated and the full trace.
    """
    trace = []
    cache = {}

    def f_log(u):
        u = np.clip(np.asarray(u, dtype=float), space.log_lo, space.log_hi)
        key = tuple(u.tolist())
        if key in cache:
            return cache[key]
        xi = 10.0 ** u
        try:
            val = float(objective(xi))
        except Exception as exc:  # noqa: BLE001 - re-raised with context
            raise ObjectiveError(xi, exc) from exc
        if not math.isfinite(val):
            val = math.inf
        cache[key] = val
        trace.append((xi, val))
        return val

    best_u, best_v = None, math.inf
    for u in space.grid():
        v = f_log(u)
        if v < best_v:
            best_u, best_v = u, v
    starts = [] if best_u is None else [best_u]
    for pt in initial_points:
        u0 = np.log10(np.broadcast_to(np.asarray(pt, dtype=float), (space.q,)))
        f_log(u0)
        starts.append(np.clip(u0, space.log_lo, space.log_hi))
    if not math.isfinite(min((v for _, v in trace), default=math.inf)):
        raise ObjectiveError(None, "all objective evaluations were non-finite")
    if space.simplex_budget > 0:
        h = 0.5 * space.spacing()
        bounds = list(zip(space.log_lo, space.log_hi))
        for u0 in starts:
            # initial simplex of half a grid step, pointing into the box
            simplex = [u0]
            for k in range(space.q):
                v = u0.copy()
                v[k] = u0[k] + h[k] if u0[k] + h[k] <= space.log_hi[k] else u0[k] - h[k]
                simplex.append(v)
            minimize(f_log, u0, method="Nelder-Mead", bounds=bounds,
                     options={"maxfev": space.simplex_budget, "xatol": space.simplex_tol,
                              "fatol": space.simplex_tol, "initial_simplex": np.array(simplex)})
    # first occurrence of the minimum in evaluation order
    vals = [v for _, v in trace]
    i = int(np.argmin(vals))
    return SearchResult(np.asarray(trace[i][0], dtype=float), vals[i], trace)
