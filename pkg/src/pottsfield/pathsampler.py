"""Thermodynamic-integration machinery for the inverse temperature.

The ratio of Potts normalising constants between two beta values equals the
integral of the expected sufficient statistic over beta, so a table of
Monte Carlo estimates of E[S | beta] on a grid (from Swendsen-Wang runs at
fixed beta) turns the otherwise intractable Metropolis-Hastings correction
for beta into a table lookup plus a trapezoid integral.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .io import fmt_float, load_json, read_csv, save_json, write_csv
from .lattice import LatticeSpec, build_lattice
from .potts import LabelField, sufficient_statistic, swendsen_wang_step

__all__ = [
    "PathTable",
    "BetaPrior",
    "calibrate",
    "log_ratio_normalising",
    "update_beta",
    "AdaptiveProposal",
    "default_beta_grid",
    "save_path_table",
    "load_path_table",
]

DEFAULT_BETA_MAX = 2.0
DEFAULT_BETA_STEP = 0.05
DEFAULT_SWEEPS = 1000
DEFAULT_BURNIN = 200


def default_beta_grid(
    beta_max: float = DEFAULT_BETA_MAX, step: float = DEFAULT_BETA_STEP
) -> np.ndarray:
    count = int(round(beta_max / step)) + 1
    return np.linspace(0.0, beta_max, count)


@dataclass(frozen=True)
class PathTable:
    """Grid of (beta, smoothed estimate of E[S | beta]) pairs."""

    beta_grid: np.ndarray
    expected_stat: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        grid = np.asarray(self.beta_grid, dtype=np.float64)
        stat = np.asarray(self.expected_stat, dtype=np.float64)
        if grid.ndim != 1 or grid.size == 0:
            raise ConfigError("beta grid must be a non-empty 1D array")
        if grid[0] != 0.0:
            raise ConfigError(f"beta grid must start at 0, got {grid[0]}")
        if np.any(np.diff(grid) <= 0):
            raise ConfigError("beta grid must be strictly increasing")
        if stat.shape != grid.shape:
            raise DataError("expected_stat and beta_grid differ in length")
        if np.any(np.diff(stat) < 0):
            raise DataError("expected_stat must be non-decreasing (isotonic table)")
        object.__setattr__(self, "beta_grid", grid)
        object.__setattr__(self, "expected_stat", stat)
        # exact antiderivative of the piecewise-linear interpolant at each knot
        seg = 0.5 * (stat[1:] + stat[:-1]) * np.diff(grid)
        object.__setattr__(
            self, "_cumint", np.concatenate([[0.0], np.cumsum(seg)])
        )

    def interpolate(self, beta: float | np.ndarray) -> np.ndarray:
        self._check_range(np.min(beta), np.max(beta))
        return np.interp(beta, self.beta_grid, self.expected_stat)

    def integral_from_zero(self, beta: float) -> float:
        """Exact integral of the interpolated curve over [grid[0], beta]."""
        self._check_range(beta, beta)
        grid = self.beta_grid
        idx = int(np.searchsorted(grid, beta, side="right") - 1)
        idx = min(idx, grid.size - 2) if grid.size > 1 else 0
        partial = 0.0
        if beta > grid[idx]:
            y0 = self.expected_stat[idx]
            y1 = float(np.interp(beta, grid, self.expected_stat))
            partial = 0.5 * (y0 + y1) * (beta - grid[idx])
        return float(self._cumint[idx] + partial)

    def _check_range(self, lo: float, hi: float) -> None:
        if lo < self.beta_grid[0] or hi > self.beta_grid[-1]:
            raise DataError(
                f"beta in [{lo}, {hi}] falls outside the calibrated range "
                f"[{self.beta_grid[0]}, {self.beta_grid[-1]}]; no extrapolation"
            )


@dataclass(frozen=True)
class BetaPrior:
    """Uniform prior support for the inverse temperature."""

    lower: float = 0.0
    upper: float = DEFAULT_BETA_MAX

    def __post_init__(self):
        if self.lower < 0:
            raise ConfigError(f"beta prior lower bound must be >= 0, got {self.lower}")
        if not self.lower < self.upper:
            raise ConfigError(
                f"beta prior needs lower < upper, got [{self.lower}, {self.upper}]"
            )

    def contains(self, beta: float) -> bool:
        return self.lower <= beta <= self.upper


def _isotonic(values: np.ndarray) -> np.ndarray:
    from sklearn.isotonic import IsotonicRegression

    x = np.arange(values.size, dtype=np.float64)
    return IsotonicRegression(increasing=True).fit_transform(x, values)


def _simulate_point(
    spec: LatticeSpec, k: int, beta: float, sweeps: int, burnin: int, seed
) -> float:
    rng = np.random.default_rng(seed)
    edges, _ = build_lattice(spec)
    z = LabelField(rng.integers(1, k + 1, size=spec.n, dtype=np.int32), k)
    total = 0.0
    kept = 0
    for sweep in range(sweeps):
        z = swendsen_wang_step(z, beta, edges, rng)
        if sweep >= burnin:
            total += sufficient_statistic(z, edges)
            kept += 1
    return total / kept


def calibrate(
    spec: LatticeSpec,
    k: int,
    grid: np.ndarray | None = None,
    sweeps: int = DEFAULT_SWEEPS,
    burnin: int = DEFAULT_BURNIN,
    rng: np.random.Generator | int | None = None,
    workers: int = 1,
    seed_label: int | None = None,
) -> PathTable:
    """Estimate E[S | beta] on a grid by Swendsen-Wang simulation.

    Each grid point runs on its own random stream (derived up front from
    ``rng``), so the result is identical for any ``workers`` count.  The
    estimates are smoothed with a pool-adjacent-violators fit before storage
    because the true curve is monotone in beta and raw Monte Carlo noise is
    not.
    """
    if grid is None:
        grid = default_beta_grid()
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise ConfigError("calibration grid is empty")
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ConfigError("calibration grid must start at 0 and increase strictly")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if not sweeps > burnin >= 0:
        raise ConfigError(f"need sweeps > burnin >= 0, got {sweeps}, {burnin}")
    if isinstance(rng, (int, np.integer)) and seed_label is None:
        seed_label = int(rng)
    rng = np.random.default_rng(rng)
    point_seeds = rng.integers(0, 2**63 - 1, size=grid.size)

    def run(j: int) -> float:
        return _simulate_point(spec, k, float(grid[j]), sweeps, burnin, point_seeds[j])

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            raw = np.array(list(pool.map(run, range(grid.size))))
    else:
        raw = np.array([run(j) for j in range(grid.size)])

    smooth = _isotonic(raw)
    meta = {
        "dims": list(spec.dims),
        "voxel_size": list(spec.voxel_size),
        "k": int(k),
        "sweeps": int(sweeps),
        "burnin": int(burnin),
        "seed": seed_label,
    }
    return PathTable(grid, smooth, meta)


def log_ratio_normalising(
    table: PathTable, beta_from: float, beta_to: float
) -> float:
    """log of C(beta_from)/C(beta_to) via the integral of E[S | beta].

    Computed as a difference of exact antiderivative values, so the result
    is antisymmetric and additive along the beta axis.
    """
    return table.integral_from_zero(beta_from) - table.integral_from_zero(beta_to)


def update_beta(
    beta_current: float,
    stat: int,
    table: PathTable,
    prior: BetaPrior,
    proposal_sd: float,
    rng: np.random.Generator,
) -> float:
    """One Gaussian random-walk Metropolis-Hastings step for beta.

    The acceptance ratio combines the table-based normalising-constant
    ratio with (beta' - beta) * S(z); proposals outside the prior support
    are rejected outright.
    """
    if proposal_sd <= 0:
        raise ConfigError(f"proposal_sd must be > 0, got {proposal_sd}")
    if not prior.contains(beta_current):
        raise ConfigError(
            f"current beta {beta_current} lies outside the prior support "
            f"[{prior.lower}, {prior.upper}]"
        )
    proposal = beta_current + proposal_sd * rng.standard_normal()
    if not prior.contains(proposal):
        return beta_current
    stat_value = int(stat)
    log_rho = log_ratio_normalising(table, beta_current, proposal)
    log_rho += (proposal - beta_current) * stat_value
    if log_rho >= 0.0 or rng.random() < np.exp(log_rho):
        return proposal
    return beta_current


@dataclass
class AdaptiveProposal:
    """Doubling/halving scale rule for the beta random walk.

    Adapts in fixed-size windows while unfrozen, targeting an acceptance
    fraction inside [0.2, 0.6]; call :meth:`freeze` at the end of burn-in
    so the post-burn-in chain is a fixed-kernel Markov chain.
    """

    sd: float = 0.01
    window: int = 50
    target_low: float = 0.2
    target_high: float = 0.6
    frozen: bool = False
    _steps: int = 0
    _accepts: int = 0

    def observe(self, accepted: bool) -> None:
        if self.frozen:
            return
        self._steps += 1
        self._accepts += int(accepted)
        if self._steps >= self.window:
            rate = self._accepts / self._steps
            if rate > self.target_high:
                self.sd *= 2.0
            elif rate < self.target_low:
                self.sd *= 0.5
            self._steps = 0
            self._accepts = 0

    def freeze(self) -> None:
        self.frozen = True


# -- persistence (CSV table + JSON sidecar) -------------------------------------


def _sidecar(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def save_path_table(path: str | Path, table: PathTable) -> None:
    """CSV with columns beta,expected_stat plus a .json metadata sidecar."""
    rows = [
        {"beta": fmt_float(b), "expected_stat": fmt_float(s)}
        for b, s in zip(table.beta_grid, table.expected_stat)
    ]
    write_csv(path, ["beta", "expected_stat"], rows)
    save_json(_sidecar(path), table.meta)


def load_path_table(path: str | Path) -> PathTable:
    rows = read_csv(path)
    if not rows or set(rows[0]) != {"beta", "expected_stat"}:
        raise DataError(f"{path} is not a beta,expected_stat table")
    grid = np.array([float(r["beta"]) for r in rows])
    stat = np.array([float(r["expected_stat"]) for r in rows])
    meta = {}
    sidecar = _sidecar(path)
    if sidecar.exists():
        meta = load_json(sidecar)
    return PathTable(grid, stat, meta)
