"""The full posterior sampler for the hidden Potts segmentation model.

One iteration redraws every label with a two-block chequerboard sweep
(sites inside a block are conditionally independent, so each block is
drawn in a single vectorised pass), refreshes the Gaussian component
means and variances from their conjugate conditionals, and optionally
moves the inverse temperature with the path-sampling Metropolis step.

Reproducibility contract: per iteration, exactly one uniform is drawn per
site, in site order, before the sweep begins; worker scheduling therefore
cannot change the output, and a chain is a pure function of its seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import io
from .errors import ConfigError, DataError
from .externalfield import FieldPrior
from .io import ImageVolume
from .lattice import BlockPartition, EdgeSet, LatticeSpec, build_lattice
from .pathsampler import AdaptiveProposal, BetaPrior, PathTable, update_beta
from .potts import LabelField, sufficient_statistic

__all__ = [
    "NoisePriors",
    "MixtureParams",
    "ChainConfig",
    "ChainResult",
    "posterior_conditional",
    "update_labels_chequerboard",
    "update_mixture_params",
    "run_chain",
    "modal_labels",
    "save_traces",
    "save_counts",
    "load_counts",
]


@dataclass(frozen=True)
class NoisePriors:
    """Conjugate priors per component: mu_j ~ N(m, phi2), sigma2_j ~ IG(nu/2, nu*s2/2)."""

    m: np.ndarray
    phi2: np.ndarray
    nu: np.ndarray
    s2: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("m", "phi2", "nu", "s2"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64))
            arrays[name] = arr
        if len({a.shape for a in arrays.values()}) != 1:
            raise ConfigError("prior arrays must share one length k")
        for name in ("phi2", "nu", "s2"):
            if np.any(arrays[name] <= 0):
                raise ConfigError(f"{name} entries must be > 0")
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    @property
    def k(self) -> int:
        return self.m.size

    def to_rows(self) -> list[dict]:
        return [
            {
                "label": j + 1,
                "m": float(self.m[j]),
                "phi2": float(self.phi2[j]),
                "nu": float(self.nu[j]),
                "s2": float(self.s2[j]),
            }
            for j in range(self.k)
        ]

    @classmethod
    def from_rows(cls, rows: list[dict]) -> "NoisePriors":
        rows = sorted(rows, key=lambda r: int(r["label"]))
        return cls(
            m=np.array([r["m"] for r in rows], dtype=np.float64),
            phi2=np.array([r["phi2"] for r in rows], dtype=np.float64),
            nu=np.array([r["nu"] for r in rows], dtype=np.float64),
            s2=np.array([r["s2"] for r in rows], dtype=np.float64),
        )


@dataclass(frozen=True)
class MixtureParams:
    """Current Gaussian component means and variances."""

    mu: np.ndarray
    sigma2: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=np.float64))
        if mu.shape != sigma2.shape:
            raise ConfigError("mu and sigma2 must share one length k")
        if np.any(sigma2 <= 0):
            raise ConfigError("sigma2 entries must be > 0")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma2", sigma2)

    @property
    def k(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class ChainConfig:
    iterations: int
    burnin: int
    seed: int = 0
    beta: str | float = "sample"  # "sample" or a fixed value
    thin: int = 1
    use_field: bool = True
    beta_prior: BetaPrior | None = None
    proposal_sd: float = 0.01
    adapt_window: int = 50

    def __post_init__(self):
        if not self.iterations > self.burnin >= 0:
            raise ConfigError(
                f"need iterations > burnin >= 0, got {self.iterations}, {self.burnin}"
            )
        if self.thin < 1:
            raise ConfigError(f"thinning interval must be >= 1, got {self.thin}")
        if isinstance(self.beta, str):
            if self.beta != "sample":
                raise ConfigError(f"beta must be 'sample' or a number, got {self.beta!r}")
        elif not np.isfinite(float(self.beta)):
            raise ConfigError(f"fixed beta must be finite, got {self.beta}")

    @property
    def sample_beta(self) -> bool:
        return isinstance(self.beta, str)

    @property
    def retained(self) -> int:
        return -((self.iterations - self.burnin) // -self.thin)  # ceil division


@dataclass(frozen=True)
class ChainResult:
    """Traces, post-burn-in allocation counts, and run metadata."""

    mu_trace: np.ndarray  # (iterations, k)
    sigma2_trace: np.ndarray  # (iterations, k)
    beta_trace: np.ndarray  # (iterations,)
    stat_trace: np.ndarray  # (iterations,)
    correct_trace: np.ndarray | None  # (iterations,) or None
    counts: np.ndarray  # (n, k) int64
    retained: int
    spec: LatticeSpec
    config: ChainConfig


# -- conditional distributions ---------------------------------------------------


def _gaussian_loglik(values: np.ndarray, params: MixtureParams) -> np.ndarray:
    """(n, k) matrix of log phi(y_i | mu_j, sigma2_j)."""
    diff = values[:, None] - params.mu[None, :]
    return -0.5 * np.log(2.0 * np.pi * params.sigma2)[None, :] - diff**2 / (
        2.0 * params.sigma2[None, :]
    )


def _neighbour_table_from_edges(n: int, edges: EdgeSet) -> np.ndarray:
    """(n, max_degree) neighbour indices padded with the sentinel n."""
    e = edges.edges
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    order = np.argsort(src, kind="stable")
    src, dst = src[order], dst[order]
    degree = np.bincount(src, minlength=n)
    max_deg = int(degree.max(initial=0))
    starts = np.concatenate([[0], np.cumsum(degree)])
    slot = np.arange(src.size) - starts[src]
    table = np.full((n, max(max_deg, 1)), n, dtype=np.int64)
    table[src, slot] = dst
    return table


def _neighbour_label_counts(
    z: np.ndarray, sites: np.ndarray, nbr_table: np.ndarray, k: int
) -> np.ndarray:
    """(len(sites), k) count of neighbours of each site carrying each label."""
    padded = np.concatenate([z, [0]])  # sentinel slot reads as label 0 = none
    nbr_labels = padded[nbr_table[sites]]
    return (nbr_labels[:, :, None] == np.arange(1, k + 1)[None, None, :]).sum(axis=1)


def _draw_categorical(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draw per row from unnormalised log weights; one uniform each."""
    w = weights - weights.max(axis=1, keepdims=True)
    p = np.exp(w)
    p /= p.sum(axis=1, keepdims=True)
    cdf = np.cumsum(p, axis=1)
    idx = (u[:, None] > cdf).sum(axis=1)
    return np.minimum(idx, weights.shape[1] - 1).astype(np.int32) + 1


def posterior_conditional(
    i: int,
    z: LabelField,
    y_i: float,
    params: MixtureParams,
    field_prior: FieldPrior | None,
    beta: float,
    edges: EdgeSet,
) -> np.ndarray:
    """Full conditional label distribution of one site.

    Component j combines the Gaussian log-likelihood of the intensity, the
    spatial field prior plane (when given), and beta times the count of
    like-labelled neighbours; normalised with log-sum-exp.
    """
    if not np.isfinite(y_i):
        raise DataError(f"non-finite intensity {y_i} at site {i}")
    k = params.k
    loglik = _gaussian_loglik(np.array([y_i]), params)[0]
    if field_prior is not None:
        loglik = loglik + field_prior.log_density[i]
    e = edges.edges
    nbr = np.concatenate([e[e[:, 0] == i, 1], e[e[:, 1] == i, 0]])
    counts = np.bincount(z.labels[nbr], minlength=k + 1)[1:]
    w = loglik + beta * counts
    w -= w.max()
    p = np.exp(w)
    return p / p.sum()


def _sweep(
    z: np.ndarray,
    ext: np.ndarray,
    beta: float,
    partition: BlockPartition,
    nbr_table: np.ndarray,
    u: np.ndarray,
    k: int,
) -> np.ndarray:
    out = z.copy()
    for sites in partition.blocks:
        if sites.size == 0:
            continue
        counts = _neighbour_label_counts(out, sites, nbr_table, k)
        out[sites] = _draw_categorical(ext[sites] + beta * counts, u[sites])
    return out


def update_labels_chequerboard(
    z: LabelField,
    y: ImageVolume,
    params: MixtureParams,
    field_prior: FieldPrior | None,
    beta: float,
    partition: BlockPartition,
    edges: EdgeSet,
    rng: np.random.Generator,
) -> LabelField:
    """Redraw every label, block 0 then block 1.

    Sites within a block see only the other block's labels, so the per-block
    draw is a single vectorised categorical sample.
    """
    if z.n != y.values.size:
        raise DataError(f"label field has {z.n} sites, image has {y.values.size}")
    if not np.all(np.isfinite(y.values)):
        raise DataError("image contains non-finite intensities")
    ext = _gaussian_loglik(y.values, params)
    if field_prior is not None:
        if field_prior.log_density.shape != ext.shape:
            raise DataError(
                f"field prior shape {field_prior.log_density.shape} does not match "
                f"(n, k)={ext.shape}"
            )
        ext = ext + field_prior.log_density
    u = rng.random(z.n)
    nbr_table = _neighbour_table_from_edges(z.n, edges)
    return LabelField(_sweep(z.labels, ext, beta, partition, nbr_table, u, z.k), z.k)


def update_mixture_params(
    y: ImageVolume,
    z: LabelField,
    priors: NoisePriors,
    params: MixtureParams,
    rng: np.random.Generator,
) -> MixtureParams:
    """Semi-conjugate Gibbs refresh: mu_j | sigma2_j, then sigma2_j | mu_j.

    Components with no allocated sites reduce exactly to prior draws.
    """
    k = priors.k
    n_j = np.bincount(z.labels, minlength=k + 1)[1:].astype(np.float64)
    sum_j = np.bincount(z.labels, weights=y.values, minlength=k + 1)[1:]
    prec = 1.0 / priors.phi2 + n_j / params.sigma2
    mean = (priors.m / priors.phi2 + sum_j / params.sigma2) / prec
    mu_new = mean + rng.standard_normal(k) / np.sqrt(prec)
    resid2 = (y.values - mu_new[z.labels - 1]) ** 2
    ss_j = np.bincount(z.labels, weights=resid2, minlength=k + 1)[1:]
    shape = 0.5 * (priors.nu + n_j)
    scale = 0.5 * (priors.nu * priors.s2 + ss_j)
    sigma2_new = scale / rng.gamma(shape)
    return MixtureParams(mu_new, sigma2_new)


# -- chain driver ----------------------------------------------------------------


def _initial_labels(
    y: ImageVolume, priors: NoisePriors, field_prior: FieldPrior | None
) -> np.ndarray:
    if field_prior is not None:
        return np.argmax(field_prior.log_density, axis=1).astype(np.int32) + 1
    start = MixtureParams(priors.m, priors.s2)
    return np.argmax(_gaussian_loglik(y.values, start), axis=1).astype(np.int32) + 1


def run_chain(
    y: ImageVolume,
    config: ChainConfig,
    priors: NoisePriors,
    field_prior: FieldPrior | None = None,
    table: PathTable | None = None,
    truth: LabelField | None = None,
    rng: np.random.Generator | None = None,
) -> ChainResult:
    """Run the Gibbs sampler and collect traces plus allocation counts.

    The proposal scale for beta adapts (doubling/halving) during burn-in
    only.  Allocation counts accumulate from iteration ``burnin`` onward at
    the thinning interval.
    """
    spec = y.spec
    k = priors.k
    active_field = field_prior if config.use_field else None
    if active_field is not None:
        if active_field.spec.dims != spec.dims:
            raise DataError(
                f"field prior dims {active_field.spec.dims} != image dims {spec.dims}"
            )
        if active_field.k != k:
            raise DataError(f"field prior has k={active_field.k}, priors have k={k}")
    if truth is not None and truth.n != spec.n:
        raise DataError(f"truth has {truth.n} sites, image has {spec.n}")
    if config.sample_beta and table is None:
        raise ConfigError("sampling beta requires a calibrated path table")
    if not np.all(np.isfinite(y.values)):
        raise DataError("image contains non-finite intensities")
    if rng is None:
        rng = np.random.default_rng(config.seed)

    edges, partition = build_lattice(spec)
    nbr_table = _neighbour_table_from_edges(spec.n, edges)
    z = _initial_labels(y, priors, active_field)
    params = MixtureParams(priors.m.copy(), priors.s2.copy())
    if config.sample_beta:
        prior = config.beta_prior or BetaPrior(0.0, float(table.beta_grid[-1]))
        beta = 0.5 * (prior.lower + prior.upper)
        proposal = AdaptiveProposal(sd=config.proposal_sd, window=config.adapt_window)
    else:
        prior = None
        beta = float(config.beta)
        proposal = None

    iters = config.iterations
    mu_trace = np.empty((iters, k))
    sigma2_trace = np.empty((iters, k))
    beta_trace = np.empty(iters)
    stat_trace = np.empty(iters, dtype=np.int64)
    correct_trace = np.empty(iters, dtype=np.int64) if truth is not None else None
    counts = np.zeros((spec.n, k), dtype=np.int64)
    field_matrix = active_field.log_density if active_field is not None else None
    site_index = np.arange(spec.n)
    retained = 0

    for t in range(iters):
        u = rng.random(spec.n)
        ext = _gaussian_loglik(y.values, params)
        if field_matrix is not None:
            ext += field_matrix
        z = _sweep(z, ext, beta, partition, nbr_table, u, k)
        zfield = LabelField(z, k)
        params = update_mixture_params(y, zfield, priors, params, rng)
        stat = sufficient_statistic(zfield, edges)
        if config.sample_beta:
            new_beta = update_beta(beta, stat, table, prior, proposal.sd, rng)
            if t < config.burnin:
                proposal.observe(new_beta != beta)
            elif not proposal.frozen:
                proposal.freeze()
            beta = new_beta
        mu_trace[t] = params.mu
        sigma2_trace[t] = params.sigma2
        beta_trace[t] = beta
        stat_trace[t] = stat
        if correct_trace is not None:
            correct_trace[t] = int(np.count_nonzero(z == truth.labels))
        if t >= config.burnin and (t - config.burnin) % config.thin == 0:
            counts[site_index, z - 1] += 1
            retained += 1

    return ChainResult(
        mu_trace=mu_trace,
        sigma2_trace=sigma2_trace,
        beta_trace=beta_trace,
        stat_trace=stat_trace,
        correct_trace=correct_trace,
        counts=counts,
        retained=retained,
        spec=spec,
        config=config,
    )


def modal_labels(result: ChainResult) -> LabelField:
    """Most frequently allocated label per site; ties go to the lowest label."""
    if result.retained < 1:
        raise DataError("chain retained no iterations; counts are empty")
    return LabelField(
        np.argmax(result.counts, axis=1).astype(np.int32) + 1,
        result.counts.shape[1],
    )


# -- persistence -----------------------------------------------------------------


def save_traces(path: str | Path, result: ChainResult) -> None:
    """One CSV row per iteration, one column per scalar trace."""
    k = result.mu_trace.shape[1]
    names = ["iteration"]
    names += [f"mu_{j + 1}" for j in range(k)]
    names += [f"sigma2_{j + 1}" for j in range(k)]
    names += ["beta", "sufficient_stat"]
    if result.correct_trace is not None:
        names.append("correct_count")

    def rows():
        for t in range(result.mu_trace.shape[0]):
            row: dict[str, Any] = {"iteration": t}
            for j in range(k):
                row[f"mu_{j + 1}"] = result.mu_trace[t, j]
                row[f"sigma2_{j + 1}"] = result.sigma2_trace[t, j]
            row["beta"] = result.beta_trace[t]
            row["sufficient_stat"] = int(result.stat_trace[t])
            if result.correct_trace is not None:
                row["correct_count"] = int(result.correct_trace[t])
            yield row

    io.write_csv(path, names, rows())


def save_counts(path: str | Path, result: ChainResult) -> None:
    extra = {
        "kind": "allocation_counts",
        "k": result.counts.shape[1],
        "retained": result.retained,
        "thin": result.config.thin,
    }
    io.save_planes(path, result.counts.T, result.spec, extra)


def load_counts(path: str | Path) -> tuple[np.ndarray, LatticeSpec, int]:
    planes, spec, extra = io.load_planes(path)
    if extra.get("kind") != "allocation_counts":
        raise DataError(f"{path} does not hold allocation counts")
    counts = np.rint(planes.T).astype(np.int64)
    return counts, spec, int(extra.get("retained", 0))
