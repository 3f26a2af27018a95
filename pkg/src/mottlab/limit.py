"""The scaling-limit objects: two-sided heavy-tail subordinators, their
exponential tilt, the limiting speed measures, and the limit process
simulated as a birth-death chain on resistance coordinates.

A path is represented by its jumps above a threshold eps plus a drift
that compensates the mean of the suppressed small jumps (summable for
tail indices below one).  The limit process itself is run with the walk
engine: grid cells in the window [-K, K] become chain sites whose edge
resistances are the path increments and whose masses are the speed
measure of the cell, which is exactly the structure of the discrete
model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .env import RngStream
from .errors import DomainError, GridError, ParameterError, ProvenanceError
from .stats import Sample
from .walk import WeightedChain, make_chain, simulate

__all__ = [
    "SubordinatorPath",
    "sample_subordinator",
    "default_jump_threshold",
    "tilt_path",
    "restrict_path",
    "LimitChain",
    "build_limit_chain",
    "limit_chain_builder",
    "simulate_limit_process",
    "stable_marginal_samples",
]


def _suppressed_drift(tail_index: float, intensity_const: float, eps: float) -> float:
    """Mean of the jumps below eps per unit length (their exact compensation)."""
    return intensity_const * tail_index * eps ** (1.0 - tail_index) / (1.0 - tail_index)


def default_jump_threshold(tail_index: float, intensity_const: float, K: float, rel_std: float = 1e-3) -> float:
    """Threshold making the suppressed-jump fluctuation small.

    The suppressed jumps are replaced by their exact mean drift, so the
    residual error is their standard deviation over the window; this picks
    eps so that it stays below ``rel_std`` times the path scale proxy
    (intensity * K)^(1/tail_index).
    """
    a, c = tail_index, intensity_const
    scale = (c * max(K, 1.0)) ** (1.0 / a)
    var_coeff = 2.0 * max(K, 0.5) * c * a / (2.0 - a)
    eps = ((rel_std * scale) ** 2 / var_coeff) ** (1.0 / (2.0 - a))
    return min(eps, 0.25 * scale)


@dataclass(frozen=True)
class SubordinatorPath:
    """Two-sided increasing path on [-K, K]: threshold jumps plus drift.

    ``tilt_rate`` theta = 0 is the raw path; a tilted path scales the jump
    at location v by exp(-theta v) and integrates the drift against the same
    factor.  S(0) = 0 and S is strictly increasing in either case.
    """

    K: float
    tail_index: float
    intensity_const: float
    eps: float
    drift: float
    locations: np.ndarray
    sizes: np.ndarray
    tilt_rate: float = 0.0

    def __post_init__(self):
        self.locations.flags.writeable = False
        self.sizes.flags.writeable = False

    @classmethod
    def pure_drift(cls, drift: float, K: float) -> "SubordinatorPath":
        return cls(
            K=float(K),
            tail_index=0.5,
            intensity_const=0.0,
            eps=1.0,
            drift=float(drift),
            locations=np.empty(0),
            sizes=np.empty(0),
        )

    @property
    def tilted_sizes(self) -> np.ndarray:
        if self.tilt_rate == 0.0:
            return self.sizes
        return self.sizes * np.exp(-self.tilt_rate * self.locations)

    def _drift_primitive(self, u):
        u = np.asarray(u, dtype=float)
        if self.tilt_rate == 0.0:
            return u
        return -np.expm1(-self.tilt_rate * u) / self.tilt_rate

    def evaluate(self, u):
        """S(u) for scalar or array u in [-K, K]; right-continuous at jumps."""
        u_arr = np.atleast_1d(np.asarray(u, dtype=float))
        if np.any(np.abs(u_arr) > self.K + 1e-12):
            raise DomainError("evaluation point outside the path window")
        with np.errstate(over="ignore", invalid="ignore"):
            cum = np.concatenate([[0.0], np.cumsum(self.tilted_sizes)])
            t_u = cum[np.searchsorted(self.locations, u_arr, side="right")]
            t_0 = cum[np.searchsorted(self.locations, 0.0, side="right")]
            out = self.drift * self._drift_primitive(u_arr) + (t_u - t_0)
        return float(out[0]) if np.ndim(u) == 0 else out

    def jump_count_above(self, x: float) -> int:
        """Number of (untilted) jumps of size >= x over the whole window."""
        return int(np.sum(self.sizes >= x))


def sample_subordinator(
    tail_index: float,
    intensity_const: float,
    K: float,
    eps: float,
    stream: RngStream,
) -> SubordinatorPath:
    """Draw the jump representation on [-K, K].

    Jumps above eps arrive as a Poisson cloud: count Poisson with mean
    2K * C * eps^(-a), locations uniform, sizes eps * V^(-1/a); the mean of
    the suppressed small jumps is restored as a drift per unit length.
    """
    if not 0.0 < tail_index < 1.0:
        raise ParameterError(f"tail index must lie in (0, 1), got {tail_index}")
    if eps <= 0 or intensity_const <= 0 or K <= 0:
        raise ParameterError("eps, intensity_const and K must be positive")
    rng = stream.generator()
    mean_count = 2.0 * K * intensity_const * eps ** (-tail_index)
    if mean_count > 5e7:
        raise ParameterError(f"jump threshold too small: expected {mean_count:.3g} jumps")
    count = int(rng.poisson(mean_count))
    locations = np.sort(rng.uniform(-K, K, size=count))
    sizes = eps * rng.random(count) ** (-1.0 / tail_index)
    return SubordinatorPath(
        K=float(K),
        tail_index=float(tail_index),
        intensity_const=float(intensity_const),
        eps=float(eps),
        drift=_suppressed_drift(tail_index, intensity_const, eps),
        locations=locations,
        sizes=sizes,
    )


def tilt_path(path: SubordinatorPath, lam: float, rho: float) -> SubordinatorPath:
    """Exponentially tilt at rate 2 lam / rho.  Identity when lam == 0."""
    if lam < 0:
        raise ParameterError("lam must be nonnegative")
    if lam == 0.0:
        return path
    if path.tilt_rate != 0.0:
        raise ProvenanceError("path is already tilted")
    return replace(path, tilt_rate=2.0 * lam / rho)


def restrict_path(path: SubordinatorPath, K_new: float) -> SubordinatorPath:
    """Window the path to [-K_new, K_new], keeping jumps inside it."""
    if K_new <= 0 or K_new > path.K:
        raise ParameterError("restriction window must be inside the path window")
    keep = np.abs(path.locations) <= K_new
    return replace(path, K=float(K_new), locations=path.locations[keep].copy(), sizes=path.sizes[keep].copy())


@dataclass
class LimitChain:
    """Birth-death discretisation of the limit process on the u-grid.

    Nodes sit at grid points; the edge between neighbours has resistance
    equal to the path increment over that cell, and the node mass is the
    speed measure of the half-cell around it.
    """

    grid: np.ndarray
    edge_resistances: np.ndarray
    masses: np.ndarray
    delta_u: float
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.grid)

    @property
    def origin(self) -> int:
        return int(np.argmin(np.abs(self.grid)))

    def to_walk_chain(self) -> WeightedChain:
        m = self.size
        cond = 1.0 / self.edge_resistances
        mat = sp.diags([cond, cond], offsets=[1, -1], shape=(m, m), format="csr")
        return make_chain(self.grid, mat, self.masses, meta=dict(self.meta), token=self.meta.get("token", ""))


def _tilt_integral(lam: float, rho: float, a, b):
    """Integral of exp(2 lam u / rho) over [a, b], elementwise."""
    if lam == 0.0:
        return np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    c = 2.0 * lam / rho
    return (np.exp(c * np.asarray(b, dtype=float)) - np.exp(c * np.asarray(a, dtype=float))) / c


def build_limit_chain(
    path: SubordinatorPath,
    lam: float,
    rho: float,
    mass_const: float,
    delta_u: float,
    trap_path: SubordinatorPath | None = None,
    trap_mass_const: float | None = None,
) -> LimitChain:
    """Chain whose scale is the path and whose speed is the limit measure.

    Without a trap path the speed density is mass_const * exp(2 lam u / rho)
    (cell masses in closed form).  With one, cell masses integrate the same
    tilt factor against the trap path: its jumps contribute weighted atoms,
    its drift the remaining density.  The scale path must already carry the
    tilt matching lam; the trap path stays untilted.
    """
    expected_tilt = 0.0 if lam == 0.0 else 2.0 * lam / rho
    if abs(path.tilt_rate - expected_tilt) > 1e-12:
        raise ParameterError("scale path tilt does not match lam; tilt_path it first")
    if trap_path is not None and trap_path.tilt_rate != 0.0:
        raise ParameterError("trap path must stay untilted; the tilt enters through the weight")
    if trap_path is not None and trap_mass_const is None:
        raise ParameterError("trap mode needs trap_mass_const")
    if delta_u <= 0 or delta_u > path.K:
        raise ParameterError("delta_u must lie in (0, K]")
    K = path.K
    m_cells = max(2, int(round(2 * K / delta_u)))
    m_cells += m_cells % 2  # keep a node exactly at u = 0
    delta = 2.0 * K / m_cells
    grid = -K + delta * np.arange(m_cells + 1)
    grid[m_cells // 2] = 0.0

    s_vals = path.evaluate(grid)
    edge_res = np.diff(s_vals)
    if np.any(edge_res <= 0.0) or not np.all(np.isfinite(edge_res)):
        raise GridError(
            f"degenerate cell increment at delta_u={delta}; coarsen the grid",
            suggested=2.0 * delta,
        )

    lo = np.maximum(grid - 0.5 * delta, -K)
    hi = np.minimum(grid + 0.5 * delta, K)
    if trap_path is None:
        masses = mass_const * _tilt_integral(lam, rho, lo, hi)
    else:
        weights = (
            np.exp(2.0 * lam / rho * trap_path.locations) if lam != 0.0 else np.ones(len(trap_path.locations))
        )
        wcum = np.concatenate([[0.0], np.cumsum(trap_path.sizes * weights)])
        atom = wcum[np.searchsorted(trap_path.locations, hi, side="right")] - wcum[
            np.searchsorted(trap_path.locations, lo, side="right")
        ]
        masses = trap_mass_const * (atom + trap_path.drift * _tilt_integral(lam, rho, lo, hi))
    if np.any(masses <= 0.0) or not np.all(np.isfinite(masses)):
        raise GridError("vanishing cell mass; coarsen the grid", suggested=2.0 * delta)
    meta = {
        "kind": "limit-chain",
        "trap": trap_path is not None,
        "lam": lam,
        "rho": rho,
        "mass_const": mass_const,
        "token": f"limit-{K}-{delta}-{path.tail_index}-{path.intensity_const}-{lam}",
    }
    return LimitChain(grid=grid, edge_resistances=edge_res, masses=masses, delta_u=delta, meta=meta)


def limit_chain_builder(
    tail_const: float,
    rho: float,
    lam: float,
    K: float,
    delta_u: float,
    mass_const: float,
    eps: float | None = None,
    kappa: float | None = None,
    trap_mass_const: float | None = None,
):
    """Callable stream -> LimitChain for annealed limit simulations.

    With ``kappa`` set the chain carries the trap measure driven by an
    independent kappa-stable path of unit intensity.
    """
    eps_scale = default_jump_threshold(rho, tail_const, K) if eps is None else eps

    def build(stream: RngStream) -> LimitChain:
        raw = sample_subordinator(rho, tail_const, K, eps_scale, stream.child(0))
        scale_path = tilt_path(raw, lam, rho)
        trap = None
        if kappa is not None:
            eps_k = default_jump_threshold(kappa, 1.0, K)
            trap = sample_subordinator(kappa, 1.0, K, eps_k, stream.child(1))
        return build_limit_chain(
            scale_path,
            lam,
            rho,
            mass_const,
            delta_u,
            trap_path=trap,
            trap_mass_const=trap_mass_const,
        )

    return build


def simulate_limit_process(
    source,
    t_values,
    replicates: int,
    stream: RngStream,
    max_steps: int = 1 << 33,
) -> dict:
    """Marginals of the limit process at the given times.

    ``source`` is either a fixed LimitChain (quenched: one environment,
    fresh walk noise per replicate) or a callable stream -> LimitChain
    (annealed: fresh path per replicate).  Returns {t: Sample} of the
    u-coordinate of the occupied cell.  Paths that touch the window edge
    are excluded and counted, mirroring the walk module's policy.
    """
    if replicates < 100:
        raise ParameterError("need at least 100 replicates")
    t_values = sorted(float(t) for t in t_values)
    t_max = t_values[-1]
    out = {t: [] for t in t_values}
    excluded = 0
    quenched = isinstance(source, LimitChain)
    chain = source.to_walk_chain() if quenched else None
    grid = source.grid if quenched else None
    for r in range(replicates):
        rep = stream.child(r)
        if not quenched:
            lc = source(rep.child(0))
            chain = lc.to_walk_chain()
            grid = lc.grid
        start = int(np.argmin(np.abs(grid)))
        boundary = np.array([0, chain.size - 1])
        traj = simulate(
            chain,
            start=start,
            stream=rep.child(1),
            t_max=t_max,
            hit=boundary,
            max_steps=max_steps,
            record="path",
        )
        if traj.reason != "time":
            excluded += 1
            continue
        for t in t_values:
            out[t].append(grid[traj.state_at(t)])
    prov = {
        "experiment": "limit-marginal",
        "replicates": replicates,
        "excluded": excluded,
        "quenched": quenched,
        "seed": stream.to_dict(),
        "coordinate": "u",
    }
    return {
        t: Sample(values=np.asarray(vals), provenance=dict(prov, t=t))
        for t, vals in out.items()
    }


def stable_marginal_samples(
    tail_index: float,
    intensity_const: float,
    count: int,
    stream: RngStream,
    eps: float | None = None,
    rel_std: float = 1e-4,
) -> np.ndarray:
    """I.i.d. samples of the one-sided path value at u = 1.

    Jump construction over [0, 1] with the suppressed-jump mean restored as
    drift; the default threshold keeps the suppressed fluctuation below
    ``rel_std`` of the marginal scale.  Used as the reference law for the
    rescaled-resistance comparisons.
    """
    if count < 100:
        raise ParameterError("need at least 100 samples")
    if not 0.0 < tail_index < 1.0:
        raise ParameterError("tail index must lie in (0, 1)")
    a, c = tail_index, intensity_const
    if eps is None:
        scale = c ** (1.0 / a)
        eps = ((rel_std * scale) ** 2 * (2.0 - a) / (c * a)) ** (1.0 / (2.0 - a))
        eps = min(eps, 0.25 * scale)
    rng = stream.generator()
    mean_count = c * eps ** (-a)
    if mean_count * count > 2e8:
        raise ParameterError("threshold too small for this sample count")
    counts = rng.poisson(mean_count, size=count)
    total = int(counts.sum())
    sizes = eps * rng.random(total) ** (-1.0 / a)
    owner = np.repeat(np.arange(count), counts)
    sums = np.bincount(owner, weights=sizes, minlength=count)
    return sums + _suppressed_drift(a, c, eps)
