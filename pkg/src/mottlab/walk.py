"""Continuous-time random walks on conductance networks.

A WeightedChain is the generic reversible chain (coordinates, symmetric
edge weights, site masses): from site i it jumps to j with probability
c(i,j)/W_i and holds for an Exponential time of mean m_i/W_i, where W_i
is the row sum.  The concrete walks differ only in their masses:
constant speed m_i = W_i, variable speed m_i = exp(2 lam' x_i), trap
m_i = tau_i W_i.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import _engine
from .env import ModelParams, RngStream, generate_environment
from .errors import DomainError, ParameterError
from .network import TruncatedNetwork, build_truncated_network, recommended_window
from .stats import Sample

__all__ = [
    "WeightedChain",
    "Trajectory",
    "make_chain",
    "chain_from_network",
    "simulate",
    "exit_time",
    "MarginalResult",
    "marginal_samples",
    "walk_time_scale",
]

_CHUNK = 1 << 21


@dataclass
class WeightedChain:
    """Reversible CTMC data: coordinates, sparse symmetric weights, masses."""

    coords: np.ndarray
    conductances: sp.csr_matrix
    masses: np.ndarray
    meta: dict = field(default_factory=dict)
    token: str = ""

    def __post_init__(self):
        size = self.conductances.shape[0]
        if self.coords.shape != (size,) or self.masses.shape != (size,):
            raise ParameterError("coords, masses and matrix sizes disagree")
        if np.any(self.masses <= 0) or not np.all(np.isfinite(self.masses)):
            raise ParameterError("site masses must be positive and finite")
        if (self.conductances < 0).nnz:
            raise ParameterError("conductances must be nonnegative")
        self.rates = np.asarray(self.conductances.sum(axis=1)).ravel()
        if np.any(self.rates <= 0):
            raise ParameterError("every site needs at least one positive incident edge")
        self._indptr = self.conductances.indptr.astype(np.int64)
        self._indices = self.conductances.indices.astype(np.int64)
        self._row_cum = np.cumsum(self.conductances.data)
        if not self.token:
            self.token = f"chain-{size}-{hash((float(self.rates.sum()), float(self.masses.sum()))) & 0xFFFFFFFF:x}"

    @property
    def size(self) -> int:
        return self.conductances.shape[0]

    def holding_mean(self, i: int) -> float:
        return float(self.masses[i] / self.rates[i])

    def jump_distribution(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self._indptr[i], self._indptr[i + 1]
        return self._indices[lo:hi], self.conductances.data[lo:hi] / self.rates[i]


def make_chain(coords, conductances, masses, meta=None, token="") -> WeightedChain:
    C = conductances.tocsr() if sp.issparse(conductances) else sp.csr_matrix(np.asarray(conductances, dtype=float))
    return WeightedChain(
        coords=np.asarray(coords, dtype=float),
        conductances=C,
        masses=np.asarray(masses, dtype=float),
        meta=dict(meta or {}),
        token=token,
    )


def chain_from_network(net: TruncatedNetwork, speed: str = "constant") -> WeightedChain:
    """Concrete walk on a truncated network.

    constant: unit-mean holding everywhere (masses = row sums).
    variable: jump rate c(i,j) * exp(-2 lam' x_i), i.e. masses exp(2 lam' x_i).
    trap:     holding mean tau_i (masses tau_i * row sums); needs kappa set.
    """
    masses = net.masses.copy()
    if speed == "constant":
        pass
    elif speed == "variable":
        masses = np.exp(2.0 * net.lam_scaled * net.coords)
    elif speed == "trap":
        if net.env.params.kappa is None:
            raise ParameterError("trap walk needs holding-time means (set kappa)")
        rows = np.arange(net.env.N - net.Kn, net.env.N + net.Kn + 1)
        masses = net.env.tau[rows] * masses
    else:
        raise ParameterError(f"unknown speed mode {speed!r}")
    token = f"net-K{net.K}-n{net.n}-{speed}-seed{net.env.stream.seed}-{net.env.stream.stream_id}-{net.env.stream.path}"
    return WeightedChain(
        coords=net.coords.copy(),
        conductances=net.conductance_matrix,
        masses=masses,
        meta={"speed": speed, "K": net.K, "n": net.n, "Kn": net.Kn},
        token=token,
    )


@dataclass
class Trajectory:
    """Recorded path: event times (first entry at time 0) and visited sites."""

    times: np.ndarray
    sites: np.ndarray
    positions: np.ndarray
    reason: str
    final_time: float
    final_site: int
    steps: int
    occupation: np.ndarray | None = None

    def state_at(self, t: float) -> int:
        if t < 0 or t > self.final_time:
            raise DomainError(f"time {t} outside [0, {self.final_time}]")
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        return int(self.sites[k])


_REASONS = {
    _engine.STOP_TIME: "time",
    _engine.STOP_HIT: "hit",
    _engine.STOP_STEPS: "steps",
}


def simulate(
    chain: WeightedChain,
    start: int,
    stream: RngStream,
    *,
    t_max: float = math.inf,
    hit=None,
    max_steps: int | None = None,
    record: str = "path",
) -> Trajectory:
    """Exact jump-chain simulation from ``start`` (a row index).

    Stops at the first of: accumulated time passing ``t_max`` (state frozen
    at t_max), entry into the ``hit`` set, or ``max_steps`` jumps; exhausting
    the step budget is reported in ``reason``, never silently truncated.
    ``record`` is "path" (full event log), "none" (final state only) or
    "occupation" (per-site occupation times, no event log).
    """
    size = chain.size
    if not 0 <= start < size:
        raise DomainError(f"start {start} outside chain")
    if t_max is math.inf and hit is None and max_steps is None:
        raise ParameterError("need at least one stop rule")
    hit_mask = np.zeros(size, dtype=np.uint8)
    if hit is not None:
        hit_mask[np.asarray(sorted(hit), dtype=int)] = 1
    budget = np.inf if max_steps is None else int(max_steps)
    rng = stream.generator()
    track_occ = record == "occupation"
    occ = np.zeros(size if track_occ else 0)
    if record == "path":
        cap = 1 << 16
        rec_t = np.empty(cap)
        rec_s = np.empty(cap, dtype=np.int64)
    else:
        rec_t = np.empty(0)
        rec_s = np.empty(0, dtype=np.int64)
    site, t, steps, rec_len = int(start), 0.0, 0, 0
    # start with a small uniform chunk and grow on refill, so short runs do
    # not pay for the long-run buffer
    chunk = 1 << 12
    u = rng.random(chunk)
    u_pos = 0
    while True:
        site, t, steps, u_pos, rec_len, code = _engine.run_chain(
            chain._indptr,
            chain._indices,
            chain._row_cum,
            chain.masses,
            chain.rates,
            site,
            t,
            steps,
            u,
            u_pos,
            t_max,
            min(budget, 2**62),
            hit_mask,
            rec_t,
            rec_s,
            rec_len,
            occ,
            track_occ,
        )
        if code == _engine.STOP_CHUNK:
            chunk = min(chunk * 8, _CHUNK)
            u = rng.random(chunk)
            u_pos = 0
            continue
        if code == _engine.STOP_CAP:
            grown_t = np.empty(2 * rec_t.shape[0])
            grown_s = np.empty(2 * rec_s.shape[0], dtype=np.int64)
            grown_t[:rec_len] = rec_t[:rec_len]
            grown_s[:rec_len] = rec_s[:rec_len]
            rec_t, rec_s = grown_t, grown_s
            continue
        break
    if record == "path":
        times = np.concatenate([[0.0], rec_t[:rec_len]])
        sites = np.concatenate([[start], rec_s[:rec_len]]).astype(np.int64)
    else:
        times = np.array([0.0])
        sites = np.array([start], dtype=np.int64)
    return Trajectory(
        times=times,
        sites=sites,
        positions=chain.coords[sites],
        reason=_REASONS[code],
        final_time=float(t),
        final_site=int(site),
        steps=int(steps),
        occupation=occ if track_occ else None,
    )


def exit_time(chain: WeightedChain, n_target: int, stream: RngStream, max_steps: int = 1 << 34):
    """First time the walk's model index leaves (-n_target, n_target).

    The chain must carry network metadata (Kn) so rows map to model indices.
    Returns (time, trajectory-reason) where reason "hit" means a clean exit.
    """
    Kn = chain.meta.get("Kn")
    if Kn is None or n_target > Kn:
        raise DomainError(f"chain window does not cover +-{n_target}")
    rows = np.arange(chain.size)
    hit = rows[np.abs(rows - Kn) >= n_target]
    traj = simulate(chain, start=Kn, stream=stream, hit=hit, max_steps=max_steps, record="none")
    return traj.final_time, traj.reason


def walk_time_scale(params: ModelParams, n: int, speed: str, time_exponent: float | None = None) -> float:
    """Time horizon multiplier: one unit of rescaled time at scale n.

    The default exponent is 1 + 1/rho (1/kappa + 1/rho for the trap walk);
    ``time_exponent`` overrides it, e.g. 2 for diffusive-regime studies.
    """
    if time_exponent is not None:
        return float(n) ** float(time_exponent)
    if speed == "trap":
        if params.kappa is None:
            raise ParameterError("trap scale needs kappa")
        return float(n) ** (1.0 / params.kappa + 1.0 / params.rho)
    return float(n) ** (1.0 + 1.0 / params.rho)


@dataclass
class MarginalResult:
    """Annealed marginal sample of the rescaled walk position at one time.

    ``sample`` holds the site-index coordinate (model index / n), the scaling
    coordinate of the window [-K, K]; ``sample_physical`` holds position / n
    (asymptotically index / (n rho)).  Replicates whose path touched the
    collapsed window boundary are excluded and counted.
    """

    sample: Sample
    sample_physical: Sample
    excluded: int
    replicates: int
    t: float
    n: int


def _one_marginal(params, n, K_window, cutoff, speed, horizon, rep_stream):
    need = recommended_window(params, K_window, n)
    env = generate_environment(params, need, rep_stream.child(0))
    net = build_truncated_network(env, K_window, n, cutoff=cutoff)
    chain = chain_from_network(net, speed)
    boundary = np.array([0, chain.size - 1])
    traj = simulate(chain, start=net.row(0), stream=rep_stream.child(1), t_max=horizon, hit=boundary, record="none")
    touched = traj.reason == "hit"
    idx = net.index(traj.final_site)
    return idx / n, net.coords[traj.final_site] / n, touched


def marginal_samples(
    params: ModelParams,
    n: int,
    t: float,
    replicates: int,
    stream: RngStream,
    speed: str = "constant",
    K_window: int = 4,
    cutoff: int | None = None,
    jobs: int = 1,
    time_exponent: float | None = None,
) -> MarginalResult:
    """I.i.d. annealed samples of the rescaled walk position at rescaled time t.

    Each replicate draws a fresh environment (stream.child(r)), builds the
    collapsed window network at scale n with half-width K_window, and runs
    the walk to the horizon t * (time scale).  Paths that reach the window
    boundary are flagged and excluded from the samples, with the count
    reported; pick K_window so the exclusion rate stays small.
    """
    if replicates < 100:
        raise ParameterError("need at least 100 replicates for an annealed marginal")
    horizon = t * walk_time_scale(params, n, speed, time_exponent)
    args = [(params, n, K_window, cutoff, speed, horizon, stream.child(r)) for r in range(replicates)]
    if jobs > 1:
        from joblib import Parallel, delayed

        rows = Parallel(n_jobs=jobs, batch_size=8)(delayed(_one_marginal)(*a) for a in args)
    else:
        rows = [_one_marginal(*a) for a in args]
    vals = np.array([r[0] for r in rows])
    phys = np.array([r[1] for r in rows])
    good = ~np.array([r[2] for r in rows])
    prov = {
        "experiment": "walk-marginal",
        "params": params.to_dict(),
        "n": int(n),
        "t": float(t),
        "speed": speed,
        "K_window": int(K_window),
        "replicates": int(replicates),
        "excluded": int((~good).sum()),
        "seed": stream.to_dict(),
        "coordinate": "site-index / n",
    }
    prov_phys = dict(prov, coordinate="position / n")
    return MarginalResult(
        sample=Sample(values=vals[good], provenance=prov),
        sample_physical=Sample(values=phys[good], provenance=prov_phys),
        excluded=int((~good).sum()),
        replicates=int(replicates),
        t=float(t),
        n=int(n),
    )
