"""Conductance networks built over an environment.

The central object is the truncated network on the index window
[-Kn, Kn]: all sites beyond the window edges are collapsed into two
boundary nodes whose edge weights are the exact sums of the individual
weights (parallel law).  Interior pairwise weights follow the hopping
rule exp(-|dx| - beta*U + lam'*(x_i + x_j)); an index-separation cutoff
turns the dense matrix into a banded one, with a computable upper bound
on everything dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .env import Environment, interaction_value
from .errors import DomainError, ParameterError, PreconditionError

__all__ = [
    "UNSCALED",
    "bias_coefficient",
    "conductance",
    "TruncatedNetwork",
    "MeasureReport",
    "build_truncated_network",
    "default_cutoff",
    "recommended_window",
    "invariant_mass",
    "measure_interval",
    "export_network",
]

# Marker for "apply lam without rescaling" (studies at fixed bias).
UNSCALED = math.inf

# exp(x) underflows to exactly 0.0 below this; used to skip zero work.
_EXP_FLOOR = -746.0


def bias_coefficient(lam: float, bias_scale) -> float:
    """Field coefficient entering an edge exponent.

    An integer ``bias_scale`` n means the weak-bias regime lam/n; the
    UNSCALED marker applies lam as given.
    """
    if bias_scale == UNSCALED:
        lam_s = float(lam)
    else:
        if not isinstance(bias_scale, (int, np.integer)) or bias_scale < 1:
            raise ParameterError(f"bias_scale must be a positive integer or UNSCALED, got {bias_scale!r}")
        lam_s = float(lam) / float(bias_scale)
    if lam_s >= 1.0:
        raise ParameterError(f"scaled bias must stay below 1 for summable edge weights, got {lam_s}")
    return lam_s


def conductance(env: Environment, i: int, j: int, bias_scale) -> float:
    """Edge weight between sites i and j of the environment."""
    if i == j:
        raise DomainError("conductance needs two distinct sites")
    lam_s = bias_coefficient(env.params.lam, bias_scale)
    xi = env.position(i)
    xj = env.position(j)
    expo = -abs(xi - xj) + lam_s * (xi + xj)
    if env.params.beta != 0.0:
        expo -= env.params.beta * interaction_value(env.params, env.energy[env.row(i)], env.energy[env.row(j)])
    return float(np.exp(expo))


def _diag_conductance(pos, energy, params, lam_s, d):
    """Vector of weights between rows r and r+d of the given window arrays."""
    expo = -(pos[d:] - pos[:-d]) + lam_s * (pos[d:] + pos[:-d])
    if params.beta != 0.0:
        expo = expo - params.beta * interaction_value(params, energy[:-d], energy[d:])
    return np.exp(expo)


def default_cutoff(params, n: int) -> int:
    """Banded-cutoff default: wide enough that dropped weights are ~e^{-60}."""
    return max(60, int(math.ceil((8.0 / params.rho) * math.log(max(n, 2)))))


def recommended_window(params, K: int, n: int) -> int:
    """Window half-width N that makes boundary sums exact to double precision."""
    mean_gap = 1.0 / params.rho if params.gap_law == "exponential" else 0.5 * (params.gap_args[0] + params.gap_args[1])
    m = int(math.ceil(760.0 / mean_gap))
    m += int(math.ceil(6.0 * math.sqrt(m))) + 16
    return K * n + m


def _boundary_reach(pos, lam_s, from_right: bool):
    """Rows whose weight to the far window edge has not underflowed."""
    tilt = max(0.0, 2.0 * lam_s * float(np.max(np.abs(pos)))) if lam_s else 0.0
    need = (-_EXP_FLOOR + tilt + 16.0) / max(1.0 - abs(lam_s), 1e-12)
    edge = pos[-1] if from_right else pos[0]
    dist = np.abs(edge - pos)
    return dist <= need


def _boundary_sums(env: Environment, Kn: int, lam_s: float):
    """Collapsed-edge weights to the two boundary nodes, plus the corner term.

    Sums run over every environment site at or beyond the window edge; sites
    outside the environment window are covered by the reported tail bound.
    Entries that underflow double precision are skipped (they are exactly 0.0
    at this precision).
    """
    params = env.params
    size = 2 * Kn + 1
    rows = np.arange(env.N - Kn, env.N + Kn + 1)  # env rows of the window
    pos = env.omega[rows]
    ene = env.energy[rows]
    right = np.zeros(size)
    left = np.zeros(size)

    beyond_r = slice(env.N + Kn, env.size)  # env rows k >= Kn
    beyond_l = slice(0, env.N - Kn + 1)  # env rows k <= -Kn
    pos_br = env.omega[beyond_r]
    ene_br = env.energy[beyond_r]
    pos_bl = env.omega[beyond_l]
    ene_bl = env.energy[beyond_l]

    live_r = np.nonzero(_boundary_reach(pos, lam_s, from_right=True))[0]
    for r in live_r:
        if r == size - 1 or r == 0:
            continue
        expo = -(pos_br - pos[r]) + lam_s * (pos_br + pos[r])
        if params.beta != 0.0:
            expo = expo - params.beta * interaction_value(params, ene[r], ene_br)
        right[r] = np.exp(expo).sum()
    live_l = np.nonzero(_boundary_reach(pos, lam_s, from_right=False))[0]
    for r in live_l:
        if r == 0 or r == size - 1:
            continue
        expo = -(pos[r] - pos_bl) + lam_s * (pos[r] + pos_bl)
        if params.beta != 0.0:
            expo = expo - params.beta * interaction_value(params, ene[r], ene_bl)
        left[r] = np.exp(expo).sum()

    corner = 0.0
    if pos[-1] - pos[0] < -_EXP_FLOOR:
        expo = (
            -(pos_br[:, None] - pos_bl[None, :])
            + lam_s * (pos_br[:, None] + pos_bl[None, :])
        )
        if params.beta != 0.0:
            expo = expo - params.beta * interaction_value(params, ene_br[:, None], ene_bl[None, :])
        corner = float(np.exp(expo).sum())

    # Tail beyond the environment window, estimated from the observed
    # minimal gap as a geometric series.
    gmin = float(np.min(env.gaps))
    q = math.exp(-(1.0 - abs(lam_s)) * max(gmin, 1e-300))
    q = min(q, 1.0 - 1e-16)
    tilt = max(0.0, 2.0 * lam_s * float(np.max(np.abs(env.omega))))
    tail_r = math.exp(min(-(1.0 - lam_s) * (env.omega[-1] - pos[-1]) + tilt, 700.0)) * q / (1.0 - q)
    tail_l = math.exp(min(-(1.0 - lam_s) * (pos[0] - env.omega[0]) + tilt, 700.0)) * q / (1.0 - q)
    # every window site communicates with the unseen region through the edge
    tail_bound = (tail_r + tail_l) * size * math.exp(min(tilt, 700.0))
    return left, right, corner, tail_bound


@dataclass
class MeasureReport:
    """Invariant mass of an index interval [a*n, b*n], raw and divided by n."""

    a: float
    b: float
    raw_mass: float
    normalized_mass: float
    n: int
    site_count: int


@dataclass
class TruncatedNetwork:
    """Conductance network on the collapsed window [-Kn, Kn].

    Rows are ordered by model index; ``row(i) = i + Kn``.  ``masses`` holds
    the full row sums (the stationary weights).  The sparse matrix is built
    lazily because mass-only uses (large n) never need it.
    """

    env: Environment
    K: int
    n: int
    cutoff: int
    lam_scaled: float
    masses: np.ndarray
    boundary_left: np.ndarray
    boundary_right: np.ndarray
    corner: float
    dropped_mass_bound: float
    boundary_tail_bound: float
    _matrix: sp.csr_matrix | None = field(default=None, repr=False)

    @property
    def Kn(self) -> int:
        return self.K * self.n

    @property
    def size(self) -> int:
        return 2 * self.Kn + 1

    def row(self, i: int) -> int:
        if not -self.Kn <= i <= self.Kn:
            raise DomainError(f"index {i} outside network window [-{self.Kn}, {self.Kn}]")
        return int(i) + self.Kn

    def index(self, row: int) -> int:
        return int(row) - self.Kn

    @property
    def coords(self) -> np.ndarray:
        rows = np.arange(self.env.N - self.Kn, self.env.N + self.Kn + 1)
        return self.env.omega[rows]

    @property
    def conductance_matrix(self) -> sp.csr_matrix:
        if self._matrix is None:
            self._matrix = self._build_matrix()
        return self._matrix

    def _build_matrix(self) -> sp.csr_matrix:
        Kn, size = self.Kn, self.size
        params = self.env.params
        pos = self.coords
        ene = self.env.energy[np.arange(self.env.N - Kn, self.env.N + Kn + 1)]
        D = min(self.cutoff, 2 * Kn)
        rows, cols, vals = [], [], []
        interior = slice(1, size - 1)
        pi, ei = pos[interior], ene[interior]
        gmin = float(np.min(np.diff(pos))) if size > 1 else 1.0
        tilt = max(0.0, 2.0 * self.lam_scaled * float(np.max(np.abs(pos))))
        for d in range(1, min(D, size - 3) + 1):
            if -d * gmin * (1.0 - abs(self.lam_scaled)) + tilt < _EXP_FLOOR:
                break
            c = _diag_conductance(pi, ei, params, self.lam_scaled, d)
            r = np.arange(1, size - 1 - d)
            rows.append(r)
            cols.append(r + d)
            vals.append(c)
        nz = np.nonzero(self.boundary_left)[0]
        rows.append(np.zeros(len(nz), dtype=int))
        cols.append(nz)
        vals.append(self.boundary_left[nz])
        nz = np.nonzero(self.boundary_right)[0]
        rows.append(nz)
        cols.append(np.full(len(nz), size - 1, dtype=int))
        vals.append(self.boundary_right[nz])
        if self.corner > 0.0:
            rows.append(np.array([0]))
            cols.append(np.array([size - 1]))
            vals.append(np.array([self.corner]))
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        v = np.concatenate(vals)
        mat = sp.coo_matrix((np.concatenate([v, v]), (np.concatenate([r, c]), np.concatenate([c, r]))), shape=(size, size))
        return mat.tocsr()


def build_truncated_network(env: Environment, K: int, n: int, cutoff: int | None = None, bias_scale=None) -> TruncatedNetwork:
    """Assemble the collapsed window network at scale n.

    The bias defaults to the weak regime lam/n; pass ``bias_scale=UNSCALED``
    for fixed-bias studies.  ``cutoff`` is the maximal index separation kept
    on interior pairs (boundary sums are always exact over the environment
    window); the dropped interior mass is bounded by a geometric series on
    the observed gaps and attached to the build.
    """
    if not isinstance(K, (int, np.integer)) or K < 1:
        raise ParameterError(f"K must be a positive integer, got {K!r}")
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ParameterError(f"n must be a positive integer, got {n!r}")
    Kn = int(K) * int(n)
    if env.N < Kn:
        raise PreconditionError(
            f"environment window N={env.N} smaller than Kn={Kn}; "
            f"regenerate with N >= {recommended_window(env.params, K, n)}",
            required=recommended_window(env.params, K, n),
        )
    if cutoff is None:
        cutoff = default_cutoff(env.params, n)
    if cutoff < 1:
        raise ParameterError("cutoff must be at least 1")
    lam_s = bias_coefficient(env.params.lam, int(n) if bias_scale is None else bias_scale)

    size = 2 * Kn + 1
    params = env.params
    rows = np.arange(env.N - Kn, env.N + Kn + 1)
    pos = env.omega[rows]
    ene = env.energy[rows]
    masses = np.zeros(size)
    D = min(int(cutoff), 2 * Kn)
    gmin = float(np.min(np.diff(pos))) if size > 1 else 1.0
    tilt = max(0.0, 2.0 * lam_s * float(np.max(np.abs(pos))))
    pi, ei = pos[1 : size - 1], ene[1 : size - 1]
    m_int = np.zeros(size - 2)
    for d in range(1, min(D, size - 3) + 1):
        if -d * gmin * (1.0 - abs(lam_s)) + tilt < _EXP_FLOOR:
            break
        c = _diag_conductance(pi, ei, params, lam_s, d)
        m_int[: size - 2 - d] += c
        m_int[d:] += c
    left, right, corner, tail_bound = _boundary_sums(env, Kn, lam_s)
    masses[1 : size - 1] = m_int + left[1 : size - 1] + right[1 : size - 1]
    masses[0] = left.sum() + corner
    masses[size - 1] = right.sum() + corner

    # Upper bound on the interior mass dropped by the cutoff: for each row,
    # the first dropped weight times the geometric tail at the minimal gap.
    dropped = 0.0
    if D < 2 * Kn - 2:
        denom = -math.expm1(-(1.0 - abs(lam_s)) * gmin)
        first = _diag_conductance(pi, ei, params, lam_s, D + 1)
        ebeta = math.exp(params.beta) if params.beta else 1.0
        dropped = float(first.sum()) * ebeta / max(denom, 1e-300)
    return TruncatedNetwork(
        env=env,
        K=int(K),
        n=int(n),
        cutoff=int(cutoff),
        lam_scaled=lam_s,
        masses=masses,
        boundary_left=left,
        boundary_right=right,
        corner=corner,
        dropped_mass_bound=dropped,
        boundary_tail_bound=tail_bound,
    )


def invariant_mass(net: TruncatedNetwork, i: int) -> float:
    """Row sum of the network weights at model index i."""
    return float(net.masses[net.row(i)])


def measure_interval(net: TruncatedNetwork, a: float, b: float) -> MeasureReport:
    """Invariant mass of the index interval [a*n, b*n]."""
    if not a < b:
        raise DomainError(f"need a < b, got a={a}, b={b}")
    if a < -net.K or b > net.K:
        raise DomainError(f"interval [{a}, {b}] outside [-K, K] = [{-net.K}, {net.K}]")
    i0 = int(math.ceil(a * net.n - 1e-9))
    i1 = int(math.floor(b * net.n + 1e-9))
    i0 = max(i0, -net.Kn)
    i1 = min(i1, net.Kn)
    raw = float(net.masses[net.row(i0) : net.row(i1) + 1].sum())
    return MeasureReport(a=float(a), b=float(b), raw_mass=raw, normalized_mass=raw / net.n, n=net.n, site_count=i1 - i0 + 1)


def estimate_site_mass_moment(params, samples: int, stream, power: float = 1.0, block_size: int = 1 << 14) -> dict:
    """Monte Carlo estimate of E[(row mass at the origin)^power] at zero bias.

    The origin's row mass is the sum of its edge weights to every other
    site; the two sides are sampled as geometric-decay series truncated at
    double precision.  power=1 gives the invariant-measure density constant,
    fractional powers feed the trap-model limit measure.
    """
    if samples < 1000:
        raise ParameterError("need at least 1e3 samples")
    if params.gap_law != "exponential":
        raise ParameterError("mass-moment sampler assumes exponential gaps")
    rho, beta = params.rho, params.beta
    m_sites = 16
    while m_sites - 5.0 * math.sqrt(m_sites) < 25.0 * rho:
        m_sites += 8
    rng = stream.generator()
    acc = 0.0
    acc2 = 0.0
    done = 0
    while done < samples:
        b = min(block_size, samples - done)
        wr = np.exp(-np.cumsum(rng.exponential(1.0 / rho, size=(b, m_sites)), axis=1))
        wl = np.exp(-np.cumsum(rng.exponential(1.0 / rho, size=(b, m_sites)), axis=1))
        if beta == 0.0:
            c0 = wr.sum(axis=1) + wl.sum(axis=1)
        else:
            e0 = rng.uniform(0.0, 1.0, size=(b, 1))
            er = rng.uniform(0.0, 1.0, size=(b, m_sites))
            el = rng.uniform(0.0, 1.0, size=(b, m_sites))
            c0 = (wr * np.exp(-beta * np.minimum(np.abs(e0 - er), 1.0))).sum(axis=1)
            c0 += (wl * np.exp(-beta * np.minimum(np.abs(e0 - el), 1.0))).sum(axis=1)
        v = c0**power
        acc += float(v.sum())
        acc2 += float((v**2).sum())
        done += b
    mean = acc / samples
    var = max(acc2 / samples - mean * mean, 0.0)
    return {"estimate": mean, "stderr": math.sqrt(var / samples), "samples": samples, "power": power}


def export_network(net: TruncatedNetwork, path_prefix: str) -> tuple[str, str]:
    """Write the network as a sparse triplet CSV plus a JSON header."""
    import json

    mat = net.conductance_matrix.tocoo()
    csv_path = f"{path_prefix}.csv"
    json_path = f"{path_prefix}.json"
    with open(csv_path, "w") as fh:
        fh.write("i,j,conductance\n")
        order = np.lexsort((mat.col, mat.row))
        for k in order:
            i, j = int(mat.row[k]), int(mat.col[k])
            if i < j:
                fh.write(f"{net.index(i)},{net.index(j)},{format(float(mat.data[k]), '.17g')}\n")
    header = {
        "K": net.K,
        "n": net.n,
        "cutoff": net.cutoff,
        "lam_scaled": net.lam_scaled,
        "dropped_mass_bound": net.dropped_mass_bound,
        "boundary_tail_bound": net.boundary_tail_bound,
        "size": net.size,
    }
    with open(json_path, "w") as fh:
        json.dump(header, fh, sort_keys=True)
        fh.write("\n")
    return csv_path, json_path
