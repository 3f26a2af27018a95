"""Effective resistance: exact Laplacian solves and the banded approximation
quantities (big edges, bridge corrections, upper/lower resistance bounds).

The exact solver grounds one terminal set, solves the harmonic-extension
linear system, and reads the Dirichlet energy of the minimiser; direct
factorisations are used up to ~2e4 nodes and preconditioned CG beyond.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .env import Environment, interaction_value
from .errors import DomainError, ParameterError, PreconditionError, ProvenanceError
from .network import _EXP_FLOOR, TruncatedNetwork, _boundary_sums, bias_coefficient

__all__ = [
    "effective_resistance",
    "dirichlet_energy",
    "resistance_from_origin",
    "ResistanceProfile",
    "resistance_profile",
    "profile_distortion",
    "bridge_correction",
    "bridge_correction_upper",
    "bridge_correction_lower",
    "CorrectionBundle",
    "correction_bundle",
    "resistance_upper_bound",
    "resistance_lower_bound",
    "sandwich_lower",
    "estimate_tail_constant",
    "commute_time_check",
]

_DENSE_LIMIT = 2600
_DIRECT_LIMIT = 60_000


def _as_matrix(obj):
    if isinstance(obj, TruncatedNetwork):
        return obj.conductance_matrix
    if hasattr(obj, "conductances"):
        return obj.conductances
    if sp.issparse(obj):
        return obj.tocsr()
    return sp.csr_matrix(np.asarray(obj, dtype=float))


def _rows(obj, nodes):
    if isinstance(obj, TruncatedNetwork):
        return np.array(sorted(obj.row(i) for i in nodes), dtype=int)
    return np.array(sorted(int(i) for i in nodes), dtype=int)


def _laplacian(C: sp.csr_matrix) -> sp.csr_matrix:
    deg = np.asarray(C.sum(axis=1)).ravel()
    return (sp.diags(deg) - C).tocsr()


def dirichlet_energy(C, f: np.ndarray) -> float:
    """(1/2) sum_ij c_ij (f_i - f_j)^2 evaluated through the Laplacian."""
    C = _as_matrix(C)
    L = _laplacian(C)
    return float(f @ (L @ f))


def _banded_plus_dense_order(L_csr):
    """Ordering that keeps a banded factor: a few dense rows (collapsed
    boundary nodes) go last, the banded bulk keeps its natural order.
    Returns None when the matrix does not have that shape."""
    m = L_csr.shape[0]
    nnz_row = np.diff(L_csr.indptr)
    cap = 8 * max(float(np.median(nnz_row)), 1.0)
    dense = np.nonzero(nnz_row > cap)[0]
    if not 0 < len(dense) <= 8:
        return None
    coo = L_csr.tocoo()
    is_dense = np.zeros(m, dtype=bool)
    is_dense[dense] = True
    in_band = ~(is_dense[coo.row] | is_dense[coo.col])
    if not np.any(in_band):
        return None
    bw = int(np.max(np.abs(coo.row[in_band] - coo.col[in_band])))
    if bw > 1024:
        return None
    return np.concatenate([np.setdiff1d(np.arange(m), dense), dense])


def _solve_spd(L_uu, rhs):
    """Solve the grounded (positive definite) system, by size-appropriate means."""
    m = L_uu.shape[0]
    if rhs.ndim == 1:
        rhs = rhs[:, None]
    if m <= _DENSE_LIMIT or (L_uu.nnz / max(m * m, 1)) > 0.25:
        return np.linalg.solve(L_uu.toarray(), rhs)
    if m <= _DIRECT_LIMIT:
        L_csr = L_uu.tocsr()
        order = _banded_plus_dense_order(L_csr)
        if order is not None:
            lu = spla.splu(L_csr[order][:, order].tocsc(), permc_spec="NATURAL")
            sol = lu.solve(rhs[order])
            out = np.empty_like(sol)
            out[order] = sol
            return out
        lu = spla.splu(L_uu.tocsc(), permc_spec="MMD_AT_PLUS_A")
        return lu.solve(rhs)
    diag = L_uu.diagonal()
    M = sp.diags(1.0 / diag)
    out = np.empty_like(rhs)
    for k in range(rhs.shape[1]):
        x, info = spla.cg(L_uu, rhs[:, k], M=M, rtol=1e-10, atol=0.0, maxiter=20 * m)
        if info != 0:
            raise RuntimeError(f"conjugate gradients failed to converge (info={info})")
        out[:, k] = x
    return out


def effective_resistance(net, A, B, return_potential: bool = False):
    """Effective resistance between disjoint node sets A and B.

    Grounds A at potential 0, pins B at 1, solves for the harmonic interior
    potential and returns 1 / (Dirichlet energy).  Disconnected terminals
    yield math.inf.  With ``return_potential`` the minimising potential is
    returned as well (used by the variational cross-checks).
    """
    C = _as_matrix(net)
    size = C.shape[0]
    rows_a = _rows(net, A)
    rows_b = _rows(net, B)
    if len(rows_a) == 0 or len(rows_b) == 0:
        raise DomainError("terminal sets must be nonempty")
    if np.intersect1d(rows_a, rows_b).size:
        raise DomainError("terminal sets must be disjoint")
    if rows_a.max() >= size or rows_b.max() >= size or rows_a.min() < 0 or rows_b.min() < 0:
        raise DomainError("terminal set outside the network")
    f = np.zeros(size)
    f[rows_b] = 1.0
    fixed = np.zeros(size, dtype=bool)
    fixed[rows_a] = True
    fixed[rows_b] = True
    free = np.nonzero(~fixed)[0]
    if free.size:
        L = _laplacian(C)
        L_uu = L[free][:, free]
        rhs = np.asarray(C[free][:, rows_b].sum(axis=1)).ravel()
        try:
            f[free] = _solve_spd(L_uu.tocsr(), rhs).ravel()
        except np.linalg.LinAlgError:
            return (math.inf, f) if return_potential else math.inf
    energy = dirichlet_energy(C, f)
    R = math.inf if energy <= 0.0 else 1.0 / energy
    return (R, f) if return_potential else R


def resistance_from_origin(net, targets) -> np.ndarray:
    """R(node_0, node_t) for many targets via one grounded factorisation.

    Grounding the origin makes R(0, t) the (t, t) entry of the inverse of
    the reduced Laplacian, so one factorisation serves every target.
    """
    C = _as_matrix(net)
    size = C.shape[0]
    g = net.row(0) if isinstance(net, TruncatedNetwork) else 0
    t_rows = np.array([net.row(t) if isinstance(net, TruncatedNetwork) else int(t) for t in targets], dtype=int)
    keep = np.concatenate([np.arange(g), np.arange(g + 1, size)])
    L = _laplacian(C)
    L_red = L[keep][:, keep].tocsr()
    pos = np.searchsorted(keep, t_rows)
    out = np.zeros(len(t_rows))
    nontrivial = t_rows != g
    if np.any(nontrivial):
        rhs = np.zeros((size - 1, int(nontrivial.sum())))
        cols = np.nonzero(nontrivial)[0]
        for k, c in enumerate(cols):
            rhs[pos[c], k] = 1.0
        X = _solve_spd(L_red, rhs)
        for k, c in enumerate(cols):
            out[c] = X[pos[c], k]
    return out


@dataclass
class ResistanceProfile:
    """Rescaled resistance n^{-1/rho} * sign(u) * R(node_0, node_{floor(un)})."""

    n: int
    K: int
    rho: float
    grid: np.ndarray
    values: np.ndarray
    raw: np.ndarray
    indices: np.ndarray
    monotone: bool


def resistance_profile(net: TruncatedNetwork, grid_step: float) -> ResistanceProfile:
    if grid_step * net.n < 1:
        raise ParameterError("grid_step * n must be at least 1")
    K, n = net.K, net.n
    m = int(round(2 * K / grid_step))
    grid = -K + np.arange(m + 1) * (2 * K / m)
    idx = np.clip(np.floor(grid * n + 1e-9).astype(int), -net.Kn, net.Kn)
    raw = resistance_from_origin(net, idx)
    rho = net.env.params.rho
    values = n ** (-1.0 / rho) * np.sign(idx) * raw
    monotone = bool(np.all(np.diff(values) >= -1e-12 * max(1.0, np.abs(values).max())))
    return ResistanceProfile(n=n, K=K, rho=rho, grid=grid, values=values, raw=raw, indices=idx, monotone=monotone)


def profile_distortion(net: TruncatedNetwork, pairs) -> float:
    """sup over the given (i, j) pairs of the additivity defect of R from 0,
    rescaled by n^{-1/rho}.  Pairs are grouped by left endpoint so each group
    costs one factorisation.
    """
    rho = net.env.params.rho
    scale = net.n ** (-1.0 / rho)
    by_left = {}
    for i, j in pairs:
        by_left.setdefault(int(i), []).append(int(j))
    targets = sorted({j for _, js in by_left.items() for j in js} | set(by_left) | {0})
    from_origin = dict(zip(targets, resistance_from_origin(net, targets)))
    worst = 0.0
    C = net.conductance_matrix
    size = C.shape[0]
    L = _laplacian(C)
    for i, js in by_left.items():
        g = net.row(i)
        keep = np.concatenate([np.arange(g), np.arange(g + 1, size)])
        L_red = L[keep][:, keep].tocsr()
        rows_j = np.array([net.row(j) for j in js])
        posj = np.searchsorted(keep, rows_j)
        rhs = np.zeros((size - 1, len(js)))
        for k, p in enumerate(posj):
            rhs[p, k] = 1.0
        X = _solve_spd(L_red, rhs)
        for k, j in enumerate(js):
            r_ij = X[posj[k], k]
            chained = np.sign(j) * from_origin[j] - np.sign(i) * from_origin[i]
            worst = max(worst, scale * abs(r_ij - chained))
    return worst


# --- bridge corrections ---------------------------------------------------


def _one_sided_weights(env: Environment, i: int, lam_s: float, side: str, rtol: float):
    """Decaying weight sequences to the left of site i / right of site i+1."""
    row = env.row(i)
    if side == "left":
        # distances omega_i - omega_{i-m}, m = 0, 1, ...
        pos = env.omega[: row + 1][::-1]
        dist = pos[0] - pos
        w = np.exp(-(1.0 + lam_s) * dist)
        rows = row - np.arange(len(pos))
    else:
        pos = env.omega[row + 1 :]
        dist = pos - pos[0]
        w = np.exp(-(1.0 - lam_s) * dist)
        rows = row + 1 + np.arange(len(pos))
    keep = w >= rtol
    if not np.all(keep):
        stop = int(np.argmin(keep))  # first False; weights are decreasing
        w = w[:stop]
        rows = rows[:stop]
    return w, rows


def bridge_correction(env: Environment, i: int, bias_scale, rtol: float = 1e-18) -> float:
    """Multiplicative correction at edge (i, i+1) for paths that bridge it.

    Inverse of the double sum of weights over site pairs straddling the
    edge; the sums are truncated adaptively once weights fall below ``rtol``
    relative to the leading term (well under any tolerance used here).
    """
    params = env.params
    lam_s = bias_coefficient(params.lam, bias_scale)
    if not -env.N <= i < env.N:
        raise DomainError(f"edge ({i}, {i+1}) outside environment window")
    wl, rows_l = _one_sided_weights(env, i, lam_s, "left", rtol)
    wr, rows_r = _one_sided_weights(env, i, lam_s, "right", rtol)
    if params.beta == 0.0:
        total = wl.sum() * wr.sum()
    else:
        u = interaction_value(params, env.energy[rows_l][:, None], env.energy[rows_r][None, :])
        total = float(np.einsum("l,r,lr->", wl, wr, np.exp(-params.beta * u)))
    return 1.0 / total


def _upper_radius(params, n: int, a_coeff: float | None) -> int:
    a = (0.2 / params.rho) if a_coeff is None else float(a_coeff)
    return int(math.floor(a * math.log(max(n, 2))))


def bridge_correction_upper(env: Environment, i: int, n: int, a_coeff: float | None = None) -> float:
    """Windowed, regularised over-estimate of the bridge correction.

    Sums (r + e^{x})^{-1} over a log-sized window on each side, where the
    regulariser r = n^{-1/(8 rho)} absorbs the detour resistance through the
    window edges.
    """
    params = env.params
    lam_s = bias_coefficient(params.lam, int(n))
    a_n = _upper_radius(params, n, a_coeff)
    if not (-env.N + a_n <= i and i + 1 + a_n <= env.N):
        raise PreconditionError(f"window too small for correction radius {a_n} at edge {i}")
    reg = float(n) ** (-1.0 / (8.0 * params.rho))
    row = env.row(i)
    j = np.arange(a_n + 1)
    left = (1.0 + lam_s) * (env.omega[row] - env.omega[row - j])
    right = (1.0 - lam_s) * (env.omega[row + 1 + j] - env.omega[row + 1])
    expo = left[:, None] + right[None, :]
    if params.beta != 0.0:
        u = interaction_value(params, env.energy[row - j][:, None], env.energy[row + 1 + j][None, :])
        expo = expo + params.beta * u
    total = float(np.sum(1.0 / (reg + np.exp(expo))))
    return 1.0 / total


def bridge_correction_lower(env: Environment, i: int, n: int, b_n: int | None = None) -> float:
    """Polynomial-window under-window variant: pairs at index span <= b_n."""
    params = env.params
    lam_s = bias_coefficient(params.lam, int(n))
    if b_n is None:
        b_n = int(math.floor(float(n) ** 0.25))
    b_n = max(int(b_n), 1)
    if not (-env.N + b_n <= i and i + 1 + b_n <= env.N):
        raise PreconditionError(f"window too small for correction radius {b_n} at edge {i}")
    row = env.row(i)
    m = np.arange(b_n)
    left = (1.0 + lam_s) * (env.omega[row] - env.omega[row - m])
    right = (1.0 - lam_s) * (env.omega[row + 1 + m] - env.omega[row + 1])
    expo = left[:, None] + right[None, :]
    if params.beta != 0.0:
        u = interaction_value(params, env.energy[row - m][:, None], env.energy[row + 1 + m][None, :])
        expo = expo + params.beta * u
    # pairs with total span m + m' <= b_n - 1
    mask = (m[:, None] + m[None, :]) <= (b_n - 1)
    total = float(np.exp(-expo[mask]).sum())
    return 1.0 / total


@dataclass
class CorrectionBundle:
    """Everything the banded resistance bounds need at scale n on [-Kn, Kn]."""

    env: Environment
    K: int
    n: int
    a_coeff: float
    a_n: int
    b_n: int
    lam_scaled: float
    big_edges: np.ndarray
    chi_upper: np.ndarray
    chi_lower: np.ndarray
    event_upper: bool
    event_lower: bool
    long_edge_mass: float
    nn_resistance: np.ndarray = field(repr=False)  # r^{beta, lam'}(k, k+1), k = -Kn..Kn-1
    nn_resistance_flat: np.ndarray = field(repr=False)  # r^{0, lam'}(k, k+1)
    big_mask: np.ndarray = field(repr=False)

    @property
    def Kn(self) -> int:
        return self.K * self.n

    def edge_slot(self, k: int) -> int:
        if not -self.Kn <= k < self.Kn:
            raise DomainError(f"edge {k} outside [-Kn, Kn)")
        return int(k) + self.Kn


def _long_edge_mass(env: Environment, K: int, n: int, b_n: int, lam_s: float) -> float:
    """Total weight on pairs further apart than b_n, boundary nodes included."""
    Kn = K * n
    rows = np.arange(env.N - Kn, env.N + Kn + 1)
    pos = env.omega[rows]
    ene = env.energy[rows]
    params = env.params
    size = 2 * Kn + 1
    tilt = max(0.0, 2.0 * lam_s * float(np.max(np.abs(pos))))
    total = 0.0
    # Interior-interior pairs, one index-separation diagonal at a time.  The
    # minimal distance at separation d is nondecreasing in d, so once every
    # weight on a diagonal underflows, all later diagonals do too.
    pi, ei = pos[1 : size - 1], ene[1 : size - 1]
    for d in range(b_n + 1, size - 2):
        dist = pi[d:] - pi[:-d]
        if float(dist.min()) * (1.0 - abs(lam_s)) - tilt > -_EXP_FLOOR:
            break
        expo = -dist + lam_s * (pi[d:] + pi[:-d])
        if params.beta != 0.0:
            expo = expo - params.beta * interaction_value(params, ei[:-d], ei[d:])
        total += float(np.exp(expo).sum())
    # pairs with a collapsed boundary node
    left, right, corner, _ = _boundary_sums(env, Kn, lam_s)
    interior_rows = np.arange(1, size - 1)
    sep_left = interior_rows  # |i - (-Kn)| in row units
    sep_right = size - 1 - interior_rows
    total += float(left[interior_rows][sep_left > b_n].sum())
    total += float(right[interior_rows][sep_right > b_n].sum())
    total += corner  # separation 2Kn is always > b_n
    return total


def correction_bundle(env: Environment, K: int, n: int, a_coeff: float | None = None) -> CorrectionBundle:
    """Identify big edges and evaluate the correction machinery at scale n.

    Also evaluates the two admissibility events: the upper one requires big
    edges separated by more than 2 a_n, clear of the window edges, with
    flanking gap sums at most log(n)/(2 rho); the lower one requires the same
    separation/clearance at radius b_n.
    """
    params = env.params
    Kn = K * n
    a_n = _upper_radius(params, n, a_coeff)
    b_n = max(int(math.floor(float(n) ** 0.25)), 1)
    need = Kn + max(a_n, b_n) + 1
    if env.N < need:
        raise PreconditionError(f"environment window N={env.N} too small; need N >= {need}", required=need)
    lam_s = bias_coefficient(params.lam, int(n))

    rows = np.arange(env.N - Kn, env.N + Kn + 1)
    pos = env.omega[rows]
    gaps = np.diff(pos)  # gap k <-> edge (k, k+1), k = -Kn..Kn-1
    threshold = (3.0 / (4.0 * params.rho)) * math.log(n)
    big_slots = np.nonzero(gaps >= threshold)[0]
    big_edges = big_slots - Kn

    # nearest-neighbour resistances with and without the energy factor
    expo = gaps - lam_s * (pos[1:] + pos[:-1])
    nn_flat = np.exp(expo)
    if params.beta != 0.0:
        ene = env.energy[rows]
        u = interaction_value(params, ene[:-1], ene[1:])
        nn_beta = np.exp(expo + params.beta * u)
    else:
        nn_beta = nn_flat.copy()

    chi_u = np.array([bridge_correction_upper(env, int(k), n, a_coeff) for k in big_edges])
    chi_l = np.array([bridge_correction_lower(env, int(k), n, b_n) for k in big_edges])

    log_gap_cap = math.log(n) / (2.0 * params.rho)

    def _admissible(radius: int, check_flanks: bool) -> bool:
        if big_slots.size == 0:
            return True
        if big_slots.min() <= radius or big_slots.max() >= 2 * Kn - radius - 1:
            return False
        if big_slots.size > 1 and np.min(np.diff(big_slots)) <= 2 * radius:
            return False
        if check_flanks:
            for k in big_edges:
                row = env.row(int(k))
                if env.omega[row] - env.omega[row - a_n] > log_gap_cap:
                    return False
                if env.omega[row + 1 + a_n] - env.omega[row + 1] > log_gap_cap:
                    return False
        return True

    event_upper = _admissible(a_n, check_flanks=True)
    event_lower = _admissible(b_n, check_flanks=False)
    e_mass = _long_edge_mass(env, K, n, b_n, lam_s)

    big_mask = np.zeros(2 * Kn, dtype=bool)
    big_mask[big_slots] = True
    return CorrectionBundle(
        env=env,
        K=K,
        n=n,
        a_coeff=(0.2 / params.rho) if a_coeff is None else float(a_coeff),
        a_n=a_n,
        b_n=b_n,
        lam_scaled=lam_s,
        big_edges=big_edges,
        chi_upper=chi_u,
        chi_lower=chi_l,
        event_upper=event_upper,
        event_lower=event_lower,
        long_edge_mass=e_mass,
        nn_resistance=nn_beta,
        nn_resistance_flat=nn_flat,
        big_mask=big_mask,
    )


def resistance_upper_bound(bundle: CorrectionBundle, i: int, j: int) -> float:
    """Series bound: non-big nearest edges over a widened window plus the
    corrected big edges inside [i, j)."""
    if i > j:
        raise DomainError("need i <= j")
    Kn = bundle.Kn
    if i < -Kn or j > Kn:
        raise DomainError("indices outside the window")
    lo = max(i - bundle.a_n, -Kn) + Kn
    hi = min(j + bundle.a_n, Kn - 1) + Kn  # edges lo..hi inclusive, slot units
    total = 0.0
    if hi >= lo:
        seg = slice(lo, hi + 1)
        mask = ~bundle.big_mask[seg]
        total += float(bundle.nn_resistance[seg][mask].sum())
    sel = (bundle.big_edges >= i) & (bundle.big_edges < j)
    slots = bundle.big_edges[sel] + Kn
    total += float((bundle.nn_resistance_flat[slots] * bundle.chi_upper[sel]).sum())
    return total


def resistance_lower_bound(bundle: CorrectionBundle, i: int, j: int) -> float:
    """Big edges only, with the under-window correction; math.inf when the
    stretch [i, j) contains no big edge (empty-sum sentinel)."""
    if i > j:
        raise DomainError("need i <= j")
    Kn = bundle.Kn
    if i < -Kn or j > Kn:
        raise DomainError("indices outside the window")
    sel = (bundle.big_edges >= i) & (bundle.big_edges < j)
    if not np.any(sel):
        return math.inf
    slots = bundle.big_edges[sel] + Kn
    return float((bundle.nn_resistance_flat[slots] * bundle.chi_lower[sel]).sum())


def sandwich_lower(bundle: CorrectionBundle, i: int, j: int) -> float:
    """(lower_bound^{-1} + long_edge_mass)^{-1}, with the infinite sentinel
    collapsing to 1 / long_edge_mass."""
    rl = resistance_lower_bound(bundle, i, j)
    inv = (0.0 if math.isinf(rl) else 1.0 / rl) + bundle.long_edge_mass
    return math.inf if inv == 0.0 else 1.0 / inv


# --- tail constant ---------------------------------------------------------


def _window_sites(rho: float) -> int:
    m = 16
    while m - 5.0 * math.sqrt(m) < 25.0 * rho:
        m += 8
    return m


def estimate_tail_constant(params, samples: int, stream, block_size: int = 1 << 13) -> dict:
    """Monte Carlo estimate of E[(bridge correction at the origin edge)^rho]
    over fresh environments, at zero bias.

    This constant multiplies the jump intensity of the limiting resistance
    process.  Returns {"estimate", "stderr", "samples"}.
    """
    if samples < 1000:
        raise ParameterError("need at least 1e3 samples")
    if params.gap_law != "exponential":
        raise ParameterError("tail-constant sampler assumes exponential gaps")
    rho, beta = params.rho, params.beta
    m_sites = _window_sites(rho)
    rng = stream.generator()
    acc = 0.0
    acc2 = 0.0
    done = 0
    while done < samples:
        b = min(block_size, samples - done)
        gl = rng.exponential(1.0 / rho, size=(b, m_sites))
        gr = rng.exponential(1.0 / rho, size=(b, m_sites))
        wl = np.empty((b, m_sites + 1))
        wr = np.empty((b, m_sites + 1))
        wl[:, 0] = 1.0
        wr[:, 0] = 1.0
        np.exp(-np.cumsum(gl, axis=1), out=wl[:, 1:])
        np.exp(-np.cumsum(gr, axis=1), out=wr[:, 1:])
        if beta == 0.0:
            s = wl.sum(axis=1) * wr.sum(axis=1)
        else:
            el = rng.uniform(0.0, 1.0, size=(b, m_sites + 1))
            er = rng.uniform(0.0, 1.0, size=(b, m_sites + 1))
            u = np.minimum(np.abs(el[:, :, None] - er[:, None, :]), 1.0)
            s = np.einsum("bl,br,blr->b", wl, wr, np.exp(-beta * u))
        chi_rho = s ** (-rho)
        acc += float(chi_rho.sum())
        acc2 += float((chi_rho**2).sum())
        done += b
    mean = acc / samples
    var = max(acc2 / samples - mean * mean, 0.0)
    return {"estimate": mean, "stderr": math.sqrt(var / samples), "samples": samples}


# --- commute time -----------------------------------------------------------


def expected_hitting_time(chain, start: int, target: int) -> float:
    """Exact mean hitting time of ``target`` from ``start`` by a linear solve."""
    C = _as_matrix(chain)
    size = C.shape[0]
    keep = np.concatenate([np.arange(target), np.arange(target + 1, size)])
    L = _laplacian(C)
    L_red = L[keep][:, keep].tocsr()
    masses = np.asarray(chain.masses, dtype=float)
    u = _solve_spd(L_red, masses[keep]).ravel()
    full = np.zeros(size)
    full[keep] = u
    return float(full[start])


def commute_time_check(chain, a: int, b: int, sample_ab, sample_ba) -> dict:
    """Compare simulated commute time against total mass times resistance.

    ``sample_ab`` holds hitting times of b started at a (and vice versa),
    carrying the chain token in their provenance.  Returns a report with the
    exact identity values, the Monte Carlo estimate, and a z-score; ``ok``
    means the estimate sits within 3 standard errors.
    """
    token = getattr(chain, "token", None)
    for s in (sample_ab, sample_ba):
        if token is not None and s.provenance.get("chain") != token:
            raise ProvenanceError("hitting-time sample does not come from this chain")
    R = effective_resistance(chain, {a}, {b})
    total_mass = float(np.sum(chain.masses))
    rhs = total_mass * R
    exact = expected_hitting_time(chain, a, b) + expected_hitting_time(chain, b, a)
    mc_mean = float(np.mean(sample_ab.values) + np.mean(sample_ba.values))
    se = math.sqrt(
        np.var(sample_ab.values, ddof=1) / len(sample_ab.values)
        + np.var(sample_ba.values, ddof=1) / len(sample_ba.values)
    )
    z = (mc_mean - rhs) / se if se > 0 else math.inf
    return {
        "resistance": R,
        "total_mass": total_mass,
        "identity_rhs": rhs,
        "exact_commute": exact,
        "identity_residual": abs(exact - rhs) / rhs,
        "mc_commute": mc_mean,
        "mc_stderr": se,
        "z": z,
        "ok": abs(z) <= 3.0,
    }
