"""Random environments for the one-dimensional hopping model.

An environment is one realisation of the random medium: site positions
``omega`` (a point process on the line conditioned to have a site at the
origin), i.i.d. energy marks ``energy`` and holding-time means ``tau``.
Generation is a pure function of (params, N, stream), and the resulting
object is immutable, so environments can be shared freely between workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError, ParameterError

__all__ = [
    "ModelParams",
    "RngStream",
    "Environment",
    "generate_environment",
    "interaction_value",
    "sample_first_edge_resistance",
    "environment_to_json",
    "environment_from_json",
    "save_environment",
    "load_environment",
]

_ENERGY_LAWS = ("uniform", "exponential", "normal")
_GAP_LAWS = ("exponential", "uniform")
_INTERACTIONS = ("abs_diff", "zero")


@dataclass(frozen=True)
class ModelParams:
    """Static model parameters.

    rho:      intensity of the site process (> 0); gaps are Exponential(rho)
              under the default gap law.
    beta:     inverse temperature (>= 0) multiplying the energy interaction.
    lam:      bias strength (>= 0).  How it is scaled into an edge weight is
              decided per network build (see ``network.conductance``).
    kappa:    holding-time tail exponent in (0, 1); None means all tau_i = 1.
    energy_law / energy_args: marginal law of the energy marks.
    interaction: name of the symmetric interaction applied to mark pairs;
              must map into [0, 1].
    gap_law / gap_args: law of the i.i.d. gaps.  "exponential" (no args)
              is the homogeneous-medium default; "uniform" (low, high) is
              supported as the light-tailed variant.
    """

    rho: float = 1.0
    beta: float = 0.0
    lam: float = 0.0
    kappa: float | None = None
    energy_law: str = "uniform"
    energy_args: tuple = (0.0, 1.0)
    interaction: str = "abs_diff"
    gap_law: str = "exponential"
    gap_args: tuple = ()

    def __post_init__(self):
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise ParameterError(f"rho must be a positive finite real, got {self.rho}")
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ParameterError(f"beta must be a nonnegative real, got {self.beta}")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ParameterError(f"lam must be a nonnegative real, got {self.lam}")
        if self.kappa is not None and not (0.0 < self.kappa < 1.0):
            raise ParameterError(f"kappa must lie in (0, 1) when set, got {self.kappa}")
        if self.energy_law not in _ENERGY_LAWS:
            raise ParameterError(f"unknown energy law {self.energy_law!r}")
        if self.interaction not in _INTERACTIONS:
            raise ParameterError(f"unknown interaction {self.interaction!r}")
        if self.gap_law not in _GAP_LAWS:
            raise ParameterError(f"unknown gap law {self.gap_law!r}")
        object.__setattr__(self, "energy_args", tuple(float(a) for a in self.energy_args))
        object.__setattr__(self, "gap_args", tuple(float(a) for a in self.gap_args))
        if self.gap_law == "uniform":
            if len(self.gap_args) != 2 or not (0 <= self.gap_args[0] < self.gap_args[1]):
                raise ParameterError("uniform gap law needs args (low, high) with 0 <= low < high")

    def to_dict(self) -> dict:
        return {
            "rho": self.rho,
            "beta": self.beta,
            "lam": self.lam,
            "kappa": self.kappa,
            "energy_law": self.energy_law,
            "energy_args": list(self.energy_args),
            "interaction": self.interaction,
            "gap_law": self.gap_law,
            "gap_args": list(self.gap_args),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        d = dict(d)
        d["energy_args"] = tuple(d.get("energy_args", (0.0, 1.0)))
        d["gap_args"] = tuple(d.get("gap_args", ()))
        return cls(**d)


@dataclass(frozen=True)
class RngStream:
    """Replicable random stream: (seed, stream_id, path) fully determine it.

    Streams are realised through numpy's SeedSequence spawn keys, so distinct
    (stream_id, path) values give statistically independent generators without
    any shared state.  ``child(k)`` derives a sub-stream for worker k.
    """

    seed: int
    stream_id: int = 0
    path: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "path", tuple(int(p) for p in self.path))

    def generator(self) -> np.random.Generator:
        key = (int(self.stream_id),) + self.path
        return np.random.default_rng(np.random.SeedSequence(int(self.seed), spawn_key=key))

    def child(self, k: int) -> "RngStream":
        return replace(self, path=self.path + (int(k),))

    def to_dict(self) -> dict:
        return {"seed": int(self.seed), "stream_id": int(self.stream_id), "path": list(self.path)}

    @classmethod
    def from_dict(cls, d: dict) -> "RngStream":
        return cls(seed=int(d["seed"]), stream_id=int(d.get("stream_id", 0)), path=tuple(d.get("path", ())))


@dataclass(frozen=True)
class Environment:
    """One realisation of the medium on the index window [-N, N].

    ``omega`` is strictly increasing with omega[N] == 0 (model index 0 sits at
    the origin); ``energy`` and ``tau`` are aligned with it.  Model index i is
    stored at row i + N.
    """

    params: ModelParams
    N: int
    omega: np.ndarray
    energy: np.ndarray
    tau: np.ndarray
    stream: RngStream

    def __post_init__(self):
        for name in ("omega", "energy", "tau"):
            arr = getattr(self, name)
            arr.flags.writeable = False

    @property
    def size(self) -> int:
        return 2 * self.N + 1

    def row(self, i: int) -> int:
        if not -self.N <= i <= self.N:
            raise DomainError(f"index {i} outside environment window [-{self.N}, {self.N}]")
        return int(i) + self.N

    def position(self, i):
        idx = np.asarray(i)
        if np.any(idx < -self.N) or np.any(idx > self.N):
            raise DomainError(f"index outside environment window [-{self.N}, {self.N}]")
        return self.omega[idx + self.N]

    @property
    def gaps(self) -> np.ndarray:
        """The 2N i.i.d. gaps omega[i+1] - omega[i]."""
        return np.diff(self.omega)


def _draw_gaps(params: ModelParams, rng: np.random.Generator, count: int) -> np.ndarray:
    if params.gap_law == "exponential":
        return rng.exponential(scale=1.0 / params.rho, size=count)
    low, high = params.gap_args
    return rng.uniform(low, high, size=count)


def _draw_energy(params: ModelParams, rng: np.random.Generator, count: int) -> np.ndarray:
    a, b = (params.energy_args + (0.0, 1.0))[:2]
    if params.energy_law == "uniform":
        return rng.uniform(a, b, size=count)
    if params.energy_law == "exponential":
        return rng.exponential(scale=b if b > 0 else 1.0, size=count) + a
    return rng.normal(loc=a, scale=b if b > 0 else 1.0, size=count)


def generate_environment(params: ModelParams, N: int, stream: RngStream) -> Environment:
    """Draw an environment with 2N+1 sites.

    Positions are cumulative sums of i.i.d. gaps on each side of the origin.
    Holding-time means use the exact inverse-CDF heavy-tail sampler
    tau = V**(-1/kappa), V uniform, so P(tau >= t) = t**(-kappa) for t >= 1.

    The draw order (right gaps, left gaps, energies, holding times) is fixed;
    together with the stream contract this makes the result bit-reproducible.
    """
    if not isinstance(N, (int, np.integer)) or N < 1:
        raise ParameterError(f"N must be a positive integer, got {N!r}")
    if not isinstance(params, ModelParams):
        raise ParameterError("params must be a ModelParams instance")
    rng = stream.generator()
    right = _draw_gaps(params, rng, N)
    left = _draw_gaps(params, rng, N)
    omega = np.empty(2 * N + 1)
    omega[N] = 0.0
    omega[N + 1 :] = np.cumsum(right)
    omega[:N] = -np.cumsum(left)[::-1]
    energy = _draw_energy(params, rng, 2 * N + 1)
    if params.kappa is not None:
        v = rng.random(2 * N + 1)
        tau = v ** (-1.0 / params.kappa)
    else:
        tau = np.ones(2 * N + 1)
    return Environment(params=params, N=int(N), omega=omega, energy=energy, tau=tau, stream=stream)


def interaction_value(params: ModelParams, e1, e2):
    """Symmetric interaction of two energy marks, mapped into [0, 1].

    The default is |e1 - e2| clipped at 1, which is exact on the default
    uniform-[0,1] marks and stays admissible for any other mark law.
    Accepts scalars or broadcastable arrays.
    """
    if params.interaction == "zero":
        return np.zeros(np.broadcast(e1, e2).shape) if np.ndim(e1) or np.ndim(e2) else 0.0
    val = np.minimum(np.abs(np.asarray(e1) - np.asarray(e2)), 1.0)
    return float(val) if val.ndim == 0 else val


def sample_first_edge_resistance(params: ModelParams, count: int, stream: RngStream) -> np.ndarray:
    """Nearest-edge resistance exp(omega_1 - omega_0) across fresh environments.

    Each draw is the first right gap of an independent environment; only that
    coordinate is materialised because the statistic depends on nothing else.
    A distributional cross-check against full environments is in the tests.
    """
    if count < 1:
        raise ParameterError("count must be positive")
    rng = stream.generator()
    gaps = _draw_gaps(params, rng, int(count))
    return np.exp(gaps)


# --- serialisation ------------------------------------------------------
#
# Arrays are written with 17 significant digits, which round-trips IEEE
# doubles exactly; identical inputs therefore produce byte-identical files.

_FORMAT = "mottlab-environment"
_VERSION = 1


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_array(arr: np.ndarray) -> str:
    return "[" + ",".join(_fmt(v) for v in arr) + "]"


def environment_to_json(env: Environment) -> str:
    head = {
        "format": _FORMAT,
        "version": _VERSION,
        "params": env.params.to_dict(),
        "N": env.N,
        "stream": env.stream.to_dict(),
    }
    parts = [json.dumps(head, sort_keys=True)[:-1]]  # drop closing brace
    parts.append(',"omega":' + _fmt_array(env.omega))
    parts.append(',"energy":' + _fmt_array(env.energy))
    parts.append(',"tau":' + _fmt_array(env.tau))
    parts.append("}")
    return "".join(parts)


def environment_from_json(text: str) -> Environment:
    doc = json.loads(text)
    if doc.get("format") != _FORMAT:
        raise ParameterError("not an environment document")
    if doc.get("version") != _VERSION:
        raise ParameterError(f"unsupported environment version {doc.get('version')}")
    env = Environment(
        params=ModelParams.from_dict(doc["params"]),
        N=int(doc["N"]),
        omega=np.asarray(doc["omega"], dtype=float),
        energy=np.asarray(doc["energy"], dtype=float),
        tau=np.asarray(doc["tau"], dtype=float),
        stream=RngStream.from_dict(doc["stream"]),
    )
    if env.omega.shape != (env.size,) or not np.all(np.diff(env.omega) > 0):
        raise ParameterError("environment document is inconsistent")
    return env


def save_environment(env: Environment, path) -> None:
    with open(path, "w") as fh:
        fh.write(environment_to_json(env))


def load_environment(path) -> Environment:
    with open(path) as fh:
        return environment_from_json(fh.read())
