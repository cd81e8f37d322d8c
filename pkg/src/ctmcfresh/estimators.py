"""Structured estimators and the p-MAP stage schedule."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .ctmc import Chain, MapStructure, discounted_integral
from .errors import InvalidThresholds, MissingAuxStage

INF = float("inf")


@dataclass(frozen=True, eq=False)
class PMapSchedule:
    """Per-state stage boundaries and stage values.

    ``thresholds[i]`` is ``[0, tau_1, ..., inf]`` (nondecreasing) and
    ``values[i][k]`` is the estimate while the age lies in
    ``[thresholds[i][k], thresholds[i][k+1])``.
    """

    thresholds: tuple
    values: tuple

    def __post_init__(self):
        if len(self.thresholds) != len(self.values):
            raise InvalidThresholds("need one threshold list and one value list per state")
        for i, (th, v) in enumerate(zip(self.thresholds, self.values)):
            if len(th) < 2 or th[0] != 0.0 or th[-1] != INF:
                raise InvalidThresholds(f"state {i}: thresholds must start at 0 and end at inf")
            if np.any(np.diff(th) < 0):
                raise InvalidThresholds(f"state {i}: thresholds must be nondecreasing")
            if len(v) != len(th) - 1:
                raise InvalidThresholds(f"state {i}: expected {len(th) - 1} stage values, got {len(v)}")
            if v[0] != i:
                raise InvalidThresholds(f"state {i}: first stage must hold the observed state")

    @property
    def size(self) -> int:
        return len(self.thresholds)

    def stages(self, i: int):
        th = self.thresholds[i]
        return [(th[k], th[k + 1], int(self.values[i][k])) for k in range(len(th) - 1)]

    def value(self, i: int, age: float) -> int:
        k = int(np.searchsorted(self.thresholds[i], age, side="right")) - 1
        return int(self.values[i][k])

    @classmethod
    def single_stage(cls, size: int) -> "PMapSchedule":
        return cls(tuple(np.array([0.0, INF]) for _ in range(size)),
                   tuple(np.array([i]) for i in range(size)))

    @classmethod
    def two_stage(cls, size: int, tau: float, target: int) -> "PMapSchedule":
        """The tau-MAP estimator written as a schedule."""
        return cls(tuple(np.array([0.0, tau, INF]) for _ in range(size)),
                   tuple(np.array([i, target]) for i in range(size)))


@dataclass(frozen=True)
class Martingale:
    pass


@dataclass(frozen=True)
class Exponential:
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("Exponential estimator needs lam > 0")


@dataclass(frozen=True)
class Erlang:
    gamma: int
    lam: float

    def __post_init__(self):
        if int(self.gamma) != self.gamma or self.gamma < 2:
            raise ValueError("Erlang estimator needs an integer gamma >= 2")
        if not self.lam > 0:
            raise ValueError("Erlang estimator needs lam > 0")


@dataclass(frozen=True)
class TauMap:
    tau: float

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError("TauMap needs tau >= 0")


@dataclass(frozen=True, eq=False)
class PMap:
    schedule: PMapSchedule


EstimatorSpec = Union[Martingale, Exponential, Erlang, TauMap, PMap]

DETERMINISTIC = (Martingale, TauMap, PMap)


def stages_for(spec, i: int, i_star: int):
    """``(lo, hi, value)`` stages followed by a deterministic estimator."""
    if isinstance(spec, Martingale):
        return [(0.0, INF, i)]
    if isinstance(spec, TauMap):
        return [(0.0, spec.tau, i), (spec.tau, INF, i_star)]
    if isinstance(spec, PMap):
        return spec.schedule.stages(i)
    raise TypeError(f"{type(spec).__name__} has no deterministic stage structure")


def _check_thresholds(thresholds, size):
    if len(thresholds) != size:
        raise InvalidThresholds(f"expected {size} threshold lists, got {len(thresholds)}")
    out = []
    for i, th in enumerate(thresholds):
        th = np.asarray(th, dtype=float)
        if len(th) < 2 or th[0] != 0.0 or th[-1] != INF or np.any(np.diff(th) < 0):
            raise InvalidThresholds(f"state {i}: thresholds must run 0 <= ... <= inf")
        out.append(th)
    return out


def pmap_schedule(chain: Chain, mu: float, thresholds: Sequence[Sequence[float]]) -> PMapSchedule:
    """Stage values maximizing the discounted fresh time of each stage.

    ``values[i][k] = argmax_j int_{tau_k}^{tau_{k+1}} P_ij(t) e^{-mu t} dt``
    for every stage after the first, which holds the observed state.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    ths = _check_thresholds(thresholds, chain.size)
    values = []
    for i, th in enumerate(ths):
        v = [i]
        for lo, hi in zip(th[1:-1], th[2:]):
            row = discounted_integral(chain, mu, lo, hi)[i]
            v.append(int(np.argmax(row)))
        values.append(np.array(v, dtype=np.int64))
    return PMapSchedule(tuple(ths), tuple(values))


def map_thresholds(map_: MapStructure, k: int | None = None):
    """Threshold lists from the first ``k`` MAP transition points per state."""
    return [np.concatenate(([0.0], t[:k], [INF])) for t in map_.tau_star]


def pmap_from_map(chain: Chain, map_: MapStructure, k: int | None = None) -> PMapSchedule:
    """p-MAP schedule whose stages copy the MAP estimate.

    With ``k`` given only the first ``k`` transition points are kept and the
    last stage holds the MAP value right after the ``k``-th point.
    """
    if len(map_.tau_star) != chain.size:
        raise ValueError("MAP structure does not belong to this chain")
    ths = map_thresholds(map_, k)
    vals = tuple(np.asarray(v[: len(th) - 1], dtype=np.int64) for v, th in zip(map_.map_value, ths))
    return PMapSchedule(tuple(ths), vals)


def evaluate_estimate(spec, last_sample: int, age: float, *, i_star: int | None = None,
                      aux_stage: int | None = None) -> int:
    """Current estimate given the last sample and the time since it.

    ``aux_stage`` carries the random stage of the randomized estimators: for
    :class:`Exponential` 0 while the clock runs and 1 after it expired, for
    :class:`Erlang` the state ``1..gamma`` of the auxiliary chain.
    """
    if age < 0:
        raise ValueError("age must be nonnegative")
    if isinstance(spec, Martingale):
        return last_sample
    if isinstance(spec, PMap):
        return spec.schedule.value(last_sample, age)
    if i_star is None:
        raise ValueError(f"{type(spec).__name__} needs i_star")
    if isinstance(spec, TauMap):
        return i_star if age >= spec.tau else last_sample
    if aux_stage is None:
        raise MissingAuxStage(f"{type(spec).__name__} needs the realized aux_stage")
    if isinstance(spec, Exponential):
        return i_star if aux_stage >= 1 else last_sample
    if isinstance(spec, Erlang):
        return i_star if aux_stage >= spec.gamma else last_sample
    raise TypeError(f"unknown estimator {spec!r}")
