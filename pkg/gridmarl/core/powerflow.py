"""
Single-phase radial feeder power flow.

Backward/forward sweep on a tree rooted at the slack bus. Everything here is a
pure function of its inputs; the solver keeps no state between calls.
"""
import math
from abc import ABC, abstractmethod
from collections import defaultdict, deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from gridmarl.core.errors import ConfigurationError, ContractViolation

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 50
# Below this magnitude the sweep has collapsed; stop instead of dividing by ~0.
_COLLAPSE_VOLTAGE = 1e-3


@dataclass(frozen=True)
class BusRecord:
    """A bus and the line connecting it to its parent (R, X in p.u.)."""

    id: str
    parent: str | None = None
    r: float = 0.0
    x: float = 0.0


@dataclass(frozen=True)
class FeederModel:
    """
    Radial feeder description.

    The bus tuple may come in any order; ``order`` is a canonical breadth-first
    ordering from the slack bus with children sorted by id, so every derived
    quantity is independent of the input ordering.
    """

    buses: tuple[BusRecord, ...]
    slack_voltage: float = 1.0
    base_kva: float = 1000.0
    base_kv: float = 4.16
    order: tuple[str, ...] = field(init=False, repr=False)
    parent_index: tuple[int, ...] = field(init=False, repr=False)

    def __post_init__(self):
        buses = tuple(self.buses)
        object.__setattr__(self, "buses", buses)
        if not buses:
            raise ConfigurationError("feeder has no buses", "feeder.buses")
        if self.slack_voltage <= 0 or self.base_kva <= 0 or self.base_kv <= 0:
            raise ConfigurationError("slack voltage and base values must be positive", "feeder")

        by_id: dict[str, BusRecord] = {}
        for i, bus in enumerate(buses):
            if bus.id in by_id:
                raise ConfigurationError(f"duplicate bus id '{bus.id}'", f"feeder.buses[{i}]")
            if bus.r < 0 or bus.x < 0:
                raise ConfigurationError(f"negative impedance on bus '{bus.id}'", f"feeder.buses[{i}]")
            by_id[bus.id] = bus

        roots = [b.id for b in buses if b.parent is None]
        if len(roots) != 1:
            raise ConfigurationError(f"expected exactly one slack bus, found {len(roots)}: {roots}", "feeder.buses")

        children: dict[str, list[str]] = defaultdict(list)
        for i, bus in enumerate(buses):
            if bus.parent is None:
                continue
            if bus.parent not in by_id:
                raise ConfigurationError(
                    f"bus '{bus.id}' references unknown parent '{bus.parent}'", f"feeder.buses[{i}].parent"
                )
            children[bus.parent].append(bus.id)

        order = [roots[0]]
        queue = deque([roots[0]])
        while queue:
            parent = queue.popleft()
            for child in sorted(children[parent]):
                order.append(child)
                queue.append(child)
        if len(order) != len(buses):
            unreachable = sorted(set(by_id) - set(order))
            raise ConfigurationError(f"buses not connected to the slack (cycle?): {unreachable}", "feeder.buses")

        position = {bus_id: k for k, bus_id in enumerate(order)}
        parent_index = tuple(
            -1 if by_id[bus_id].parent is None else position[by_id[bus_id].parent] for bus_id in order
        )
        object.__setattr__(self, "order", tuple(order))
        object.__setattr__(self, "parent_index", parent_index)

    @property
    def slack_id(self) -> str:
        return self.order[0]

    @property
    def bus_ids(self) -> frozenset[str]:
        return frozenset(self.order)

    def bus(self, bus_id: str) -> BusRecord:
        for bus in self.buses:
            if bus.id == bus_id:
                return bus
        raise ConfigurationError(f"unknown bus '{bus_id}'")

    def impedances(self) -> np.ndarray:
        """Complex line impedance per bus in canonical order (0 at the slack)."""
        lookup = {b.id: b for b in self.buses}
        return np.array([complex(lookup[b].r, lookup[b].x) for b in self.order], dtype=np.complex128)


@dataclass(frozen=True)
class InjectionSet:
    """Per-bus net power, consumption positive. Missing buses draw nothing."""

    p_kw: Mapping[str, float]
    q_kvar: Mapping[str, float] = field(default_factory=dict)

    def validate(self, feeder: FeederModel):
        known = feeder.bus_ids
        for label, values in (("p_kw", self.p_kw), ("q_kvar", self.q_kvar)):
            for bus_id, value in values.items():
                if bus_id not in known:
                    raise ContractViolation(f"injection {label} references unknown bus '{bus_id}'")
                if not math.isfinite(value):
                    raise ContractViolation(f"non-finite injection {label} at bus '{bus_id}'")

    def as_complex_pu(self, feeder: FeederModel) -> np.ndarray:
        s = np.zeros(len(feeder.order), dtype=np.complex128)
        for k, bus_id in enumerate(feeder.order):
            s[k] = complex(self.p_kw.get(bus_id, 0.0), self.q_kvar.get(bus_id, 0.0))
        return s / feeder.base_kva


@dataclass(frozen=True)
class PowerFlowResult:
    bus_ids: tuple[str, ...]
    magnitude: np.ndarray
    angle: np.ndarray
    losses_kw: float
    slack_p_kw: float
    slack_q_kvar: float
    iterations: int
    converged: bool
    max_delta: float

    def voltage(self, bus_id: str) -> float:
        try:
            return float(self.magnitude[self.bus_ids.index(bus_id)])
        except ValueError:
            raise ContractViolation(f"bus '{bus_id}' is not part of this solution") from None

    def as_dict(self) -> dict[str, float]:
        return {b: float(v) for b, v in zip(self.bus_ids, self.magnitude)}


class PowerFlowSolver(ABC):
    """Solver API; the multi-agent environment only talks to this interface."""

    @abstractmethod
    def solve(self, feeder: FeederModel, injections: InjectionSet) -> PowerFlowResult:
        ...


class SweepSolver(PowerFlowSolver):
    """
    Backward/forward sweep for radial feeders with constant-power loads.

    Args:
        tolerance: Stop when max |V_new - V_old| between sweeps is below this (p.u.)
        max_iterations: Upper bound on sweeps; exceeding it yields converged=False
    """

    def __init__(self, tolerance: float = DEFAULT_TOLERANCE, max_iterations: int = DEFAULT_MAX_ITERATIONS):
        self.tolerance = tolerance
        self.max_iterations = max_iterations

    def solve(self, feeder: FeederModel, injections: InjectionSet) -> PowerFlowResult:
        injections.validate(feeder)
        n = len(feeder.order)
        parent = feeder.parent_index
        z = feeder.impedances()
        s = injections.as_complex_pu(feeder)
        v0 = complex(feeder.slack_voltage, 0.0)

        voltage = np.full(n, v0, dtype=np.complex128)
        branch = np.zeros(n, dtype=np.complex128)
        converged = False
        delta = math.inf
        iterations = 0

        for iterations in range(1, self.max_iterations + 1):
            # Backward sweep: children are always after their parent in BFS order.
            branch = np.conj(s / voltage)
            for k in range(n - 1, 0, -1):
                branch[parent[k]] += branch[k]

            updated = np.empty(n, dtype=np.complex128)
            updated[0] = v0
            for k in range(1, n):
                updated[k] = updated[parent[k]] - z[k] * branch[k]

            if not np.all(np.isfinite(updated)) or np.min(np.abs(updated)) < _COLLAPSE_VOLTAGE:
                break
            delta = float(np.max(np.abs(updated - voltage)))
            voltage = updated
            if delta < self.tolerance:
                converged = True
                break

        losses_pu = float(np.sum(np.abs(branch[1:]) ** 2 * z[1:].real))
        slack_power = v0 * np.conj(branch[0]) * feeder.base_kva
        return PowerFlowResult(
            bus_ids=feeder.order,
            magnitude=np.abs(voltage),
            angle=np.angle(voltage),
            losses_kw=losses_pu * feeder.base_kva,
            slack_p_kw=float(slack_power.real),
            slack_q_kvar=float(slack_power.imag),
            iterations=iterations,
            converged=converged,
            max_delta=delta,
        )


def solve(
    feeder: FeederModel,
    injections: InjectionSet,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> PowerFlowResult:
    """Solve with the default sweep solver."""
    return SweepSolver(tolerance, max_iterations).solve(feeder, injections)


def min_voltage(result: PowerFlowResult) -> float:
    """Minimum voltage magnitude over non-slack buses (the slack alone if it is the only bus)."""
    if not result.converged:
        raise ContractViolation("min_voltage requires a converged power flow result")
    if len(result.magnitude) == 1:
        return float(result.magnitude[0])
    return float(np.min(result.magnitude[1:]))


def max_voltage(result: PowerFlowResult) -> float:
    if not result.converged:
        raise ContractViolation("max_voltage requires a converged power flow result")
    if len(result.magnitude) == 1:
        return float(result.magnitude[0])
    return float(np.max(result.magnitude[1:]))


def voltage_violation(v: float, v_lower: float, v_upper: float) -> float:
    """Distance of v outside [v_lower, v_upper]; zero inside the band."""
    if not v_lower < v_upper:
        raise ContractViolation(f"voltage band is empty: [{v_lower}, {v_upper}]")
    return max(0.0, v - v_upper) + max(0.0, v_lower - v)


def feeder_from_records(records: Sequence[Mapping], **kwargs) -> FeederModel:
    """Build a feeder from plain dicts with keys id, parent, r, x."""
    buses = tuple(
        BusRecord(id=str(r["id"]), parent=r.get("parent"), r=float(r.get("r", 0.0)), x=float(r.get("x", 0.0)))
        for r in records
    )
    return FeederModel(buses=buses, **kwargs)
