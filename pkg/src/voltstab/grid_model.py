"""Per-unit network model, admittance construction, and the bundled case library.

Case documents are JSON with powers in physical units (MW / MVAr on
``base_mva``) and branch impedances already in per-unit; everything is
normalized to per-unit when loaded.  Networks are immutable: mutating
operations such as :func:`set_shunt` return new values.

Bundled cases
-------------
``twobus``
    Source bus feeding a single constant-power load over one line; the
    textbook nose-curve system.
``threebus``
    Aggregate generation (bus 1) feeding a heavily loaded aggregate load
    pocket (bus 2) supported by a local SVC bus (bus 3).  Machine and
    network constants are documented approximations in the WSCC 9-bus
    style; they are reference data, not derived values.
``ieee39``
    The New England 39-bus system (classic published data).  Transformer
    off-nominal taps are outside this model's scope, so each tapped branch
    was converted to its exact equivalent pi and the susceptance parts of
    the end shunts were folded into the bus shunts; the small conductance
    parts (< 0.23 p.u. individually, mostly cancelling in pairs) are
    dropped.  This keeps the case inside the {r, x, b} branch schema at the
    cost of a sub-percent distortion near the tapped corridors.
``ieee39_svc``
    ``ieee39`` plus SVC bus 40 tied into the load pocket through four
    identical short lines to buses 4, 14, 15 and 16.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import CaseSchemaError, DisconnectedNetworkError

__all__ = [
    "BusKind",
    "Bus",
    "Branch",
    "AVRParams",
    "GovernorParams",
    "MachineModel",
    "Network",
    "build_admittance_matrix",
    "load_case",
    "serialize_case",
    "set_shunt",
    "bundled_case_names",
    "load_bundled_case",
]


class BusKind(str, Enum):
    PQ = "PQ"
    PV = "PV"
    REFERENCE = "reference"


@dataclass(frozen=True)
class Bus:
    """A network node.  ``base_load`` is the constant-power demand S_0i in
    per-unit; ``k_rate`` is the dimensionless rate at which that demand
    scales with the loading factor."""

    id: int
    kind: BusKind
    base_load: complex = 0j
    v_set: float | None = None
    b_shunt: float = 0.0
    k_rate: float = 0.0


@dataclass(frozen=True)
class Branch:
    """A pi-model branch: series impedance r + jx, total charging b split
    equally between the two ends."""

    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0
    status: bool = True

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class AVRParams:
    """IEEE Type-I style regulator/exciter/stabilizer constants (4 states
    counting the input measurement filter)."""

    ka: float = 20.0
    ta: float = 0.2
    ke: float = 1.0
    te: float = 0.314
    kf: float = 0.063
    tf: float = 0.35
    tr: float = 0.02


@dataclass(frozen=True)
class GovernorParams:
    """Droop / servo / reheat turbine-governor constants (3 states)."""

    droop: float = 0.05
    t_servo: float = 0.1
    t_chest: float = 0.45
    t_reheat: float = 5.0


@dataclass(frozen=True)
class MachineModel:
    """Two-axis synchronous machine with its AVR and governor.

    All reactances are per-unit on the system base; time constants in
    seconds; ``p_gen`` is the scheduled active output in per-unit (ignored
    for the machine at the reference bus, whose output balances the case).
    """

    bus: int
    p_gen: float
    h: float
    d: float
    x_d: float
    x_q: float
    xp_d: float
    xp_q: float
    tp_d0: float
    tp_q0: float
    r_a: float = 0.0
    avr: AVRParams = field(default_factory=AVRParams)
    gov: GovernorParams = field(default_factory=GovernorParams)

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError(f"machine at bus {self.bus}: H must be > 0")
        for name in ("tp_d0", "tp_q0"):
            if getattr(self, name) <= 0:
                raise ValueError(f"machine at bus {self.bus}: {name} must be > 0")


@dataclass(frozen=True)
class Network:
    """Immutable network: buses, branches, machines and the MVA base.

    Invariants (checked on construction): unique bus ids, exactly one
    reference bus, loading rates zero at PV/reference buses, and a
    connected in-service branch graph.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    machines: tuple[MachineModel, ...] = ()
    base_mva: float = 100.0
    name: str = ""

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise CaseSchemaError("buses", f"duplicate bus id(s) {dupes}")
        if not self.buses:
            raise CaseSchemaError("buses", "bus list is empty")
        refs = [b.id for b in self.buses if b.kind is BusKind.REFERENCE]
        if len(refs) != 1:
            raise CaseSchemaError(
                "buses", f"need exactly one reference bus, found {refs}"
            )
        for b in self.buses:
            if b.kind is not BusKind.PQ and b.k_rate != 0.0:
                raise CaseSchemaError(
                    f"buses[id={b.id}].k_rate",
                    "loading rate must be zero on PV/reference buses",
                )
            if b.kind is BusKind.PQ and b.v_set is not None:
                raise CaseSchemaError(
                    f"buses[id={b.id}].v_set", "PQ buses carry no voltage setpoint"
                )
            if b.kind is not BusKind.PQ and b.v_set is None:
                raise CaseSchemaError(
                    f"buses[id={b.id}].v_set", "PV/reference buses need a setpoint"
                )
        index = {b.id: k for k, b in enumerate(self.buses)}
        for br in self.branches:
            if br.from_bus == br.to_bus:
                raise CaseSchemaError(
                    f"branches[{br.from_bus}->{br.to_bus}]",
                    "branch endpoints must differ",
                )
            for end in (br.from_bus, br.to_bus):
                if end not in index:
                    raise CaseSchemaError(
                        f"branches[{br.from_bus}->{br.to_bus}]",
                        f"unknown bus id {end}",
                    )
            if br.status and br.r == 0.0 and br.x == 0.0:
                raise CaseSchemaError(
                    f"branches[{br.from_bus}->{br.to_bus}]",
                    "in-service branch has zero series impedance",
                )
        for m in self.machines:
            if m.bus not in index:
                raise CaseSchemaError(
                    f"machines[bus={m.bus}]", f"unknown bus id {m.bus}"
                )
        comp = _connected_component(self)
        if len(comp) != len(self.buses):
            isolated = set(index) - comp
            raise DisconnectedNetworkError(isolated)

    # -- index helpers -------------------------------------------------

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def index_of(self, bus_id: int) -> int:
        try:
            return self._index[bus_id]
        except AttributeError:
            object.__setattr__(
                self, "_index", {b.id: k for k, b in enumerate(self.buses)}
            )
            return self._index[bus_id]

    def bus(self, bus_id: int) -> Bus:
        return self.buses[self.index_of(bus_id)]

    def indices_of_kind(self, kind: BusKind) -> np.ndarray:
        return np.array(
            [k for k, b in enumerate(self.buses) if b.kind is kind], dtype=int
        )

    @property
    def pq(self) -> np.ndarray:
        return self.indices_of_kind(BusKind.PQ)

    @property
    def pv(self) -> np.ndarray:
        return self.indices_of_kind(BusKind.PV)

    @property
    def ref(self) -> int:
        return int(self.indices_of_kind(BusKind.REFERENCE)[0])

    @property
    def k_vector(self) -> np.ndarray:
        """Loading rates in bus order (the direction vector of the slow
        scaling)."""
        return np.array([b.k_rate for b in self.buses], dtype=float)

    @property
    def base_injections(self) -> np.ndarray:
        """Net constant-power injections S_0 in bus order: scheduled
        generation minus load (shunts live in Y, not here)."""
        s = np.array([-b.base_load for b in self.buses], dtype=complex)
        for m in self.machines:
            s[self.index_of(m.bus)] += m.p_gen
        return s

    def machine_at(self, bus_id: int) -> MachineModel | None:
        for m in self.machines:
            if m.bus == bus_id:
                return m
        return None


def _connected_component(net: Network) -> set[int]:
    """Bus ids reachable from the reference bus over in-service branches."""
    adj: dict[int, list[int]] = {b.id: [] for b in net.buses}
    for br in net.branches:
        if br.status:
            adj[br.from_bus].append(br.to_bus)
            adj[br.to_bus].append(br.from_bus)
    start = net.buses[net.ref].id
    seen = {start}
    stack = [start]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return seen


def build_admittance_matrix(network: Network) -> np.ndarray:
    """Dense complex bus admittance matrix in network bus order.

    Pi-model branches plus bus shunt susceptances; raises
    :class:`DisconnectedNetworkError` naming the isolated component if the
    in-service graph does not span all buses.
    """
    comp = _connected_component(network)
    if len(comp) != network.n_bus:
        raise DisconnectedNetworkError({b.id for b in network.buses} - comp)
    n = network.n_bus
    y = np.zeros((n, n), dtype=complex)
    for br in network.branches:
        if not br.status:
            continue
        i = network.index_of(br.from_bus)
        j = network.index_of(br.to_bus)
        ys = br.series_admittance
        bsh = 1j * br.b / 2.0
        y[i, i] += ys + bsh
        y[j, j] += ys + bsh
        y[i, j] -= ys
        y[j, i] -= ys
    for k, b in enumerate(network.buses):
        y[k, k] += 1j * b.b_shunt
    return y


def set_shunt(network: Network, bus_id: int, b_s: float) -> Network:
    """Return a network whose bus ``bus_id`` carries an extra shunt
    susceptance ``b_s`` (added to whatever the case already has); only the
    diagonal Y entry of that bus changes, by j*b_s."""
    k = network.index_of(bus_id)  # raises KeyError for unknown ids
    bus = network.buses[k]
    new_bus = replace(bus, b_shunt=bus.b_shunt + b_s)
    buses = network.buses[:k] + (new_bus,) + network.buses[k + 1 :]
    return replace(network, buses=buses)


# ---------------------------------------------------------------------------
# Case document handling
# ---------------------------------------------------------------------------

_BUS_FIELDS = {"id", "kind", "v_set", "p_load", "q_load", "b_shunt", "k_rate"}
_BRANCH_FIELDS = {"from", "to", "r", "x", "b", "status"}
_MACHINE_FIELDS = {
    "bus", "p_gen", "h", "d", "x_d", "x_q", "xp_d", "xp_q",
    "tp_d0", "tp_q0", "r_a", "avr", "gov",
}
_AVR_FIELDS = {"ka", "ta", "ke", "te", "kf", "tf", "tr"}
_GOV_FIELDS = {"r", "t_servo", "t_chest", "t_reheat"}
_TOP_FIELDS = {"base_mva", "buses", "branches", "machines"}

_KINDS = {"PQ": BusKind.PQ, "PV": BusKind.PV, "reference": BusKind.REFERENCE}


def _require(doc: dict, allowed: set, path: str):
    unknown = set(doc) - allowed
    if unknown:
        raise CaseSchemaError(
            f"{path}.{sorted(unknown)[0]}", "unknown field"
        )


def _number(doc: dict, key: str, path: str, default=None):
    if key not in doc:
        if default is not None:
            return default
        raise CaseSchemaError(f"{path}.{key}", "missing required field")
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise CaseSchemaError(f"{path}.{key}", f"expected a number, got {v!r}")
    return float(v)


def load_case(source) -> Network:
    """Build a :class:`Network` from a case document.

    ``source`` may be a parsed dict, a JSON string, or a path to a JSON
    file.  Powers are normalized from MW/MVAr to per-unit on ``base_mva``;
    bus shunts are given as MVAr injected at 1 p.u. voltage.
    """
    name = ""
    if isinstance(source, Path):
        name = source.stem
        doc = json.loads(source.read_text())
    elif isinstance(source, str):
        if source.lstrip().startswith("{"):
            doc = json.loads(source)
        else:
            p = Path(source)
            name = p.stem
            doc = json.loads(p.read_text())
    elif isinstance(source, dict):
        doc = source
    else:
        raise CaseSchemaError("$", f"unsupported case source {type(source)!r}")

    if not isinstance(doc, dict):
        raise CaseSchemaError("$", "case document must be a JSON object")
    _require(doc, _TOP_FIELDS, "$")
    base = _number(doc, "base_mva", "$")
    if base <= 0:
        raise CaseSchemaError("$.base_mva", "must be positive")

    raw_buses = doc.get("buses")
    if not isinstance(raw_buses, list) or not raw_buses:
        raise CaseSchemaError("buses", "must be a non-empty list")
    buses = []
    for k, bd in enumerate(raw_buses):
        path = f"buses[{k}]"
        if not isinstance(bd, dict):
            raise CaseSchemaError(path, "bus entry must be an object")
        _require(bd, _BUS_FIELDS, path)
        if "id" not in bd or not isinstance(bd["id"], int) or isinstance(bd["id"], bool):
            raise CaseSchemaError(f"{path}.id", "missing or non-integer id")
        kind = bd.get("kind")
        if kind not in _KINDS:
            raise CaseSchemaError(
                f"{path}.kind", f"expected one of {sorted(_KINDS)}, got {kind!r}"
            )
        v_set = None
        if "v_set" in bd and bd["v_set"] is not None:
            v_set = _number(bd, "v_set", path)
        buses.append(
            Bus(
                id=bd["id"],
                kind=_KINDS[kind],
                base_load=complex(
                    _number(bd, "p_load", path, 0.0) / base,
                    _number(bd, "q_load", path, 0.0) / base,
                ),
                v_set=v_set,
                b_shunt=_number(bd, "b_shunt", path, 0.0) / base,
                k_rate=_number(bd, "k_rate", path, 0.0),
            )
        )

    branches = []
    for k, rd in enumerate(doc.get("branches", [])):
        path = f"branches[{k}]"
        if not isinstance(rd, dict):
            raise CaseSchemaError(path, "branch entry must be an object")
        _require(rd, _BRANCH_FIELDS, path)
        for key in ("from", "to"):
            if key not in rd or not isinstance(rd[key], int) or isinstance(rd[key], bool):
                raise CaseSchemaError(f"{path}.{key}", "missing or non-integer bus id")
        status = rd.get("status", True)
        if not isinstance(status, bool):
            raise CaseSchemaError(f"{path}.status", "must be true/false")
        branches.append(
            Branch(
                from_bus=rd["from"],
                to_bus=rd["to"],
                r=_number(rd, "r", path, 0.0),
                x=_number(rd, "x", path),
                b=_number(rd, "b", path, 0.0),
                status=status,
            )
        )

    machines = []
    for k, md in enumerate(doc.get("machines", [])):
        path = f"machines[{k}]"
        if not isinstance(md, dict):
            raise CaseSchemaError(path, "machine entry must be an object")
        _require(md, _MACHINE_FIELDS, path)
        if "bus" not in md or not isinstance(md["bus"], int) or isinstance(md["bus"], bool):
            raise CaseSchemaError(f"{path}.bus", "missing or non-integer bus id")
        avr_doc = md.get("avr", {})
        _require(avr_doc, _AVR_FIELDS, f"{path}.avr")
        gov_doc = md.get("gov", {})
        _require(gov_doc, _GOV_FIELDS, f"{path}.gov")
        try:
            machines.append(
                MachineModel(
                    bus=md["bus"],
                    p_gen=_number(md, "p_gen", path, 0.0) / base,
                    h=_number(md, "h", path),
                    d=_number(md, "d", path, 0.0),
                    x_d=_number(md, "x_d", path),
                    x_q=_number(md, "x_q", path),
                    xp_d=_number(md, "xp_d", path),
                    xp_q=_number(md, "xp_q", path),
                    tp_d0=_number(md, "tp_d0", path),
                    tp_q0=_number(md, "tp_q0", path),
                    r_a=_number(md, "r_a", path, 0.0),
                    avr=AVRParams(**{k2: _number(avr_doc, k2, f"{path}.avr", getattr(AVRParams, k2)) for k2 in _AVR_FIELDS}),
                    gov=GovernorParams(
                        droop=_number(gov_doc, "r", f"{path}.gov", GovernorParams.droop),
                        t_servo=_number(gov_doc, "t_servo", f"{path}.gov", GovernorParams.t_servo),
                        t_chest=_number(gov_doc, "t_chest", f"{path}.gov", GovernorParams.t_chest),
                        t_reheat=_number(gov_doc, "t_reheat", f"{path}.gov", GovernorParams.t_reheat),
                    ),
                )
            )
        except ValueError as exc:
            raise CaseSchemaError(path, str(exc)) from exc

    return Network(
        buses=tuple(buses),
        branches=tuple(branches),
        machines=tuple(machines),
        base_mva=base,
        name=name,
    )


def serialize_case(network: Network) -> dict:
    """Inverse of :func:`load_case`: a schema-conformant case document.

    Round trip holds: ``load_case(serialize_case(load_case(doc)))`` equals
    ``load_case(doc)``.
    """
    base = network.base_mva
    doc: dict = {"base_mva": base, "buses": [], "branches": [], "machines": []}
    for b in network.buses:
        bd: dict = {
            "id": b.id,
            "kind": b.kind.value,
            "p_load": b.base_load.real * base,
            "q_load": b.base_load.imag * base,
            "b_shunt": b.b_shunt * base,
            "k_rate": b.k_rate,
        }
        if b.v_set is not None:
            bd["v_set"] = b.v_set
        doc["buses"].append(bd)
    for br in network.branches:
        doc["branches"].append(
            {
                "from": br.from_bus,
                "to": br.to_bus,
                "r": br.r,
                "x": br.x,
                "b": br.b,
                "status": br.status,
            }
        )
    for m in network.machines:
        doc["machines"].append(
            {
                "bus": m.bus,
                "p_gen": m.p_gen * base,
                "h": m.h,
                "d": m.d,
                "x_d": m.x_d,
                "x_q": m.x_q,
                "xp_d": m.xp_d,
                "xp_q": m.xp_q,
                "tp_d0": m.tp_d0,
                "tp_q0": m.tp_q0,
                "r_a": m.r_a,
                "avr": {
                    "ka": m.avr.ka, "ta": m.avr.ta, "ke": m.avr.ke,
                    "te": m.avr.te, "kf": m.avr.kf, "tf": m.avr.tf,
                    "tr": m.avr.tr,
                },
                "gov": {
                    "r": m.gov.droop, "t_servo": m.gov.t_servo,
                    "t_chest": m.gov.t_chest, "t_reheat": m.gov.t_reheat,
                },
            }
        )
    return doc


def bundled_case_names() -> list[str]:
    root = resources.files(__package__) / "cases"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_bundled_case(name: str) -> Network:
    """Load one of the cases shipped with the package (see module docstring)."""
    root = resources.files(__package__) / "cases"
    path = root / f"{name}.json"
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise CaseSchemaError(
            "$", f"no bundled case named {name!r}; available: {bundled_case_names()}"
        ) from None
    net = load_case(json.loads(text))
    return replace(net, name=name)
