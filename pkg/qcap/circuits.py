"""
Circuit representation, device connectivity graphs and circuit samplers.
"""

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from qcap.base_logging import Logger
from qcap.config import settings
from qcap.exceptions import NotDefiniteOutcome, OverlappingGates, QcapValidationError
from qcap.models import CircuitRow, SamplerConfig
from qcap.pauli import (
    PAULI_GATES,
    SINGLE_QUBIT_GATES,
    CliffordTableau,
    Gate,
    SignedPauli,
    compose,
    conjugate,
    gate_arity,
    inverse_gate,
    tableau_of_layer,
)

logger = Logger("qcap.circuits")

CIRCUIT_KINDS = ('iid', 'mirror')


@dataclass(frozen=True)
class ConnectivityGraph:
    """Undirected, connected qubit connectivity graph"""
    n: int
    edges: FrozenSet[Tuple[int, int]]
    name: str

    def __post_init__(self):
        if self.n < 1:
            raise QcapValidationError(f"Graph {self.name} must have at least one qubit")
        for a, b in self.edges:
            if a == b:
                raise QcapValidationError(f"Graph {self.name} has a self-loop on qubit {a}")
            if not (0 <= a < self.n and 0 <= b < self.n):
                raise QcapValidationError(f"Graph {self.name} edge ({a}, {b}) outside {self.n} qubits")
        if not nx.is_connected(self.graph):
            raise QcapValidationError(f"Graph {self.name} is not connected")

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]], name: str) -> 'ConnectivityGraph':
        return cls(n, frozenset(tuple(sorted((int(a), int(b)))) for a, b in edges), name)

    @cached_property
    def graph(self) -> nx.Graph:
        g = nx.Graph()
        g.add_nodes_from(range(self.n))
        g.add_edges_from(self.edges)
        return g

    @cached_property
    def sorted_edges(self) -> Tuple[Tuple[int, int], ...]:
        return tuple(sorted(self.edges))

    @cached_property
    def distances(self) -> Dict[int, Dict[int, int]]:
        return dict(nx.all_pairs_shortest_path_length(self.graph))

    @cached_property
    def max_degree(self) -> int:
        return max((d for _, d in self.graph.degree()), default=0)

    def neighbors(self, q: int) -> Tuple[int, ...]:
        return tuple(sorted(self.graph.neighbors(q)))

    def has_edge(self, a: int, b: int) -> bool:
        return tuple(sorted((a, b))) in self.edges

    def pairs_within(self, h: int) -> List[Tuple[int, int]]:
        """Unordered qubit pairs at hop distance 1..h, ascending"""
        return [(a, b) for a in range(self.n) for b in range(a + 1, self.n) if self.distances[a][b] <= h]

    def qubits_within(self, support: Iterable[int], hops: int) -> Tuple[int, ...]:
        """Qubits at most ``hops`` steps from any qubit of ``support``, ascending"""
        support = tuple(support)
        return tuple(q for q in range(self.n) if min(self.distances[s][q] for s in support) <= hops)

    def is_connected_subset(self, qubits: Iterable[int]) -> bool:
        qubits = list(qubits)
        return len(qubits) > 0 and nx.is_connected(self.graph.subgraph(qubits))


def hop_distance(g: ConnectivityGraph, a: int, b: int) -> int:
    return g.distances[a][b]


def _ring(size: int) -> ConnectivityGraph:
    edges = [(q, (q + 1) % size) for q in range(size)] if size > 2 else ([(0, 1)] if size == 2 else [])
    return ConnectivityGraph.from_edges(size, edges, f"ring:{size}")


def _line(size: int) -> ConnectivityGraph:
    return ConnectivityGraph.from_edges(size, [(q, q + 1) for q in range(size - 1)], f"line:{size}")


def _tbar(size: int) -> ConnectivityGraph:
    if size != 5:
        raise QcapValidationError("tbar graphs have exactly 5 qubits")
    return ConnectivityGraph.from_edges(5, [(0, 1), (1, 2), (1, 3), (3, 4)], "tbar:5")


def _bowtie(size: int) -> ConnectivityGraph:
    if size != 5:
        raise QcapValidationError("bowtie graphs have exactly 5 qubits")
    return ConnectivityGraph.from_edges(5, [(0, 1), (0, 2), (1, 2), (2, 3), (2, 4), (3, 4)], "bowtie:5")


class GraphFactory:
    """Factory for device connectivity graphs"""

    _graph_registry: Dict[str, Callable[[int], ConnectivityGraph]] = {
        'ring': _ring,
        'line': _line,
        'tbar': _tbar,
        'bowtie': _bowtie,
    }

    @classmethod
    def create(cls, spec: str) -> ConnectivityGraph:
        """
        Create a graph from a spec string.

        Args:
            spec: "<family>:<size>" (e.g. "ring:4", "tbar:5") or a path to a JSON
                edge-list file, either {"n": 5, "edges": [[0, 1], ...]} or a bare list of edges

        Returns:
            ConnectivityGraph instance

        Raises:
            QcapValidationError: If the family is unknown or the graph is invalid
        """
        if spec.endswith('.json') or Path(spec).is_file():
            return cls._from_file(Path(spec))

        family, _, size = spec.partition(':')
        family = family.lower()
        if family not in cls._graph_registry:
            available = ', '.join(cls.list_graphs())
            raise QcapValidationError(f"Unsupported graph: {spec}. Available: {available}")
        try:
            size = int(size) if size else 5
        except ValueError:
            raise QcapValidationError(f"Invalid graph size in '{spec}'")
        return cls._graph_registry[family](size)

    @classmethod
    def _from_file(cls, path: Path) -> ConnectivityGraph:
        if not path.exists():
            raise QcapValidationError(f"Graph file not found: {path}")
        with open(path, 'r') as f:
            content = json.load(f)
        if isinstance(content, dict):
            edges = content.get('edges', [])
            n = content.get('n', 1 + max((max(e) for e in edges), default=0))
        else:
            edges = content
            n = 1 + max((max(e) for e in edges), default=0)
        return ConnectivityGraph.from_edges(n, edges, str(path))

    @classmethod
    def register_graph(cls, name: str, builder: Callable[[int], ConnectivityGraph]):
        cls._graph_registry[name.lower()] = builder
        logger.info(f"Registered new graph family: {name}")

    @classmethod
    def list_graphs(cls) -> List[str]:
        return list(cls._graph_registry.keys())


@dataclass(frozen=True)
class Layer:
    gates: Tuple[Gate, ...]

    @classmethod
    def of(cls, gates: Iterable[Tuple[str, Sequence[int]]]) -> 'Layer':
        """Build a layer with gates in canonical (ascending first qubit) order"""
        gates = [Gate(label, tuple(int(q) for q in qubits)) for label, qubits in gates]
        return cls(tuple(sorted(gates, key=lambda g: (min(g.qubits), g.qubits, g.label))))

    @property
    def qubits(self) -> Tuple[int, ...]:
        return tuple(q for g in self.gates for q in g.qubits)

    def inverse(self) -> 'Layer':
        return Layer(tuple(inverse_gate(g) for g in self.gates))

    def validate(self, graph: ConnectivityGraph, index: int = None):
        where = f" in layer {index}" if index is not None else ""
        seen = set()
        for gate in self.gates:
            if gate_arity(gate.label) != len(gate.qubits):
                raise QcapValidationError(f"Gate {gate.label} has wrong qubit count{where}")
            if seen & set(gate.qubits) or len(set(gate.qubits)) != len(gate.qubits):
                raise OverlappingGates(f"Overlapping gate {gate.label}{gate.qubits}{where}")
            seen |= set(gate.qubits)
            if len(gate.qubits) == 2 and not graph.has_edge(*gate.qubits):
                raise QcapValidationError(f"CNOT{gate.qubits} is not on a graph edge{where}")


@dataclass(frozen=True)
class Circuit:
    id: str
    n: int
    graph: str
    active_qubits: Tuple[int, ...]
    layers: Tuple[Layer, ...]
    kind: str = 'iid'

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def width(self) -> int:
        return len(self.active_qubits)

    def key(self) -> tuple:
        """Identity used for duplicate detection"""
        return self.active_qubits, tuple(tuple(sorted(layer.gates)) for layer in self.layers)

    def validate(self, graph: ConnectivityGraph) -> 'Circuit':
        if graph.n != self.n:
            raise QcapValidationError(f"Circuit {self.id} is for {self.n} qubits, graph has {graph.n}")
        if self.kind not in CIRCUIT_KINDS:
            raise QcapValidationError(f"Circuit {self.id} has unknown kind {self.kind}")
        if self.depth < 1:
            raise QcapValidationError(f"Circuit {self.id} has no layers")
        if not graph.is_connected_subset(self.active_qubits):
            raise QcapValidationError(f"Circuit {self.id} active qubits {self.active_qubits} are not connected")
        active = set(self.active_qubits)
        for i, layer in enumerate(self.layers):
            layer.validate(graph, i)
            if not set(layer.qubits) <= active:
                raise QcapValidationError(f"Circuit {self.id} layer {i} acts outside its active qubits")
        return self

    def to_row(self) -> dict:
        return {
            'id': self.id,
            'n': self.n,
            'graph': self.graph,
            'active_qubits': list(self.active_qubits),
            'kind': self.kind,
            'layers': [[[g.label, list(g.qubits)] for g in layer.gates] for layer in self.layers],
        }

    @classmethod
    def from_row(cls, row: CircuitRow) -> 'Circuit':
        return cls(
            id=row.id,
            n=row.n,
            graph=row.graph,
            active_qubits=tuple(row.active_qubits),
            layers=tuple(Layer.of(layer) for layer in row.layers),
            kind=row.kind,
        )


def inverse_layers(layers: Sequence[Layer]) -> Tuple[Layer, ...]:
    return tuple(layer.inverse() for layer in reversed(layers))


def target_bitstring(c: Circuit) -> str:
    """
    Ideal outcome b(c) over the active qubits, in active-qubit order.

    Raises:
        NotDefiniteOutcome: if some Z_i, pulled back through the circuit, has an X or Y letter
    """
    back = CliffordTableau.identity(c.n)
    for layer in inverse_layers(c.layers):
        back = compose(tableau_of_layer(layer, c.n), back)
    bits = []
    for q in c.active_qubits:
        pulled = conjugate(back, SignedPauli(c.n, 0, 1 << q))
        if pulled.contains_xy():
            raise NotDefiniteOutcome(f"Circuit {c.id} is not definite-outcome (qubit {q} -> {pulled.label})")
        bits.append('0' if pulled.sign == 1 else '1')
    return ''.join(bits)


def sample_connected_subset(g: ConnectivityGraph, w: int, rng: np.random.Generator) -> Tuple[int, ...]:
    """Grow a connected subset from a uniform start by adding uniform frontier qubits"""
    if not 1 <= w <= g.n:
        raise QcapValidationError(f"Subset width {w} outside [1, {g.n}]")
    subset = {int(rng.integers(g.n))}
    while len(subset) < w:
        frontier = sorted({nb for q in subset for nb in g.neighbors(q)} - subset)
        subset.add(frontier[int(rng.integers(len(frontier)))])
    return tuple(sorted(subset))


def sample_layer(g: ConnectivityGraph, active: Sequence[int], density: float, rng: np.random.Generator) -> Layer:
    """
    Sample one layer on ``active``: grab a random maximal matching of edges
    inside the subset, keep each matched edge as a CNOT with the probability
    that makes the expected covered-qubit fraction equal ``density``, and
    fill the rest with uniformly random single-qubit gates.
    """
    active_set = set(active)
    edges = [e for e in g.sorted_edges if e[0] in active_set and e[1] in active_set]
    matching = []
    while edges:
        edge = edges[int(rng.integers(len(edges)))]
        matching.append(edge)
        edges = [e for e in edges if not set(e) & set(edge)]

    mean_cnots = len(active) * density / 2 if len(active) > 1 else 0.0
    if matching and mean_cnots > len(matching):
        logger.debug(f"Density {density:.3f} unreachable on {sorted(active)}; clamping CNOT probability to 1")
    accept = min(1.0, mean_cnots / len(matching)) if matching and mean_cnots > 0 else 0.0

    gates = []
    used = set()
    for a, b in matching:
        if rng.random() < accept:
            control, target = (a, b) if rng.random() < 0.5 else (b, a)
            gates.append(Gate('CNOT', (control, target)))
            used |= {a, b}
    for q in sorted(active_set - used):
        gates.append(Gate(SINGLE_QUBIT_GATES[int(rng.integers(len(SINGLE_QUBIT_GATES)))], (q,)))
    return Layer.of(gates)


def sample_iid_circuit(g: ConnectivityGraph, cfg: SamplerConfig, rng: np.random.Generator,
                       circuit_id: str = 'iid') -> Circuit:
    width = int(rng.integers(cfg.widths[0], min(cfg.widths[1], g.n) + 1))
    active = sample_connected_subset(g, width, rng)
    depth = int(rng.integers(1, cfg.depth_cap(width) + 1))
    density = float(rng.uniform(*cfg.two_qubit_density_range))
    layers = tuple(sample_layer(g, active, density, rng) for _ in range(depth))
    return Circuit(circuit_id, g.n, g.name, active, layers, 'iid').validate(g)


def build_mirror_circuit(g: ConnectivityGraph, active: Sequence[int], prefix: Sequence[Layer],
                         central: Layer, circuit_id: str = 'mirror') -> Circuit:
    """prefix, central layer, then the prefix undone gate-by-gate in reverse order"""
    layers = tuple(prefix) + (central,) + inverse_layers(prefix)
    return Circuit(circuit_id, g.n, g.name, tuple(active), layers, 'mirror').validate(g)


def sample_mirror_circuit(g: ConnectivityGraph, cfg: SamplerConfig, rng: np.random.Generator,
                          circuit_id: str = 'mirror') -> Circuit:
    width = int(rng.integers(cfg.widths[0], min(cfg.widths[1], g.n) + 1))
    active = sample_connected_subset(g, width, rng)
    half_depth = int(rng.integers(1, max(1, cfg.depth_cap(width) // settings.MIRROR_DEPTH_DIVISOR) + 1))
    density = float(rng.uniform(*cfg.two_qubit_density_range))
    prefix = [sample_layer(g, active, density, rng) for _ in range(half_depth)]
    central = Layer.of((PAULI_GATES[int(rng.integers(len(PAULI_GATES)))], (q,)) for q in active)
    return build_mirror_circuit(g, active, prefix, central, circuit_id)


_SAMPLERS = {'iid': sample_iid_circuit, 'mirror': sample_mirror_circuit}


def substream(seed: int, stream: int, index: int) -> np.random.Generator:
    """Independent generator for (seed, stream, index), so items can be built in any order"""
    return np.random.default_rng([seed, stream, index])


def sample_circuits(g: ConnectivityGraph, cfg: SamplerConfig, count: int, kind: str = 'iid',
                    start: int = 0) -> List[Circuit]:
    if kind not in _SAMPLERS:
        raise QcapValidationError(f"Unknown circuit kind: {kind}")
    stream = CIRCUIT_KINDS.index(kind) + 1
    circuits = []
    for i in range(start, start + count):
        rng = substream(cfg.seed, stream, i)
        circuits.append(_SAMPLERS[kind](g, cfg, rng, f"{kind}-{cfg.seed}-{i:06d}"))
    logger.info(f"Sampled {count} {kind} circuits on {g.name} (seed {cfg.seed})")
    return circuits


def make_sampler_config(g: ConnectivityGraph, seed: int, widths: Optional[Tuple[int, int]] = None,
                        max_depth: Optional[int] = None) -> SamplerConfig:
    """
    Sampler defaults for a device: widths 1..min(4, n) with the standard depth caps,
    or a single full-width setting with ``max_depth`` for larger devices.
    """
    if widths is None:
        widths = (1, min(4, g.n)) if max_depth is None else (g.n, g.n)
    caps = {w: _depth_cap(w, max_depth) for w in range(widths[0], widths[1] + 1)}
    return SamplerConfig(widths=widths, max_depth_by_width=caps, seed=seed)


def _depth_cap(width: int, max_depth: Optional[int]) -> int:
    if max_depth is not None:
        return max_depth
    if width in settings.DEPTH_CAPS:
        return settings.DEPTH_CAPS[width]
    return max(1, settings.DEPTH_CAPS[max(settings.DEPTH_CAPS)] * max(settings.DEPTH_CAPS) // width)
