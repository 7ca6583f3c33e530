"""Cascade-topology feed-forward networks of deterministic logistic units.

A network is a layered DAG: input units and one bias unit at layer 0,
hidden units at layers 1..D, output units at layer D+1.  Every connection
runs from a strictly lower layer to a higher one, so cascade connections
(e.g. input directly to output, or an early hidden unit to a much later
one) are allowed.  All non-input units apply the logistic function
s(t) = 1/(1+e^-t), so outputs always lie in (0, 1).

Connections carry a ``frozen`` flag: frozen weights are never touched by
training (only by explicit weight disruption, see :mod:`probnet.attention`).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

INPUT = "input"
HIDDEN = "hidden"
OUTPUT = "output"
BIAS = "bias"

_KINDS = (INPUT, HIDDEN, OUTPUT, BIAS)

FORMAT_VERSION = 1


class ShapeError(ValueError):
    """Input vector does not match the network's input layer."""


class SnapshotError(ValueError):
    """A snapshot document is malformed; the message names the bad field."""


@dataclass
class Unit:
    id: int
    layer: int
    kind: str

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown unit kind {self.kind!r}")
        if self.layer < 0:
            raise ValueError("unit layer must be non-negative")


@dataclass
class Connection:
    source: int
    target: int
    weight: float = 0.0
    frozen: bool = False


class Network:
    """Feed-forward net of logistic units with frozen/trainable weights.

    Evaluation is pure and thread-safe; mutation (adding units, changing
    weights) requires exclusive access and invalidates the cached
    evaluation plan.
    """

    def __init__(self, units: Iterable[Unit], connections: Iterable[Connection],
                 rng_seed: int | None = None):
        self.units = list(units)
        self.connections = list(connections)
        self.rng_seed = rng_seed
        self._plan = None
        self.validate()

    # -- construction -------------------------------------------------

    @classmethod
    def minimal(cls, n_inputs: int, n_outputs: int = 1,
                rng_seed: int | None = None) -> "Network":
        """Minimal network: inputs, bias, and outputs only, all weights 0.

        Outputs sit at layer 1 with a direct connection from every input
        and from the bias unit.  Hidden units are only ever added later by
        recruitment.
        """
        units = [Unit(i, 0, INPUT) for i in range(n_inputs)]
        units.append(Unit(n_inputs, 0, BIAS))
        out_ids = range(n_inputs + 1, n_inputs + 1 + n_outputs)
        units.extend(Unit(i, 1, OUTPUT) for i in out_ids)
        conns = [Connection(src, out) for out in out_ids
                 for src in range(n_inputs + 1)]
        return cls(units, conns, rng_seed=rng_seed)

    def copy(self) -> "Network":
        units = [Unit(u.id, u.layer, u.kind) for u in self.units]
        conns = [Connection(c.source, c.target, c.weight, c.frozen)
                 for c in self.connections]
        return Network(units, conns, rng_seed=self.rng_seed)

    # -- structure queries --------------------------------------------

    def units_of(self, kind: str) -> list[Unit]:
        return [u for u in self.units if u.kind == kind]

    @property
    def input_units(self) -> list[Unit]:
        return self.units_of(INPUT)

    @property
    def output_units(self) -> list[Unit]:
        return self.units_of(OUTPUT)

    @property
    def hidden_units(self) -> list[Unit]:
        return self.units_of(HIDDEN)

    @property
    def bias_unit(self) -> Unit:
        return self.units_of(BIAS)[0]

    @property
    def n_inputs(self) -> int:
        return len(self.input_units)

    @property
    def n_outputs(self) -> int:
        return len(self.output_units)

    @property
    def n_hidden(self) -> int:
        return len(self.hidden_units)

    @property
    def max_hidden_layer(self) -> int:
        """Deepest hidden layer index; 0 when there are no hidden units."""
        hidden = self.hidden_units
        return max(u.layer for u in hidden) if hidden else 0

    def unit_by_id(self, uid: int) -> Unit:
        for u in self.units:
            if u.id == uid:
                return u
        raise KeyError(f"no unit with id {uid}")

    def incoming(self, uid: int) -> list[Connection]:
        return [c for c in self.connections if c.target == uid]

    # -- validation ----------------------------------------------------

    def validate(self) -> None:
        ids = [u.id for u in self.units]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate unit ids")
        by_id = {u.id: u for u in self.units}

        if len(self.units_of(BIAS)) != 1:
            raise ValueError("network must contain exactly one bias unit")
        if not self.output_units:
            raise ValueError("network must contain at least one output unit")

        max_layer = max(u.layer for u in self.units)
        for u in self.units:
            if u.kind in (INPUT, BIAS) and u.layer != 0:
                raise ValueError(f"unit {u.id}: {u.kind} units must be at layer 0")
            if u.kind == OUTPUT and u.layer != max_layer:
                raise ValueError(f"unit {u.id}: output units must occupy the maximal layer")
            if u.kind == HIDDEN and not 0 < u.layer < max_layer:
                raise ValueError(f"unit {u.id}: hidden layer {u.layer} out of range")

        for i, c in enumerate(self.connections):
            if c.source not in by_id or c.target not in by_id:
                raise ValueError(f"connection {i}: unknown unit id")
            src, tgt = by_id[c.source], by_id[c.target]
            if tgt.kind in (INPUT, BIAS):
                raise ValueError(f"connection {i}: {tgt.kind} units take no incoming connections")
            if src.layer >= tgt.layer:
                raise ValueError(
                    f"connection {i}: source layer {src.layer} not below target "
                    f"layer {tgt.layer} (feed-forward order violated)")
            if tgt.kind == OUTPUT and c.frozen:
                raise ValueError(f"connection {i}: output-unit connections are never frozen")

    # -- evaluation ----------------------------------------------------

    def _evaluation_plan(self):
        """Cached (order, per-unit incoming indices) for batch evaluation."""
        if self._plan is None:
            order = sorted(self.units, key=lambda u: (u.layer, u.id))
            pos = {u.id: i for i, u in enumerate(order)}
            per_target: dict[int, list[int]] = {}
            for ci, c in enumerate(self.connections):
                per_target.setdefault(c.target, []).append(ci)
            steps = []
            for u in order:
                if u.kind in (INPUT, BIAS):
                    continue
                cidx = per_target.get(u.id, [])
                srcs = np.array([pos[self.connections[ci].source] for ci in cidx],
                                dtype=np.intp)
                steps.append((pos[u.id], srcs, np.array(cidx, dtype=np.intp)))
            input_ids = sorted(u.id for u in self.input_units)
            input_cols = {uid: col for col, uid in enumerate(input_ids)}
            self._plan = (order, pos, steps, input_cols)
        return self._plan

    def invalidate(self) -> None:
        """Drop the cached evaluation plan after a structural change."""
        self._plan = None

    def activations(self, inputs: np.ndarray) -> np.ndarray:
        """All unit activations for a batch of input rows.

        ``inputs`` has shape (n_samples, n_inputs); the result has shape
        (n_units, n_samples), rows following the (layer, id) evaluation
        order returned by :meth:`_evaluation_plan`.
        """
        order, pos, steps, input_cols = self._evaluation_plan()
        X = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
        if X.shape[1] != self.n_inputs:
            raise ShapeError(
                f"expected {self.n_inputs} inputs per sample, got {X.shape[1]}")
        acts = np.empty((len(order), X.shape[0]), dtype=np.float64)
        for u in order:
            i = pos[u.id]
            if u.kind == INPUT:
                acts[i] = X[:, input_cols[u.id]]
            elif u.kind == BIAS:
                acts[i] = 1.0
        weights = np.array([c.weight for c in self.connections], dtype=np.float64)
        for tpos, srcs, cidx in steps:
            net = weights[cidx] @ acts[srcs] if len(cidx) else np.zeros(X.shape[0])
            acts[tpos] = expit(net)
        return acts

    def forward_batch(self, inputs: np.ndarray) -> np.ndarray:
        """Output activations for a batch; shape (n_samples, n_outputs)."""
        order, pos, _, _ = self._evaluation_plan()
        acts = self.activations(inputs)
        out_rows = [pos[u.id] for u in sorted(self.output_units, key=lambda u: u.id)]
        return acts[out_rows].T

    def forward(self, x: Sequence[float]) -> np.ndarray:
        """Output activations for a single input vector.

        Deterministic: identical inputs and weights yield bit-identical
        outputs.  Raises :class:`ShapeError` on a length mismatch.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise ShapeError("forward expects a 1-d input vector")
        return self.forward_batch(x[None, :])[0]

    # -- growth (used by recruitment) ----------------------------------

    def add_hidden_unit(self, layer: int, incoming: list[tuple[int, float]],
                        freeze_incoming: bool = True) -> Unit:
        """Install a hidden unit at ``layer`` with the given incoming weights.

        When ``layer`` exceeds the current deepest hidden layer, output
        units are shifted up one layer so they stay maximal.  Returns the
        new unit; the caller wires its outgoing connections.
        """
        new_id = max(u.id for u in self.units) + 1
        if layer > self.max_hidden_layer:
            for u in self.output_units:
                u.layer = layer + 1
        unit = Unit(new_id, layer, HIDDEN)
        self.units.append(unit)
        for src, w in incoming:
            self.connections.append(Connection(src, new_id, float(w), frozen=freeze_incoming))
        self.invalidate()
        self.validate()
        return unit


# -- persistence -------------------------------------------------------

def serialize(net: Network) -> str:
    """Snapshot a network as a versioned, human-readable JSON document.

    Weights round-trip exactly: floats are written with Python's
    shortest-exact decimal representation.
    """
    doc = {
        "format_version": FORMAT_VERSION,
        "rng_seed": net.rng_seed,
        "units": [{"id": u.id, "layer": u.layer, "kind": u.kind} for u in net.units],
        "connections": [
            {"source": c.source, "target": c.target, "weight": c.weight,
             "frozen": c.frozen}
            for c in net.connections
        ],
    }
    return json.dumps(doc, indent=1)


def _require(mapping: dict, key: str, kinds, where: str):
    if key not in mapping:
        raise SnapshotError(f"{where}.{key}: missing")
    value = mapping[key]
    if isinstance(value, bool) and kinds is not bool:
        raise SnapshotError(f"{where}.{key}: wrong type bool")
    if not isinstance(value, kinds):
        raise SnapshotError(f"{where}.{key}: wrong type {type(value).__name__}")
    return value


def deserialize(text: str) -> Network:
    """Load a snapshot produced by :func:`serialize`.

    Malformed documents raise :class:`SnapshotError` naming the offending
    field; structural violations (cycles, layer-order breaks) are rejected.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"document: not valid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise SnapshotError("document: expected an object")
    version = _require(doc, "format_version", int, "document")
    if version != FORMAT_VERSION:
        raise SnapshotError(f"document.format_version: unsupported version {version}")
    seed = doc.get("rng_seed")
    if seed is not None and not isinstance(seed, int):
        raise SnapshotError("document.rng_seed: expected integer or null")

    units = []
    for i, entry in enumerate(_require(doc, "units", list, "document")):
        if not isinstance(entry, dict):
            raise SnapshotError(f"units[{i}]: expected an object")
        where = f"units[{i}]"
        try:
            units.append(Unit(_require(entry, "id", int, where),
                              _require(entry, "layer", int, where),
                              _require(entry, "kind", str, where)))
        except ValueError as exc:
            raise SnapshotError(f"{where}: {exc}") from None

    conns = []
    for i, entry in enumerate(_require(doc, "connections", list, "document")):
        if not isinstance(entry, dict):
            raise SnapshotError(f"connections[{i}]: expected an object")
        where = f"connections[{i}]"
        weight = _require(entry, "weight", (int, float), where)
        frozen = _require(entry, "frozen", bool, where)
        conns.append(Connection(_require(entry, "source", int, where),
                                _require(entry, "target", int, where),
                                float(weight), frozen))

    try:
        return Network(units, conns, rng_seed=seed)
    except ValueError as exc:
        raise SnapshotError(f"document: {exc}") from None


def save(net: Network, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize(net))
        fh.write("\n")


def load(path) -> Network:
    with open(path, "r", encoding="utf-8") as fh:
        return deserialize(fh.read())
