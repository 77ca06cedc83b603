"""Petri nets: JSON/PNML loading and timed-state token replay."""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .eventlog import Event, Vocabulary


@dataclass(frozen=True)
class Transition:
    tid: str
    label: str | None = None  # None marks a silent transition


@dataclass
class PetriNet:
    """Place/transition net with an initial marking.

    Arcs are (source id, target id) pairs and must connect a place with a
    transition. Transition order is significant: when several transitions
    carry the same label, replay fires the enabled one with the lowest index.
    """

    places: tuple[str, ...]
    transitions: tuple[Transition, ...]
    arcs: tuple[tuple[str, str], ...]
    initial_marking: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        place_idx = {p: i for i, p in enumerate(self.places)}
        trans_idx = {t.tid: i for i, t in enumerate(self.transitions)}
        if len(place_idx) != len(self.places):
            raise ValueError("duplicate place ids")
        if len(trans_idx) != len(self.transitions):
            raise ValueError("duplicate transition ids")
        self._place_idx = place_idx
        self._pre: list[list[int]] = [[] for _ in self.transitions]
        self._post: list[list[int]] = [[] for _ in self.transitions]
        for src, dst in self.arcs:
            if src in place_idx and dst in trans_idx:
                self._pre[trans_idx[dst]].append(place_idx[src])
            elif src in trans_idx and dst in place_idx:
                self._post[trans_idx[src]].append(place_idx[dst])
            else:
                raise ValueError(f"arc ({src!r}, {dst!r}) does not connect a place and a transition")
        for place, count in self.initial_marking.items():
            if place not in place_idx:
                raise ValueError(f"initial marking references unknown place {place!r}")
            if count < 0:
                raise ValueError(f"negative initial marking for {place!r}")
        # arc multiplicity: repeated arcs mean that many tokens per firing
        self._pre_counts: list[list[tuple[int, int]]] = [
            sorted(Counter(pre).items()) for pre in self._pre
        ]
        self._silent = [i for i, t in enumerate(self.transitions) if t.label is None]
        self._by_label: dict[str, list[int]] = {}
        for i, t in enumerate(self.transitions):
            if t.label is not None:
                self._by_label.setdefault(t.label, []).append(i)

    @property
    def num_places(self) -> int:
        return len(self.places)

    def initial_vector(self) -> np.ndarray:
        vec = np.zeros(len(self.places), dtype=np.int64)
        for place, count in self.initial_marking.items():
            vec[self._place_idx[place]] = count
        return vec

    def enabled(self, marking: np.ndarray, t: int) -> bool:
        return all(marking[p] >= n for p, n in self._pre_counts[t])


def load_petri_json(source: str | Path | Mapping) -> PetriNet:
    """Load a net from the JSON shape ``{places, transitions, arcs, initial_marking}``."""
    if isinstance(source, (str, Path)):
        data = json.loads(Path(source).read_text(encoding="utf-8"))
    else:
        data = source
    return PetriNet(
        places=tuple(data["places"]),
        transitions=tuple(
            Transition(tid=t["id"], label=t.get("label")) for t in data["transitions"]
        ),
        arcs=tuple((a["from"], a["to"]) for a in data["arcs"]),
        initial_marking={k: int(v) for k, v in data.get("initial_marking", {}).items()},
    )


def load_pnml(source: str | Path) -> PetriNet:
    """Load the PNML subset: net/place/transition/arc elements, initialMarking text.

    Transitions without a name text are treated as silent.
    """
    root = ET.fromstring(Path(source).read_text(encoding="utf-8"))

    def local(tag: str) -> str:
        return tag.rsplit("}", 1)[-1]

    places: list[str] = []
    transitions: list[Transition] = []
    arcs: list[tuple[str, str]] = []
    marking: dict[str, int] = {}
    for node in root.iter():
        tag = local(node.tag)
        if tag == "place":
            pid = node.attrib["id"]
            places.append(pid)
            for sub in node.iter():
                if local(sub.tag) == "initialMarking":
                    text = "".join(t.text or "" for t in sub.iter() if local(t.tag) == "text")
                    if text.strip():
                        marking[pid] = int(text.strip())
        elif tag == "transition":
            label = None
            for sub in node.iter():
                if local(sub.tag) == "name":
                    text = "".join(t.text or "" for t in sub.iter() if local(t.tag) == "text")
                    label = text.strip() or None
                    break
            transitions.append(Transition(tid=node.attrib["id"], label=label))
        elif tag == "arc":
            arcs.append((node.attrib["source"], node.attrib["target"]))
    return PetriNet(
        places=tuple(places),
        transitions=tuple(transitions),
        arcs=tuple(arcs),
        initial_marking=marking,
    )


def load_petri_net(path: str | Path) -> PetriNet:
    path = Path(path)
    if path.suffix.lower() == ".pnml" or path.suffix.lower() == ".xml":
        return load_pnml(path)
    return load_petri_json(path)


@dataclass
class TimedStateVector:
    """Replay state of a net: decay values, token throughput, marking,
    attribute-value occurrence counts, plus the count of skipped events."""

    decay: np.ndarray  # in [0, 1] per place
    throughput: np.ndarray  # tokens that passed through each place
    marking: np.ndarray  # current tokens per place
    attribute_counts: dict[str, dict[str, int]]
    nonconforming: int = 0

    def to_vector(self, attribute_vocabs: Mapping[str, Vocabulary] | None = None) -> np.ndarray:
        """Flatten to one feature vector; attribute counts need vocabularies."""
        parts = [self.decay, self.throughput.astype(np.float64), self.marking.astype(np.float64)]
        for name, vocab in (attribute_vocabs or {}).items():
            counts = np.zeros(len(vocab), dtype=np.float64)
            for value, count in self.attribute_counts.get(name, {}).items():
                counts[vocab.index(value)] = count
            parts.append(counts)
        return np.concatenate(parts)


def _silent_path_to_enable(
    net: PetriNet, marking: np.ndarray, label: str, max_nodes: int = 10000
) -> list[int] | None:
    """Shortest silent-transition firing sequence after which ``label`` is enabled.

    Breadth-first over markings, expanding silent transitions in index order,
    so the result is deterministic. Returns None when no sequence exists
    within the search budget.
    """
    targets = net._by_label.get(label, [])
    if not targets:
        return None

    def goal(m: np.ndarray) -> bool:
        return any(net.enabled(m, t) for t in targets)

    if goal(marking):
        return []
    start = tuple(int(x) for x in marking)
    queue: deque[tuple[tuple[int, ...], list[int]]] = deque([(start, [])])
    seen = {start}
    while queue and len(seen) <= max_nodes:
        state, path = queue.popleft()
        m = np.asarray(state, dtype=np.int64)
        for t in net._silent:
            if not net.enabled(m, t):
                continue
            nxt = m.copy()
            for p in net._pre[t]:
                nxt[p] -= 1
            for p in net._post[t]:
                nxt[p] += 1
            key = tuple(int(x) for x in nxt)
            if key in seen:
                continue
            new_path = path + [t]
            if goal(nxt):
                return new_path
            seen.add(key)
            queue.append((key, new_path))
    return None


def replay_timed_state(
    net: PetriNet,
    events: Sequence[Event],
    at_ms: int,
    decay_seconds: float,
) -> TimedStateVector:
    """Token-replay a prefix and report the timed state at ``at_ms``.

    Initial tokens count once toward throughput and are treated as deposited
    at the case start (the first event's timestamp; ``at_ms`` for an empty
    prefix). Firing a transition moves one token per arc; each place receiving
    a token records the firing time as its last visit. The decay value of a
    place is ``1 - (at - last_visit) / decay_T`` clamped to [0, 1], and 0 for
    places never visited. Events with no matching enabled transition (after
    greedily firing silent transitions) are skipped and counted as
    nonconforming; the marking is left untouched.
    """
    if decay_seconds <= 0:
        raise ValueError("decay_seconds must be positive")
    marking = net.initial_vector()
    throughput = marking.copy()
    last_visit = np.full(net.num_places, np.nan)
    start_ms = events[0].timestamp_ms if events else at_ms
    last_visit[marking > 0] = float(start_ms)

    nonconforming = 0
    attribute_counts: dict[str, dict[str, int]] = {}

    def fire(t: int, when_ms: int) -> None:
        nonlocal marking
        for p in net._pre[t]:
            marking[p] -= 1
        for p in net._post[t]:
            marking[p] += 1
            throughput[p] += 1
            last_visit[p] = float(when_ms)

    for ev in events:
        for name, value in ev.attributes.items():
            attribute_counts.setdefault(name, {}).setdefault(value, 0)
            attribute_counts[name][value] += 1
        candidates = [t for t in net._by_label.get(ev.activity, []) if net.enabled(marking, t)]
        if not candidates:
            path = _silent_path_to_enable(net, marking, ev.activity)
            if path is None:
                nonconforming += 1
                continue
            for t in path:
                fire(t, ev.timestamp_ms)
            candidates = [
                t for t in net._by_label.get(ev.activity, []) if net.enabled(marking, t)
            ]
        fire(candidates[0], ev.timestamp_ms)

    decay = np.zeros(net.num_places, dtype=np.float64)
    for p in range(net.num_places):
        if not np.isnan(last_visit[p]):
            age = (at_ms - last_visit[p]) / 1000.0
            decay[p] = min(1.0, max(0.0, 1.0 - age / decay_seconds))
    return TimedStateVector(
        decay=decay,
        throughput=throughput,
        marking=marking,
        attribute_counts=attribute_counts,
        nonconforming=nonconforming,
    )
