"""Experiment configuration: one JSON document composing every sub-config."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import ValidationError
from .graph import MM_PER_DM, GraphConfig
from .model import EncoderConfig
from .synth import SynthConfig
from .train import TrainConfig

# receptive field used at full scale (q=16 over N=80 triplets)
FULL_SCALE_Q_FRACTION = 16 / 80


def scaled_q(n_nodes: int) -> int:
    return max(1, min(n_nodes - 1, round(FULL_SCALE_Q_FRACTION * n_nodes)))


@dataclass(frozen=True)
class GraphSection:
    q: int = 2
    s_z_mm: float = 0.75
    topology: str = "sparse"
    include_self_loops: bool = False
    weighted: bool = True
    q_per_layer: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.q_per_layer is not None:
            object.__setattr__(self, "q_per_layer", tuple(int(q) for q in self.q_per_layer))


@dataclass(frozen=True)
class DataSection:
    n_train: int = 256
    n_val: int = 64
    n_test: int = 64


def _build(cls, doc: dict | None):
    doc = dict(doc or {})
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ValidationError(f"{cls.__name__}: unknown field(s) {sorted(unknown)}")
    return cls(**doc)


@dataclass(frozen=True)
class ExperimentConfig:
    name: str = "desk"
    seeds: tuple[int, ...] = (0,)
    graph: GraphSection = field(default_factory=GraphSection)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    data: DataSection = field(default_factory=DataSection)

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        self.validate()

    def validate(self) -> None:
        e, s = self.encoder, self.synth
        for a, b in (("n_slices", "n_slices"), ("height", "height"), ("width", "width"), ("slices_per_node", "slices_per_node")):
            if getattr(e, a) != getattr(s, b):
                raise ValidationError(f"encoder.{a}={getattr(e, a)} disagrees with synth.{b}={getattr(s, b)}")
        if e.n_labels != s.n_labels:
            raise ValidationError(f"encoder.n_labels={e.n_labels} disagrees with synth label count {s.n_labels}")
        g = self.graph
        if g.q_per_layer is not None and len(g.q_per_layer) != e.depth:
            raise ValidationError(f"graph.q_per_layer has {len(g.q_per_layer)} entries for depth {e.depth}")
        if not g.s_z_mm > 0:
            raise ValidationError("graph.s_z_mm must be > 0")
        if min(self.data.n_train, self.data.n_val) < 1 or self.data.n_test < 0:
            raise ValidationError("data: n_train and n_val must be >= 1, n_test >= 0")
        if not self.seeds:
            raise ValidationError("seeds must not be empty")
        self.graph_configs()

    def graph_configs(self) -> list[GraphConfig]:
        g, n = self.graph, self.encoder.n_nodes
        qs = g.q_per_layer or (g.q,) * self.encoder.depth
        return [
            GraphConfig(
                n=n,
                q=q,
                s_z=g.s_z_mm / MM_PER_DM,
                include_self_loops=g.include_self_loops,
                topology=g.topology,
                weighted=g.weighted,
                slices_per_node=self.encoder.slices_per_node,
            )
            for q in qs
        ]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["synth"] = self.synth.to_dict()
        d["train"]["betas"] = list(self.train.betas)
        if self.graph.q_per_layer is not None:
            d["graph"]["q_per_layer"] = list(self.graph.q_per_layer)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise ValidationError(f"ExperimentConfig: unknown field(s) {sorted(unknown)}")
        synth = dict(doc.get("synth") or {})
        if "labels" in synth:
            synth["labels"] = tuple(synth["labels"])
        return cls(
            name=doc.get("name", "desk"),
            seeds=tuple(doc.get("seeds", (0,))),
            graph=_build(GraphSection, doc.get("graph")),
            encoder=_build(EncoderConfig, doc.get("encoder")),
            train=_build(TrainConfig, doc.get("train")),
            synth=_build(SynthConfig, synth),
            data=_build(DataSection, doc.get("data")),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def with_updates(self, **sections) -> "ExperimentConfig":
        """Return a copy with fields of sub-configs replaced, e.g. ``encoder={"depth": 3}``."""
        kw = {}
        for name, upd in sections.items():
            cur = getattr(self, name)
            kw[name] = replace(cur, **upd) if isinstance(upd, dict) else upd
        return replace(self, **kw)
