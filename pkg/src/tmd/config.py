"""Experiment configuration: one JSON document with a block per concern.

Top-level blocks are ``environment``, ``dataset``, ``eval``, ``train``, ``model``,
``tmd`` (every TmdConfig field), ``qrl`` and ``ablate``. Unknown keys anywhere are
rejected so that a typo cannot silently fall back to a default. Relative paths
are resolved against the directory holding the config file.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .baselines import QrlConfig
from .envs import DatasetSpec, GridSpec, Gridworld, build_gridworld
from .losses import TmdConfig
from .mdp import MDPError
from .mrn import MrnConfig
from .policy import EvalTask


class ConfigError(ValueError):
    pass


def _strict(cls, doc: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown keys in {where!r}: {sorted(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad {where!r} block: {exc}") from exc


# ---------------------------------------------------------------------------
# environment presets


def _column_walls(x: int, height: int, gaps) -> list:
    return [(x, y) for y in range(height) if (x, y) not in set(gaps)]


PRESET_ENVS = {
    # open 7x7 room; the stitching difficulty comes from the data, not the layout
    "open7": dict(width=7, height=7),
    # a wall splits the room; one safe gap at the top and a gamble in the middle
    # that lands past the wall with probability 0.4 and in the far corner otherwise
    "teleport7": dict(
        width=7,
        height=7,
        walls=_column_walls(3, 7, gaps=[(3, 0), (3, 3)]),
        teleport_cells={(3, 3): {(4, 3): 0.4, (0, 0): 0.6}},
    ),
}

# regions as inclusive rectangles (x0, x1, y0, y1)
PRESET_REGIONS = {
    "quadrants7": [(0, 3, 0, 3), (3, 6, 0, 3), (0, 3, 3, 6), (3, 6, 3, 6)],
    "bands7": [(0, 6, 0, 3), (0, 6, 3, 6)],
}

PRESET_TASKS = {
    # opposite corners of the quadrant layout: no single trajectory connects them
    "quadrant-cross": [
        ((0, 0), (6, 6)), ((6, 0), (0, 6)), ((0, 6), (6, 0)), ((6, 6), (0, 0)),
        ((1, 1), (5, 5)), ((5, 1), (1, 5)), ((1, 5), (5, 1)), ((5, 5), (1, 1)),
    ],
    "quadrant-local": [
        ((0, 0), (2, 2)), ((6, 0), (4, 2)), ((0, 6), (2, 3)),
        ((6, 6), (3, 4)), ((1, 2), (3, 0)), ((4, 4), (6, 6)),
    ],
    # left of the wall to right of it
    "teleport-cross": [
        ((0, 3), (6, 3)), ((1, 4), (6, 3)), ((2, 3), (5, 3)), ((0, 5), (6, 2)),
        ((1, 2), (6, 4)), ((2, 5), (5, 2)),
    ],
    # bottom band, left to right: the safe gap lies in the other band
    "band-cross": [
        ((0, 6), (6, 6)), ((1, 5), (5, 5)), ((0, 4), (6, 4)), ((2, 6), (4, 6)),
        ((1, 6), (6, 5)), ((0, 5), (5, 6)),
    ],
}


def _cell(c) -> tuple:
    c = tuple(int(v) for v in c)
    if len(c) != 2:
        raise ConfigError(f"cells are [x, y] pairs, got {list(c)}")
    return c


@dataclass
class EnvironmentConfig:
    preset: str | None = None
    width: int | None = None
    height: int | None = None
    walls: list = field(default_factory=list)
    # [{"cell": [x, y], "to": [[[x, y], p], ...]}, ...]
    teleport_cells: list = field(default_factory=list)
    gamma: float = 0.9

    def grid_spec(self) -> GridSpec:
        if self.preset is not None:
            if self.preset not in PRESET_ENVS:
                raise ConfigError(f"unknown environment preset {self.preset!r}; known: {sorted(PRESET_ENVS)}")
            if self.width is not None or self.height is not None or self.walls or self.teleport_cells:
                raise ConfigError("an environment preset cannot be combined with an explicit layout")
            return GridSpec(**PRESET_ENVS[self.preset], gamma=self.gamma)
        if self.width is None or self.height is None:
            raise ConfigError("environment needs a preset or width and height")
        tele = {}
        for entry in self.teleport_cells:
            if set(entry) != {"cell", "to"}:
                raise ConfigError(f"teleport entries take 'cell' and 'to', got {sorted(entry)}")
            tele[_cell(entry["cell"])] = {_cell(d): float(p) for d, p in entry["to"]}
        return GridSpec(self.width, self.height, [_cell(w) for w in self.walls], tele, self.gamma)

    def build(self) -> Gridworld:
        try:
            return build_gridworld(self.grid_spec())
        except MDPError as exc:
            raise ConfigError(f"environment: {exc}") from exc


@dataclass
class DataConfig:
    path: str = "dataset.jsonl"
    behavior: str = "uniform-random-walk"
    n_trajectories: int = 100
    trajectory_len: int = 20
    seed: int = 0
    regions: str | list | None = None  # preset name or list of [x0, x1, y0, y1]
    epsilon: float = 0.2

    def rectangles(self) -> list | None:
        if self.regions is None:
            return None
        if isinstance(self.regions, str):
            if self.regions not in PRESET_REGIONS:
                raise ConfigError(f"unknown region preset {self.regions!r}; known: {sorted(PRESET_REGIONS)}")
            return PRESET_REGIONS[self.regions]
        return [tuple(int(v) for v in r) for r in self.regions]

    def dataset_spec(self, gw: Gridworld) -> DatasetSpec:
        regions = None
        rects = self.rectangles()
        if rects is not None:
            regions = []
            for x0, x1, y0, y1 in rects:
                regions.append([i for i, (x, y) in enumerate(gw.cells) if x0 <= x <= x1 and y0 <= y <= y1])
        return DatasetSpec(self.behavior, self.n_trajectories, self.trajectory_len, self.seed, regions, self.epsilon)


@dataclass
class EvalConfig:
    tasks: str | list = "quadrant-cross"  # preset name or [[start], [goal]] cell pairs
    horizon: int = 24
    episodes: int = 20
    seed: int = 0
    extraction: str = "critic"  # greedy over learned distances, or the trained policy network

    def __post_init__(self):
        if self.extraction not in ("critic", "policy"):
            raise ConfigError(f"extraction must be 'critic' or 'policy', got {self.extraction!r}")

    def task_list(self, gw: Gridworld) -> list:
        pairs = self.tasks
        if isinstance(pairs, str):
            if pairs not in PRESET_TASKS:
                raise ConfigError(f"unknown task preset {pairs!r}; known: {sorted(PRESET_TASKS)}")
            pairs = PRESET_TASKS[pairs]
        out = []
        for start, goal in pairs:
            try:
                out.append(EvalTask(gw.state(_cell(start)), gw.state(_cell(goal)), self.horizon, self.episodes))
            except KeyError as exc:
                raise ConfigError(f"task cell {exc.args[0]} is not a free cell") from exc
        return out


@dataclass
class TrainConfig:
    steps: int = 5000
    seed: int = 0
    method: str = "tmd"  # or "qrl"
    train_policy: bool = False
    log_every: int = 100
    checkpoint_every: int = 0  # 0: only the final checkpoint
    out_dir: str = "runs/default"
    features: str = "one-hot"  # or "coords"

    def __post_init__(self):
        if self.method not in ("tmd", "qrl"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.features not in ("one-hot", "coords"):
            raise ConfigError(f"unknown features {self.features!r}")
        if self.steps < 0 or self.log_every < 1 or self.checkpoint_every < 0:
            raise ConfigError("steps and checkpoint_every must be >= 0, log_every >= 1")


@dataclass
class ModelConfig:
    components: int = 8
    size: int = 4
    hidden: list = field(default_factory=lambda: [64, 64])
    layer_norm: bool = True
    policy_hidden: list = field(default_factory=lambda: [64, 64])

    def mrn(self) -> MrnConfig:
        return MrnConfig(self.components, self.size, tuple(self.hidden), self.layer_norm)


ABLATION_VARIANTS = ("full", "no-stop-gradient", "no-nce", "no-i", "no-t")


@dataclass
class AblateConfig:
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4, 5])
    variants: list = field(default_factory=lambda: list(ABLATION_VARIANTS))

    def __post_init__(self):
        bad = [v for v in self.variants if v not in ABLATION_VARIANTS]
        if bad:
            raise ConfigError(f"unknown ablation variants {bad}; known: {list(ABLATION_VARIANTS)}")


_BLOCKS = {
    "environment": EnvironmentConfig,
    "dataset": DataConfig,
    "eval": EvalConfig,
    "train": TrainConfig,
    "model": ModelConfig,
    "tmd": TmdConfig,
    "qrl": QrlConfig,
    "ablate": AblateConfig,
}


@dataclass
class ExperimentConfig:
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    dataset: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    tmd: TmdConfig = field(default_factory=TmdConfig)
    qrl: QrlConfig = field(default_factory=QrlConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    base_dir: Path = field(default=Path("."), compare=False)

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(doc) - set(_BLOCKS)
        if unknown:
            raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
        blocks = {}
        for name, block_cls in _BLOCKS.items():
            sub = doc.get(name, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"block {name!r} must be an object")
            blocks[name] = _strict(block_cls, sub, name)
        return cls(**blocks, base_dir=Path(base_dir))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"config not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc, path.parent)

    def to_dict(self) -> dict:
        return {name: asdict(getattr(self, name)) for name in _BLOCKS}

    def resolve(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def dataset_path(self) -> Path:
        return self.resolve(self.dataset.path)

    @property
    def out_dir(self) -> Path:
        return self.resolve(self.train.out_dir)
