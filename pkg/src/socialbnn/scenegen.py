"""Synthetic living-room scenes, their 29-feature encoding, and simulated labels.

Scenes are drawn by sampling every factor uniformly over its documented
range and then reconciling the counts. Entities that are absent keep their
distance fields at the range maximum (``MAX_RANGE``) and their flags at 0.

Feature layout (index: field, range)::

     0  within_circle           {0, 1}
     1  circle_radius           [0.5, 3]   m
     2  along_arrow             {0, 1}
     3  n_humans                0..9
     4  n_children              0..2
     5  dist_child              [0.4, 6]   m, 6 when no child
     6  n_animals               {0, 1}
     7  dist_animal             [0.4, 6]   m, 6 when no animal
     8  group_size              2..5       5 when no group
     9  group_radius            [0.5, 1]   m, 1 when no group
    10  dist_group              [0, 6]     m, 6 when no group
    11  robot_in_group          {0, 1}
    12  robot_facing_group      {0, 1}
    13-15 dist_humans_3         [0.3, 5]   m, ascending, 5 for missing humans
    16-18 dir_robot_to_3        [0, 360)   deg, 0 for missing humans
    19  dir_closest_to_robot    [0, 360)   deg, 0 when nobody is present
    20-22 robot_facing_3        {0, 1}
    23-25 facing_robot_3        {0, 1}
    26  n_on_sofa               0..2
    27  music                   {0, 1}
    28  total_agents            1..11      humans + animal + the robot
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from enum import Enum
from typing import Optional

import numpy as np
from scipy.special import ndtr

N_FEATURES = 29
N_ACTIONS = 16
N_RATERS = 15

FEATURE_NAMES = (
    ["within_circle", "circle_radius", "along_arrow", "n_humans", "n_children", "dist_child"]
    + ["n_animals", "dist_animal", "group_size", "group_radius", "dist_group"]
    + ["robot_in_group", "robot_facing_group"]
    + [f"dist_human_{i}" for i in range(3)]
    + [f"dir_robot_to_human_{i}" for i in range(3)]
    + ["dir_closest_to_robot"]
    + [f"robot_facing_human_{i}" for i in range(3)]
    + [f"human_{i}_facing_robot" for i in range(3)]
    + ["n_on_sofa", "music", "total_agents"]
)

FEATURE_LOW = np.array(
    [0, 0.5, 0, 0, 0, 0.4, 0, 0.4, 2, 0.5, 0.0, 0, 0]
    + [0.3] * 3 + [0.0] * 3 + [0.0] + [0] * 3 + [0] * 3 + [0, 0, 1],
    dtype=np.float64,
)
FEATURE_HIGH = np.array(
    [1, 3.0, 1, 9, 2, 6.0, 1, 6.0, 5, 1.0, 6.0, 1, 1]
    + [5.0] * 3 + [360.0] * 3 + [360.0] + [1] * 3 + [1] * 3 + [2, 1, 11],
    dtype=np.float64,
)
# angles live in [0, 360)
_OPEN_TOP = np.zeros(N_FEATURES, dtype=bool)
_OPEN_TOP[16:20] = True
_INTEGER = np.ones(N_FEATURES, dtype=bool)
_INTEGER[[1, 5, 7, 9, 10, 13, 14, 15, 16, 17, 18, 19]] = False

MAX_CHILD_DIST = 6.0
MAX_ANIMAL_DIST = 6.0
MAX_GROUP_DIST = 6.0
MAX_HUMAN_DIST = 5.0


class Mode(str, Enum):
    CIRCLE = "circle"
    ARROW = "arrow"


@dataclass(frozen=True)
class ActionId:
    index: int
    name: str
    mode: Mode


_ACTION_NAMES = [
    "Vacuum cleaning",
    "Mopping the floor",
    "Carry warm food",
    "Carry cold food",
    "Carry drinks",
    "Carry small objects (plates, toys)",
    "Carry big objects (tables, chairs)",
]
ACTIONS = tuple(
    [ActionId(i, n, Mode.CIRCLE) for i, n in enumerate(_ACTION_NAMES + ["Cleaning (Picking up stuff)"])]
    + [ActionId(8 + i, n, Mode.ARROW) for i, n in enumerate(_ACTION_NAMES + ["Starting conversation"])]
)
CIRCLE_ACTIONS = tuple(range(8))
ARROW_ACTIONS = tuple(range(8, 16))
CONVERSATION = 15


def actions_for_mode(mode: Mode) -> tuple[int, ...]:
    return CIRCLE_ACTIONS if Mode(mode) is Mode.CIRCLE else ARROW_ACTIONS


@dataclass(frozen=True)
class Scene:
    within_circle: bool
    circle_radius: float
    along_arrow: bool
    n_humans: int
    n_children: int
    dist_child: float
    n_animals: int
    dist_animal: float
    group_size: int
    group_radius: float
    dist_group: float
    robot_in_group: bool
    robot_facing_group: bool
    dist_humans_3: tuple[float, float, float]
    dir_robot_to_3: tuple[float, float, float]
    dir_closest_to_robot: float
    robot_facing_3: tuple[bool, bool, bool]
    facing_robot_3: tuple[bool, bool, bool]
    n_on_sofa: int
    music: bool
    total_agents: int

    @property
    def has_group(self) -> bool:
        return self.n_humans >= 2

    def with_mode(self, mode: Mode) -> "Scene":
        circle = Mode(mode) is Mode.CIRCLE
        return replace(self, within_circle=circle, along_arrow=not circle)


def _bit(rng) -> bool:
    return bool(rng.integers(0, 2))


def sample_scene(rng: np.random.Generator) -> Scene:
    """Draw every factor uniformly, then reconcile counts and absent entities."""
    within_circle = _bit(rng)
    circle_radius = rng.uniform(0.5, 3.0)
    n_humans = int(rng.integers(0, 10))
    n_children = min(int(rng.integers(0, 3)), n_humans)
    dist_child = rng.uniform(0.4, 6.0)
    n_animals = int(rng.integers(0, 2))
    dist_animal = rng.uniform(0.4, 6.0)
    group_size = int(rng.integers(2, 6))
    group_radius = rng.uniform(0.5, 1.0)
    dist_group = rng.uniform(0.0, 6.0)
    robot_in_group = _bit(rng)
    robot_facing_group = _bit(rng)
    dists = rng.uniform(0.3, 5.0, size=3)
    dirs = rng.uniform(0.0, 360.0, size=3)
    dir_closest = rng.uniform(0.0, 360.0)
    robot_facing = [_bit(rng) for _ in range(3)]
    facing_robot = [_bit(rng) for _ in range(3)]
    n_on_sofa = min(int(rng.integers(0, 3)), n_humans)
    music = _bit(rng)

    if n_children == 0:
        dist_child = MAX_CHILD_DIST
    if n_animals == 0:
        dist_animal = MAX_ANIMAL_DIST
    if n_humans >= 2:
        group_size = min(group_size, n_humans)
    else:
        group_size, group_radius, dist_group = 5, 1.0, MAX_GROUP_DIST
        robot_in_group = robot_facing_group = False
    present = min(n_humans, 3)
    # only present humans are sorted, so their pooled distances stay uniform; empty slots take sentinels
    dists = sorted(float(d) for d in dists[:present]) + [MAX_HUMAN_DIST] * (3 - present)
    dirs = [float(d) if i < present else 0.0 for i, d in enumerate(dirs)]
    robot_facing = [b and i < present for i, b in enumerate(robot_facing)]
    facing_robot = [b and i < present for i, b in enumerate(facing_robot)]
    if n_humans == 0:
        dir_closest = 0.0

    return Scene(
        within_circle=within_circle,
        circle_radius=float(circle_radius),
        along_arrow=not within_circle,
        n_humans=n_humans,
        n_children=n_children,
        dist_child=float(dist_child),
        n_animals=n_animals,
        dist_animal=float(dist_animal),
        group_size=group_size,
        group_radius=float(group_radius),
        dist_group=float(dist_group),
        robot_in_group=robot_in_group,
        robot_facing_group=robot_facing_group,
        dist_humans_3=tuple(dists),
        dir_robot_to_3=tuple(dirs),
        dir_closest_to_robot=float(dir_closest),
        robot_facing_3=tuple(robot_facing),
        facing_robot_3=tuple(facing_robot),
        n_on_sofa=n_on_sofa,
        music=music,
        total_agents=n_humans + n_animals + 1,
    )


def scene_stream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for scene ``index`` of a dataset seeded with ``seed``."""
    return np.random.default_rng([seed, 0, index])


def validate_features(x: np.ndarray) -> None:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != N_FEATURES:
        raise ValueError(f"feature vector must have {N_FEATURES} entries, got {x.shape[-1]}")
    bad = (x < FEATURE_LOW) | (x > FEATURE_HIGH) | (_OPEN_TOP & (x >= FEATURE_HIGH)) | ~np.isfinite(x)
    bad |= _INTEGER & (x != np.round(x))
    if np.any(bad):
        j = int(np.argwhere(bad)[0][-1])
        raise ValueError(f"feature {j} ({FEATURE_NAMES[j]}) out of range: {x.reshape(-1, N_FEATURES)[:, j]}")


def featurize(scene: Scene, mode: Optional[Mode] = None) -> np.ndarray:
    """Encode a scene as the 29-vector; ``mode`` overrides the geometry flags."""
    s = scene if mode is None else scene.with_mode(mode)
    x = np.array(
        [
            s.within_circle, s.circle_radius, s.along_arrow, s.n_humans, s.n_children, s.dist_child,
            s.n_animals, s.dist_animal, s.group_size, s.group_radius, s.dist_group,
            s.robot_in_group, s.robot_facing_group,
            *s.dist_humans_3, *s.dir_robot_to_3, s.dir_closest_to_robot,
            *s.robot_facing_3, *s.facing_robot_3,
            s.n_on_sofa, s.music, s.total_agents,
        ],
        dtype=np.float64,
    )
    if s.within_circle == s.along_arrow:
        raise ValueError("exactly one of within_circle / along_arrow must be set")
    validate_features(x)
    return x


def scene_from_features(x) -> Scene:
    x = np.asarray(x, dtype=np.float64)
    validate_features(x)
    b = lambda v: bool(v)  # noqa: E731
    i = lambda v: int(v)  # noqa: E731
    return Scene(
        within_circle=b(x[0]), circle_radius=float(x[1]), along_arrow=b(x[2]),
        n_humans=i(x[3]), n_children=i(x[4]), dist_child=float(x[5]),
        n_animals=i(x[6]), dist_animal=float(x[7]), group_size=i(x[8]),
        group_radius=float(x[9]), dist_group=float(x[10]),
        robot_in_group=b(x[11]), robot_facing_group=b(x[12]),
        dist_humans_3=tuple(float(v) for v in x[13:16]),
        dir_robot_to_3=tuple(float(v) for v in x[16:19]),
        dir_closest_to_robot=float(x[19]),
        robot_facing_3=tuple(b(v) for v in x[20:23]),
        facing_robot_3=tuple(b(v) for v in x[23:26]),
        n_on_sofa=i(x[26]), music=b(x[27]), total_agents=i(x[28]),
    )


# --------------------------------------------------------------------------
# appropriateness oracle


def _near(d: float, d0: float, scale: float) -> float:
    """Logistic proximity in [0, 1]; decreasing in ``d``."""
    return 1.0 / (1.0 + math.exp((d - d0) / scale))


@dataclass(frozen=True)
class Disturbance:
    """Weights of the penalty terms for an action that can disturb people."""

    human: float
    group: float
    child: float
    animal: float
    sofa: float
    music: float
    crowd: float


@dataclass(frozen=True)
class Engagement:
    """Penalty weights for starting a conversation."""

    far: float = 1.6
    robot_not_facing: float = 0.8
    group_not_facing: float = 0.4
    human_not_facing: float = 0.4
    music: float = 0.4


_DEFAULT_DISTURBANCE = {
    "Vacuum cleaning": Disturbance(1.6, 0.7, 0.5, 0.3, 0.4, 0.3, 0.2),
    "Mopping the floor": Disturbance(1.3, 0.6, 0.5, 0.3, 0.3, 0.2, 0.2),
    "Carry warm food": Disturbance(0.9, 0.3, 0.8, 0.3, 0.0, 0.0, 0.1),
    "Carry cold food": Disturbance(0.5, 0.2, 0.3, 0.2, 0.0, 0.0, 0.1),
    "Carry drinks": Disturbance(0.7, 0.3, 0.5, 0.3, 0.0, 0.0, 0.1),
    "Carry small objects (plates, toys)": Disturbance(0.5, 0.2, 0.3, 0.2, 0.0, 0.0, 0.1),
    "Carry big objects (tables, chairs)": Disturbance(1.7, 0.8, 0.6, 0.3, 0.2, 0.0, 0.3),
    "Cleaning (Picking up stuff)": Disturbance(0.8, 0.3, 0.3, 0.3, 0.3, 0.2, 0.1),
}


@dataclass(frozen=True)
class OracleConfig:
    """Coefficients of the ground-truth appropriateness function.

    For a disturbing action::

        value = baseline - human * near(d1_eff) * path
                         - group * near(dist_group - group_radius)
                         - child * near(dist_child) - animal * near(dist_animal)
                         - sofa * n_on_sofa / 2 - music * music
                         - crowd * (n_humans - 1) / 8

    where ``d1_eff = d1 - radius_gain * (circle_radius - 0.5)`` for circle
    actions and ``path = 1 - arrow_path_relief * (1 - cos(dir_to_closest)) / 2``
    for arrow actions (the arrow points along 0 degrees). Starting a
    conversation instead loses points for distance and for not facing::

        value = baseline - far * (1 - near(d1)) - robot_not_facing * (1 - robot_facing_closest)
                         - group_not_facing * [group and not robot_facing_group]
                         - human_not_facing * (1 - closest_facing_robot) - music * music

    Group, child and animal terms apply only when the entity exists. A scene
    with no humans scores ``baseline`` for every action. The result is
    clipped to [1, 5].
    """

    baseline: float = 5.0
    disturbance: dict = field(default_factory=lambda: dict(_DEFAULT_DISTURBANCE))
    engagement: Engagement = field(default_factory=Engagement)
    human_d0: float = 1.5
    human_scale: float = 0.5
    group_d0: float = 1.0
    group_scale: float = 0.5
    child_d0: float = 2.0
    child_scale: float = 0.5
    animal_d0: float = 1.0
    animal_scale: float = 0.4
    talk_d0: float = 2.0
    talk_scale: float = 0.6
    radius_gain: float = 0.5
    arrow_path_relief: float = 0.5

    def to_dict(self) -> dict:
        d = asdict(self)
        d["disturbance"] = {k: asdict(v) for k, v in self.disturbance.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "OracleConfig":
        d = dict(d)
        if "disturbance" in d:
            d["disturbance"] = {k: Disturbance(**v) for k, v in d["disturbance"].items()}
        if "engagement" in d:
            d["engagement"] = Engagement(**d["engagement"])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def oracle_appropriateness(scene: Scene, action: ActionId | int, cfg: OracleConfig = OracleConfig()) -> float:
    """Noise-free appropriateness in [1, 5] of ``action`` in ``scene``."""
    action = ACTIONS[action] if isinstance(action, (int, np.integer)) else action
    if scene.n_humans == 0:
        return float(min(max(cfg.baseline, 1.0), 5.0))
    d1 = scene.dist_humans_3[0]
    if action.index == CONVERSATION:
        e = cfg.engagement
        penalty = (
            e.far * (1.0 - _near(d1, cfg.talk_d0, cfg.talk_scale))
            + e.robot_not_facing * (not scene.robot_facing_3[0])
            + e.group_not_facing * (scene.has_group and not scene.robot_facing_group)
            + e.human_not_facing * (not scene.facing_robot_3[0])
            + e.music * scene.music
        )
    else:
        c = cfg.disturbance[action.name]
        if action.mode is Mode.CIRCLE:
            d_eff = d1 - cfg.radius_gain * (scene.circle_radius - 0.5)
            path = 1.0
        else:
            d_eff = d1
            path = 1.0 - cfg.arrow_path_relief * (1.0 - math.cos(math.radians(scene.dir_robot_to_3[0]))) / 2.0
        penalty = c.human * _near(d_eff, cfg.human_d0, cfg.human_scale) * path
        if scene.has_group:
            penalty += c.group * _near(scene.dist_group - scene.group_radius, cfg.group_d0, cfg.group_scale)
        if scene.n_children > 0:
            penalty += c.child * _near(scene.dist_child, cfg.child_d0, cfg.child_scale)
        if scene.n_animals > 0:
            penalty += c.animal * _near(scene.dist_animal, cfg.animal_d0, cfg.animal_scale)
        penalty += c.sofa * scene.n_on_sofa / 2.0 + c.music * scene.music + c.crowd * (scene.n_humans - 1) / 8.0
    return float(min(max(cfg.baseline - penalty, 1.0), 5.0))


# --------------------------------------------------------------------------
# simulated annotators

# alpha over 100 scenes: about 0.88 (circle) and 0.85 (arrow)
DEFAULT_NOISE_SD = 1.0
DEFAULT_BIAS_SD = 0.3


@dataclass(frozen=True)
class AnnotationSet:
    scene_id: int
    action: ActionId
    ratings: tuple[int, ...]

    def __post_init__(self):
        if len(self.ratings) != N_RATERS:
            raise ValueError(f"expected {N_RATERS} ratings, got {len(self.ratings)}")
        if any(r not in (1, 2, 3, 4, 5) for r in self.ratings):
            raise ValueError("ratings must be integers in 1..5")


def panel_biases(n: int, bias_sd: float, seed: int) -> np.ndarray:
    """Per-rater offsets, fixed for the whole panel."""
    return np.random.default_rng([seed, 2]).normal(0.0, bias_sd, size=n) if bias_sd > 0 else np.zeros(n)


def _round_clamp(v):
    return np.floor(np.clip(v, 1.0, 5.0) + 0.5).astype(int)


def simulate_annotators(
    true_value: float,
    n: int = N_RATERS,
    noise_sd: float = DEFAULT_NOISE_SD,
    seed=0,
    biases: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Integer Likert ratings ``round(clamp(true + bias + noise, 1, 5))``.

    ``seed`` may be an int or a ``numpy.random.Generator``. Without
    ``biases`` the raters are unbiased.
    """
    if not 1.0 <= true_value <= 5.0:
        raise ValueError(f"true value must lie in [1, 5], got {true_value}")
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    b = np.zeros(n) if biases is None else np.asarray(biases, dtype=np.float64)
    if b.shape != (n,):
        raise ValueError("one bias per rater is required")
    noise = rng.normal(0.0, noise_sd, size=n) if noise_sd > 0 else np.zeros(n)
    return _round_clamp(true_value + b + noise)


def expected_rating(true_value: float, noise_sd: float, biases: np.ndarray) -> float:
    """Panel-mean rating expected under the annotator model (no sampling noise)."""
    biases = np.asarray(biases, dtype=np.float64)
    centers = true_value + biases
    if noise_sd == 0:
        return float(_round_clamp(centers).mean())
    # P(rating <= k) = P(x < k + 0.5) for k = 1..4
    cuts = np.arange(1, 5) + 0.5
    cdf = ndtr((cuts[None, :] - centers[:, None]) / noise_sd)
    # E[rating] = 5 - sum_k P(rating <= k)
    return float((5.0 - cdf.sum(axis=1)).mean())


def expected_from_features(x: np.ndarray, action: int, cfg: OracleConfig, noise_sd: float, biases) -> float:
    return expected_rating(oracle_appropriateness(scene_from_features(x), action, cfg), noise_sd, biases)


# --------------------------------------------------------------------------
# dataset generation


@dataclass
class GeneratedData:
    scenes: list
    dataset: "Dataset"  # noqa: F821
    ratings: np.ndarray  # (n_scenes, 16, 15) integer ratings
    truth: np.ndarray  # (n_scenes, 16) oracle values
    expected: np.ndarray  # (n_scenes, 16) expected panel-mean ratings
    biases: np.ndarray
    oracle: OracleConfig
    noise_sd: float


def generate(
    n_scenes: int,
    seed: int,
    oracle: OracleConfig = OracleConfig(),
    noise_sd: float = DEFAULT_NOISE_SD,
    bias_sd: float = DEFAULT_BIAS_SD,
) -> GeneratedData:
    """Sample scenes, rate every action with the simulated panel, and build the dataset.

    Each scene yields two rows: circle-mode features with labels for actions
    0-7 and arrow-mode features with labels for actions 8-15.
    """
    from .data import Dataset

    biases = panel_biases(N_RATERS, bias_sd, seed)
    scenes = [sample_scene(scene_stream(seed, i)) for i in range(n_scenes)]
    ratings = np.zeros((n_scenes, N_ACTIONS, N_RATERS), dtype=int)
    truth = np.zeros((n_scenes, N_ACTIONS))
    expected = np.zeros((n_scenes, N_ACTIONS))
    for i, sc in enumerate(scenes):
        rng = np.random.default_rng([seed, 1, i])
        for a in ACTIONS:
            v = oracle_appropriateness(sc, a, oracle)
            truth[i, a.index] = v
            expected[i, a.index] = expected_rating(v, noise_sd, biases)
            ratings[i, a.index] = simulate_annotators(v, N_RATERS, noise_sd, rng, biases)

    ids, feats, labels, counts = [], [], [], []
    for i, sc in enumerate(scenes):
        for mode in (Mode.CIRCLE, Mode.ARROW):
            acts = list(actions_for_mode(mode))
            y = np.full(N_ACTIONS, np.nan)
            n = np.zeros(N_ACTIONS, dtype=int)
            y[acts] = ratings[i, acts].mean(axis=1)
            n[acts] = N_RATERS
            ids.append(i)
            feats.append(featurize(sc, mode))
            labels.append(y)
            counts.append(n)
    ds = Dataset(
        scene_ids=np.array(ids, dtype=np.int64),
        features=np.array(feats, dtype=np.float64).reshape(-1, N_FEATURES),
        labels=np.array(labels, dtype=np.float64).reshape(-1, N_ACTIONS),
        counts=np.array(counts, dtype=np.int64).reshape(-1, N_ACTIONS),
        provenance="synthetic",
    )
    return GeneratedData(scenes, ds, ratings, truth, expected, biases, oracle, noise_sd)


def scene_field_names() -> list[str]:
    return [f.name for f in fields(Scene)]
