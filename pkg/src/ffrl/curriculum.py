"""The 22-level randomization ladder and per-environment level advancement."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np

NUM_LEVELS = 22


@dataclass(frozen=True)
class CurriculumLevel:
    index: int
    pos_R: float
    ori_R: float
    mass_R: float


# (position +/-, orientation +/-, mass +/-) per level
_TABLE = [
    (0.0, 0.0, 0.0),
    (0.0, 0.05, 0.0),
    (0.0, 0.1, 0.0),
    (0.1, 0.1, 0.0),
    (0.1, 0.1, 0.5),
    (0.2, 0.15, 0.5),
    (0.25, 0.2, 0.5),
    (0.3, 0.3, 0.5),
    (0.4, 0.4, 0.5),
    (0.5, 0.5, 0.5),
    (0.6, 0.5, 0.5),
    (0.7, 0.5, 0.5),
    (0.8, 0.5, 0.5),
    (0.9, 0.5, 0.5),
    (1.0, 0.5, 0.5),
    (1.1, 0.5, 0.5),
    (1.2, 0.5, 0.5),
    (1.3, 0.5, 0.5),
    (1.4, 0.5, 0.5),
    (1.5, 0.5, 0.5),
    (1.5, 0.5, 1.0),
    (1.5, 0.5, 1.5),
]

DEFAULT_LADDER = tuple(CurriculumLevel(i + 1, *row) for i, row in enumerate(_TABLE))


def level_ranges(index, ladder=DEFAULT_LADDER):
    if not 1 <= index <= len(ladder):
        raise IndexError(f"curriculum level {index} outside 1..{len(ladder)}")
    return ladder[index - 1]


def variant_curriculum(base, mass_R_override):
    """Copy of ``base`` with the mass half-range replaced at every level."""
    if mass_R_override < 0:
        raise ValueError("mass_R_override must be >= 0")
    return tuple(replace(lvl, mass_R=float(mass_R_override)) for lvl in base)


def truncate(ladder, max_level):
    return tuple(ladder[:max_level])


def ladder_to_csv(ladder):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["level", "pos_R", "ori_R", "mass_R"])
    for lvl in ladder:
        w.writerow([lvl.index, repr(lvl.pos_R), repr(lvl.ori_R), repr(lvl.mass_R)])
    return buf.getvalue()


def ladder_from_csv(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows:
        raise ValueError("empty curriculum table")
    ladder = []
    for expected, row in enumerate(rows, start=1):
        idx = int(row["level"])
        if idx != expected:
            raise ValueError(f"curriculum levels must be 1..N in order, got {idx} at row {expected}")
        ladder.append(
            CurriculumLevel(idx, float(row["pos_R"]), float(row["ori_R"]), float(row["mass_R"]))
        )
    return tuple(ladder)


@dataclass(frozen=True)
class AdvancementRule:
    reward_threshold: float = 1.5
    hold_steps: int = 550

    def __post_init__(self):
        if self.hold_steps <= 0:
            raise ValueError("hold_steps must be positive")


class CurriculumState:
    """Per-environment level index (1-based) and consecutive-hold counter."""

    def __init__(self, n_envs, ladder=DEFAULT_LADDER, start_level=1):
        self.ladder = tuple(ladder)
        self.levels = np.full(n_envs, start_level, dtype=np.int64)
        self.counters = np.zeros(n_envs, dtype=np.int64)
        lv = np.array([[l.pos_R, l.ori_R, l.mass_R] for l in self.ladder])
        self._table = lv

    @property
    def max_level(self):
        return len(self.ladder)

    def ranges(self, env_ids=None):
        """``(pos_R, ori_R, mass_R)`` arrays for the current level of each env."""
        lv = self.levels if env_ids is None else self.levels[env_ids]
        t = self._table[lv - 1]
        return t[..., 0], t[..., 1], t[..., 2]

    def update(self, rewards, rule, env_ids=None):
        """Apply one step of rewards; returns the mask of envs that advanced."""
        ids = slice(None) if env_ids is None else env_ids
        rewards = np.asarray(rewards)
        above = rewards > rule.reward_threshold
        counters = np.where(above, self.counters[ids] + 1, 0)
        levels = self.levels[ids]
        promote = counters >= rule.hold_steps
        at_cap = levels >= self.max_level
        self.levels[ids] = np.where(promote & ~at_cap, levels + 1, levels)
        self.counters[ids] = np.where(promote, 0, counters)
        return promote & ~at_cap


def update_advancement(state, env_id, reward, rule):
    """Single-environment form of :meth:`CurriculumState.update`."""
    state.update(np.array([reward]), rule, env_ids=np.array([env_id]))
    return state
