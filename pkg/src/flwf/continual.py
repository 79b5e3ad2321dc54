"""Task sequences, exemplar memory, and the per-round strategy selector.

A client's lifetime is an ordered list of tasks; each task owns a set of
class ids and a budget of rounds, and the budgets partition ``1..R`` so
every round belongs to exactly one task.  The exemplar store keeps at
most ``capacity`` examples per finished task and is refreshed, not
appended to, on every revisit.  The strategy selector decides per round
whether the client trains with a distillation objective or plain
fine-tuning, using the label entropy of the composed training batch.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .datasets import RoundBatch

POLICY_DISTILL_ALL = "distill-all"
POLICY_HYBRID = "hybrid"
POLICY_FINE_TUNE_ALL = "fine-tune-all"
POLICIES = (POLICY_DISTILL_ALL, POLICY_HYBRID, POLICY_FINE_TUNE_ALL)

EXEMPLAR_SOURCE = -1  # source index recorded for replayed rows


@dataclass(frozen=True)
class TaskSpec:
    """One task: the classes it introduces and how many rounds it occupies."""

    classes: tuple[int, ...]
    rounds: int

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(int(c) for c in self.classes))
        if not self.classes:
            raise ValueError("task must own at least one class")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("task classes must be distinct")
        if any(c < 0 for c in self.classes):
            raise ValueError("class ids must be non-negative")
        if self.rounds < 1:
            raise ValueError("task round budget must be positive")


@dataclass(frozen=True)
class TaskSequence:
    """Ordered tasks of one client; class sets are pairwise disjoint."""

    tasks: tuple[TaskSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, "tasks", tuple(self.tasks))
        if not self.tasks:
            raise ValueError("sequence must contain at least one task")
        seen: set[int] = set()
        for i, task in enumerate(self.tasks):
            overlap = seen & set(task.classes)
            if overlap:
                raise ValueError(f"task {i + 1} reuses classes {sorted(overlap)}")
            seen |= set(task.classes)

    @property
    def total_rounds(self) -> int:
        return sum(t.rounds for t in self.tasks)

    @property
    def all_classes(self) -> tuple[int, ...]:
        return tuple(sorted({c for t in self.tasks for c in t.classes}))

    def classes_started_by(self, round_index: int) -> tuple[int, ...]:
        """Union of classes of every task whose window starts at or before
        the given round; these are the classes the client has learnt."""
        out: set[int] = set()
        start = 1
        for task in self.tasks:
            if round_index >= start:
                out |= set(task.classes)
            start += task.rounds
        return tuple(sorted(out))


def current_task(seq: TaskSequence, round_index: int) -> tuple[int, TaskSpec]:
    """The (1-based task index, TaskSpec) whose round window contains the round.

    Task t occupies rounds ``(sum of earlier budgets, sum through t]``.
    """
    if not 1 <= round_index <= seq.total_rounds:
        raise ValueError(
            f"round {round_index} outside 1..{seq.total_rounds}")
    upper = 0
    for t, task in enumerate(seq.tasks, start=1):
        upper += task.rounds
        if round_index <= upper:
            return t, task
    raise AssertionError("unreachable: budgets partition the round range")


def normalized_label_entropy(labels, n_classes: int) -> float:
    """Shannon entropy of the empirical label distribution over ``n_classes``
    possible classes, divided by its maximum ``ln(n_classes)``."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("entropy of an empty batch is undefined")
    if n_classes < 2:
        raise ValueError("normalized entropy needs at least 2 classes")
    counts = np.bincount(labels, minlength=n_classes)
    p = counts[counts > 0] / labels.size
    # + 0.0 turns the -0.0 of a single-class batch into plain 0.0
    return float(-(p * np.log(p)).sum() / math.log(n_classes) + 0.0)


def is_unbalanced(batch: RoundBatch, n_classes: int | None = None,
                  threshold: float = 0.5) -> bool:
    """True when the batch's normalized label entropy falls below the threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    if n_classes is None:
        n_classes = batch.n_classes
    return normalized_label_entropy(batch.labels, n_classes) < threshold


@dataclass(frozen=True)
class StrategyPolicy:
    """How a client picks its per-round objective."""

    mode: str = POLICY_DISTILL_ALL
    balance_threshold: float = 0.5

    def __post_init__(self):
        if self.mode not in POLICIES:
            raise ValueError(f"unknown policy mode {self.mode!r}")
        if not 0.0 <= self.balance_threshold <= 1.0:
            raise ValueError("balance_threshold must lie in [0, 1]")


def select_loss_mode(policy: StrategyPolicy, batch: RoundBatch, algo: str) -> str:
    """Loss mode for this round's training.

    ``distill-all`` always uses the algorithm's distillation mode,
    ``fine-tune-all`` never does, and ``hybrid`` distills only when the
    (already composed) batch looks unbalanced.
    """
    if algo not in (losses.MODE_FLWF1, losses.MODE_FLWF2):
        raise ValueError(f"algo must be flwf1 or flwf2, got {algo!r}")
    if policy.mode == POLICY_FINE_TUNE_ALL:
        return losses.MODE_FINE_TUNE
    if policy.mode == POLICY_DISTILL_ALL:
        return algo
    if is_unbalanced(batch, threshold=policy.balance_threshold):
        return algo
    return losses.MODE_FINE_TUNE


@dataclass
class ExemplarStore:
    """Per-task replay memory holding at most ``capacity`` examples per task."""

    capacity: int = 10
    entries: dict[int, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        for task_id, (feats, labs) in self.entries.items():
            if len(feats) != len(labs):
                raise ValueError(f"task {task_id}: features/labels length mismatch")
            if len(feats) > self.capacity:
                raise ValueError(f"task {task_id}: entry exceeds capacity")

    def total_size(self) -> int:
        return sum(len(feats) for feats, _ in self.entries.values())

    def tasks_seen(self) -> tuple[int, ...]:
        return tuple(sorted(self.entries))


def update_exemplars(store: ExemplarStore, task_id: int, batch: RoundBatch,
                     capacity: int | None = None, seed=0) -> ExemplarStore:
    """Store (or refresh) the task's exemplars with a fresh random draw.

    A revisited task's entry is replaced wholesale.  A batch smaller than
    the capacity is stored in full.  Returns a new store; the input store
    and the batch are left untouched.
    """
    if len(batch) == 0:
        raise ValueError("cannot draw exemplars from an empty batch")
    cap = store.capacity if capacity is None else capacity
    rng = np.random.default_rng(seed)
    take = min(cap, len(batch))
    picks = rng.choice(len(batch), size=take, replace=False)
    picks.sort()
    entries = dict(store.entries)
    entries[int(task_id)] = (batch.features[picks].copy(), batch.labels[picks].copy())
    return ExemplarStore(capacity=store.capacity, entries=entries)


def compose_training_batch(batch: RoundBatch, store: ExemplarStore,
                           current_task_id: int, seed=0) -> RoundBatch:
    """Round data plus every stored exemplar of the OTHER tasks, reshuffled.

    Exemplars of the current task are dropped (fresh round data covers
    them); replayed rows carry source index -1.  With nothing to add the
    batch is returned as-is.
    """
    extra_feats = []
    extra_labs = []
    for task_id in sorted(store.entries):
        if task_id == current_task_id:
            continue
        feats, labs = store.entries[task_id]
        extra_feats.append(feats)
        extra_labs.append(labs)
    if not extra_feats:
        return batch
    features = np.concatenate([batch.features] + extra_feats)
    labels = np.concatenate([batch.labels] + extra_labs)
    sources = np.concatenate([batch.source_indices,
                              np.full(len(labels) - len(batch), EXEMPLAR_SOURCE)])
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(labels))
    return RoundBatch(features[order], labels[order], batch.n_classes, sources[order])
