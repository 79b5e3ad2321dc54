"""Accuracy and forgetting metrics over a round-by-round evaluation ledger.

The ledger stores, for every evaluated model (each client after its local
training, the server after aggregation), the model's argmax predictions
on the one fixed test set.  Storing raw predictions rather than summary
numbers keeps every derived metric re-checkable by a brute-force pass.

Notation used throughout (k = owner, r = round, t/d = task indices):

* ``a0(k, r)``            whole-test accuracy of owner k's round-r model.
* ``a(k, r, d)``          accuracy restricted to task d's classes.
* ``abar(k, t, d)``       a(k, r', d) averaged over the rounds r' of task t.
* ``A_gen(k)``            mean of a0 over rounds 1..R.
* ``A_per(k)``            mean accuracy on the classes learnt so far.
* ``A_task(k, t)``        (1/t) sum over d <= t of abar(k, t, d).
* ``f(k, t, d)``          max over i in d..t-1 of abar(k, i, d), minus
                          abar(k, t, d); negative values (backward
                          transfer) are kept, never clamped.
* ``F(k, t)``             mean of f(k, t, d) over d < t.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .network import ModelParams, forward

SERVER = "server"


def predict(params: ModelParams, features) -> np.ndarray:
    """Argmax class ids; ties resolve to the lowest class index."""
    return np.argmax(forward(params, features), axis=1)


def accuracy_on(params: ModelParams, features, labels) -> float:
    """Fraction of argmax-correct predictions on a nonempty subset."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("accuracy over an empty subset is undefined")
    return float(np.mean(predict(params, features) == labels))


@dataclass(frozen=True)
class RoundRecord:
    """Predictions of one owner's model on the test set after one round."""

    owner: str
    round_index: int
    predictions: np.ndarray
    current_task: int | None = None
    learnt_classes: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "predictions",
                           np.asarray(self.predictions, dtype=int))
        object.__setattr__(self, "learnt_classes",
                           tuple(int(c) for c in self.learnt_classes))
        if self.round_index < 0:
            raise ValueError("round index must be >= 0")


@dataclass
class MetricsLedger:
    """Append-only store of per-round predictions plus the task layout.

    ``task_classes[k]`` lists the class tuples of owner k's tasks in
    order and ``task_rounds[k]`` their round budgets; owners without an
    entry (the server) only support whole-test metrics.
    """

    test_labels: np.ndarray
    n_classes: int
    total_rounds: int
    task_classes: dict[str, tuple[tuple[int, ...], ...]] = field(default_factory=dict)
    task_rounds: dict[str, tuple[int, ...]] = field(default_factory=dict)
    records: list[RoundRecord] = field(default_factory=list)

    def __post_init__(self):
        self.test_labels = np.asarray(self.test_labels, dtype=int)
        if self.test_labels.size == 0:
            raise ValueError("ledger needs a nonempty test set")
        if self.test_labels.min() < 0 or self.test_labels.max() >= self.n_classes:
            raise ValueError("test labels outside 0..n_classes-1")
        if set(self.task_classes) != set(self.task_rounds):
            raise ValueError("task_classes and task_rounds must cover the same owners")
        for owner, budgets in self.task_rounds.items():
            if len(budgets) != len(self.task_classes[owner]):
                raise ValueError(f"{owner}: task counts disagree")
            if sum(budgets) != self.total_rounds:
                raise ValueError(f"{owner}: round budgets do not sum to {self.total_rounds}")

    # -- recording ---------------------------------------------------------

    def append(self, record: RoundRecord) -> None:
        if len(record.predictions) != len(self.test_labels):
            raise ValueError("prediction vector length does not match the test set")
        if record.predictions.min() < 0 or record.predictions.max() >= self.n_classes:
            raise ValueError("predictions outside 0..n_classes-1")
        if any(r.owner == record.owner and r.round_index == record.round_index
               for r in self.records):
            raise ValueError(
                f"duplicate record for {record.owner!r} round {record.round_index}")
        self.records.append(record)

    def record_for(self, owner: str, round_index: int) -> RoundRecord:
        for r in self.records:
            if r.owner == owner and r.round_index == round_index:
                return r
        raise KeyError(f"no record for {owner!r} round {round_index}")

    def owners(self) -> tuple[str, ...]:
        seen = []
        for r in self.records:
            if r.owner not in seen:
                seen.append(r.owner)
        return tuple(seen)

    # -- task geometry -----------------------------------------------------

    def task_window(self, owner: str, t: int) -> range:
        """Round indices belonging to owner's task t (1-based)."""
        budgets = self.task_rounds[owner]
        if not 1 <= t <= len(budgets):
            raise ValueError(f"{owner!r} has no task {t}")
        start = sum(budgets[:t - 1])
        return range(start + 1, start + budgets[t - 1] + 1)

    def n_tasks(self, owner: str) -> int:
        return len(self.task_rounds[owner])

    # -- per-round accuracies ----------------------------------------------

    def whole_test_accuracy(self, owner: str, round_index: int) -> float:
        record = self.record_for(owner, round_index)
        return float(np.mean(record.predictions == self.test_labels))

    def class_subset_accuracy(self, owner: str, round_index: int,
                              classes) -> float:
        record = self.record_for(owner, round_index)
        mask = np.isin(self.test_labels, np.asarray(list(classes), dtype=int))
        if not mask.any():
            raise ValueError(f"no test examples for classes {sorted(classes)}")
        return float(np.mean(record.predictions[mask] == self.test_labels[mask]))

    def task_accuracy(self, owner: str, round_index: int, d: int) -> float:
        """a(k, r, d): accuracy on the test examples of task d's classes."""
        return self.class_subset_accuracy(
            owner, round_index, self.task_classes[owner][d - 1])

    def class_accuracy(self, owner: str, round_index: int, class_id: int) -> float:
        return self.class_subset_accuracy(owner, round_index, (class_id,))

    # -- aggregate metrics ---------------------------------------------------

    def _require_rounds(self, owner: str) -> None:
        have = {r.round_index for r in self.records if r.owner == owner}
        missing = [r for r in range(1, self.total_rounds + 1) if r not in have]
        if missing:
            raise ValueError(f"{owner!r} is missing rounds {missing}")

    def general_accuracy(self, owner: str) -> float:
        """A_gen: mean whole-test accuracy over rounds 1..R."""
        self._require_rounds(owner)
        return float(np.mean([self.whole_test_accuracy(owner, r)
                              for r in range(1, self.total_rounds + 1)]))

    def personal_accuracy(self, owner: str) -> float:
        """A_per: mean accuracy on the classes learnt so far.

        Rounds with an empty learnt set contribute nothing and shrink the
        denominator.
        """
        self._require_rounds(owner)
        terms = []
        for r in range(1, self.total_rounds + 1):
            learnt = self.record_for(owner, r).learnt_classes
            if not learnt:
                continue
            terms.append(self.class_subset_accuracy(owner, r, learnt))
        if not terms:
            raise ValueError(f"{owner!r} never learnt any class")
        return float(np.mean(terms))

    def window_task_accuracy(self, owner: str, t: int, d: int) -> float:
        """abar(k, t, d): task-d accuracy averaged over task t's rounds."""
        window = self.task_window(owner, t)
        return float(np.mean([self.task_accuracy(owner, r, d) for r in window]))

    def avg_task_accuracy(self, owner: str, t: int) -> float:
        """A_task(k, t) = (1/t) sum over d = 1..t of abar(k, t, d)."""
        window = self.task_window(owner, t)
        have = {r.round_index for r in self.records if r.owner == owner}
        unfinished = [r for r in window if r not in have]
        if unfinished:
            raise ValueError(f"task {t} of {owner!r} not finished: "
                             f"missing rounds {unfinished}")
        return float(np.mean([self.window_task_accuracy(owner, t, d)
                              for d in range(1, t + 1)]))

    def forgetting(self, owner: str, t: int, d: int) -> float:
        """f(k, t, d) = max over i in d..t-1 of abar(k, i, d) - abar(k, t, d)."""
        if t < 2:
            raise ValueError("forgetting needs t >= 2")
        if not 1 <= d < t:
            raise ValueError("forgetting needs 1 <= d < t")
        best = max(self.window_task_accuracy(owner, i, d) for i in range(d, t))
        return best - self.window_task_accuracy(owner, t, d)

    def average_forgetting(self, owner: str, t: int) -> float:
        """F(k, t) = mean of f(k, t, d) over d = 1..t-1."""
        if t < 2:
            raise ValueError("average forgetting needs t >= 2")
        return float(np.mean([self.forgetting(owner, t, d)
                              for d in range(1, t)]))

    # -- export --------------------------------------------------------------

    def csv_rows(self) -> list[tuple]:
        """Rows (owner, round, metric, task, value); '' task for whole-test."""
        rows: list[tuple] = []
        for record in self.records:
            owner, r = record.owner, record.round_index
            rows.append((owner, r, "whole_test_accuracy", "",
                         self.whole_test_accuracy(owner, r)))
            if owner in self.task_classes and r >= 1:
                for d in range(1, self.n_tasks(owner) + 1):
                    rows.append((owner, r, "task_accuracy", d,
                                 self.task_accuracy(owner, r, d)))
        return rows

    def figure_rows(self) -> list[tuple]:
        """Rows (round, owner, class, accuracy) for per-class curves."""
        rows: list[tuple] = []
        for record in self.records:
            for c in range(self.n_classes):
                rows.append((record.round_index, record.owner, c,
                             self.class_accuracy(record.owner,
                                                 record.round_index, c)))
        return rows

    # -- serialization -------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "test_labels": self.test_labels.tolist(),
            "n_classes": self.n_classes,
            "total_rounds": self.total_rounds,
            "task_classes": {k: [list(c) for c in v]
                             for k, v in self.task_classes.items()},
            "task_rounds": {k: list(v) for k, v in self.task_rounds.items()},
            "records": [
                {"owner": r.owner,
                 "round": r.round_index,
                 "predictions": r.predictions.tolist(),
                 "current_task": r.current_task,
                 "learnt_classes": list(r.learnt_classes)}
                for r in self.records],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricsLedger":
        doc = json.loads(text)
        ledger = cls(
            test_labels=np.asarray(doc["test_labels"], dtype=int),
            n_classes=doc["n_classes"],
            total_rounds=doc["total_rounds"],
            task_classes={k: tuple(tuple(c) for c in v)
                          for k, v in doc["task_classes"].items()},
            task_rounds={k: tuple(v) for k, v in doc["task_rounds"].items()},
        )
        for r in doc["records"]:
            ledger.append(RoundRecord(r["owner"], r["round"],
                                      np.asarray(r["predictions"], dtype=int),
                                      r["current_task"],
                                      tuple(r["learnt_classes"])))
        return ledger
