"""Classification and distillation losses with temperature scaling.

Three training objectives are supported, selected by ``LossSpec.mode``:

* ``fine-tune``: plain softmax cross-entropy against the batch labels.
* ``flwf1``: convex blend of cross-entropy and a distillation term that
  pulls the student toward the logits of the client's previous-round
  model (one teacher): ``alpha * CE + (1 - alpha) * distill(client)``.
* ``flwf2``: three-term blend adding a second distillation term toward
  the current server model (two teachers):
  ``alpha * CE + beta * distill(client) + (1 - alpha - beta) * distill(server)``.
  On a client's first round no previous model exists; the client term is
  then folded into the server term, giving
  ``alpha * CE + (1 - alpha) * distill(server)``.

All losses are SUMS over the batch, not means.  The learning rate must be
read with that convention in mind: with batch size B, an equivalent
mean-reduced setup would use a learning rate B times larger.

Teacher logits are computed once per round (teachers are frozen during
local training) and travel inside ``LossSpec`` aligned row-for-row with
the batch; ``LossSpec.subset`` keeps the alignment when the trainer
shuffles and chunks the batch.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

MODE_FINE_TUNE = "fine-tune"
MODE_FLWF1 = "flwf1"
MODE_FLWF2 = "flwf2"
MODES = (MODE_FINE_TUNE, MODE_FLWF1, MODE_FLWF2)


@dataclass(frozen=True)
class LossSpec:
    """Resolved description of the objective used for one local update.

    ``alpha`` weighs the cross-entropy term, ``beta`` (flwf2 only) the
    client-teacher distillation term, ``temperature`` softens both
    distillation distributions.  Teacher logit arrays, when present, have
    one row per batch example.
    """

    mode: str = MODE_FINE_TUNE
    alpha: float = 1.0
    beta: float | None = None
    temperature: float = 2.0
    teacher_client_logits: np.ndarray | None = None
    teacher_server_logits: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.mode == MODE_FLWF2:
            if self.beta is None:
                raise ValueError("flwf2 requires beta")
            if not 0.0 <= self.beta <= 1.0:
                raise ValueError("beta must lie in [0, 1]")
            if self.alpha + self.beta > 1.0:
                raise ValueError("flwf2 requires alpha + beta <= 1")
        elif self.beta is not None:
            raise ValueError(f"beta is only meaningful for {MODE_FLWF2}")

    def subset(self, idx) -> "LossSpec":
        """Slice the per-example teacher logits to the given row indices."""
        def pick(arr):
            return None if arr is None else arr[idx]

        return dataclasses.replace(
            self,
            teacher_client_logits=pick(self.teacher_client_logits),
            teacher_server_logits=pick(self.teacher_server_logits),
        )


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax, max-subtracted for stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(logits))


def temperature_scaled_probs(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Softened probabilities ``exp(o_i/T) / sum_j exp(o_j/T)``, one row per example."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return softmax(np.asarray(logits, dtype=float) / temperature)


def _check_one_hot(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels, dtype=float)
    if labels.ndim != 2:
        raise ValueError("labels must be a 2-d one-hot matrix")
    ok = np.all((labels == 0.0) | (labels == 1.0)) and np.all(labels.sum(axis=1) == 1.0)
    if not ok:
        raise ValueError("label rows must be one-hot")
    return labels


def _check_aligned(teacher: np.ndarray, student: np.ndarray):
    if teacher.shape != student.shape:
        raise ValueError(
            f"teacher/student logit batches misaligned: {teacher.shape} vs {student.shape}"
        )


def classification_loss(student_logits: np.ndarray, labels: np.ndarray) -> float:
    """Softmax cross-entropy, summed over the batch."""
    labels = _check_one_hot(labels)
    student_logits = np.asarray(student_logits, dtype=float)
    if student_logits.shape != labels.shape:
        raise ValueError("logits and labels disagree in shape")
    return float(-(labels * log_softmax(student_logits)).sum())


def classification_loss_grad(student_logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(classification_loss)/d(student logits): softmax(o) - y per row."""
    labels = _check_one_hot(labels)
    return softmax(np.asarray(student_logits, dtype=float)) - labels


def distillation_loss(teacher_logits: np.ndarray, student_logits: np.ndarray,
                      temperature: float) -> float:
    """Cross-entropy of the student's tempered distribution under the teacher's.

    ``sum_x sum_i -pi_i_teacher(x) log pi_i_student(x)`` with both
    distributions softened by the same temperature.
    """
    teacher_logits = np.asarray(teacher_logits, dtype=float)
    student_logits = np.asarray(student_logits, dtype=float)
    _check_aligned(teacher_logits, student_logits)
    p_teacher = temperature_scaled_probs(teacher_logits, temperature)
    log_q = log_softmax(student_logits / temperature)
    return float(-(p_teacher * log_q).sum())


def distillation_loss_grad(teacher_logits: np.ndarray, student_logits: np.ndarray,
                           temperature: float) -> np.ndarray:
    """d(distillation_loss)/d(student logits): (softmax(o/T) - p_teacher) / T."""
    teacher_logits = np.asarray(teacher_logits, dtype=float)
    student_logits = np.asarray(student_logits, dtype=float)
    _check_aligned(teacher_logits, student_logits)
    p_teacher = temperature_scaled_probs(teacher_logits, temperature)
    q_student = temperature_scaled_probs(student_logits, temperature)
    return (q_student - p_teacher) / temperature


def flwf1_loss(labels: np.ndarray, student_logits: np.ndarray,
               teacher_client_logits: np.ndarray, spec: LossSpec) -> float:
    """One-teacher objective: ``alpha * CE + (1 - alpha) * distill(client)``."""
    if teacher_client_logits is None:
        raise ValueError("flwf1 loss requires client-teacher logits")
    ce = classification_loss(student_logits, labels)
    dis = distillation_loss(teacher_client_logits, student_logits, spec.temperature)
    return spec.alpha * ce + (1.0 - spec.alpha) * dis


def flwf2_loss(labels: np.ndarray, student_logits: np.ndarray,
               teacher_client_logits: np.ndarray | None,
               teacher_server_logits: np.ndarray, spec: LossSpec) -> float:
    """Two-teacher objective; client teacher may be absent on the first round."""
    if teacher_server_logits is None:
        raise ValueError("flwf2 loss requires server-teacher logits")
    ce = classification_loss(student_logits, labels)
    dis_serv = distillation_loss(teacher_server_logits, student_logits, spec.temperature)
    if teacher_client_logits is None:
        # First round: no previous client model, server takes the full
        # distillation weight so the coefficients still sum to 1.
        return spec.alpha * ce + (1.0 - spec.alpha) * dis_serv
    dis_cl = distillation_loss(teacher_client_logits, student_logits, spec.temperature)
    return (spec.alpha * ce
            + spec.beta * dis_cl
            + (1.0 - spec.alpha - spec.beta) * dis_serv)


def combined_loss(spec: LossSpec, student_logits: np.ndarray, labels: np.ndarray) -> float:
    """Evaluate the objective described by ``spec`` on one batch."""
    if spec.mode == MODE_FINE_TUNE:
        return classification_loss(student_logits, labels)
    if spec.mode == MODE_FLWF1:
        return flwf1_loss(labels, student_logits, spec.teacher_client_logits, spec)
    return flwf2_loss(labels, student_logits, spec.teacher_client_logits,
                      spec.teacher_server_logits, spec)


def combined_loss_grad(spec: LossSpec, student_logits: np.ndarray,
                       labels: np.ndarray) -> np.ndarray:
    """Gradient of :func:`combined_loss` with respect to the student logits."""
    if spec.mode == MODE_FINE_TUNE:
        return classification_loss_grad(student_logits, labels)
    if spec.mode == MODE_FLWF1:
        if spec.teacher_client_logits is None:
            raise ValueError("flwf1 loss requires client-teacher logits")
        ce = classification_loss_grad(student_logits, labels)
        dis = distillation_loss_grad(spec.teacher_client_logits, student_logits,
                                     spec.temperature)
        return spec.alpha * ce + (1.0 - spec.alpha) * dis
    if spec.teacher_server_logits is None:
        raise ValueError("flwf2 loss requires server-teacher logits")
    ce = classification_loss_grad(student_logits, labels)
    dis_serv = distillation_loss_grad(spec.teacher_server_logits, student_logits,
                                      spec.temperature)
    if spec.teacher_client_logits is None:
        return spec.alpha * ce + (1.0 - spec.alpha) * dis_serv
    dis_cl = distillation_loss_grad(spec.teacher_client_logits, student_logits,
                                    spec.temperature)
    return (spec.alpha * ce
            + spec.beta * dis_cl
            + (1.0 - spec.alpha - spec.beta) * dis_serv)
