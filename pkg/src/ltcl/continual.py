"""Two-phase Head-to-Tail training with continual-learning strategies.

Phase 1 fits the head classes only. Phase 2 fits the tail while a
strategy fights forgetting: a Fisher-weighted quadratic pull toward the
Phase-1 weights (EWC, with the Fisher taken either at sampled labels or
at the true labels), distillation against the frozen Phase-1 model on
head logits (LwF), or projection of weight gradients out of the span of
Phase-1 layer inputs (GPM). The naive variant applies no mechanism and
serves as the catastrophic-forgetting baseline.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .datasets import HeadTailSplit, LabeledDataset
from .errors import ConfigError, ShapeMismatchError
from .metrics import MetricsReport, evaluate
from .models import LossSpec, ParamVector, log_softmax, softmax_probs
from .training import TrainConfig, TrainTrace, train

VARIANTS = ("naive", "ewc", "modified_ewc", "lwf", "gpm")
FISHER_MODES = ("model_sampled", "true_loss")

# Phase-2 hyperparameters per strategy: lr, momentum, schedule, penalty
# weight, epochs. The naive baseline gets the EWC optimization budget.
PHASE2_DEFAULTS = {
    "lwf": dict(learning_rate=0.001, momentum=0.9, schedule="constant", epochs=5),
    "ewc": dict(learning_rate=0.01, momentum=0.9, schedule="constant", epochs=90),
    "modified_ewc": dict(learning_rate=0.01, momentum=0.9, schedule="constant", epochs=90),
    "gpm": dict(learning_rate=0.001, momentum=0.0, schedule="cosine", epochs=100),
    "naive": dict(learning_rate=0.01, momentum=0.9, schedule="constant", epochs=90),
}
DEFAULT_CL_WEIGHTS = {"lwf": 0.01, "ewc": 10.0, "modified_ewc": 1000.0}
DEFAULT_BATCH_SIZE = 64
DEFAULT_TEMPERATURE = 2.0
DEFAULT_ENERGY_THRESHOLD = 0.97
DEFAULT_FISHER_MAX_SAMPLES = 2000
_LOG_FLOOR = 1e-30  # floors distillation targets only, never the primary loss


@dataclass
class StrategyState:
    """Knowledge retained from Phase 1 that the Phase-2 mechanism consumes."""

    variant: str
    cl_weight: float = 0.0
    anchor: np.ndarray | None = None
    fisher: np.ndarray | None = None
    teacher: object = None
    bases: list | None = None
    temperature: float = DEFAULT_TEMPERATURE
    head_classes: tuple = ()


@dataclass
class PhaseResult:
    model_after_head: object
    model_after_tail: object
    metrics_before: MetricsReport
    metrics_after: MetricsReport
    state: StrategyState | None = None
    phase1_trace: TrainTrace | None = None
    phase2_trace: TrainTrace | None = None
    # per step: ||update component inside the bases|| / ||update||
    gpm_projection_ratios: list = field(default_factory=list)


def default_phase2_config(variant: str, seed: int = 0, batch_size: int | None = DEFAULT_BATCH_SIZE) -> TrainConfig:
    if variant not in PHASE2_DEFAULTS:
        raise ValueError(f"unknown strategy variant {variant!r}")
    d = PHASE2_DEFAULTS[variant]
    return TrainConfig(
        learning_rate=d["learning_rate"],
        momentum=d["momentum"],
        epochs=d["epochs"],
        batch_size=batch_size,
        schedule=d["schedule"],
        seed=seed,
    )


def fisher_diagonal(model, dataset: LabeledDataset, mode: str, max_samples: int, seed: int = 0) -> np.ndarray:
    """Diagonal Fisher estimate from per-sample squared CE gradients.

    model_sampled draws the label from the model's own predictive
    distribution (the classic EWC estimate); true_loss uses the training
    label instead.
    """
    if mode not in FISHER_MODES:
        raise ValueError(f"unknown fisher mode {mode!r}")
    if max_samples < 1:
        raise ValueError(f"max_samples must be >= 1, got {max_samples}")
    if dataset.n_samples == 0:
        raise ValueError("cannot estimate fisher on an empty dataset")
    rng = np.random.default_rng(seed)
    rows = np.arange(dataset.n_samples)
    if dataset.n_samples > max_samples:
        rows = np.sort(rng.choice(rows, size=max_samples, replace=False))
    spec = LossSpec(mu=0.0)
    fisher = np.zeros(model.layout.total_size)
    for i in rows:
        x = dataset.features[i : i + 1]
        if mode == "model_sampled":
            p = softmax_probs(model.forward(x))[0]
            label = int(rng.choice(len(p), p=p))
        else:
            label = int(dataset.labels[i])
        _, grad = model.loss_and_gradient(x, np.array([label]), spec)
        fisher += grad * grad
    return fisher / len(rows)


def _flat(theta) -> np.ndarray:
    if isinstance(theta, ParamVector):
        return theta.values
    return np.asarray(theta, dtype=np.float64)


def ewc_penalty(theta, state: StrategyState) -> float:
    """Quadratic pull (w/2) * sum_i F_i (theta_i - anchor_i)^2."""
    if state.variant not in ("ewc", "modified_ewc"):
        raise ValueError(f"ewc_penalty needs an EWC-family state, got {state.variant!r}")
    theta = _flat(theta)
    if theta.shape != state.anchor.shape:
        raise ShapeMismatchError(
            f"parameter vector {theta.shape} does not match anchor {state.anchor.shape}"
        )
    diff = theta - state.anchor
    return 0.5 * state.cl_weight * float(state.fisher @ (diff * diff))


def ewc_penalty_gradient(theta, state: StrategyState) -> np.ndarray:
    theta = _flat(theta)
    if theta.shape != state.anchor.shape:
        raise ShapeMismatchError(
            f"parameter vector {theta.shape} does not match anchor {state.anchor.shape}"
        )
    return state.cl_weight * state.fisher * (theta - state.anchor)


def _soften(logits: np.ndarray, temperature: float) -> np.ndarray:
    return softmax_probs(logits / temperature)


def lwf_loss(student_logits, teacher_logits, true_labels, temperature, cl_weight) -> float:
    """CE on true labels plus temperature-scaled distillation KL."""
    student_logits = np.asarray(student_logits, dtype=np.float64)
    teacher_logits = np.asarray(teacher_logits, dtype=np.float64)
    if student_logits.shape != teacher_logits.shape:
        raise ShapeMismatchError(
            f"logit shapes differ: {student_logits.shape} vs {teacher_logits.shape}"
        )
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    n = len(student_logits)
    logp = log_softmax(student_logits)
    ce = -logp[np.arange(n), np.asarray(true_labels)].mean()
    targets = _soften(teacher_logits, temperature)
    student_soft_logp = log_softmax(student_logits / temperature)
    kl = (targets * (np.log(np.maximum(targets, _LOG_FLOOR)) - student_soft_logp)).sum(axis=1)
    return float(ce + cl_weight * temperature**2 * kl.mean())


def _distillation_extra(teacher_logits, head_cols, temperature, cl_weight, n):
    """Closure adding the distillation term and its logit gradient."""
    targets = _soften(teacher_logits[:, head_cols], temperature)
    log_targets = np.log(np.maximum(targets, _LOG_FLOOR))

    def extra(logits):
        sliced = logits[:, head_cols] / temperature
        logq = log_softmax(sliced)
        kl = (targets * (log_targets - logq)).sum(axis=1)
        loss_add = cl_weight * temperature**2 * kl.mean()
        dlogits = np.zeros_like(logits)
        dlogits[:, head_cols] = (
            cl_weight * temperature * (np.exp(logq) - targets) / n
        )
        return loss_add, dlogits

    return extra


def gpm_collect_bases(
    model,
    head_dataset: LabeledDataset,
    energy_threshold: float,
    max_samples: int,
    seed: int = 0,
) -> list:
    """Orthonormal bases of the dominant layer-input subspaces.

    Per weighted layer, the input activations over head samples are
    decomposed by SVD and the smallest leading set of right singular
    vectors reaching the energy threshold is kept as basis columns.
    """
    if not 0.0 < energy_threshold <= 1.0:
        raise ValueError(f"energy_threshold must be in (0, 1], got {energy_threshold}")
    if head_dataset.n_samples == 0:
        raise ValueError("cannot collect bases from an empty dataset")
    rng = np.random.default_rng(seed)
    rows = np.arange(head_dataset.n_samples)
    if head_dataset.n_samples > max_samples:
        rows = np.sort(rng.choice(rows, size=max_samples, replace=False))
    _, activations = model.forward_with_activations(head_dataset.features[rows])
    bases = []
    for act in activations:
        _, s, vt = np.linalg.svd(act, full_matrices=False)
        s = s[s > s[0] * 1e-12] if len(s) and s[0] > 0 else s[:0]
        if len(s) == 0:
            bases.append(np.zeros((act.shape[1], 0)))
            continue
        energy = np.cumsum(s**2)
        k = int(np.searchsorted(energy, energy_threshold * energy[-1]) + 1)
        k = min(k, len(s))
        bases.append(vt[:k].T.copy())
    return bases


def gpm_project(gradient_for_layer: np.ndarray, basis: np.ndarray | None) -> np.ndarray:
    """Remove the gradient component inside span(basis) along layer inputs."""
    g = np.asarray(gradient_for_layer, dtype=np.float64)
    if basis is None or basis.size == 0:
        return g.copy()
    if basis.ndim != 2 or g.shape[-1] != basis.shape[0]:
        raise ShapeMismatchError(
            f"gradient input dim {g.shape[-1]} does not match basis dim {basis.shape}"
        )
    return g - (g @ basis) @ basis.T


def _gpm_transform(model, bases, ratios):
    layout = model.layout
    names = model.weight_segment_names()

    def transform(flat_grad):
        parts = layout.unpack(flat_grad.copy())
        inside_sq = 0.0
        for name, basis in zip(names, bases):
            g = parts[name]
            projected = gpm_project(g, basis)
            g[...] = projected
            if basis is not None and basis.size:
                inside_sq += float(np.sum((projected @ basis) ** 2))
        out = layout.pack([parts[s.name] for s in layout.segments])
        norm = float(np.linalg.norm(out))
        ratios.append(np.sqrt(inside_sq) / norm if norm > 0 else 0.0)
        return out

    return transform


class _PenalizedModel:
    """Adds the EWC quadratic penalty to a wrapped model's objective."""

    def __init__(self, model, state: StrategyState):
        self.model = model
        self.state = state
        self.layout = model.layout

    def copy(self):
        return _PenalizedModel(self.model.copy(), self.state)

    def get_params(self):
        return self.model.get_params()

    def set_params(self, flat):
        self.model.set_params(flat)

    def loss_and_gradient(self, features, labels, spec):
        value, grad = self.model.loss_and_gradient(features, labels, spec)
        theta = self.model.get_params()
        value += ewc_penalty(theta, self.state)
        grad = grad + ewc_penalty_gradient(theta, self.state)
        return value, grad


class _DistillingModel:
    """Mixes LwF distillation against a frozen teacher into the objective."""

    def __init__(self, model, state: StrategyState):
        self.model = model
        self.state = state
        self.layout = model.layout

    def copy(self):
        return _DistillingModel(self.model.copy(), self.state)

    def get_params(self):
        return self.model.get_params()

    def set_params(self, flat):
        self.model.set_params(flat)

    def loss_and_gradient(self, features, labels, spec):
        teacher_logits = self.state.teacher.forward(features)
        extra = _distillation_extra(
            teacher_logits,
            list(self.state.head_classes),
            self.state.temperature,
            self.state.cl_weight,
            len(labels),
        )
        return self.model.loss_and_gradient(features, labels, spec, extra_logit_grad=extra)


def prepare_strategy_state(
    variant: str,
    model,
    head_dataset: LabeledDataset,
    head_classes,
    cl_weight: float | None = None,
    temperature: float = DEFAULT_TEMPERATURE,
    energy_threshold: float = DEFAULT_ENERGY_THRESHOLD,
    fisher_max_samples: int = DEFAULT_FISHER_MAX_SAMPLES,
    fisher_seed: int = 0,
) -> StrategyState:
    if variant not in VARIANTS:
        raise ValueError(f"unknown strategy variant {variant!r}")
    if cl_weight is None:
        cl_weight = DEFAULT_CL_WEIGHTS.get(variant, 0.0)
    state = StrategyState(
        variant=variant,
        cl_weight=cl_weight,
        temperature=temperature,
        head_classes=tuple(sorted(int(c) for c in head_classes)),
    )
    if variant in ("ewc", "modified_ewc"):
        mode = "model_sampled" if variant == "ewc" else "true_loss"
        state.anchor = model.get_params()
        state.fisher = fisher_diagonal(
            model, head_dataset, mode, fisher_max_samples, seed=fisher_seed
        )
    elif variant == "lwf":
        state.teacher = model.copy()
    elif variant == "gpm":
        if not hasattr(model, "forward_with_activations"):
            raise ConfigError(
                "strategy", "gpm requires a model that retains layer input activations"
            )
        state.bases = gpm_collect_bases(
            model, head_dataset, energy_threshold, fisher_max_samples, seed=fisher_seed
        )
    return state


def run_two_phase(
    strategy_variant: str,
    dataset: LabeledDataset,
    split: HeadTailSplit,
    phase1_config: TrainConfig,
    phase2_config: TrainConfig,
    loss_spec: LossSpec,
    model,
    test_dataset: LabeledDataset | None = None,
    cl_weight: float | None = None,
    temperature: float = DEFAULT_TEMPERATURE,
    energy_threshold: float = DEFAULT_ENERGY_THRESHOLD,
    fisher_max_samples: int = DEFAULT_FISHER_MAX_SAMPLES,
) -> PhaseResult:
    """Train Phase 1 on the head, then Phase 2 on the tail with the
    strategy's mechanism active. Metrics are taken on test_dataset when
    given, otherwise on the full training dataset."""
    if strategy_variant not in VARIANTS:
        raise ValueError(f"unknown strategy variant {strategy_variant!r}")
    if split.tail.n_samples == 0:
        raise ValueError("tail dataset is empty; nothing to learn in phase 2")

    eval_dataset = test_dataset if test_dataset is not None else dataset
    model_head, phase1_trace = train(model, split.head, loss_spec, phase1_config)
    metrics_before = evaluate(model_head, eval_dataset)

    state = prepare_strategy_state(
        strategy_variant,
        model_head,
        split.head,
        split.head_classes,
        cl_weight=cl_weight,
        temperature=temperature,
        energy_threshold=energy_threshold,
        fisher_max_samples=fisher_max_samples,
        fisher_seed=phase1_config.seed,
    )

    ratios: list = []
    grad_transform = None
    trainable = model_head
    if strategy_variant in ("ewc", "modified_ewc"):
        trainable = _PenalizedModel(model_head, state)
    elif strategy_variant == "lwf":
        trainable = _DistillingModel(model_head, state)
    elif strategy_variant == "gpm":
        grad_transform = _gpm_transform(model_head, state.bases, ratios)

    trained, phase2_trace = train(
        trainable, split.tail, loss_spec, phase2_config, grad_transform=grad_transform
    )
    model_tail = trained.model if hasattr(trained, "model") else trained
    metrics_after = evaluate(model_tail, eval_dataset)

    return PhaseResult(
        model_after_head=model_head,
        model_after_tail=model_tail,
        metrics_before=metrics_before,
        metrics_after=metrics_after,
        state=state,
        phase1_trace=phase1_trace,
        phase2_trace=phase2_trace,
        gpm_projection_ratios=ratios,
    )
