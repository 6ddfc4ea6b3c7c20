"""Adversary-side evaluation.

Three attacks a semi-honest passive party (or auditor) can run: clustering
the per-sample gradients it receives during an unlearning run to infer
labels, membership inference from prediction confidence, and model
completion (training its own head on the frozen bottom model).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import KMeans

from . import data as data_mod
from . import federation as fed_mod
from . import nn
from .nn import ContractError, SgdConfig
from .privacy import apply_privacy


@dataclass
class GradientTrace:
    """Per-sample gradient rows one passive party observed.

    true_labels are carried for scoring only; the attack itself never reads
    them.
    """

    vectors: np.ndarray
    sample_indices: np.ndarray
    true_labels: np.ndarray
    party_id: int
    scenario: str = ""

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    def save(self, path) -> None:
        data_mod.save_trace(
            path, self.vectors, self.sample_indices, self.true_labels, self.scenario
        )

    @classmethod
    def load(cls, path, party_id: int = 0) -> "GradientTrace":
        vectors, indices, labels, scenario = data_mod.load_trace(path)
        if labels is None:
            labels = np.full(indices.shape[0], -1, dtype=np.int64)
        return cls(vectors, indices, labels, party_id, scenario)


@dataclass
class LeakageResult:
    assignments: np.ndarray
    accuracy: float
    m_u: int


def ga_gradient_procedure(
    fed,
    parts,
    labels,
    emit,
    unlearning_rate: float = 1e-9,
    momentum: float = 0.0,
    weight_decay: float = 0.0,
    rng: np.random.Generator | None = None,
) -> None:
    """Single plain-ascent pass, one sample per protocol round.

    Every gradient message actually sent to a passive party is reported
    through emit(party_id, sample_index, grad_row); privacy mechanisms on
    the federation apply before emission, exactly as on the wire.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    y = np.asarray(labels, dtype=np.int64)
    ascent = SgdConfig(unlearning_rate, momentum, weight_decay, "ascent")
    by_id = {p.party_id: x for p, x in zip(fed.passives, parts)}
    for i in range(y.size):
        targets = nn.one_hot(y[i : i + 1], fed.num_classes)
        embeddings = [
            fed_mod.passive_forward_features(p, by_id[p.party_id][i : i + 1])
            for p in fed.ordered_passives()
        ]
        _, grad_messages = fed_mod.active_step(fed, embeddings, targets, ascent)
        for party, msg in zip(fed.ordered_passives(), grad_messages):
            noisy = apply_privacy(msg.payload, fed.privacy, rng)
            emit(party.party_id, i, noisy[0])
            fed_mod.passive_backward(party, noisy, ascent)


def collect_unlearn_gradients(
    fed,
    parts,
    labels,
    party_id: int,
    procedure=ga_gradient_procedure,
    scenario: str = "",
    **procedure_kwargs,
) -> GradientTrace:
    """Record the per-sample gradients party_id receives from one procedure.

    The procedure must report each transferred gradient through the emit
    callback it is handed; a procedure that transfers none (or misses
    samples) violates the contract.
    """
    y = np.asarray(labels, dtype=np.int64)
    received: dict[int, np.ndarray] = {}

    def emit(pid, sample_index, grad_row):
        if pid == party_id:
            received[int(sample_index)] = np.asarray(
                grad_row, dtype=np.float64
            ).ravel().copy()

    procedure(fed, parts, labels, emit, **procedure_kwargs)
    if not received:
        raise ContractError(
            "procedure transferred no per-sample gradients for this party"
        )
    if set(received) != set(range(y.size)):
        raise ContractError("procedure did not emit a gradient for every sample")
    vectors = np.vstack([received[i] for i in range(y.size)])
    return GradientTrace(
        vectors=vectors,
        sample_indices=np.arange(y.size, dtype=np.int64),
        true_labels=y,
        party_id=party_id,
        scenario=scenario,
    )


def _best_matching_accuracy(assignments, true_labels) -> float:
    """Best cluster-to-label matching, exhaustive for small k, Hungarian above."""
    clusters = np.unique(assignments)
    classes = np.unique(true_labels)
    counts = np.zeros((clusters.size, classes.size), dtype=np.int64)
    for ci, c in enumerate(clusters):
        rows = assignments == c
        for li, l in enumerate(classes):
            counts[ci, li] = np.sum(true_labels[rows] == l)
    n = true_labels.shape[0]
    k = max(clusters.size, classes.size)
    if k <= 6:
        wide = np.zeros((k, k), dtype=np.int64)
        wide[: clusters.size, : classes.size] = counts
        best = max(
            sum(wide[i, perm[i]] for i in range(k))
            for perm in itertools.permutations(range(k))
        )
    else:
        row, col = linear_sum_assignment(counts, maximize=True)
        best = counts[row, col].sum()
    return float(100.0 * best / n)


def cluster_label_inference(
    trace: GradientTrace, m_u: int, seed: int = 0, restarts: int = 50
) -> LeakageResult:
    """K-means over the gradient rows, scored under the best label matching."""
    if trace.n == 0:
        raise ContractError("cannot cluster an empty trace")
    if m_u < 1:
        raise ContractError("m_u must be at least 1")
    if m_u > trace.n:
        raise ContractError("cannot form more clusters than samples")
    km = KMeans(
        n_clusters=m_u, init="k-means++", n_init=restarts, random_state=seed
    ).fit(trace.vectors)
    assignments = km.labels_.astype(np.int64)
    accuracy = _best_matching_accuracy(assignments, trace.true_labels)
    return LeakageResult(assignments=assignments, accuracy=accuracy, m_u=m_u)


@dataclass
class MiaModel:
    """Member/non-member decision rule fitted on shadow confidences."""

    method: str
    threshold: float | None
    shadow_ids: frozenset
    shadow_accuracy: float
    classifier: object = None

    def is_member(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if self.method == "threshold":
            return x.ravel() >= self.threshold
        return self.classifier.predict(x.reshape(x.shape[0], -1)) == 1


def _balanced_accuracy(member, nonmember, threshold) -> float:
    tpr = np.mean(member >= threshold)
    tnr = np.mean(nonmember < threshold)
    return 0.5 * (tpr + tnr)


def mia_fit(
    member_features,
    nonmember_features,
    member_ids=None,
    nonmember_ids=None,
    method: str = "threshold",
) -> MiaModel:
    """Fit the attack on shadow data.

    Default: the single confidence threshold that maximizes balanced
    accuracy on the shadow split. method="logistic" fits a logistic head on
    the feature vectors instead.
    """
    member = np.asarray(member_features, dtype=np.float64)
    nonmember = np.asarray(nonmember_features, dtype=np.float64)
    if member.size == 0 or nonmember.size == 0:
        raise ContractError("both shadow classes must be nonempty")
    ids = frozenset(member_ids or []) | frozenset(nonmember_ids or [])
    if method == "threshold":
        m, nm = member.ravel(), nonmember.ravel()
        values = np.unique(np.concatenate([m, nm]))
        candidates = np.concatenate(
            [[values[0] - 1.0], (values[:-1] + values[1:]) / 2.0, [values[-1] + 1.0]]
        )
        scores = [_balanced_accuracy(m, nm, t) for t in candidates]
        best = int(np.argmax(scores))
        return MiaModel(
            method="threshold",
            threshold=float(candidates[best]),
            shadow_ids=ids,
            shadow_accuracy=float(100.0 * scores[best]),
        )
    if method == "logistic":
        from sklearn.linear_model import LogisticRegression

        x = np.vstack(
            [member.reshape(member.shape[0], -1), nonmember.reshape(nonmember.shape[0], -1)]
        )
        y = np.concatenate([np.ones(member.shape[0]), np.zeros(nonmember.shape[0])])
        clf = LogisticRegression(max_iter=1000).fit(x, y)
        acc = float(100.0 * clf.score(x, y))
        return MiaModel(
            method="logistic",
            threshold=None,
            shadow_ids=ids,
            shadow_accuracy=acc,
            classifier=clf,
        )
    raise ContractError(f"unknown MIA method {method!r}")


def mia_asr(model: MiaModel, features, eval_ids=None) -> float:
    """Percentage of the evaluated samples the attack calls members."""
    x = np.asarray(features, dtype=np.float64)
    if x.size == 0:
        raise ContractError("cannot evaluate the attack on an empty set")
    if eval_ids is not None and model.shadow_ids:
        overlap = model.shadow_ids & frozenset(eval_ids)
        if overlap:
            raise ContractError(
                f"evaluation ids overlap the shadow set ({len(overlap)} ids)"
            )
    return float(100.0 * np.mean(model.is_member(x)))


def prediction_confidence(fed, parts) -> np.ndarray:
    """Max softmax probability per row, the default MIA feature."""
    return fed_mod.predict_proba(fed, parts).max(axis=1)


@dataclass
class CompletionResult:
    overall_acc: float
    retained_acc: float | None
    forgotten_acc: float | None


def model_completion_attack(
    party,
    labeled_features,
    labeled_labels,
    eval_features,
    eval_labels,
    num_classes: int,
    rng: np.random.Generator,
    unlearn_classes=(),
    head_hidden: tuple[int, ...] = (32,),
    epochs: int = 200,
    learning_rate: float = 0.1,
    batch_size: int = 20,
) -> CompletionResult:
    """Train a private head on frozen bottom-model embeddings, then score it.

    Accuracy is reported overall and split between retained classes and the
    unlearned classes, which is where unlearning should show up.
    """
    y = np.asarray(labeled_labels, dtype=np.int64)
    if y.size < num_classes:
        raise ContractError(
            "need at least one labeled sample per class to complete the model"
        )
    emb_train, _ = nn.forward(party.bottom_model, labeled_features)
    emb_eval, _ = nn.forward(party.bottom_model, eval_features)
    head = nn.init_mlp(
        [emb_train.shape[1], *head_hidden, num_classes], rng,
        output_activation="identity",
    )
    config = SgdConfig(learning_rate, 0.9, 0.0, "descent")
    optimizer = nn.SgdOptimizer(config)
    targets_all = nn.one_hot(y, num_classes)
    for _ in range(epochs):
        order = rng.permutation(y.size)
        for s in range(0, order.size, batch_size):
            idx = order[s : s + batch_size]
            logits, cache = nn.forward(head, emb_train[idx])
            _, grad_logits = nn.softmax_cross_entropy(logits, targets_all[idx])
            _, grads = nn.backward(head, cache, grad_logits)
            optimizer.step(head, grads)
    logits, _ = nn.forward(head, emb_eval)
    pred = np.argmax(logits, axis=1)
    truth = np.asarray(eval_labels, dtype=np.int64)
    overall = float(100.0 * np.mean(pred == truth))
    forget = np.isin(truth, np.asarray(sorted(unlearn_classes), dtype=np.int64))
    retained_acc = (
        float(100.0 * np.mean(pred[~forget] == truth[~forget]))
        if np.any(~forget)
        else None
    )
    forgotten_acc = (
        float(100.0 * np.mean(pred[forget] == truth[forget]))
        if np.any(forget)
        else None
    )
    return CompletionResult(overall, retained_acc, forgotten_acc)
