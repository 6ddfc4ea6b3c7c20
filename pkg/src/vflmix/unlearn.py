"""Few-shot label unlearning: embedding mixup plus gradient ascent.

The probe set is the small labeled sample the active party may disclose.
Each unlearning epoch re-embeds the probe rows, mixes all ordered pairs of
embeddings (one lambda per pair, shared across parties), and runs ascent
steps on the mixed rows: the top model ascends directly, and each bottom
model ascends on the pair gradients routed back to its probe rows through
the mixing map. Plain-ascent, retrain, fine-tune, and random-relabel
baselines live here too.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import federation as fed_mod
from . import nn
from .nn import ContractError, SgdConfig
from .privacy import apply_privacy

LAMBDA_SAMPLERS = ("uniform01", "fixed")
PAIR_SCOPES = ("all_pairs", "sampled_pairs")


class DivergenceError(RuntimeError):
    """Ascent drove some model parameter non-finite."""


@dataclass
class ProbeSet:
    """Per-party feature rows and labels for the few disclosed samples."""

    parts: list[np.ndarray]
    labels: np.ndarray
    cap: int = 40

    def __post_init__(self):
        self.parts = [np.asarray(p, dtype=np.float64) for p in self.parts]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not self.parts:
            raise ContractError("probe set needs at least one party shard")
        n = self.labels.shape[0]
        if n == 0:
            raise ContractError("probe set must not be empty")
        for p in self.parts:
            if p.ndim != 2 or p.shape[0] != n:
                raise nn.ShapeError("every probe shard must have one row per label")
        if n > self.cap:
            raise ContractError(
                f"probe size {n} exceeds the few-shot cap of {self.cap}"
            )

    @property
    def n(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class MixConfig:
    """How embedding pairs are chosen and interpolated."""

    lambda_sampler: str = "uniform01"
    fixed_lambda: float = 0.5
    pair_scope: str = "all_pairs"
    pairs_per_epoch: int = 0
    same_class_only: bool = False

    def __post_init__(self):
        if self.lambda_sampler not in LAMBDA_SAMPLERS:
            raise ContractError(f"lambda_sampler must be one of {LAMBDA_SAMPLERS}")
        if not 0.0 <= self.fixed_lambda <= 1.0:
            raise ContractError("fixed lambda must lie in [0, 1]")
        if self.pair_scope not in PAIR_SCOPES:
            raise ContractError(f"pair_scope must be one of {PAIR_SCOPES}")
        if self.pair_scope == "sampled_pairs" and self.pairs_per_epoch < 1:
            raise ContractError("sampled_pairs needs pairs_per_epoch >= 1")


@dataclass
class MixedBatch:
    """Mixed embeddings with soft labels plus the bookkeeping to backprop.

    embeddings[k][r] = lambdas[r] * H_k[pair_left[r]]
                     + (1 - lambdas[r]) * H_k[pair_right[r]]
    where H_k is the party's probe embedding matrix whose forward cache is
    kept in probe_caches[k]. The same lambda and pair apply to every party
    and to the soft label of that row.
    """

    embeddings: list[np.ndarray]
    soft_labels: np.ndarray
    lambdas: np.ndarray
    pair_left: np.ndarray
    pair_right: np.ndarray
    probe_caches: list[nn.ForwardCache] = field(repr=False, default_factory=list)
    n_probe: int = 0

    @property
    def n_rows(self) -> int:
        return self.soft_labels.shape[0]

    def take(self, rows) -> "MixedBatch":
        """Row-subset view sharing the probe caches (used for mini-batching)."""
        rows = np.asarray(rows, dtype=np.int64)
        return MixedBatch(
            embeddings=[e[rows] for e in self.embeddings],
            soft_labels=self.soft_labels[rows],
            lambdas=self.lambdas[rows],
            pair_left=self.pair_left[rows],
            pair_right=self.pair_right[rows],
            probe_caches=self.probe_caches,
            n_probe=self.n_probe,
        )


@dataclass(frozen=True)
class UnlearnConfig:
    """Hyperparameters of the ascent-on-mixed-embeddings procedure.

    A rate of exactly 0 turns the procedure into a no-op pass (loss is still
    measured); rates above the 1e-5 guard are rejected because ascent at
    that scale destroys the model instead of unlearning it.
    """

    unlearn_classes: tuple[int, ...]
    unlearning_rate: float = 2e-7
    epochs: int = 10
    batch_size: int = 32
    momentum: float = 0.9
    weight_decay: float = 5e-4
    mix: MixConfig = MixConfig()
    rate_guard: float = 1e-5

    def __post_init__(self):
        if not self.unlearn_classes:
            raise ContractError("unlearn_classes must not be empty")
        if self.unlearning_rate < 0:
            raise ContractError("unlearning rate must be non-negative")
        if self.unlearning_rate > self.rate_guard:
            raise ContractError(
                f"unlearning rate {self.unlearning_rate} exceeds the "
                f"divergence guard {self.rate_guard}"
            )
        if self.epochs < 0:
            raise ContractError("epochs must be non-negative")
        if self.batch_size < 1:
            raise ContractError("batch_size must be at least 1")

    def ascent_config(self) -> SgdConfig:
        return SgdConfig(
            learning_rate=self.unlearning_rate,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            direction="ascent",
        )


@dataclass
class UnlearnReport:
    """Before/after accuracies, runtime, and the per-epoch loss trace."""

    pre_retain_acc: float | None
    pre_forget_acc: float | None
    post_retain_acc: float | None
    post_forget_acc: float | None
    seconds: float
    epochs_run: int
    loss_trace: list[float]


def mix(a, b, lam: float) -> np.ndarray:
    """Convex interpolation lam*a + (1-lam)*b of two same-shape arrays."""
    if not 0.0 <= lam <= 1.0:
        raise ContractError(f"lambda {lam} must lie in [0, 1]")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise nn.ShapeError("mix operands must share a shape")
    return lam * a + (1.0 - lam) * b


def _select_pairs(
    probe: ProbeSet, cfg: MixConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    n = probe.n
    if cfg.pair_scope == "all_pairs":
        left, right = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        left, right = left.ravel(), right.ravel()
    else:
        left = rng.integers(0, n, size=cfg.pairs_per_epoch)
        right = rng.integers(0, n, size=cfg.pairs_per_epoch)
    if cfg.same_class_only:
        keep = probe.labels[left] == probe.labels[right]
        left, right = left[keep], right[keep]
        if left.size == 0:
            raise ContractError("same_class_only removed every pair")
    return left.astype(np.int64), right.astype(np.int64)


def build_mixed_batch(
    fed: fed_mod.SplitFederation,
    probe: ProbeSet,
    cfg: MixConfig,
    rng: np.random.Generator,
) -> MixedBatch:
    """Embed the probe rows on every party and mix the selected pairs.

    One lambda is drawn per pair and reused for every party and for the
    label; the per-party forward caches on the raw probe rows travel with
    the batch so ascent steps can route gradients back through the mixing.
    """
    if len(probe.parts) != fed.num_parties:
        raise ContractError("probe shard count does not match the federation")
    left, right = _select_pairs(probe, cfg, rng)
    m = left.size
    if cfg.lambda_sampler == "uniform01":
        lambdas = rng.random(m)
    else:
        lambdas = np.full(m, cfg.fixed_lambda)
    by_id = {p.party_id: x for p, x in zip(fed.passives, probe.parts)}
    mixed, caches = [], []
    lam_col = lambdas[:, None]
    for party in fed.ordered_passives():
        h, cache = nn.forward(party.bottom_model, by_id[party.party_id])
        mixed.append(lam_col * h[left] + (1.0 - lam_col) * h[right])
        caches.append(cache)
    onehot = nn.one_hot(probe.labels, fed.num_classes)
    soft = lam_col * onehot[left] + (1.0 - lam_col) * onehot[right]
    return MixedBatch(
        embeddings=mixed,
        soft_labels=soft,
        lambdas=lambdas,
        pair_left=left,
        pair_right=right,
        probe_caches=caches,
        n_probe=probe.n,
    )


def _route_pair_gradient(batch: MixedBatch, grad_rows: np.ndarray) -> np.ndarray:
    """Pair-row gradients back to probe rows: the adjoint of the mixing map."""
    acc = np.zeros((batch.n_probe, grad_rows.shape[1]))
    lam = batch.lambdas[:, None]
    np.add.at(acc, batch.pair_left, lam * grad_rows)
    np.add.at(acc, batch.pair_right, (1.0 - lam) * grad_rows)
    return acc


def unlearn_step(
    fed: fed_mod.SplitFederation,
    batch: MixedBatch,
    cfg: UnlearnConfig,
    rng: np.random.Generator,
) -> float:
    """One ascent step of the whole federation on one mixed mini-batch."""
    if len(batch.embeddings) != fed.num_parties:
        raise ContractError("mixed batch party count does not match federation")
    if cfg.unlearning_rate == 0.0:
        logits = fed_mod.nn.forward(
            fed.active.top_model, np.concatenate(batch.embeddings, axis=1)
        )[0]
        loss, _ = nn.softmax_cross_entropy(logits, batch.soft_labels)
        return loss
    ascent = cfg.ascent_config()
    loss, grad_messages = fed_mod.active_step(
        fed, batch.embeddings, batch.soft_labels, ascent
    )
    for party, cache, msg in zip(
        fed.ordered_passives(), batch.probe_caches, grad_messages
    ):
        noisy = apply_privacy(msg.payload, fed.privacy, rng)
        grad_probe = _route_pair_gradient(batch, noisy)
        fed_mod.apply_bottom_update(party, cache, grad_probe, ascent)
    return loss


def _check_finite(fed: fed_mod.SplitFederation, epoch: int) -> None:
    models = [fed.active.top_model] + [p.bottom_model for p in fed.passives]
    if not all(nn.model_is_finite(m) for m in models):
        raise DivergenceError(
            f"non-finite parameters after unlearning epoch {epoch}"
        )


def _reset_optimizers(fed: fed_mod.SplitFederation) -> None:
    fed.active._optimizer = None
    for party in fed.passives:
        party._optimizer = None


def unlearn(
    fed: fed_mod.SplitFederation,
    probe: ProbeSet,
    cfg: UnlearnConfig,
    rng: np.random.Generator,
    retain_eval: tuple | None = None,
    forget_eval: tuple | None = None,
) -> UnlearnReport:
    """Full unlearning run; evaluation sets are (parts, labels) tuples."""
    if not set(np.unique(probe.labels)) <= set(cfg.unlearn_classes):
        raise ContractError("probe labels must all belong to the unlearn classes")

    def _acc(pair):
        return None if pair is None else fed_mod.accuracy(fed, pair[0], pair[1])

    pre_retain, pre_forget = _acc(retain_eval), _acc(forget_eval)
    _reset_optimizers(fed)
    trace: list[float] = []
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        batch = build_mixed_batch(fed, probe, cfg.mix, rng)
        order = rng.permutation(batch.n_rows)
        losses = []
        for s in range(0, order.size, cfg.batch_size):
            losses.append(unlearn_step(fed, batch.take(order[s : s + cfg.batch_size]), cfg, rng))
        _check_finite(fed, epoch)
        trace.append(float(np.mean(losses)))
    seconds = time.perf_counter() - start
    if cfg.epochs == 0:
        post_retain, post_forget = pre_retain, pre_forget
    else:
        post_retain, post_forget = _acc(retain_eval), _acc(forget_eval)
    return UnlearnReport(
        pre_retain_acc=pre_retain,
        pre_forget_acc=pre_forget,
        post_retain_acc=post_retain,
        post_forget_acc=post_forget,
        seconds=seconds,
        epochs_run=cfg.epochs,
        loss_trace=trace,
    )


def retained_rows(dataset, unlearn_classes) -> np.ndarray:
    forget = set(int(c) for c in unlearn_classes)
    keep = np.array([int(v) not in forget for v in dataset.labels])
    return np.nonzero(keep)[0]


def baseline_retrain(
    dataset,
    unlearn_classes,
    rng: np.random.Generator,
    train_epochs: int,
    batch_size: int,
    train_config: SgdConfig,
    **build_kwargs,
) -> fed_mod.SplitFederation:
    """Gold standard: a fresh federation trained only on the retained rows."""
    keep = retained_rows(dataset, unlearn_classes)
    if keep.size == 0:
        raise ContractError("unlearn classes cover the whole dataset")
    if keep.size == dataset.n:
        raise ContractError("unlearn classes are absent from the dataset")
    retained = dataset.restrict(keep)
    fresh = fed_mod.build_federation(retained, rng, **build_kwargs)
    fed_mod.fit(fresh, retained, train_epochs, batch_size, train_config, rng)
    return fresh


def baseline_finetune(
    fed: fed_mod.SplitFederation,
    dataset,
    unlearn_classes,
    rng: np.random.Generator,
    epochs: int = 5,
    learning_rate: float = 0.01,
    batch_size: int = 32,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
) -> fed_mod.SplitFederation:
    """Descent on the retained rows only; mutates the federation in place."""
    keep = retained_rows(dataset, unlearn_classes)
    if keep.size == 0:
        raise ContractError("unlearn classes cover the whole dataset")
    if epochs == 0:
        return fed
    config = SgdConfig(learning_rate, momentum, weight_decay, "descent")
    _reset_optimizers(fed)
    fed_mod.fit(fed, dataset, epochs, batch_size, config, rng, row_indices=keep)
    return fed


def baseline_amnesiac(
    fed: fed_mod.SplitFederation,
    dataset,
    unlearn_classes,
    rng: np.random.Generator,
    epochs: int = 3,
    learning_rate: float = 0.01,
    batch_size: int = 32,
    momentum: float = 0.9,
    weight_decay: float = 0.0,
) -> fed_mod.SplitFederation:
    """Relabel forget rows with random wrong classes, then keep training."""
    if dataset.num_classes < 2:
        raise ContractError("random relabeling needs at least two classes")
    forget = dataset.class_rows(unlearn_classes)
    labels = dataset.labels.copy()
    # uniform over the other C-1 classes, never the true label
    draws = rng.integers(0, dataset.num_classes - 1, size=forget.size)
    draws = draws + (draws >= labels[forget])
    labels[forget] = draws
    config = SgdConfig(learning_rate, momentum, weight_decay, "descent")
    _reset_optimizers(fed)
    fed_mod.fit(
        fed, dataset, epochs, batch_size, config, rng, labels_override=labels
    )
    return fed


def baseline_ga(
    fed: fed_mod.SplitFederation,
    parts: list[np.ndarray],
    labels,
    rng: np.random.Generator,
    unlearning_rate: float,
    epochs: int,
    batch_size: int = 32,
    momentum: float = 0.9,
    weight_decay: float = 5e-4,
) -> fed_mod.SplitFederation:
    """Plain gradient ascent on raw forget rows, no mixing."""
    y = np.asarray(labels, dtype=np.int64)
    if y.size == 0:
        raise ContractError("gradient ascent needs at least one sample")
    if epochs == 0:
        return fed
    ascent = SgdConfig(unlearning_rate, momentum, weight_decay, "ascent")
    by_id = {p.party_id: x for p, x in zip(fed.passives, parts)}
    _reset_optimizers(fed)
    for epoch in range(epochs):
        order = rng.permutation(y.size)
        for s in range(0, order.size, batch_size):
            idx = order[s : s + batch_size]
            targets = nn.one_hot(y[idx], fed.num_classes)
            embeddings = [
                fed_mod.passive_forward_features(p, by_id[p.party_id][idx])
                for p in fed.ordered_passives()
            ]
            loss, grad_messages = fed_mod.active_step(fed, embeddings, targets, ascent)
            for party, msg in zip(fed.ordered_passives(), grad_messages):
                noisy = apply_privacy(msg.payload, fed.privacy, rng)
                fed_mod.passive_backward(party, noisy, ascent)
        _check_finite(fed, epoch)
    return fed
