"""Split-model federation: party state, message rounds, training, inference.

One active party holds the labels and the top model; K passive parties hold
one vertical feature shard and one bottom model each. Per batch the protocol
is strict lock-step: every passive forward, one active step, every passive
backward. Forward caches pair each backward with its forward; a backward
without a matching forward is a protocol-order error.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import nn
from .nn import ContractError, Mlp, SgdConfig, SgdOptimizer, ShapeError
from .privacy import PrivacyConfig, apply_privacy


class AlignmentError(ValueError):
    """Sample-id alignment produced an empty intersection."""


class ProtocolOrderError(RuntimeError):
    """A backward pass arrived without a matching forward pass."""


class MessageKind(str, Enum):
    FORWARD_EMBEDDING = "forward_embedding"
    BACKWARD_GRADIENT = "backward_gradient"


@dataclass(frozen=True)
class RoundMessage:
    """One payload exchanged between a passive party and the active party."""

    kind: MessageKind
    party_id: int
    payload: np.ndarray
    round_index: int


def _payload(value) -> np.ndarray:
    if isinstance(value, RoundMessage):
        return value.payload
    return np.asarray(value, dtype=np.float64)


def align_ids(id_lists: list[list]) -> list[np.ndarray]:
    """Map each party's id list to indices of the common ids, ascending.

    Every list must be duplicate-free. The returned index arrays address the
    same underlying samples, in the same (ascending id) order, for every
    party.
    """
    if len(id_lists) < 1:
        raise ContractError("need at least one id list")
    sets = []
    for ids in id_lists:
        s = set(ids)
        if len(s) != len(ids):
            raise ContractError("id lists must not contain duplicates")
        sets.append(s)
    common = set.intersection(*sets)
    if not common:
        raise AlignmentError("no common sample ids across parties")
    ordered = sorted(common)
    maps = []
    for ids in id_lists:
        position = {v: i for i, v in enumerate(ids)}
        maps.append(np.array([position[v] for v in ordered], dtype=np.int64))
    return maps


class PassiveParty:
    """Feature-shard owner; never sees labels."""

    def __init__(self, party_id: int, bottom_model: Mlp, feature_shard):
        shard = np.asarray(feature_shard, dtype=np.float64)
        if shard.ndim != 2:
            raise ShapeError("feature shard must be 2-D")
        if shard.shape[1] != bottom_model.in_dim:
            raise ShapeError(
                f"shard width {shard.shape[1]} does not match bottom model "
                f"input {bottom_model.in_dim}"
            )
        self.party_id = int(party_id)
        self.bottom_model = bottom_model
        self.feature_shard = shard
        self._optimizer: SgdOptimizer | None = None
        self._pending_cache: nn.ForwardCache | None = None
        self._forward_round = 0
        self._backward_round = 0

    @property
    def embedding_dim(self) -> int:
        return self.bottom_model.out_dim

    @property
    def num_rows(self) -> int:
        return self.feature_shard.shape[0]


class ActiveParty:
    """Label owner; never sees raw passive features."""

    def __init__(self, top_model: Mlp, labels, num_classes: int):
        y = np.asarray(labels, dtype=np.int64)
        if y.ndim != 1:
            raise ShapeError("labels must be 1-D")
        if y.size and (y.min() < 0 or y.max() >= num_classes):
            raise ContractError(f"labels must lie in [0, {num_classes})")
        self.top_model = top_model
        self.labels = y
        self.num_classes = int(num_classes)
        self._optimizer: SgdOptimizer | None = None
        self._backward_rounds: dict[int, int] = {}


def _optimizer_for(holder, config: SgdConfig) -> SgdOptimizer:
    # a changed config (e.g. descent -> ascent) starts with fresh buffers
    opt = holder._optimizer
    if opt is None or opt.config != config:
        opt = SgdOptimizer(config)
        holder._optimizer = opt
    return opt


class SplitFederation:
    """The whole split model: K bottom models plus one top model."""

    def __init__(
        self,
        active: ActiveParty,
        passives: list[PassiveParty],
        num_classes: int,
        concat_order: tuple[int, ...] | None = None,
        privacy: PrivacyConfig = PrivacyConfig(),
    ):
        if not passives:
            raise ContractError("need at least one passive party")
        ids = [p.party_id for p in passives]
        if len(set(ids)) != len(ids):
            raise ContractError("party ids must be unique")
        if concat_order is None:
            concat_order = tuple(sorted(ids))
        if sorted(concat_order) != sorted(ids):
            raise ContractError("concat_order must be a permutation of party ids")
        self.active = active
        self.passives = list(passives)
        self.num_classes = int(num_classes)
        self.concat_order = tuple(concat_order)
        self.privacy = privacy
        self._by_id = {p.party_id: p for p in self.passives}
        width = sum(self._by_id[i].embedding_dim for i in self.concat_order)
        if width != active.top_model.in_dim:
            raise ShapeError(
                f"total embedding width {width} does not match top model "
                f"input {active.top_model.in_dim}"
            )

    @property
    def num_parties(self) -> int:
        return len(self.passives)

    def party(self, party_id: int) -> PassiveParty:
        return self._by_id[party_id]

    def ordered_passives(self) -> list[PassiveParty]:
        return [self._by_id[i] for i in self.concat_order]

    def embedding_widths(self) -> list[int]:
        return [p.embedding_dim for p in self.ordered_passives()]


def passive_forward(party: PassiveParty, batch_indices) -> RoundMessage:
    """Bottom-model forward on shard rows; retains the cache for backward."""
    idx = np.asarray(batch_indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("batch_indices must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= party.num_rows):
        raise IndexError(
            f"batch index out of range for shard with {party.num_rows} rows"
        )
    return passive_forward_features(party, party.feature_shard[idx])


def passive_forward_features(party: PassiveParty, features) -> RoundMessage:
    """Bottom-model forward on raw feature rows (probe data, inference feed)."""
    out, cache = nn.forward(party.bottom_model, features)
    party._pending_cache = cache
    party._forward_round += 1
    return RoundMessage(
        kind=MessageKind.FORWARD_EMBEDDING,
        party_id=party.party_id,
        payload=out,
        round_index=party._forward_round,
    )


def active_step(
    fed: SplitFederation, embeddings, targets, config: SgdConfig
) -> tuple[float, list[RoundMessage]]:
    """Loss on the concatenated embeddings, top-model update, gradient split.

    embeddings must follow fed.concat_order. The returned gradient messages
    are slices of the loss gradient with respect to the concatenated input,
    computed before the top model was updated.
    """
    payloads = [_payload(e) for e in embeddings]
    if len(payloads) != fed.num_parties:
        raise ShapeError("one embedding per passive party is required")
    rows = {p.shape[0] for p in payloads}
    if len(rows) != 1:
        raise ShapeError("embeddings must share their row count")
    widths = fed.embedding_widths()
    for p, w in zip(payloads, widths):
        if p.shape[1] != w:
            raise ShapeError(
                f"embedding width {p.shape[1]} does not match expected {w}"
            )
    concat = np.concatenate(payloads, axis=1)
    top = fed.active.top_model
    logits, cache = nn.forward(top, concat)
    loss, grad_logits = nn.softmax_cross_entropy(logits, targets)
    grad_concat, grad_params = nn.backward(top, cache, grad_logits)
    _optimizer_for(fed.active, config).step(top, grad_params)
    messages = []
    offset = 0
    for party_id, w in zip(fed.concat_order, widths):
        rnd = fed.active._backward_rounds.get(party_id, 0) + 1
        fed.active._backward_rounds[party_id] = rnd
        messages.append(
            RoundMessage(
                kind=MessageKind.BACKWARD_GRADIENT,
                party_id=party_id,
                payload=grad_concat[:, offset : offset + w],
                round_index=rnd,
            )
        )
        offset += w
    return loss, messages


def apply_bottom_update(
    party: PassiveParty, cache: nn.ForwardCache, grad_embedding, config: SgdConfig
) -> None:
    """Backward through the bottom model from an embedding gradient, then step."""
    _, grads = nn.backward(party.bottom_model, cache, _payload(grad_embedding))
    _optimizer_for(party, config).step(party.bottom_model, grads)


def passive_backward(party: PassiveParty, grad_embedding, config: SgdConfig) -> None:
    """Consume the pending forward cache and update the bottom model."""
    if party._pending_cache is None:
        raise ProtocolOrderError(
            f"party {party.party_id}: backward received before any forward"
        )
    cache = party._pending_cache
    party._pending_cache = None
    party._backward_round += 1
    apply_bottom_update(party, cache, grad_embedding, config)


def train_epoch(
    fed: SplitFederation,
    dataset,
    batch_size: int,
    config: SgdConfig,
    rng: np.random.Generator,
    row_indices=None,
    labels_override=None,
) -> float:
    """One shuffled pass of lock-step protocol rounds; returns mean batch loss.

    The dataset's shards must be the parties' shards (same row space).
    row_indices restricts the pass to a subset of rows; labels_override
    replaces the targets row-for-row (used by relabeling baselines).
    """
    if batch_size < 1:
        raise ContractError("batch_size must be at least 1")
    n = fed.passives[0].num_rows
    for party, part in zip(fed.passives, dataset.parts):
        if part.shape != party.feature_shard.shape:
            raise ContractError("dataset shards do not match federation shards")
    labels = dataset.labels if labels_override is None else np.asarray(labels_override)
    if labels.shape[0] != n:
        raise ShapeError("labels length does not match shard rows")
    rows = np.arange(n) if row_indices is None else np.asarray(row_indices, np.int64)
    if rows.size == 0:
        raise ContractError("cannot train on an empty row set")
    order = rows[rng.permutation(rows.size)]
    losses = []
    for start in range(0, order.size, batch_size):
        idx = order[start : start + batch_size]
        targets = nn.one_hot(labels[idx], fed.num_classes)
        embeddings = [passive_forward(p, idx) for p in fed.ordered_passives()]
        loss, grad_messages = active_step(fed, embeddings, targets, config)
        for party, msg in zip(fed.ordered_passives(), grad_messages):
            noisy = apply_privacy(msg.payload, fed.privacy, rng)
            passive_backward(party, noisy, config)
        losses.append(loss)
    return float(np.mean(losses))


def fit(
    fed: SplitFederation,
    dataset,
    epochs: int,
    batch_size: int,
    config: SgdConfig,
    rng: np.random.Generator,
    row_indices=None,
    labels_override=None,
) -> list[float]:
    """Run train_epoch repeatedly; returns the per-epoch mean losses."""
    return [
        train_epoch(
            fed, dataset, batch_size, config, rng,
            row_indices=row_indices, labels_override=labels_override,
        )
        for _ in range(epochs)
    ]


def federation_logits(fed: SplitFederation, parts: list) -> np.ndarray:
    """Cacheless joint forward; parts are per-party feature batches.

    parts[i] belongs to fed.passives[i]; concatenation follows concat_order.
    """
    if len(parts) != fed.num_parties:
        raise ShapeError("one feature batch per passive party is required")
    by_id = {p.party_id: x for p, x in zip(fed.passives, parts)}
    outs = []
    for party in fed.ordered_passives():
        out, _ = nn.forward(party.bottom_model, by_id[party.party_id])
        outs.append(out)
    concat = np.concatenate(outs, axis=1)
    logits, _ = nn.forward(fed.active.top_model, concat)
    return logits


def predict(fed: SplitFederation, parts: list) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class index."""
    return np.argmax(federation_logits(fed, parts), axis=1)


def predict_proba(fed: SplitFederation, parts: list) -> np.ndarray:
    return nn.softmax(federation_logits(fed, parts))


def accuracy(fed: SplitFederation, parts: list, labels) -> float:
    """Percentage of correct predictions."""
    y = np.asarray(labels, dtype=np.int64)
    if y.size == 0:
        raise ContractError("cannot score an empty evaluation set")
    return float(100.0 * np.mean(predict(fed, parts) == y))


def clone_federation(fed: SplitFederation) -> SplitFederation:
    """Deep copy of models and shards; optimizer state is not carried over."""
    passives = [
        PassiveParty(p.party_id, nn.clone_mlp(p.bottom_model), p.feature_shard.copy())
        for p in fed.passives
    ]
    active = ActiveParty(
        nn.clone_mlp(fed.active.top_model),
        fed.active.labels.copy(),
        fed.active.num_classes,
    )
    return SplitFederation(
        active, passives, fed.num_classes,
        concat_order=fed.concat_order, privacy=fed.privacy,
    )


def build_federation(
    dataset,
    rng: np.random.Generator,
    embedding_dim: int = 64,
    bottom_hidden: tuple[int, ...] = (),
    top_hidden: tuple[int, ...] = (64,),
    bottom_output_activation: str = "relu",
    bottom_init_gain: float = 1.0,
    top_init_gain: float = 1.0,
    concat_order: tuple[int, ...] | None = None,
    privacy: PrivacyConfig = PrivacyConfig(),
) -> SplitFederation:
    """Construct a federation shaped for the given vertical dataset.

    Each bottom model maps its shard width through bottom_hidden to
    embedding_dim; the top model maps the concatenated embeddings through
    top_hidden to the class count. The init gains multiply the default
    He weight scale: a small bottom gain with a large top gain keeps
    embeddings compact while amplifying the gradients flowing back to the
    bottom models, which is what makes tiny-rate ascent effective at this
    model size.
    """
    passives = []
    for k, part in enumerate(dataset.parts, start=1):
        dims = [part.shape[1], *bottom_hidden, embedding_dim]
        bottom = nn.init_mlp(
            dims, rng, output_activation=bottom_output_activation,
            weight_scale=np.sqrt(2.0 / dims[0]) * bottom_init_gain
            if len(dims) == 2 else None,
        )
        if len(dims) > 2 and bottom_init_gain != 1.0:
            for layer in bottom.layers:
                layer.weights *= bottom_init_gain
        passives.append(PassiveParty(k, bottom, part))
    top_dims = [embedding_dim * len(passives), *top_hidden, dataset.num_classes]
    top = nn.init_mlp(top_dims, rng, output_activation="identity")
    # amplify every top layer except the logit layer, which sets output scale
    for layer in top.layers[:-1]:
        layer.weights *= top_init_gain
    if len(top.layers) == 1:
        top.layers[0].weights *= top_init_gain
    active = ActiveParty(top, dataset.labels, dataset.num_classes)
    return SplitFederation(
        active, passives, dataset.num_classes,
        concat_order=concat_order, privacy=privacy,
    )
