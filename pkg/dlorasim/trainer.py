# Copyright 2024 The dlorasim Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License"). You
# may not use this file except in compliance with the License. A copy of
# the License is located at
#
# http://www.apache.org/licenses/LICENSE-2.0
#
# or in the "license" file accompanying this file. This file is
# distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF
# ANY KIND, either express or implied. See the License for the specific
# language governing permissions and limitations under the License.
"""Federated training of a small dense classifier.

The model is a stack of bias-free dense layers with ReLU between them and
a softmax cross-entropy head.  Two training regimes share the same
forward and backward code:

* LoRA clients (``local_train``) freeze the global weights and train a
  fresh pair of factors per layer.  The server folds the averaged
  products ``b @ a`` into the global weights (``aggregate``).
* Full-rank clients (``fedavg_local_train``) train every weight and
  upload the whole delta (``fedavg_aggregate``).

Every function here is pure: the global model is never mutated and each
round yields a new ``GlobalModel``.
"""
import logging
from collections import namedtuple

import numpy as np

from dlorasim.data import Dataset
from dlorasim.exceptions import (
    AggregationError, DivergenceError, EvaluationError, InvalidParameterError,
    ShapeMismatchError)
from dlorasim.lora import (
    LoraLayer, check_rank, forward, init_base_weights, init_factors,
    lora_gradients)
from dlorasim.utils import derive_seed, frozen, id_order_key, stable_id_key


logger = logging.getLogger(__name__)

WEIGHT_SUM_TOLERANCE = 1e-9


#: The server-side model.  ``layers`` holds one frozen ``(h, w)`` array per
#: layer of ``spec``.
GlobalModel = namedtuple('GlobalModel', ['spec', 'layers', 'round'])

#: What a LoRA client uploads.  ``factors`` holds one ``(b, a)`` pair per
#: layer.
ClientUpdate = namedtuple(
    'ClientUpdate', ['vehicle_id', 'factors', 'local_loss', 'rank'])

#: What a full-rank client uploads: one dense delta per layer.
FullRankUpdate = namedtuple(
    'FullRankUpdate', ['vehicle_id', 'deltas', 'local_loss'])


class TrainConfig(namedtuple('TrainConfig',
                             ['eta', 'epochs', 'batch_size', 'rounds',
                              'seed'])):
    """Hyper-parameters shared by every client.

    ``eta = 0`` is accepted and turns training into a no-op, which is
    handy for checking plumbing.
    """
    __slots__ = ()

    def __new__(cls, eta=0.01, epochs=4, batch_size=32, rounds=100,
                seed=0):
        if not np.isfinite(eta) or eta < 0:
            raise InvalidParameterError(name='eta', value=eta,
                                        reason='must be finite and >= 0')
        if epochs < 1:
            raise InvalidParameterError(name='epochs', value=epochs,
                                        reason='must be >= 1')
        if batch_size < 1:
            raise InvalidParameterError(name='batch_size', value=batch_size,
                                        reason='must be >= 1')
        if rounds < 0:
            raise InvalidParameterError(name='rounds', value=rounds,
                                        reason='must be >= 0')
        return super(TrainConfig, cls).__new__(
            cls, float(eta), int(epochs), int(batch_size), int(rounds),
            int(seed))


def new_global_model(spec, seed):
    """Round-0 global model with He-normal weights drawn from ``seed``."""
    if not spec.is_chain:
        raise ShapeMismatchError(operation='new_global_model',
                                 expected='chained layer dimensions',
                                 actual=list(spec.layer_dims))
    rng = np.random.default_rng(seed)
    layers = tuple(frozen(w) for w in init_base_weights(spec, rng))
    return GlobalModel(spec=spec, layers=layers, round=0)


def _apply(layer, h):
    if isinstance(layer, LoraLayer):
        return forward(layer, h)
    return h.dot(layer.T)


def _input_grad(layer, delta):
    # delta @ (w0 + b a) without forming b a
    if isinstance(layer, LoraLayer):
        return delta.dot(layer.w0) + delta.dot(layer.b).dot(layer.a)
    return delta.dot(layer)


def _forward_cache(layers, features):
    inputs = []
    pre_activations = []
    h = features
    last = len(layers) - 1
    for index, layer in enumerate(layers):
        inputs.append(h)
        z = _apply(layer, h)
        if index < last:
            pre_activations.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    return h, inputs, pre_activations


def _softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    rows = np.arange(n)
    loss = -log_probs[rows, labels].mean()
    grad = np.exp(log_probs)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def _weight_gradients(layers, inputs, pre_activations, grad_logits):
    """Gradients of the loss with respect to each effective weight."""
    grads = [None] * len(layers)
    delta = grad_logits
    for index in range(len(layers) - 1, -1, -1):
        grads[index] = delta.T.dot(inputs[index])
        if index > 0:
            delta = (_input_grad(layers[index], delta) *
                     (pre_activations[index - 1] > 0))
    return grads


def _check_features(spec, features, operation):
    if features.ndim != 2 or features.shape[1] != spec.input_dim:
        raise ShapeMismatchError(operation=operation,
                                 expected=('n', spec.input_dim),
                                 actual=features.shape)


def _minibatches(n_samples, batch_size, rng):
    order = rng.permutation(n_samples)
    for start in range(0, n_samples, batch_size):
        yield order[start:start + batch_size]


def local_train(global_model, partition, cfg, rank, seed, vehicle_id=None):
    """Train fresh LoRA factors on one client's partition.

    Draw order from ``numpy.random.default_rng(seed)``: the ``a`` factors
    first, then one permutation per epoch.

    :type global_model: GlobalModel
    :type cfg: TrainConfig
    :param vehicle_id: Id reported on the update.  Defaults to the
        partition owner.

    :rtype: ClientUpdate
    :raises: DivergenceError if a mini-batch loss is not finite.
    """
    spec = global_model.spec
    check_rank(spec, rank)
    if vehicle_id is None:
        vehicle_id = partition.owner
    features = np.asarray(partition.features, dtype=np.float64)
    labels = np.asarray(partition.labels)
    _check_features(spec, features, 'local_train')
    rng = np.random.default_rng(seed)
    factors = [[b, a] for b, a in init_factors(spec, rank, rng)]
    epoch_losses = []
    for epoch in range(cfg.epochs):
        batch_losses = []
        batches = _minibatches(labels.shape[0], cfg.batch_size, rng)
        for batch, idx in enumerate(batches):
            layers = [LoraLayer(w0, b, a, rank)
                      for w0, (b, a) in zip(global_model.layers, factors)]
            logits, inputs, pre = _forward_cache(layers, features[idx])
            loss, grad_logits = _softmax_cross_entropy(logits, labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(vehicle_id=vehicle_id,
                                      round=global_model.round,
                                      epoch=epoch, batch=batch, loss=loss)
            grads = _weight_gradients(layers, inputs, pre, grad_logits)
            for pair, layer, grad in zip(factors, layers, grads):
                grad_b, grad_a = lora_gradients(layer, grad)
                pair[0] = pair[0] - cfg.eta * grad_b
                pair[1] = pair[1] - cfg.eta * grad_a
            batch_losses.append(loss)
        epoch_losses.append(np.mean(batch_losses))
    local_loss = float(np.mean(epoch_losses))
    logger.debug("Vehicle %s trained rank %s: local loss %.6f",
                 vehicle_id, rank, local_loss)
    return ClientUpdate(
        vehicle_id=vehicle_id,
        factors=tuple((frozen(b), frozen(a)) for b, a in factors),
        local_loss=local_loss, rank=rank)


def fedavg_local_train(global_model, partition, cfg, seed, vehicle_id=None):
    """Full-rank counterpart of ``local_train``.

    Every weight is trainable; the update carries ``w_trained - w0`` per
    layer.

    :rtype: FullRankUpdate
    """
    spec = global_model.spec
    if vehicle_id is None:
        vehicle_id = partition.owner
    features = np.asarray(partition.features, dtype=np.float64)
    labels = np.asarray(partition.labels)
    _check_features(spec, features, 'fedavg_local_train')
    rng = np.random.default_rng(seed)
    weights = [np.array(w) for w in global_model.layers]
    epoch_losses = []
    for epoch in range(cfg.epochs):
        batch_losses = []
        batches = _minibatches(labels.shape[0], cfg.batch_size, rng)
        for batch, idx in enumerate(batches):
            logits, inputs, pre = _forward_cache(weights, features[idx])
            loss, grad_logits = _softmax_cross_entropy(logits, labels[idx])
            if not np.isfinite(loss):
                raise DivergenceError(vehicle_id=vehicle_id,
                                      round=global_model.round,
                                      epoch=epoch, batch=batch, loss=loss)
            grads = _weight_gradients(weights, inputs, pre, grad_logits)
            weights = [w - cfg.eta * g for w, g in zip(weights, grads)]
            batch_losses.append(loss)
        epoch_losses.append(np.mean(batch_losses))
    return FullRankUpdate(
        vehicle_id=vehicle_id,
        deltas=tuple(frozen(w - w0)
                     for w, w0 in zip(weights, global_model.layers)),
        local_loss=float(np.mean(epoch_losses)))


def _aggregation_weights(n_updates, weights):
    if weights is None:
        return [1.0 / n_updates] * n_updates
    weights = [float(alpha) for alpha in weights]
    if len(weights) != n_updates:
        raise AggregationError(reason='%s weights for %s updates' %
                               (len(weights), n_updates))
    if any(alpha < 0 for alpha in weights):
        raise AggregationError(reason='negative aggregation weight')
    if abs(sum(weights) - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise AggregationError(reason='weights sum to %r, not 1' %
                               sum(weights))
    return weights


def _skip_round(global_model):
    logger.warning("No client updates for round %s; keeping the global "
                   "model", global_model.round)
    return global_model._replace(round=global_model.round + 1)


def _fold(global_model, updates, weights, layer_delta):
    # Reduce in ascending vehicle-id order, independent of arrival order.
    alphas = _aggregation_weights(len(updates), weights)
    order = sorted(range(len(updates)),
                   key=lambda i: id_order_key(updates[i].vehicle_id))
    new_layers = []
    for index, w0 in enumerate(global_model.layers):
        acc = np.zeros_like(w0)
        for i in order:
            delta = layer_delta(updates[i], index)
            if delta.shape != w0.shape:
                raise AggregationError(
                    reason='vehicle %s sent a %s delta for a %s layer' %
                           (updates[i].vehicle_id, delta.shape, w0.shape))
            if not np.all(np.isfinite(delta)):
                raise AggregationError(
                    reason='vehicle %s sent non-finite values' %
                           updates[i].vehicle_id)
            acc += alphas[i] * delta
        new_layers.append(frozen(w0 + acc))
    return GlobalModel(spec=global_model.spec, layers=tuple(new_layers),
                       round=global_model.round + 1)


def aggregate(global_model, updates, weights=None):
    """Fold the weighted LoRA products into the global weights.

    ``W0 <- W0 + sum_n alpha_n * b_n @ a_n`` per layer, with uniform
    ``alpha_n = 1 / len(updates)`` unless ``weights`` is given.  An
    empty ``updates`` list skips the update but still advances the round.

    :raises: AggregationError for mixed ranks, bad weights or malformed
        factors.
    """
    if not updates:
        return _skip_round(global_model)
    ranks = sorted(set(u.rank for u in updates))
    if len(ranks) > 1:
        raise AggregationError(reason='mixed ranks %s' % ranks)
    for update in updates:
        if len(update.factors) != global_model.spec.n_layers:
            raise AggregationError(
                reason='vehicle %s sent %s factor pairs for %s layers' %
                       (update.vehicle_id, len(update.factors),
                        global_model.spec.n_layers))

    def layer_delta(update, index):
        b, a = update.factors[index]
        return np.dot(b, a)

    return _fold(global_model, updates, weights, layer_delta)


def fedavg_aggregate(global_model, updates, weights=None):
    """Average full-rank deltas into the global weights."""
    if not updates:
        return _skip_round(global_model)

    def layer_delta(update, index):
        return update.deltas[index]

    return _fold(global_model, updates, weights, layer_delta)


def client_seed(train_seed, round_index, vehicle_id):
    """Seed for one client's local run, independent of scheduling order."""
    return derive_seed(train_seed, round_index, stable_id_key(vehicle_id))


def fedavg_baseline_round(global_model, partitions, selected_ids, cfg):
    """One synchronous FedAvg round over ``selected_ids``.

    :param partitions: Mapping (or sequence) from vehicle id to that
        vehicle's ``DataPartition``.
    :rtype: GlobalModel
    """
    updates = []
    for vehicle_id in sorted(selected_ids, key=id_order_key):
        seed = client_seed(cfg.seed, global_model.round, vehicle_id)
        updates.append(fedavg_local_train(global_model,
                                          partitions[vehicle_id], cfg, seed,
                                          vehicle_id=vehicle_id))
    return fedavg_aggregate(global_model, updates)


def evaluate(global_model, test_set):
    """Return ``(mean cross-entropy, accuracy)`` of the global model.

    :raises: EvaluationError on an empty test set.
    """
    features = np.asarray(test_set.features, dtype=np.float64)
    labels = np.asarray(test_set.labels)
    if labels.shape[0] == 0:
        raise EvaluationError(reason='test set is empty')
    _check_features(global_model.spec, features, 'evaluate')
    logits, _, _ = _forward_cache(list(global_model.layers), features)
    loss, _ = _softmax_cross_entropy(logits, labels)
    accuracy = float(np.mean(np.argmax(logits, axis=1) == labels))
    return loss, accuracy


def full_gradients(weights, dataset):
    """Gradient of the mean loss over ``dataset`` for each weight matrix.

    :param weights: Sequence of dense ``(h, w)`` arrays.
    """
    features = np.asarray(dataset.features, dtype=np.float64)
    labels = np.asarray(dataset.labels)
    layers = [np.asarray(w, dtype=np.float64) for w in weights]
    logits, inputs, pre = _forward_cache(layers, features)
    _, grad_logits = _softmax_cross_entropy(logits, labels)
    return _weight_gradients(layers, inputs, pre, grad_logits)


def local_model_weights(global_model, update):
    """Dense weights of a client's local model ``W0 + b a``."""
    return [w0 + np.dot(b, a)
            for w0, (b, a) in zip(global_model.layers, update.factors)]


def pooled(partitions):
    """Concatenate partitions into one ``Dataset``."""
    partitions = list(partitions)
    return Dataset(np.concatenate([p.features for p in partitions]),
                   np.concatenate([p.labels for p in partitions]))
