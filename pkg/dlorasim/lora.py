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
"""Low-rank parameterisation of dense weight matrices.

A layer keeps a frozen base ``w0`` (h x w) and two trainable factors,
``b`` (h x r) and ``a`` (r x w).  The weight the layer applies is
``w0 + b @ a``, but the product is never formed on the forward path:
inputs go through ``a`` then ``b``.

Factors start as ``b = 0`` and ``a ~ N(0, FACTOR_INIT_STD**2)``, so a
freshly wrapped layer computes exactly what ``w0`` computes.
"""
import logging
from collections import namedtuple

import numpy as np

from dlorasim.exceptions import (
    InvalidParameterError, InvalidRankError, ShapeMismatchError,
    DegenerateSpecError)
from dlorasim.utils import frozen


logger = logging.getLogger(__name__)

FACTOR_INIT_STD = 0.01


class LoraLayer(namedtuple('LoraLayer', ['w0', 'b', 'a', 'rank'])):
    """One weight matrix split as frozen base plus low-rank factors."""
    __slots__ = ()

    @property
    def shape(self):
        return self.w0.shape

    def delta(self):
        """Materialise ``b @ a``.  Used when folding into a base."""
        return self.b.dot(self.a)

    def effective_weight(self):
        return self.w0 + self.delta()


def check_rank(spec, rank):
    """Raise ``InvalidRankError`` naming the first layer ``rank`` breaks."""
    for index, (h, w) in enumerate(spec.layer_dims):
        if rank < 1 or rank > min(h, w):
            raise InvalidRankError(rank=rank, layer=index,
                                   max_rank=min(h, w))


def init_base_weights(spec, rng):
    """He-normal base weights, one ``(h, w)`` matrix per layer."""
    weights = []
    for h, w in spec.layer_dims:
        weights.append(rng.normal(0.0, np.sqrt(2.0 / w), size=(h, w)))
    return weights


def init_factors(spec, rank, rng):
    """Fresh ``(b, a)`` pairs: ``b`` zero, ``a`` small Gaussian."""
    check_rank(spec, rank)
    factors = []
    for h, w in spec.layer_dims:
        b = np.zeros((h, rank))
        a = rng.normal(0.0, FACTOR_INIT_STD, size=(rank, w))
        factors.append((b, a))
    return factors


def new_lora_model(spec, rank, seed):
    """Build a freshly initialised LoRA model.

    Draw order from ``numpy.random.default_rng(seed)``: every base matrix
    (He-normal, std ``sqrt(2 / w)``) in layer order, then every ``a``
    factor in layer order.

    :rtype: list of LoraLayer
    """
    check_rank(spec, rank)
    rng = np.random.default_rng(seed)
    bases = init_base_weights(spec, rng)
    factors = init_factors(spec, rank, rng)
    return [LoraLayer(frozen(w0), frozen(b), frozen(a), rank)
            for w0, (b, a) in zip(bases, factors)]


def forward(layer, x):
    """Apply ``w0 + b a`` to ``x`` without forming ``b a``.

    ``x`` is either a single input vector of length ``w`` or a batch of
    shape ``(n, w)`` (one input per row).
    """
    x = np.asarray(x, dtype=np.float64)
    h, w = layer.w0.shape
    if x.ndim == 1:
        if x.shape[0] != w:
            raise ShapeMismatchError(operation='forward', expected=(w,),
                                     actual=x.shape)
        return layer.w0.dot(x) + layer.b.dot(layer.a.dot(x))
    if x.ndim != 2 or x.shape[1] != w:
        raise ShapeMismatchError(operation='forward', expected=('n', w),
                                 actual=x.shape)
    return x.dot(layer.w0.T) + x.dot(layer.a.T).dot(layer.b.T)


def lora_gradients(layer, upstream_grad):
    """Chain a weight gradient through the factors.

    :param upstream_grad: ``G``, the gradient of the loss with respect
        to the effective weight (shape ``h x w``).
    :return: ``(grad_b, grad_a) = (G a^T, b^T G)``.  ``w0`` gets nothing.
    """
    grad = np.asarray(upstream_grad, dtype=np.float64)
    if grad.shape != layer.w0.shape:
        raise ShapeMismatchError(operation='lora_gradients',
                                 expected=layer.w0.shape, actual=grad.shape)
    return grad.dot(layer.a.T), layer.b.T.dot(grad)


def param_counts(spec, rank):
    """Return ``(full, lora)`` parameter counts for ``spec`` at ``rank``."""
    if rank < 1:
        raise InvalidParameterError(name='rank', value=rank,
                                    reason='rank must be >= 1')
    return spec.n_params, rank * spec.n_lora_per_rank


def rank_upper_bound(spec, cap):
    """Largest rank worth enumerating.

    The rank is capped three ways: by ``cap``; by the rank at which the
    LoRA factors would outgrow the full model
    (``N // n_lora_per_rank``); and by the smallest layer dimension, so
    that every layer can be truncated at that rank.
    """
    if cap < 1:
        raise InvalidParameterError(name='rank_cap', value=cap,
                                    reason='cap must be >= 1')
    size_limit = spec.n_params // spec.n_lora_per_rank
    bound = min(cap, size_limit, spec.max_layer_rank)
    if bound < 1:
        raise DegenerateSpecError(
            reason='N // n_lora_per_rank = %s' % size_limit)
    return bound
