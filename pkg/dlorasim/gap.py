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
"""Low-rank gradient gap and convergence bound arithmetic.

A rank-``r`` client can only express the top ``r`` singular directions of
a layer gradient.  The rest, the truncation residual, is what this module
measures.  With every singular value bounded by ``M`` the residual of a
layer with ``k`` singular values is at most ``M * sqrt(k - r)``, and over
a whole model at most ``M * sqrt(K - L * r)``.

The bound functions evaluate the expected-loss descent inequality and the
averaged gradient-norm bound that the scheduler's objective is derived
from.  They are reporting tools: violations are returned as flags.
"""
import logging
import math
from collections import namedtuple

import numpy as np

from dlorasim.exceptions import (
    InvalidParameterError, InvalidRankError, NumericalError)


logger = logging.getLogger(__name__)

BOUND_TOLERANCE = 1e-12


#: Truncation residual of one layer against its bound.
#: ``precondition_ok`` is False when some singular value exceeds ``M``.
LayerGap = namedtuple(
    'LayerGap',
    ['singulars', 'rank', 'k', 'M', 'residual_norm', 'bound', 'ok',
     'precondition_ok'])

TotalGap = namedtuple('TotalGap', ['total', 'bound', 'ok'])

#: Everything the gap analysis knows about one set of layer gradients.
GapReport = namedtuple(
    'GapReport',
    ['singulars', 'rank', 'residual_norms', 'layer_bounds',
     'total_residual', 'total_bound', 'bound_satisfied', 'precondition_ok'])

#: Result of ``descent_bound``.  ``step_size_ok`` is False when eta > 1/beta.
DescentBound = namedtuple('DescentBound', ['value', 'step_size_ok'])


def _apply_sign_convention(u, vt):
    # First nonzero entry of each left singular vector is made >= 0.
    u = u.copy()
    vt = vt.copy()
    for i in range(u.shape[1]):
        column = u[:, i]
        nonzero = np.flatnonzero(column)
        if nonzero.size and column[nonzero[0]] < 0:
            u[:, i] = -column
            vt[i, :] = -vt[i, :]
    return u, vt


def svd(matrix):
    """Thin SVD with a deterministic sign convention.

    :return: ``(u, singulars, vt)`` with singulars in descending order.
    :raises: NumericalError if LAPACK does not converge.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise InvalidParameterError(name='matrix', value=matrix.shape,
                                    reason='expected a 2-D array')
    try:
        u, singulars, vt = np.linalg.svd(matrix, full_matrices=False)
    except np.linalg.LinAlgError as e:
        raise NumericalError(operation='svd', error_msg=str(e))
    u, vt = _apply_sign_convention(u, vt)
    return u, singulars, vt


def svd_truncate(matrix, rank):
    """Split ``matrix`` into its best rank-``rank`` part and the rest.

    :return: ``(lora_part, residual, singulars)`` where
        ``lora_part + residual == matrix``.
    :raises: InvalidRankError unless ``1 <= rank <= min(h, w)``.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    u, singulars, vt = svd(matrix)
    max_rank = min(matrix.shape)
    if rank < 1 or rank > max_rank:
        raise InvalidRankError(rank=rank, layer=0, max_rank=max_rank)
    lora_part = (u[:, :rank] * singulars[:rank]).dot(vt[:rank, :])
    residual = matrix - lora_part
    return lora_part, residual, singulars


def layer_gap_bound(singulars, rank, M):
    """Compare the tail norm ``sqrt(sum_{i>r} s_i^2)`` with ``M sqrt(k-r)``.

    :type singulars: sequence of float, descending
    :rtype: LayerGap
    """
    singulars = np.asarray(singulars, dtype=np.float64)
    k = singulars.shape[0]
    if rank < 0 or rank > k:
        raise InvalidParameterError(name='rank', value=rank,
                                    reason='must be in [0, %s]' % k)
    residual_norm = float(np.sqrt(np.sum(singulars[rank:] ** 2)))
    bound = M * math.sqrt(k - rank)
    precondition_ok = bool(np.all(singulars <= M + BOUND_TOLERANCE))
    if not precondition_ok:
        logger.warning("Largest singular value %r exceeds M=%r; the layer "
                       "bound does not apply", float(singulars.max()), M)
    ok = precondition_ok and residual_norm <= bound + BOUND_TOLERANCE
    return LayerGap(singulars=tuple(float(s) for s in singulars), rank=rank,
                    k=k, M=M, residual_norm=residual_norm, bound=bound,
                    ok=ok, precondition_ok=precondition_ok)


def total_gap(layer_gaps):
    """Combine per-layer residuals into the model-wide gap.

    :type layer_gaps: list of LayerGap
    :return: ``TotalGap(total, bound, ok)`` with
        ``total = sqrt(sum_l residual_l^2)`` and
        ``bound = M sqrt(K - L r)``.
    """
    layer_gaps = list(layer_gaps)
    if not layer_gaps:
        raise InvalidParameterError(name='layer_gaps', value=[],
                                    reason='need at least one layer')
    ranks = set(g.rank for g in layer_gaps)
    bounds_m = set(g.M for g in layer_gaps)
    if len(ranks) > 1 or len(bounds_m) > 1:
        raise InvalidParameterError(
            name='layer_gaps', value=sorted(ranks),
            reason='all layers must share one rank and one M')
    rank = layer_gaps[0].rank
    M = layer_gaps[0].M
    K = sum(g.k for g in layer_gaps)
    L = len(layer_gaps)
    total = math.sqrt(sum(g.residual_norm ** 2 for g in layer_gaps))
    bound = M * math.sqrt(K - L * rank)
    ok = (all(g.precondition_ok for g in layer_gaps) and
          total <= bound + BOUND_TOLERANCE)
    return TotalGap(total=total, bound=bound, ok=ok)


def gap_report(gradients, rank, M):
    """Build a ``GapReport`` for one gradient matrix per layer."""
    layer_gaps = []
    for gradient in gradients:
        _, _, singulars = svd_truncate(gradient, rank)
        layer_gaps.append(layer_gap_bound(singulars, rank, M))
    total = total_gap(layer_gaps)
    return GapReport(
        singulars=tuple(g.singulars for g in layer_gaps),
        rank=rank,
        residual_norms=tuple(g.residual_norm for g in layer_gaps),
        layer_bounds=tuple(g.bound for g in layer_gaps),
        total_residual=total.total,
        total_bound=total.bound,
        bound_satisfied=total.ok,
        precondition_ok=all(g.precondition_ok for g in layer_gaps))


class BoundParams(namedtuple('BoundParams',
                             ['eta', 'beta', 'sigma2', 'M', 'K', 'L',
                              'loss_init', 'loss_star', 'T'])):
    """Constants of the convergence bounds.

    ``K`` and ``L`` are the singular-value count and layer count of the
    model in use; ``BoundParams.for_spec`` fills them from a ``ModelSpec``.
    """
    __slots__ = ()

    def __new__(cls, eta, beta, sigma2, M, K, L, loss_init=0.0,
                loss_star=0.0, T=1):
        for name, value in (('eta', eta), ('beta', beta),
                            ('sigma2', sigma2), ('M', M), ('K', K),
                            ('L', L)):
            if not value > 0:
                raise InvalidParameterError(name=name, value=value,
                                            reason='must be positive')
        return super(BoundParams, cls).__new__(
            cls, float(eta), float(beta), float(sigma2), float(M), int(K),
            int(L), float(loss_init), float(loss_star), int(T))

    @classmethod
    def for_spec(cls, spec, eta, beta, sigma2, M, loss_init=0.0,
                 loss_star=0.0, T=1):
        return cls(eta, beta, sigma2, M, spec.n_singular_values,
                   spec.n_layers, loss_init, loss_star, T)


def _check_s_size(s_size):
    if s_size < 1:
        raise InvalidParameterError(name='s_size', value=s_size,
                                    reason='need at least one client')


def descent_bound(params, s_size, rank, loss_t, grad_norm_sq):
    """Upper bound on the next round's expected loss.

    ``loss_t - (eta/2) |grad|^2 + (eta^2 beta / 2) sigma2 / s
    + (eta/2) M^2 (K - L r)``.  The inequality assumes ``eta <= 1/beta``;
    a larger step is reported through ``step_size_ok``.

    :rtype: DescentBound
    """
    _check_s_size(s_size)
    p = params
    step_size_ok = p.eta <= 1.0 / p.beta
    if not step_size_ok:
        logger.warning("Step size %r exceeds 1/beta=%r; the descent bound "
                       "does not hold", p.eta, 1.0 / p.beta)
    value = (loss_t - p.eta / 2.0 * grad_norm_sq +
             p.eta ** 2 * p.beta / 2.0 * p.sigma2 / s_size +
             p.eta / 2.0 * p.M ** 2 * (p.K - p.L * rank))
    return DescentBound(value=value, step_size_ok=step_size_ok)


def avg_grad_bound(params, s_size, rank):
    """Bound on the average squared gradient norm over ``T`` rounds.

    ``(2 / (eta T)) (loss_init - loss_star) + eta beta sigma2 / s
    + M^2 (K - L r)``.  ``rank = 0`` is accepted for what-if curves.
    """
    _check_s_size(s_size)
    p = params
    if p.T < 1:
        raise InvalidParameterError(name='T', value=p.T,
                                    reason='need at least one round')
    if rank < 0:
        raise InvalidParameterError(name='rank', value=rank,
                                    reason='must be >= 0')
    return (2.0 / (p.eta * p.T) * (p.loss_init - p.loss_star) +
            p.eta * p.beta * p.sigma2 / s_size +
            p.M ** 2 * (p.K - p.L * rank))


def bound_curves(params, s_sizes, ranks):
    """Evaluate ``avg_grad_bound`` over a grid.

    :return: list of ``(s_size, rank, value)`` rows, ranks varying
        fastest.
    """
    rows = []
    for s_size in s_sizes:
        for rank in ranks:
            rows.append((s_size, rank, avg_grad_bound(params, s_size, rank)))
    return rows
