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
"""Synthetic classification data and its split across vehicles.

The task is a Gaussian mixture: every class has a mean vector and samples
are that mean plus unit-variance isotropic noise.  Train and test sets
drawn from the same class means come from the same distribution.
"""
import logging
from collections import namedtuple

import numpy as np

from dlorasim.exceptions import InvalidParameterError, PartitionError


logger = logging.getLogger(__name__)

IID = 'iid'
NONIID = 'noniid'
PARTITION_MODES = (IID, NONIID)


class Dataset(namedtuple('Dataset', ['features', 'labels'])):
    __slots__ = ()

    @property
    def n_samples(self):
        return self.labels.shape[0]

    def subset(self, indices):
        return Dataset(self.features[indices], self.labels[indices])


#: One vehicle's local data.  ``indices`` point into the pool it was
#: drawn from.
DataPartition = namedtuple(
    'DataPartition',
    ['features', 'labels', 'owner', 'classes_present', 'indices'])


def make_class_means(n_classes, dim, separation, seed):
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, separation, size=(n_classes, dim))


def make_dataset(n_samples, class_means, seed):
    """Draw a class-balanced sample of the mixture.

    Labels cycle through the classes before being shuffled, so class
    counts differ by at most one.
    """
    rng = np.random.default_rng(seed)
    n_classes, dim = class_means.shape
    labels = rng.permutation(np.arange(n_samples) % n_classes)
    features = class_means[labels] + rng.normal(size=(n_samples, dim))
    return Dataset(features, labels.astype(np.int64))


def partition_dataset(dataset, n_icvs, mode, class_budget, seed,
                      samples_per_icv=300):
    """Split ``dataset`` into ``n_icvs`` disjoint partitions.

    Every partition holds exactly ``samples_per_icv`` samples, drawn
    without replacement from the whole pool.

    * ``iid``: a uniform random draw, no per-class constraint.
    * ``noniid``: each partition first picks ``class_budget`` classes at
      random among those with samples left, then draws uniformly from
      the remaining samples of those classes, so it never holds more
      than ``class_budget`` labels.  When the random classes are too
      thin to fill the partition, the ``class_budget`` classes with the
      most samples left are used instead.

    :raises: PartitionError when the pool runs out of samples, or no
        ``class_budget`` classes can fill a partition.
    """
    if mode not in PARTITION_MODES:
        raise InvalidParameterError(name='mode', value=mode,
                                    reason='expected one of %s' %
                                    ', '.join(PARTITION_MODES))
    if n_icvs < 1 or samples_per_icv < 1:
        raise InvalidParameterError(
            name='n_icvs/samples_per_icv', value=(n_icvs, samples_per_icv),
            reason='both must be >= 1')
    needed = n_icvs * samples_per_icv
    if dataset.n_samples < needed:
        raise PartitionError(n_icvs=n_icvs, samples_per_icv=samples_per_icv,
                             reason='pool holds only %s samples' %
                             dataset.n_samples)
    rng = np.random.default_rng(seed)
    if mode == IID:
        chunks = _iid_chunks(dataset, n_icvs, samples_per_icv, rng)
    else:
        chunks = _noniid_chunks(dataset, n_icvs, samples_per_icv,
                                class_budget, rng)
    partitions = []
    for owner, indices in enumerate(chunks):
        labels = dataset.labels[indices]
        partitions.append(DataPartition(
            features=dataset.features[indices],
            labels=labels,
            owner=owner,
            classes_present=frozenset(int(c) for c in np.unique(labels)),
            indices=indices))
    logger.debug("Built %s %s partitions of %s samples",
                 n_icvs, mode, samples_per_icv)
    return partitions


def _iid_chunks(dataset, n_icvs, samples_per_icv, rng):
    order = rng.permutation(dataset.n_samples)
    return [np.sort(order[i * samples_per_icv:(i + 1) * samples_per_icv])
            for i in range(n_icvs)]


def _noniid_chunks(dataset, n_icvs, samples_per_icv, class_budget, rng):
    classes = np.unique(dataset.labels)
    if class_budget < 1 or class_budget > len(classes):
        raise InvalidParameterError(
            name='class_budget', value=class_budget,
            reason='must be in [1, %s]' % len(classes))
    available = np.ones(dataset.n_samples, dtype=bool)
    chunks = []
    for owner in range(n_icvs):
        left = np.array([np.count_nonzero(available & (dataset.labels == c))
                         for c in classes])
        chosen = _pick_classes(classes, left, class_budget, samples_per_icv,
                               rng)
        if chosen is None:
            raise PartitionError(
                n_icvs=n_icvs, samples_per_icv=samples_per_icv,
                reason='no %s classes have %s samples left for partition '
                       '%s' % (class_budget, samples_per_icv, owner))
        candidates = np.flatnonzero(
            available & np.isin(dataset.labels, chosen))
        picked = np.sort(rng.choice(candidates, size=samples_per_icv,
                                    replace=False))
        available[picked] = False
        chunks.append(picked)
    return chunks


def _pick_classes(classes, left, class_budget, samples_per_icv, rng):
    """Random classes with samples left, or the fullest ones if those
    random classes cannot fill a partition.  None when nothing can."""
    eligible = np.flatnonzero(left > 0)
    if eligible.shape[0] > class_budget:
        chosen = rng.choice(eligible, size=class_budget, replace=False)
    else:
        chosen = eligible
    if left[chosen].sum() >= samples_per_icv:
        return classes[chosen]
    # Stable sort keeps ties in class order.
    fullest = np.argsort(-left, kind='stable')[:class_budget]
    if left[fullest].sum() >= samples_per_icv:
        logger.debug("Random classes too thin, using fullest classes %s",
                     classes[fullest].tolist())
        return classes[fullest]
    return None
