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
"""Abstractions describing the shape of a dense model."""
from collections import namedtuple

from dlorasim.exceptions import InvalidParameterError
from dlorasim.utils import CachedProperty


#: The parameter accounting that delay and bit models need.  A
#: ``ModelSpec`` exposes the same two attributes, so either can be passed
#: wherever a "model" is only used for counting.
PayloadModel = namedtuple('PayloadModel', ['n_params', 'n_lora_per_rank'])


class ModelSpec(object):
    """Layer layout of a bias-free dense model.

    :ivar layer_dims: Tuple of ``(h, w)`` pairs, one per weight matrix.
        Layer ``l`` maps a ``w``-vector to an ``h``-vector.
    :ivar name: Optional preset name.
    """

    def __init__(self, layer_dims, name=None):
        dims = []
        for index, pair in enumerate(layer_dims):
            h, w = int(pair[0]), int(pair[1])
            if h < 1 or w < 1:
                raise InvalidParameterError(
                    name='layer_dims[%s]' % index, value=(h, w),
                    reason='dimensions must be positive')
            dims.append((h, w))
        if not dims:
            raise InvalidParameterError(
                name='layer_dims', value=[],
                reason='a model needs at least one layer')
        self.layer_dims = tuple(dims)
        self.name = name

    @classmethod
    def from_preset(cls, name, loader):
        """Build a spec from a ``models.yaml`` entry."""
        preset = loader.load_preset('models', name)
        return cls(preset['layers'], name=name)

    @property
    def n_layers(self):
        return len(self.layer_dims)

    @CachedProperty
    def n_params(self):
        """Full-rank parameter count, bias terms excluded."""
        return sum(h * w for h, w in self.layer_dims)

    @CachedProperty
    def n_lora_per_rank(self):
        """LoRA parameters contributed by one unit of rank."""
        return sum(h + w for h, w in self.layer_dims)

    @CachedProperty
    def n_singular_values(self):
        return sum(min(h, w) for h, w in self.layer_dims)

    @CachedProperty
    def max_layer_rank(self):
        return min(min(h, w) for h, w in self.layer_dims)

    @property
    def is_chain(self):
        """True when each layer consumes the previous layer's output."""
        return all(self.layer_dims[i][0] == self.layer_dims[i + 1][1]
                   for i in range(self.n_layers - 1))

    @property
    def input_dim(self):
        return self.layer_dims[0][1]

    @property
    def output_dim(self):
        return self.layer_dims[-1][0]

    def payload(self, scale=1):
        """Parameter accounting multiplied by ``scale``."""
        return PayloadModel(n_params=self.n_params * scale,
                            n_lora_per_rank=self.n_lora_per_rank * scale)

    def __eq__(self, other):
        return (isinstance(other, ModelSpec) and
                self.layer_dims == other.layer_dims)

    def __ne__(self, other):
        return not self == other

    def __hash__(self):
        return hash(self.layer_dims)

    def __repr__(self):
        return '%s(%r)' % (self.__class__.__name__, list(self.layer_dims))


def payload_bits(model, rank, bit_width):
    """Bits one client uploads per round.

    ``rank=None`` means a full-rank upload (``d * N``); otherwise the
    upload is the LoRA factors, ``d * r * n_lora_per_rank``.

    """
    if rank is None:
        return bit_width * model.n_params
    return bit_width * rank * model.n_lora_per_rank
