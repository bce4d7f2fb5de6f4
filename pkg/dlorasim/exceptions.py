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


class DLoRAError(Exception):
    """
    The base exception class for dlorasim exceptions.

    :ivar msg: The descriptive message associated with the error.
    """
    fmt = 'An unspecified error occurred'

    def __init__(self, **kwargs):
        msg = self.fmt.format(**kwargs)
        Exception.__init__(self, msg)
        self.kwargs = kwargs


class ValidationError(DLoRAError):
    """Base error for bad input: configs, ranks, shapes, files.

    Should never be raised directly.  The CLI maps every subclass
    to exit code 1.
    """


class SimulationError(DLoRAError):
    """Base error for failures while a simulation is running.

    Should never be raised directly.  The CLI maps every subclass
    to exit code 2.
    """


class InvalidRankError(ValidationError):
    """
    A LoRA rank is outside the admissible range of a layer.

    :ivar rank: The requested rank.
    :ivar layer: Index of the first layer that cannot hold the rank.
    :ivar max_rank: The largest rank that layer admits.
    """
    fmt = ('Invalid rank {rank} for layer {layer}: rank must be in '
           '[1, {max_rank}]')


class ShapeMismatchError(ValidationError):
    fmt = 'Shape mismatch in {operation}: expected {expected}, got {actual}'


class DegenerateSpecError(ValidationError):
    """
    The model spec admits no LoRA rank at all.

    :ivar reason: Which limit collapsed the rank range.
    """
    fmt = 'Model spec admits no rank >= 1: {reason}'


class InvalidParameterError(ValidationError):
    fmt = 'Invalid value for {name}: {value} ({reason})'


class TooManyVehiclesError(ValidationError):
    """
    The exhaustive scheduler refuses instances it cannot enumerate.

    :ivar count: Number of offered vehicles.
    :ivar limit: Largest supported instance.
    """
    fmt = ('Exhaustive scheduling supports at most {limit} vehicles, '
           'got {count}')


class ScheduleValidationError(ValidationError):
    """
    A schedule decision violates one of the C1-C5 constraints.

    :ivar report: A generated report of every violation found.
    """
    fmt = 'Invalid schedule decision:\n{report}'


class ConfigNotFound(ValidationError):
    """
    The specified configuration file could not be found.
    """
    fmt = 'The specified config file ({path}) could not be found.'


class ConfigParseError(ValidationError):
    """
    The configuration file could not be parsed.
    """
    fmt = 'Unable to parse config file: {path}'


class ProfileNotFound(ValidationError):
    """
    The specified configuration profile was not found in the
    configuration file.

    :ivar profile: The name of the profile the user attempted to load.
    """
    fmt = 'The config profile ({profile}) could not be found'


class InvalidConfigError(ValidationError):
    fmt = 'Invalid experiment config option {option}: {error_msg}'


class DataNotFoundError(ValidationError):
    """
    The data associated with a particular path could not be loaded.

    :ivar data_path: The data path that the user attempted to load.
    """
    fmt = 'Unable to load data for: {data_path}'


class UnknownPresetError(DataNotFoundError):
    """Raised when a named model or experiment preset does not exist.

    :ivar name: The name of the unknown preset.
    """
    fmt = (
        "Unknown {kind} preset: '{name}'. Valid names are: "
        "{known_names}")


class PartitionError(SimulationError):
    fmt = ('Cannot build {n_icvs} partitions of {samples_per_icv} samples: '
           '{reason}')


class DivergenceError(SimulationError):
    """
    Local training produced a non-finite loss.

    :ivar vehicle_id: The client whose training diverged.
    :ivar round: Global round the client was training from.
    :ivar epoch: Epoch index at which the loss became non-finite.
    :ivar batch: Batch index inside that epoch.
    """
    fmt = ('Local training diverged for vehicle {vehicle_id} in round '
           '{round}, epoch {epoch}, batch {batch}: loss={loss}')


class AggregationError(SimulationError):
    fmt = 'Cannot aggregate client updates: {reason}'


class EvaluationError(SimulationError):
    fmt = 'Cannot evaluate model: {reason}'


class NumericalError(SimulationError):
    fmt = 'Numerical failure in {operation}: {error_msg}'


class OutputWriteError(SimulationError):
    """
    An output file could not be written.

    :ivar path: The file the writer was producing.
    """
    fmt = 'Unable to write {path}: {error_msg}'


class SnapshotError(ValidationError):
    """
    A scenario snapshot file is missing or malformed.

    :ivar path: The snapshot file.
    """
    fmt = 'Invalid scenario snapshot {path}: {error_msg}'
