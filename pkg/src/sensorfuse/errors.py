"""Exception types shared across the package."""


class SensorFuseError(Exception):
    """Base class for every error raised by this library."""


# dataset
class ModalityMismatch(SensorFuseError):
    """A channel name is shared between schemas but carries different modality tags."""


class EmptyBlock(SensorFuseError):
    """A block has zero timesteps."""


class UnknownChannel(SensorFuseError):
    """A named channel does not exist in the schema."""


class UnknownLabel(SensorFuseError):
    """A label value is outside the dataset's declared label set."""


class SchemaMismatch(SensorFuseError):
    """Two datasets that must share a schema do not."""


# preprocess
class LengthMismatch(SensorFuseError):
    """Paired sequences differ in length."""


class DegenerateInput(SensorFuseError):
    """Input is too short for the configured filter order."""


class TooShort(SensorFuseError):
    """Sequence shorter than the operation's minimum length."""


class WindowTooLarge(SensorFuseError):
    """Window length exceeds a block length."""


# nn
class ShapeMismatch(SensorFuseError):
    """Array shapes do not compose."""


class NonFiniteInput(SensorFuseError):
    """Input contains NaN or infinity."""


class BatchTooSmall(SensorFuseError):
    """Train-mode batch normalization needs at least two rows."""


class NonFiniteLoss(SensorFuseError):
    """Training loss became NaN or infinite."""


# imputer
class NoSharedChannels(SensorFuseError):
    """Source and target schemas share no channel."""


class NoExtraChannels(SensorFuseError):
    """Source offers no channel beyond the target's."""


class MissingTruthChannels(SensorFuseError):
    """Holdout dataset lacks the channels the imputer generates."""


# theory
class TooFewSamples(SensorFuseError):
    """Not enough samples for a reliable estimate."""


class WidthMismatch(SensorFuseError):
    """Sample matrices differ in column count."""


# synth
class InvalidLayout(SensorFuseError):
    """A domain layout shares no channel with the target."""


class UnsupportedResponse(SensorFuseError):
    """Closed-form oracle requires affine-in-label responses."""
