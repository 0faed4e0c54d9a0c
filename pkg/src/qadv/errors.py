"""Exception types raised across the toolkit.

Every error that a pipeline stage can raise deliberately derives from
QadvError so the CLI can map failure classes onto stable exit codes:
config problems exit 2, data problems exit 3, numeric blow-ups exit 4
and checkpoint version mismatches exit 5.
"""


class QadvError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(QadvError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class DataError(QadvError):
    """Problems with catalog files or derived datasets (CLI exit code 3)."""


class MissingColumn(DataError):
    """Catalog header lacks at least one required column."""


class MalformedRow(DataError):
    """Catalog row with the wrong field count or an invalid morphology."""

    def __init__(self, line_number: int, message: str):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class EmptyFile(DataError):
    """Catalog file has no header row."""


class AllRowsDropped(DataError):
    """Preprocessing removed every row."""


class BinTooSmall(DataError):
    """A stratification bin has fewer than two samples."""


class TooFewSamples(DataError):
    """Not enough rows for the requested number of folds."""


class TooFewCalibration(DataError):
    """Conformal calibration requires at least 10 residuals."""


class SingleCluster(DataError):
    """Cluster validity indices need at least two distinct labels."""


class ZeroVariance(DataError):
    """Target variance is zero, R-squared is undefined."""


class RowOutOfRange(DataError):
    """An explanation row index does not exist in the dataset."""


class EmptyTraining(DataError):
    """Training was asked to run on zero rows."""


class DimensionMismatch(QadvError):
    """Array shape does not match the consumer's expectation."""


# Alias kept so call sites can use whichever name reads better.
ShapeMismatch = DimensionMismatch


class TraceMismatch(QadvError):
    """Forward trace does not correspond to the network it is replayed on."""


class QubitOutOfRange(QadvError):
    """Qubit index outside [0, n_qubits)."""


class ParamCountMismatch(QadvError):
    """Angle vector length does not equal 2 * n_qubits."""


class NonFiniteLoss(QadvError):
    """A training loss became NaN or infinite (CLI exit code 4)."""

    def __init__(self, loss_name: str, epoch: int, batch: int):
        super().__init__(
            f"{loss_name} became non-finite at epoch {epoch}, batch {batch}"
        )
        self.loss_name = loss_name
        self.epoch = epoch
        self.batch = batch


class SingularFit(QadvError):
    """Local surrogate fit failed despite ridge damping (NaN inputs)."""


class CheckpointVersionError(QadvError):
    """Checkpoint written by an incompatible format version (exit code 5)."""
