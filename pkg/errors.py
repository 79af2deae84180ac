class PipelineError(Exception):
    """Base for every error the pipeline raises on purpose.

    ``code`` is stable and machine readable; the CLI prints it on stderr.
    """

    code = "pipeline_error"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class ConfigurationError(PipelineError, ValueError):
    code = "configuration_error"


class RowError(PipelineError, ValueError):
    code = "row_error"

    def __init__(self, message: str, row: int):
        super().__init__(f"row {row}: {message}")
        self.row = row


class CorpusFormatError(PipelineError, ValueError):
    code = "corpus_format_error"

    def __init__(self, message: str, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyCorpusError(PipelineError):
    code = "empty_corpus"


class InfeasibleStratificationError(PipelineError):
    code = "infeasible_stratification"


class EmbeddingFormatError(PipelineError, ValueError):
    code = "embedding_format_error"

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ShapeError(PipelineError, ValueError):
    code = "shape_error"

    def __init__(self, op: str, *shapes):
        rendered = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {rendered}")
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)


class NumericFaultError(PipelineError, ArithmeticError):
    code = "numeric_fault"

    def __init__(self, message: str, epoch=None, batch=None):
        if epoch is not None:
            message = f"epoch {epoch}, batch {batch}: {message}"
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch


class DegenerateInputError(PipelineError, ValueError):
    code = "degenerate_input"


class UndefinedMetricError(PipelineError):
    code = "undefined_metric"


class FrozenEmbeddingError(PipelineError):
    code = "frozen_embedding_violated"


class CheckpointFormatError(PipelineError):
    code = "checkpoint_format_error"

    def __init__(self, message: str, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CheckpointVersionError(PipelineError):
    code = "checkpoint_version_error"
