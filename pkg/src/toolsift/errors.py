#!/usr/bin/env python3
"""
toolsift Errors - Exception hierarchy shared by every module

Each exception carries the process exit code the CLI should use when it
escapes a command: 2 for bad input, 3 for numerical failures and 4 for
failures of an external service.
"""
from typing import Any, Optional


class ToolsiftError(Exception):
    """Base class for all toolsift errors."""
    exit_code: int = 2


# -------------------------------
# Input / validation errors (exit 2)
# -------------------------------
class CorpusError(ToolsiftError):
    """The tool or query files violate the corpus contract."""


class MalformedLine(CorpusError):
    def __init__(self, line_no: int, path: str = "", reason: str = ""):
        self.line_no = line_no
        self.path = path
        self.reason = reason
        where = f"{path}:{line_no}" if path else f"line {line_no}"
        super().__init__(f"Malformed line at {where}: {reason}".rstrip(": "))


class UnknownToolRef(CorpusError):
    def __init__(self, query_id: str, tool_id: str):
        self.query_id = query_id
        self.tool_id = tool_id
        super().__init__(f"Query {query_id!r} references unknown tool {tool_id!r}")


class DuplicateId(CorpusError):
    def __init__(self, id: str):
        self.id = id
        super().__init__(f"Duplicate id {id!r}")


class EmptyTrainSet(ToolsiftError):
    def __init__(self, message: str = "No queries tagged 'train'"):
        super().__init__(message)


class DimensionMismatch(ToolsiftError):
    def __init__(self, expected: Any, got: Any, what: str = "vector"):
        self.expected = expected
        self.got = got
        super().__init__(f"Dimension mismatch for {what}: expected {expected}, got {got}")


class MissingPrecomputedVector(ToolsiftError):
    def __init__(self, id: str):
        self.id = id
        super().__init__(f"No precomputed vector for {id!r}")


class EmptyToolMatrix(ToolsiftError):
    def __init__(self):
        super().__init__("Tool embedding matrix has no rows")


class UnknownTool(ToolsiftError):
    def __init__(self, tool_id: str):
        self.tool_id = tool_id
        super().__init__(f"Tool {tool_id!r} has no Tool2Vec row")


class EmptyRelevantSet(ToolsiftError):
    def __init__(self):
        super().__init__("Relevant tool set is empty")


class MissingGroundTruth(ToolsiftError):
    def __init__(self, query_id: str):
        self.query_id = query_id
        super().__init__(f"No ground truth for query {query_id!r}")


class NoNegativeAvailable(ToolsiftError):
    def __init__(self, query_id: str):
        self.query_id = query_id
        super().__init__(f"Query {query_id!r} is labeled with every tool; no negative to sample")


class PoolLargerThanCorpus(ToolsiftError):
    def __init__(self, pool: int, n_tools: int):
        super().__init__(f"Cannot sample a pool of {pool} tools from {n_tools} tools")


class ArtifactFormatError(ToolsiftError):
    """A saved matrix or model file does not follow the header+rows format."""


# -------------------------------
# Numerical errors (exit 3)
# -------------------------------
class NumericalError(ToolsiftError):
    exit_code = 3


class NonFiniteLoss(NumericalError):
    def __init__(self, step: int, loss: float, grad_norm: Optional[float] = None):
        self.step = step
        self.loss = loss
        self.grad_norm = grad_norm
        super().__init__(
            f"Non-finite loss or gradient at step {step} (loss={loss}, grad_norm={grad_norm})"
        )


# -------------------------------
# External service errors (exit 4)
# -------------------------------
class LlmTransportError(ToolsiftError):
    exit_code = 4


# -------------------------------
# Dataset generation rejections (never fatal)
# -------------------------------
class GenerationRejected(ToolsiftError):
    reason: str = "rejected"


class UnparseableResponse(GenerationRejected):
    reason = "unparseable"

    def __init__(self, raw: str, detail: str = ""):
        self.raw = raw
        self.detail = detail
        super().__init__(f"Unparseable LLM response ({detail}): {raw[:200]!r}")


class ConstraintViolation(GenerationRejected):
    reason = "constraint"

    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(f"Generated record violates constraints: {detail}")
