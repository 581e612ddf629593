"""Exception types shared across the toolchain."""


class IcaError(Exception):
    """Base class for all domain errors raised by this package."""


class TreeStructureError(IcaError):
    """A decision tree violates its structural invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class ActionNotFoundError(IcaError):
    """An (workflow_id, action_id) pair does not resolve in the action map."""

    def __init__(self, workflow_id, action_id):
        self.workflow_id = workflow_id
        self.action_id = action_id
        super().__init__(f"no action {action_id} in workflow {workflow_id!r}")


class IcaParseError(IcaError):
    """Pseudocode text could not be parsed; carries all error diagnostics."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        lines = "; ".join(f"{d.line}:{d.column} {d.message}" for d in self.diagnostics)
        super().__init__(lines or "parse failed")


class IcaPrintError(IcaError):
    """A tree cannot be rendered as pseudocode (e.g. unresolvable action)."""


class IngestError(IcaError):
    """A rich-text document could not be converted."""


class GenerationError(IcaError):
    """Synthetic data generation could not satisfy its constraints."""


class PromptBudgetError(IcaError):
    """A prompt exceeds the configured token budget."""

    def __init__(self, estimated, budget, candidate_sizes):
        self.estimated = estimated
        self.budget = budget
        self.candidate_sizes = dict(candidate_sizes)
        sizes = ", ".join(f"{wf}={n}" for wf, n in self.candidate_sizes.items())
        super().__init__(
            f"prompt estimated at {estimated} tokens exceeds budget {budget}"
            f" (candidates: {sizes})"
        )


class TransportError(IcaError):
    """A remote call (LLM client or context provider) failed."""

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


class DatasetError(IcaError):
    """An evaluation dataset is inconsistent with the knowledge base."""


class ConfigError(IcaError):
    """Bad configuration file, key, or value."""
