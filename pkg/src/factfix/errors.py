"""Exception hierarchy for the fact-correction engine.

Every error the pipeline can surface derives from :class:`FactfixError`,
so callers can catch the whole family or individual conditions. Service
errors carry the endpoint name so per-retriever failures can be logged
and skipped without killing a run.
"""


class FactfixError(Exception):
    """Base class for all engine errors."""


# --- input validation ---------------------------------------------------

class EmptyClaim(FactfixError):
    pass


class NoCandidates(FactfixError):
    pass


class MissingEvidence(FactfixError):
    pass


class MissingMask(FactfixError):
    pass


class NothingToMask(FactfixError):
    """Masking produced no maskable positions; caller falls back to the
    unmasked claim."""


class EmptyReferenceSet(FactfixError):
    pass


# --- corpus / index -----------------------------------------------------

class EmptyCorpus(FactfixError):
    pass


class DuplicateDocId(FactfixError):
    pass


class CorpusNotFound(FactfixError):
    pass


class IndexNotLoaded(FactfixError):
    pass


class IoFailure(FactfixError):
    pass


class DimensionMismatch(FactfixError):
    pass


# --- backend services ---------------------------------------------------

class ServiceUnavailable(FactfixError):
    """Transport-level failure after retries are exhausted."""

    def __init__(self, endpoint: str, detail: str = ""):
        self.endpoint = endpoint
        super().__init__(f"{endpoint} unavailable" + (f": {detail}" if detail else ""))


class MalformedResponse(FactfixError):
    """The service answered but violated the response schema. Never retried."""

    def __init__(self, endpoint: str, detail: str = ""):
        self.endpoint = endpoint
        super().__init__(f"{endpoint} malformed response" + (f": {detail}" if detail else ""))


class EmbeddingServiceUnavailable(ServiceUnavailable):
    def __init__(self, detail: str = ""):
        super().__init__("embed", detail)


class EntailmentServiceUnavailable(ServiceUnavailable):
    def __init__(self, detail: str = ""):
        super().__init__("entail", detail)


class GenerationServiceUnavailable(ServiceUnavailable):
    def __init__(self, detail: str = ""):
        super().__init__("generate", detail)


class RerankServiceUnavailable(ServiceUnavailable):
    def __init__(self, detail: str = ""):
        super().__init__("rerank", detail)


class SpanProviderUnavailable(ServiceUnavailable):
    def __init__(self, detail: str = ""):
        super().__init__("spans", detail)


class MalformedScores(MalformedResponse):
    def __init__(self, detail: str = ""):
        super().__init__("rerank", detail)


# --- ensemble -----------------------------------------------------------

class NoWinners(FactfixError):
    pass


class AllBackendsFailed(FactfixError):
    pass
