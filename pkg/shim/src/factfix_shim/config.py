from dataclasses import dataclass
from typing import Optional


@dataclass(frozen=True)
class ShimConfig:
    """Which checkpoints to serve and how.

    Model ids may be hub ids or local directories; an unset id leaves that
    endpoint disabled (503 with a reason). Generation is proxied, never
    hosted: ``generation_upstream_url`` points at a completion server,
    either the native {prompt,...} -> {text} contract or an
    OpenAI-completions-compatible one (``generation_upstream_kind``).
    """

    embed_model_id: Optional[str] = None
    nli_model_id: Optional[str] = None
    rerank_model_id: Optional[str] = None
    spans_model_id: Optional[str] = None
    generation_upstream_url: Optional[str] = None
    generation_upstream_kind: str = "native"  # or "openai"
    device: str = "cpu"
    max_batch: int = 16
    generation_timeout_s: float = 120.0

    def __post_init__(self):
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
        if self.device not in ("cpu", "gpu", "cuda"):
            raise ValueError("device must be cpu or gpu")
        if self.generation_upstream_kind not in ("native", "openai"):
            raise ValueError("generation_upstream_kind must be native or openai")

    @property
    def torch_device(self) -> str:
        return "cuda" if self.device in ("gpu", "cuda") else "cpu"
