"""Parametric prompt rendering and the frozen text-encoder interface.

Text conditioning is a training-only signal: the gate returns an active
provider for the train phase and nothing for inference, where the denoiser
falls back to its registered null embedding.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
import torch


@dataclass(frozen=True)
class PromptTemplate:
    id: int
    pattern: str


DEFAULT_TEMPLATE_PATTERNS = (
    "a photo of the {category} ship {name}",
    "a high resolution photograph of {name}, a {category} vessel",
    "an image of the ship {name} of class {category}",
    "{name}, a {category} ship at sea",
    "a detailed photo of the {category} vessel named {name}",
)


def make_templates(patterns=DEFAULT_TEMPLATE_PATTERNS) -> list[PromptTemplate]:
    patterns = list(patterns)
    if len(patterns) != 5:
        raise ValueError(f"exactly five templates required, got {len(patterns)}")
    for p in patterns:
        if "{name}" not in p or "{category}" not in p:
            raise ValueError(f"template missing a slot: {p!r}")
    return [PromptTemplate(i, p) for i, p in enumerate(patterns)]


DEFAULT_TEMPLATES = make_templates()


def render_prompt(template_id: int, name: str, category: str,
                  templates: list[PromptTemplate] | None = None) -> str:
    templates = templates if templates is not None else DEFAULT_TEMPLATES
    if not 0 <= template_id < len(templates):
        raise ValueError(f"unknown template id {template_id}")
    if not name or not name.strip():
        raise ValueError("ship name must be non-empty")
    if not category or not category.strip():
        raise ValueError("category must be non-empty")
    return templates[template_id].pattern.format(name=name, category=category)


def pick_prompt(rng: np.random.Generator, n_templates: int = 5) -> int:
    """Uniform template id; reproducible given a seeded generator."""
    return int(rng.integers(n_templates))


class HashTextEncoder:
    """Deterministic frozen text embedder: each token maps to a fixed
    pseudo-random vector derived from its hash. No trainable state."""

    def __init__(self, length: int = 16, dim: int = 64, seed: int = 0):
        self.length = length
        self.dim = dim
        self.seed = seed
        self.call_count = 0

    def _token_vector(self, token: str) -> np.ndarray:
        digest = hashlib.blake2b(f"{self.seed}:{token}".encode("utf-8"), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(digest, "big"))
        return rng.standard_normal(self.dim).astype(np.float32)

    def encode(self, prompt: str) -> torch.Tensor:
        """Prompt -> (length, dim) embedding; rows past the tokens are zero."""
        if not prompt or not prompt.strip():
            raise ValueError("prompt must be non-empty")
        self.call_count += 1
        tokens = prompt.lower().split()[: self.length]
        out = np.zeros((self.length, self.dim), dtype=np.float32)
        for i, token in enumerate(tokens):
            out[i] = self._token_vector(token)
        return torch.from_numpy(out)

    def null_embedding(self) -> torch.Tensor:
        """Registered constant used when text conditioning is absent."""
        return torch.zeros(self.length, self.dim)


def encode_text(prompt: str, enc: HashTextEncoder) -> torch.Tensor:
    return enc.encode(prompt)


@dataclass
class TextProvider:
    """Active training-phase provider: picks a template per sample, renders
    it, and counts renders (inference must never touch it)."""

    encoder: HashTextEncoder
    rng: np.random.Generator
    templates: list[PromptTemplate] = field(default_factory=lambda: list(DEFAULT_TEMPLATES))
    render_count: int = 0
    last_prompts: list[str] = field(default_factory=list)

    def embed_record(self, name: str, category: str) -> torch.Tensor:
        template_id = pick_prompt(self.rng, len(self.templates))
        prompt = render_prompt(template_id, name, category, self.templates)
        self.render_count += 1
        self.last_prompts.append(prompt)
        return self.encoder.encode(prompt)

    def take_prompt_log(self) -> list[str]:
        out, self.last_prompts = self.last_prompts, []
        return out


def text_gate(phase: str, encoder: HashTextEncoder, rng: np.random.Generator | None = None,
              templates: list[PromptTemplate] | None = None) -> TextProvider | None:
    """train -> active provider; infer -> None (denoiser uses its null
    embedding and no prompt is ever rendered)."""
    if phase == "train":
        if rng is None:
            raise ValueError("training-phase text gate needs a seeded rng")
        return TextProvider(encoder=encoder, rng=rng,
                            templates=list(templates) if templates is not None else list(DEFAULT_TEMPLATES))
    if phase == "infer":
        return None
    raise ValueError(f"unknown phase {phase!r}")
