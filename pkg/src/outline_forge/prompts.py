"""Text prompt construction from object class and instance count."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import EmptyClassName

# Verbatim negative prompt; kept byte-exact and covered by a golden test.
DEFAULT_NEGATIVE_PROMPT = (
    "disfigured, kitsch, ugly, oversaturated, grain, low-res, Deformed, blurry, "
    "bad anatomy, disfigured, poorly drawn face, mutation, mutated, extra limb, "
    "ugly, poorly drawn hands, missing limb, blurry, floating limbs, disconnected "
    "limbs, malformed hands, long neck, long body, ugly, disgusting, poorly "
    "drawn, childish, mutilated, mangled, surreal"
)


@dataclass(frozen=True)
class PromptTemplate:
    """Positive-prompt patterns; `several` fires for multi-instance jobs."""

    name: str
    single: str
    several: str


# "photo" is the primary template; "image_of" and "bare" are the variants
# that also worked in practice.
TEMPLATES = {
    "photo": PromptTemplate("photo", "Photo of a {}", "Photo of several {}"),
    "image_of": PromptTemplate("image_of", "Image of {}", "Image of {}"),
    "bare": PromptTemplate("bare", "{}", "{}"),
}
DEFAULT_TEMPLATE = TEMPLATES["photo"]


@dataclass(frozen=True)
class PromptSpec:
    positive: str
    negative: str = ""

    def __post_init__(self):
        for text in (self.positive, self.negative):
            if any(ord(ch) < 32 or ord(ch) == 127 for ch in text):
                raise ValueError("prompt contains control characters")


def resolve_template(spec: str | PromptTemplate) -> PromptTemplate:
    """Accept a known template name or a raw pattern containing '{}'."""
    if isinstance(spec, PromptTemplate):
        return spec
    if spec in TEMPLATES:
        return TEMPLATES[spec]
    if "{}" in spec:
        return PromptTemplate("custom", spec, spec)
    raise ValueError(f"unknown prompt template {spec!r}")


def build_prompt(
    class_name: str,
    instance_count: int = 1,
    template: PromptTemplate = DEFAULT_TEMPLATE,
    use_negative: bool = False,
    negative_text: str = DEFAULT_NEGATIVE_PROMPT,
) -> PromptSpec:
    """Build the positive/negative prompt pair for one inpaint job.

    The class name is inserted verbatim: no pluralization and no article
    fixes, the templates are applied exactly as written.
    """
    if not class_name or not class_name.strip():
        raise EmptyClassName("class name must be non-empty")
    if instance_count < 1:
        raise ValueError(f"instance_count must be >= 1, got {instance_count}")
    pattern = template.single if instance_count == 1 else template.several
    positive = pattern.format(class_name)
    negative = negative_text if use_negative else ""
    return PromptSpec(positive=positive, negative=negative)
