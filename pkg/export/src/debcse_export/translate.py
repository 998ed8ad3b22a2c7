"""Round-trip translators and the pre-translation noising step.

Candidates are produced as source -> pivot -> source round trips; each
attempt noises the anchor first (inject one or two high-frequency words, or
mask one or two random words) so repeated round trips of one sentence still
diversify. The identity translator is the offline test double: its
candidates are exactly the noised anchors.
"""

from __future__ import annotations

import random
from collections import Counter

from .debc import ExportError
from .encoders import simple_tokens

MASK_TOKEN = "[MASK]"


def high_frequency_words(lines, k: int = 100) -> list[str]:
    counts: Counter[str] = Counter()
    for line in lines:
        counts.update(simple_tokens(line))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [tok for tok, _ in ranked[:k]]


def noise_variant(tokens, rng: random.Random, highfreq,
                  mask_token: str = MASK_TOKEN) -> list[str]:
    """One seeded noising pass over a token list.

    Either injects 1-2 words drawn from the high-frequency vocabulary at
    random positions, or replaces 1-2 random tokens with the mask token.
    """
    tokens = list(tokens)
    if rng.random() < 0.5 and highfreq:
        for _ in range(rng.randint(1, 2)):
            word = highfreq[rng.randrange(len(highfreq))]
            tokens.insert(rng.randint(0, len(tokens)), word)
    else:
        count = min(rng.randint(1, 2), len(tokens))
        for pos in rng.sample(range(len(tokens)), count):
            tokens[pos] = mask_token
    return tokens


class IdentityTranslator:
    """Test double: the round trip returns its input unchanged."""

    name = "identity"

    def round_trip(self, text: str) -> str:
        return text


class OpusMtTranslator:
    """Round trip through a pivot language with opus-mt checkpoint pairs."""

    def __init__(self, pivot: str = "zh", source: str = "en", device: str = "cpu"):
        try:
            from transformers import MarianMTModel, MarianTokenizer
        except ImportError as exc:
            raise ExportError(
                "transformers is not installed; install the 'models' extra or "
                "use the identity translator") from exc
        self.name = f"opus-mt:{source}<->{pivot}"
        try:
            fwd = f"Helsinki-NLP/opus-mt-{source}-{pivot}"
            back = f"Helsinki-NLP/opus-mt-{pivot}-{source}"
            self._fwd_tok = MarianTokenizer.from_pretrained(fwd)
            self._fwd = MarianMTModel.from_pretrained(fwd).to(device)
            self._back_tok = MarianTokenizer.from_pretrained(back)
            self._back = MarianMTModel.from_pretrained(back).to(device)
        except Exception as exc:
            raise ExportError(f"cannot load translation models: {exc}") from exc
        self._device = device

    def _step(self, model, tokenizer, text: str) -> str:
        batch = tokenizer([text], return_tensors="pt", truncation=True).to(self._device)
        generated = model.generate(**batch, max_new_tokens=128)
        return tokenizer.decode(generated[0], skip_special_tokens=True)

    def round_trip(self, text: str) -> str:
        pivot = self._step(self._fwd, self._fwd_tok, text)
        return self._step(self._back, self._back_tok, pivot)


def make_translator(name: str, pivot: str = "zh", device: str = "cpu"):
    if name == "identity":
        return IdentityTranslator()
    if name == "opus":
        return OpusMtTranslator(pivot=pivot, device=device)
    raise ExportError(f"unknown translator {name!r} (choose 'identity' or 'opus')")
