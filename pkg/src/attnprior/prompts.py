"""Prompt tokenization and object-group extraction.

A small rule-based grammar replaces a full dependency parser: benchmark
prompts are sequences of noun phrases ``[det]? modifier* noun+`` joined
by conjunctions ("a frog and a purple crown"). A word lexicon classifies
tokens as determiner / conjunction / modifier / noun; unknown words
default to noun in phrase-final position and to modifier elsewhere.
Anything outside that grammar raises :class:`GrammarError` rather than
guessing, because a silent misparse corrupts every downstream loss.
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, field

from .errors import EmptyPrompt, GrammarError

ROLE_NOUN = "noun"
ROLE_MODIFIER = "modifier"
ROLE_OUTSIDE = "outside"

# Lexicon word classes.
DET = "det"
CONJ = "conj"
MOD = "mod"
NOUN = "noun"

_WORD_CLASSES = (DET, CONJ, MOD, NOUN)


@dataclass(frozen=True)
class Token:
    """One prompt word with its 0-based position and assigned role."""

    index: int
    text: str
    role: str | None = None


@dataclass(frozen=True)
class ObjectGroup:
    """A noun phrase: noun indices, modifier indices, and their pairs.

    ``pairs`` is always the full Cartesian product modifiers x nouns, so
    multi-word attributes ("wooden curved") each pair with every noun in
    the group.
    """

    noun_indices: frozenset[int]
    modifier_indices: frozenset[int]
    pairs: frozenset[tuple[int, int]]

    @staticmethod
    def build(nouns: set[int], modifiers: set[int]) -> "ObjectGroup":
        return ObjectGroup(
            noun_indices=frozenset(nouns),
            modifier_indices=frozenset(modifiers),
            pairs=frozenset((m, n) for m in modifiers for n in nouns),
        )

    @property
    def member_indices(self) -> frozenset[int]:
        return self.noun_indices | self.modifier_indices


@dataclass(frozen=True)
class ParsedPrompt:
    """Tokens with roles, object groups, and the outside-token set.

    ``excluded`` holds special tokens (BOS/EOS of imported bundles) that
    belong to no set; the built-in tokenizer never produces any.
    """

    tokens: tuple[Token, ...]
    groups: tuple[ObjectGroup, ...]
    outside: frozenset[int]
    excluded: frozenset[int] = field(default_factory=frozenset)

    @property
    def object_token_set(self) -> frozenset[int]:
        """Union of all group members (the set of object-token indices)."""
        members: set[int] = set()
        for g in self.groups:
            members |= g.member_indices
        return frozenset(members)

    def to_json_dict(self) -> dict:
        return {
            "tokens": [
                {"index": t.index, "text": t.text, "role": t.role}
                for t in self.tokens
            ],
            "groups": [
                {
                    "nouns": sorted(g.noun_indices),
                    "modifiers": sorted(g.modifier_indices),
                    "pairs": sorted([list(p) for p in g.pairs]),
                }
                for g in self.groups
            ],
            "outside": sorted(self.outside),
            "excluded": sorted(self.excluded),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)

    @staticmethod
    def from_json_dict(data: dict) -> "ParsedPrompt":
        tokens = tuple(
            Token(index=t["index"], text=t["text"], role=t.get("role"))
            for t in data["tokens"]
        )
        groups = tuple(
            ObjectGroup(
                noun_indices=frozenset(g["nouns"]),
                modifier_indices=frozenset(g["modifiers"]),
                pairs=frozenset(tuple(p) for p in g["pairs"]),
            )
            for g in data["groups"]
        )
        return ParsedPrompt(
            tokens=tokens,
            groups=groups,
            outside=frozenset(data["outside"]),
            excluded=frozenset(data.get("excluded", [])),
        )

    @staticmethod
    def from_json(text: str) -> "ParsedPrompt":
        return ParsedPrompt.from_json_dict(json.loads(text))


class WordLexicon:
    """Word -> class mapping driving the rule-based grammar.

    Classes: ``det``, ``conj``, ``mod``, ``noun``. Unknown words are
    handled positionally by the parser.
    """

    def __init__(self, classes: dict[str, str]):
        for word, cls in classes.items():
            if cls not in _WORD_CLASSES:
                raise ValueError(f"unknown word class {cls!r} for {word!r}")
        self._classes = dict(classes)

    def classify(self, word: str) -> str | None:
        return self._classes.get(word)

    def extended(self, overrides: dict[str, str]) -> "WordLexicon":
        merged = dict(self._classes)
        merged.update(overrides)
        return WordLexicon(merged)

    @staticmethod
    def from_json_file(path: str, base: "WordLexicon | None" = None) -> "WordLexicon":
        """Load a lexicon file, merged over ``base`` (defaults to built-in)."""
        with open(path, encoding="utf-8") as fh:
            overrides = json.load(fh)
        base = DEFAULT_LEXICON if base is None else base
        return base.extended(overrides)


_BUILTIN_WORDS: dict[str, str] = {}
for _w in ("a", "an", "the"):
    _BUILTIN_WORDS[_w] = DET
for _w in ("and",):
    _BUILTIN_WORDS[_w] = CONJ
for _w in (
    # colors
    "purple", "green", "blue", "red", "orange", "yellow", "pink",
    "black", "white", "gray", "grey", "brown", "beige", "golden",
    # textures / shapes / attributive words used in benchmark templates
    "spotted", "striped", "checkered", "wooden", "metal", "metallic",
    "curved", "sliced", "furry", "fluffy", "shiny", "small", "big",
    "large", "young", "old", "baby",
):
    _BUILTIN_WORDS[_w] = MOD
for _w in (
    # animals
    "cat", "dog", "bird", "bear", "lion", "horse", "elephant", "monkey",
    "frog", "turtle", "rabbit", "mouse",
    # objects
    "crown", "bowl", "guitar", "car", "chair", "tomato", "suitcase",
    "backpack", "glasses", "bench", "balloon", "apple", "banana",
    "clock", "tower", "bow", "plane", "jacket", "spacesuit", "shirt",
    "table", "book", "cup",
):
    _BUILTIN_WORDS[_w] = NOUN

DEFAULT_LEXICON = WordLexicon(_BUILTIN_WORDS)


def tokenize(prompt: str) -> list[Token]:
    """Split a prompt into lowercase tokens, stripping edge punctuation.

    Roles are left unset; :func:`parse` assigns them. Raises
    :class:`EmptyPrompt` when nothing survives cleanup.
    """
    words = []
    for raw in prompt.split():
        word = raw.lower().strip(string.punctuation)
        if word:
            words.append(word)
    if not words:
        raise EmptyPrompt("prompt contains no tokens")
    return [Token(index=i, text=w) for i, w in enumerate(words)]


def _split_phrases(
    tokens: list[Token], lexicon: WordLexicon
) -> tuple[list[list[Token]], set[int]]:
    """Split the token stream into noun-phrase spans.

    Conjunctions separate phrases; a determiner met after a phrase has
    begun also closes it (this is how comma-joined phrases survive the
    punctuation-stripping tokenizer). Determiners and conjunctions land
    in the outside set.
    """
    phrases: list[list[Token]] = []
    outside: set[int] = set()
    current: list[Token] = []
    pending_det: int | None = None  # det consumed, phrase content not yet seen

    def close():
        nonlocal current, pending_det
        if current:
            phrases.append(current)
        current = []
        pending_det = None

    for tok in tokens:
        cls = lexicon.classify(tok.text)
        if cls == CONJ:
            if pending_det is not None and not current:
                raise GrammarError(
                    "determiner without a noun phrase", pending_det
                )
            outside.add(tok.index)
            close()
        elif cls == DET:
            if current:
                close()
            elif pending_det is not None:
                raise GrammarError(
                    "determiner without a noun phrase", pending_det
                )
            outside.add(tok.index)
            pending_det = tok.index
        else:
            current.append(tok)
    if pending_det is not None and not current:
        raise GrammarError("determiner without a noun phrase", pending_det)
    close()
    return phrases, outside


def _parse_phrase(
    phrase: list[Token], lexicon: WordLexicon
) -> tuple[ObjectGroup, dict[int, str]]:
    """Apply ``modifier* noun+`` to one phrase span."""
    if not phrase:
        raise GrammarError("empty noun phrase", 0)
    nouns: set[int] = set()
    modifiers: set[int] = set()
    roles: dict[int, str] = {}
    last = len(phrase) - 1
    seen_noun = False
    for pos, tok in enumerate(phrase):
        cls = lexicon.classify(tok.text)
        if cls is None:
            cls = NOUN if pos == last else MOD
        if cls == NOUN:
            seen_noun = True
            nouns.add(tok.index)
            roles[tok.index] = ROLE_NOUN
        elif cls == MOD:
            if seen_noun:
                raise GrammarError(
                    f"modifier {tok.text!r} after the phrase's noun", tok.index
                )
            modifiers.add(tok.index)
            roles[tok.index] = ROLE_MODIFIER
        else:
            raise GrammarError(
                f"unexpected {cls} {tok.text!r} inside a noun phrase", tok.index
            )
    if not nouns:
        raise GrammarError("no noun found in phrase", phrase[0].index)
    return ObjectGroup.build(nouns, modifiers), roles


def parse(prompt: str, lexicon: WordLexicon | None = None) -> ParsedPrompt:
    """Parse a prompt into object groups and the outside-token set.

    Args:
        prompt: Raw prompt text.
        lexicon: Word classes; defaults to the built-in benchmark lexicon.

    Returns:
        A :class:`ParsedPrompt` with one group per noun phrase.

    Raises:
        EmptyPrompt: no tokens survive cleanup.
        GrammarError: a phrase has no identifiable noun, or a modifier
            follows a noun inside a phrase.
    """
    lexicon = lexicon or DEFAULT_LEXICON
    bare = tokenize(prompt)
    phrases, outside = _split_phrases(bare, lexicon)
    if not phrases:
        raise GrammarError("no noun phrase found", bare[0].index)

    groups: list[ObjectGroup] = []
    roles: dict[int, str] = {i: ROLE_OUTSIDE for i in outside}
    for phrase in phrases:
        group, phrase_roles = _parse_phrase(phrase, lexicon)
        groups.append(group)
        roles.update(phrase_roles)

    tokens = tuple(
        Token(index=t.index, text=t.text, role=roles[t.index]) for t in bare
    )
    return ParsedPrompt(
        tokens=tokens, groups=tuple(groups), outside=frozenset(outside)
    )


def validate(parsed: ParsedPrompt) -> list[str]:
    """Check ParsedPrompt invariants; returns violation codes (empty = ok)."""
    problems: list[str] = []
    indices = [t.index for t in parsed.tokens]
    if indices != list(range(len(indices))):
        problems.append("BadIndices: token indices not consecutive from 0")

    seen: dict[int, int] = {}
    for k, g in enumerate(parsed.groups):
        if not g.noun_indices:
            problems.append(f"MissingNoun: group {k} has no noun")
        if g.noun_indices & g.modifier_indices:
            problems.append(f"NounModifierOverlap: group {k}")
        expected = frozenset(
            (m, n) for m in g.modifier_indices for n in g.noun_indices
        )
        if g.pairs != expected:
            problems.append(f"PairSetMismatch: group {k}")
        for i in g.member_indices:
            if i in seen:
                problems.append(
                    f"GroupOverlap: token {i} in groups {seen[i]} and {k}"
                )
            seen[i] = k

    all_indices = set(indices)
    union = parsed.object_token_set | parsed.outside | parsed.excluded
    if parsed.object_token_set & parsed.outside:
        problems.append("PartitionViolation: object and outside sets overlap")
    if (parsed.object_token_set | parsed.outside) & parsed.excluded:
        problems.append("PartitionViolation: excluded set overlaps")
    if union != all_indices:
        missing = sorted(all_indices - union)
        extra = sorted(union - all_indices)
        problems.append(
            f"PartitionViolation: uncovered {missing}, unknown {extra}"
        )
    return problems
