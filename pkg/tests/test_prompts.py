"""Tokenizer, grammar, and ParsedPrompt invariant tests."""

import json
from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from attnprior import (
    ObjectGroup,
    ParsedPrompt,
    Token,
    WordLexicon,
    parse,
    tokenize,
    validate,
)
from attnprior.errors import EmptyPrompt, GrammarError

DATA = Path(__file__).parent / "data"


# --- tokenize -------------------------------------------------------------

def test_tokenize_whitespace_split():
    texts = [t.text for t in tokenize("a frog and a purple crown")]
    assert texts == ["a", "frog", "and", "a", "purple", "crown"]


def test_tokenize_lowercases():
    assert [t.text for t in tokenize("A FROG")] == ["a", "frog"]


def test_tokenize_counts_eight_tokens():
    # "a beige sliced tomato and a spotted bowl": counted by hand
    assert len(tokenize("a beige sliced tomato and a spotted bowl")) == 8


def test_tokenize_strips_punctuation():
    texts = [t.text for t in tokenize("a red crown, a blue bowl!")]
    assert texts == ["a", "red", "crown", "a", "blue", "bowl"]


def test_tokenize_indices_consecutive():
    toks = tokenize("one two three")
    assert [t.index for t in toks] == [0, 1, 2]


@pytest.mark.parametrize("bad", ["", "   ", "!!! ...", "\t\n"])
def test_tokenize_empty_prompt(bad):
    with pytest.raises(EmptyPrompt):
        tokenize(bad)


@given(st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=126)))
def test_tokenize_total(text):
    # any printable input either raises EmptyPrompt or yields lowercase
    # tokens with consecutive indices
    try:
        toks = tokenize(text)
    except EmptyPrompt:
        return
    assert toks
    assert [t.index for t in toks] == list(range(len(toks)))
    assert all(t.text == t.text.lower() for t in toks)


# --- parse ----------------------------------------------------------------

def groups_as_sets(parsed):
    return [
        (
            {parsed.tokens[i].text for i in g.noun_indices},
            {parsed.tokens[i].text for i in g.modifier_indices},
        )
        for g in parsed.groups
    ]


def test_parse_frog_and_purple_crown():
    parsed = parse("a frog and a purple crown")
    assert groups_as_sets(parsed) == [({"frog"}, set()), ({"crown"}, {"purple"})]
    assert sorted(parsed.outside) == [0, 2, 3]


def test_parse_single_noun():
    parsed = parse("frog")
    assert groups_as_sets(parsed) == [({"frog"}, set())]
    assert parsed.outside == frozenset()


def test_parse_three_groups_multi_modifier():
    parsed = parse("a baby monkey and a wooden curved crown and an orange guitar")
    assert groups_as_sets(parsed) == [
        ({"monkey"}, {"baby"}),
        ({"crown"}, {"wooden", "curved"}),
        ({"guitar"}, {"orange"}),
    ]


def test_parse_pairs_full_product():
    parsed = parse("a wooden curved crown")
    (group,) = parsed.groups
    assert group.pairs == {(1, 3), (2, 3)}  # wooden->crown, curved->crown


def test_parse_multiple_nouns_share_group():
    # consecutive known nouns form one group ("clock tower")
    parsed = parse("a blue clock tower")
    (group,) = parsed.groups
    assert {parsed.tokens[i].text for i in group.noun_indices} == {"clock", "tower"}
    assert group.pairs == {(1, 2), (1, 3)}


def test_parse_unknown_word_phrase_final_is_noun():
    parsed = parse("a zorp and a blue wug")
    assert groups_as_sets(parsed) == [({"zorp"}, set()), ({"wug"}, {"blue"})]


def test_parse_unknown_word_mid_phrase_is_modifier():
    parsed = parse("a glarpy frog")
    assert groups_as_sets(parsed) == [({"frog"}, {"glarpy"})]


def test_parse_comma_joined_phrases_split_on_determiner():
    parsed = parse("a red crown, a blue bowl")
    assert groups_as_sets(parsed) == [({"crown"}, {"red"}), ({"bowl"}, {"blue"})]


def test_parse_grammar_error_no_noun():
    with pytest.raises(GrammarError) as err:
        parse("a purple and a frog")
    assert err.value.position == 1


def test_parse_grammar_error_modifier_after_noun():
    with pytest.raises(GrammarError) as err:
        parse("a crown purple bowl")  # known modifier inside noun run
    assert err.value.position == 2


def test_parse_grammar_error_dangling_determiner():
    with pytest.raises(GrammarError):
        parse("a cat and a")
    with pytest.raises(GrammarError):
        parse("a and a frog")


def test_parse_empty_prompt_propagates():
    with pytest.raises(EmptyPrompt):
        parse("")


def test_parse_lexicon_override_changes_classes():
    base = parse("a zorp frog")
    assert groups_as_sets(base) == [({"frog"}, {"zorp"})]
    lex = WordLexicon({"zorp": "noun"}).extended({})
    # zorp known as noun joins the noun run
    custom = parse("a zorp frog", lexicon=WordLexicon({
        "a": "det", "frog": "noun", "zorp": "noun"
    }))
    assert groups_as_sets(custom) == [({"zorp", "frog"}, set())]
    assert lex.classify("zorp") == "noun"


def test_lexicon_file_merges_over_builtin(tmp_path):
    path = tmp_path / "lex.json"
    path.write_text(json.dumps({"zorp": "mod"}))
    lex = WordLexicon.from_json_file(str(path))
    assert lex.classify("zorp") == "mod"
    assert lex.classify("frog") == "noun"  # builtin retained
    # unknown phrase-final word defaults to noun...
    assert groups_as_sets(parse("a zorp")) == [({"zorp"}, set())]
    # ...but a known modifier cannot end a phrase
    with pytest.raises(GrammarError):
        parse("a zorp", lexicon=lex)
    parsed = parse("a zorp frog and a cat", lexicon=lex)
    assert groups_as_sets(parsed) == [({"frog"}, {"zorp"}), ({"cat"}, set())]


def test_lexicon_rejects_unknown_class():
    with pytest.raises(ValueError):
        WordLexicon({"thing": "verb"})


# --- golden corpus --------------------------------------------------------

def test_parser_corpus_exact_match():
    corpus = json.loads((DATA / "parser_corpus.json").read_text())
    assert len(corpus) == 50
    for entry in corpus:
        parsed = parse(entry["prompt"])
        assert parsed.to_json_dict() == entry["expected"], entry["prompt"]


# --- invariants -----------------------------------------------------------

CORPUS_PROMPTS = [
    e["prompt"]
    for e in json.loads((DATA / "parser_corpus.json").read_text())
]


@pytest.mark.parametrize("prompt", CORPUS_PROMPTS[::5])
def test_partition_property(prompt):
    parsed = parse(prompt)
    all_indices = {t.index for t in parsed.tokens}
    obj, out, exc = parsed.object_token_set, parsed.outside, parsed.excluded
    assert obj | out | exc == all_indices
    assert not obj & out and not obj & exc and not out & exc


@pytest.mark.parametrize("prompt", CORPUS_PROMPTS[::5])
def test_pairs_within_groups(prompt):
    parsed = parse(prompt)
    for g in parsed.groups:
        for i, j in g.pairs:
            assert i in g.modifier_indices and j in g.noun_indices


def test_parse_deterministic_serialization():
    a = parse("a baby monkey and a wooden curved crown and an orange guitar")
    b = parse("a baby monkey and a wooden curved crown and an orange guitar")
    assert a == b
    assert a.to_json() == b.to_json()


def test_parse_json_round_trip():
    parsed = parse("a frog and a purple crown")
    again = ParsedPrompt.from_json(parsed.to_json())
    assert again == parsed


# --- validate -------------------------------------------------------------

def test_validate_clean_parse():
    assert validate(parse("a frog and a purple crown")) == []


def _token(i, text, role):
    return Token(index=i, text=text, role=role)


def test_validate_missing_noun():
    bad = ParsedPrompt(
        tokens=(_token(0, "purple", "modifier"),),
        groups=(ObjectGroup(frozenset(), frozenset({0}), frozenset()),),
        outside=frozenset(),
    )
    assert any(v.startswith("MissingNoun") for v in validate(bad))


def test_validate_group_overlap():
    tokens = (_token(0, "frog", "noun"), _token(1, "crown", "noun"))
    g1 = ObjectGroup(frozenset({0}), frozenset(), frozenset())
    g2 = ObjectGroup(frozenset({0, 1}), frozenset(), frozenset())
    bad = ParsedPrompt(tokens=tokens, groups=(g1, g2), outside=frozenset())
    assert any(v.startswith("GroupOverlap") for v in validate(bad))


def test_validate_partition_violation():
    tokens = (_token(0, "frog", "noun"), _token(1, "a", "outside"))
    g = ObjectGroup(frozenset({0}), frozenset(), frozenset())
    bad = ParsedPrompt(tokens=tokens, groups=(g,), outside=frozenset())
    assert any(v.startswith("PartitionViolation") for v in validate(bad))


def test_validate_pair_set_mismatch():
    g = ObjectGroup(frozenset({1}), frozenset({0}), frozenset())  # pairs empty
    bad = ParsedPrompt(
        tokens=(_token(0, "purple", "modifier"), _token(1, "crown", "noun")),
        groups=(g,),
        outside=frozenset(),
    )
    assert any(v.startswith("PairSetMismatch") for v in validate(bad))
