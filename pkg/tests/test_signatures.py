import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proxyfam.errors import DataError
from proxyfam.signatures import (
    SignatureRule,
    evaluate_rules,
    eval_report_csv,
    export_yara,
    filter_nondiscriminative,
    generate_rules,
    match,
    rules_from_json,
    rules_to_json,
)


def corpus_with_planted(n_a=6, n_b=8):
    """Family-unique tokens plus a shared library token in every sample."""
    corpus = []
    for i in range(n_a):
        corpus.append(
            ("fam_a", frozenset({"a_tok1", "a_tok2", "a_tok3", "libshared", f"noise_a{i}"}))
        )
    for i in range(n_b):
        corpus.append(
            ("fam_b", frozenset({"b_tok1", "b_tok2", "b_tok3", "libshared", f"noise_b{i}"}))
        )
    return corpus


class TestGenerateRules:
    def test_universal_family_string_scores_one(self):
        corpus = corpus_with_planted()
        rules = {r.family: r for r in generate_rules(corpus)}
        top_string, top_score = rules["fam_a"].strings[0]
        assert top_string in {"a_tok1", "a_tok2", "a_tok3"}
        assert top_score == pytest.approx(1.0)

    def test_ubiquitous_string_excluded(self):
        corpus = corpus_with_planted()
        for rule in generate_rules(corpus):
            assert "libshared" not in rule.string_set()

    def test_planted_tokens_rank_first(self):
        corpus = corpus_with_planted()
        rules = {r.family: r for r in generate_rules(corpus, rule_size=3)}
        assert rules["fam_a"].string_set() == {"a_tok1", "a_tok2", "a_tok3"}
        assert rules["fam_b"].string_set() == {"b_tok1", "b_tok2", "b_tok3"}

    def test_score_range_and_tie_break(self):
        corpus = [
            ("fam_a", frozenset({"x", "y"})),
            ("fam_a", frozenset({"x", "y"})),
            ("fam_b", frozenset({"z"})),
        ]
        rules = {r.family: r for r in generate_rules(corpus, min_hits=1)}
        strings = [s for s, _ in rules["fam_a"].strings]
        scores = [v for _, v in rules["fam_a"].strings]
        assert strings == ["x", "y"]  # equal scores -> lexicographic
        assert all(-1.0 <= v <= 1.0 for v in scores)

    def test_clamped_when_few_positive_strings(self):
        corpus = [
            ("fam_a", frozenset({"only"})),
            ("fam_b", frozenset({"other1", "other2", "other3", "other4"})),
        ]
        rules = {r.family: r for r in generate_rules(corpus, min_hits=3)}
        assert rules["fam_a"].clamped
        assert rules["fam_a"].min_hits == 1

    def test_empty_string_set_rejected(self):
        with pytest.raises(DataError, match="empty string set"):
            generate_rules([("fam_a", frozenset()), ("fam_b", frozenset({"x"}))])

    def test_family_without_strings_rejected(self):
        corpus = [("fam_a", frozenset({"x"}))]
        with pytest.raises(DataError, match="fam_b"):
            generate_rules(corpus, families=["fam_a", "fam_b"])

    def test_deterministic(self):
        corpus = corpus_with_planted()
        assert generate_rules(corpus) == generate_rules(list(corpus))


class TestFilter:
    def test_shared_token_removed(self):
        rule = SignatureRule("fam_a", (("a_tok1", 0.9), ("libshared", 0.4)), 2)
        out = filter_nondiscriminative([rule], corpus_with_planted())
        assert out[0].string_set() == {"a_tok1"}
        assert out[0].min_hits == 1

    def test_unique_tokens_unchanged(self):
        rule = SignatureRule("fam_a", (("a_tok1", 0.9), ("a_tok2", 0.8)), 2)
        out = filter_nondiscriminative([rule], corpus_with_planted())
        assert out[0] == rule

    def test_emptied_rule_dropped(self):
        rule = SignatureRule("fam_a", (("libshared", 0.4),), 1)
        assert filter_nondiscriminative([rule], corpus_with_planted()) == []

    def test_retained_strings_single_family(self):
        corpus = corpus_with_planted()
        rules = generate_rules(corpus)
        filtered = filter_nondiscriminative(rules, corpus)
        families_of = {}
        for fam, strings in corpus:
            for s in strings:
                families_of.setdefault(s, set()).add(fam)
        for rule in filtered:
            for s in rule.string_set():
                assert families_of[s] == {rule.family}

    def test_filter_never_decreases_precision(self):
        # A shared token skewed toward fam_a scores positive for fam_a, so
        # the raw rule fires on fam_b samples carrying it; filtering must
        # only tighten precision.
        corpus = []
        for i in range(6):
            strings = {"a_tok1", "a_tok2", f"noise_a{i}"}
            if i != 0:
                strings.add("libshared")
            corpus.append(("fam_a", frozenset(strings)))
        for i in range(8):
            strings = {"b_tok1", "b_tok2", f"noise_b{i}"}
            if i < 2:
                strings.add("libshared")
            corpus.append(("fam_b", frozenset(strings)))
        raw = generate_rules(corpus, min_hits=1)
        assert "libshared" in dict(raw[0].strings)
        filtered = filter_nondiscriminative(raw, corpus)
        before = evaluate_rules(raw, corpus)
        after = evaluate_rules(filtered, corpus)
        for fam in ("fam_a", "fam_b"):
            b, a = before.row(fam), after.row(fam)
            assert b.precision is not None and a.precision is not None
            assert a.precision >= b.precision
        assert after.row("fam_a").precision > before.row("fam_a").precision


class TestMatch:
    def rule(self):
        return SignatureRule("fam_a", (("x", 1.0), ("y", 0.8), ("z", 0.5)), 2)

    def test_all_strings_present(self):
        assert match(self.rule(), frozenset({"x", "y", "z", "other"}))

    def test_empty_sample(self):
        assert not match(self.rule(), frozenset())

    def test_threshold_boundary(self):
        assert not match(self.rule(), frozenset({"x"}))  # m-1 hits
        assert match(self.rule(), frozenset({"x", "z"}))  # m hits

    @settings(max_examples=50, deadline=None)
    @given(
        st.frozensets(st.sampled_from(["x", "y", "z", "w", "v"])),
        st.frozensets(st.sampled_from(["p", "q", "x", "y"])),
    )
    def test_monotone_in_sample_strings(self, base, extra):
        rule = self.rule()
        if match(rule, base):
            assert match(rule, base | extra)


class TestEvaluate:
    def test_perfect_rules(self):
        corpus = corpus_with_planted()
        rules = generate_rules(corpus, rule_size=3)
        report = evaluate_rules(rules, corpus)
        for fe in report.per_family:
            assert fe.precision == 1.0
            assert fe.recall == 1.0
        assert report.ruleset_f1 == pytest.approx(1.0)

    def test_match_everything_precision_is_prior(self):
        # 30/70 split; rule that matches every sample
        corpus = [("fam_a", frozenset({"t"})) for _ in range(30)]
        corpus += [("fam_b", frozenset({"t"})) for _ in range(70)]
        rule = SignatureRule("fam_a", (("t", 0.1),), 1)
        report = evaluate_rules([rule], corpus)
        assert report.row("fam_a").precision == pytest.approx(0.3)
        assert report.row("fam_a").recall == 1.0

    def test_zero_matches_flagged_undefined(self):
        corpus = [("fam_a", frozenset({"x"})), ("fam_b", frozenset({"y"}))]
        rule = SignatureRule("fam_a", (("nope", 0.5),), 1)
        report = evaluate_rules([rule], corpus)
        assert report.row("fam_a").precision is None
        assert report.ruleset_f1 == 0.0
        assert "undefined" in eval_report_csv(report)

    def test_weighted_f1(self):
        corpus = [("fam_a", frozenset({"a"})) for _ in range(2)]
        corpus += [("fam_b", frozenset({"b"})) for _ in range(8)]
        rules = [
            SignatureRule("fam_a", (("a", 1.0),), 1),
            SignatureRule("fam_b", (("nope", 1.0),), 1),
        ]
        report = evaluate_rules(rules, corpus)
        # fam_a F1 = 1 with weight 0.2; fam_b contributes 0
        assert report.ruleset_f1 == pytest.approx(0.2)


class TestSerialization:
    def test_json_round_trip(self):
        rules = generate_rules(corpus_with_planted())
        assert rules_from_json(rules_to_json(rules)) == rules

    def test_bad_json_rejected(self):
        with pytest.raises(DataError):
            rules_from_json('[{"family": "x"}]')

    def test_yara_export_shape(self):
        rule = SignatureRule("fam a", (("tok\\one", 1.0), ('say "hi"', 0.5)), 2)
        text = export_yara([rule])
        assert "rule fam_a_strings" in text
        assert '$s0 = "tok\\\\one"' in text
        assert '\\"hi\\"' in text
        assert "2 of them" in text

    def test_yara_non_ascii_escaped(self):
        rule = SignatureRule("f", (("télé", 1.0),), 1)
        text = export_yara([rule])
        assert "\\xc3\\xa9" in text
