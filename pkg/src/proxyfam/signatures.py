"""Per-family string signatures: scoring, filtering, matching, evaluation.

A candidate string s scores for family f as

    score(s, f) = df_f(s)/n_f - max_{g != f} df_g(s)/n_g

where df is the per-family document frequency over samples that carry
string sets. The top-k positive scorers form the family's rule; a sample
matches a rule when at least ``min_hits`` of its strings are present.

Strings that fire across multiple families (typically shared library
artifacts) make raw rules over-broad, especially for minority families that
get drowned in majority-family matches. The filtering pass drops every rule
string observed in two or more families; what survives occurs in exactly one
family of the filtering corpus, which can only tighten precision.

Rules serialize to JSON for the internal matcher (the source of truth) and
export to Yara-style text for interoperability.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

from .errors import DataError

logger = logging.getLogger(__name__)

DEFAULT_RULE_SIZE = 20
DEFAULT_MIN_HITS = 3

# (family, string-set) pairs; one entry per sample
StringCorpus = Sequence[tuple[str, frozenset[str]]]


@dataclass(frozen=True)
class SignatureRule:
    """Scored string set for one family with a match threshold."""

    family: str
    strings: tuple[tuple[str, float], ...]  # sorted by score desc
    min_hits: int
    clamped: bool = False

    def __post_init__(self) -> None:
        if self.min_hits < 1:
            raise ValueError("min_hits must be >= 1")
        names = [s for s, _ in self.strings]
        if len(set(names)) != len(names):
            raise ValueError("rule strings must be distinct")

    def string_set(self) -> frozenset[str]:
        return frozenset(s for s, _ in self.strings)


def generate_rules(
    corpus: StringCorpus,
    rule_size: int = DEFAULT_RULE_SIZE,
    min_hits: int = DEFAULT_MIN_HITS,
    families: Sequence[str] | None = None,
) -> list[SignatureRule]:
    """One rule per family from overrepresentation scores.

    Ties break lexicographically on the string. When fewer than ``min_hits``
    strings score positive, the rule is emitted with the threshold clamped
    down (never below 1) and flagged.
    """
    if min_hits < 1:
        raise DataError("min_hits must be >= 1")
    for fam, strings in corpus:
        if not strings:
            raise DataError(f"sample of family {fam!r} has an empty string set")
    n_by_family: Counter = Counter(fam for fam, _ in corpus)
    expected = sorted(families) if families is not None else sorted(n_by_family)
    for fam in expected:
        if n_by_family.get(fam, 0) == 0:
            raise DataError(f"family {fam!r} has no samples with string sets")
    if len(expected) < 2:
        raise DataError("need >= 2 families to score strings contrastively")

    df: dict[str, Counter] = {fam: Counter() for fam in expected}
    for fam, strings in corpus:
        if fam in df:
            df[fam].update(strings)

    rules = []
    for fam in expected:
        n_f = n_by_family[fam]
        scored = []
        for s, count in df[fam].items():
            own = count / n_f
            other = max(
                (df[g][s] / n_by_family[g] for g in expected if g != fam),
                default=0.0,
            )
            score = own - other
            if score > 0:
                scored.append((s, score))
        scored.sort(key=lambda item: (-item[1], item[0]))
        top = tuple(scored[:rule_size])
        clamped = len(top) < min_hits
        rules.append(
            SignatureRule(
                family=fam,
                strings=top,
                min_hits=max(1, min(min_hits, len(top))),
                clamped=clamped,
            )
        )
        if clamped:
            logger.warning(
                "rule for %s has only %d positive strings; threshold clamped",
                fam,
                len(top),
            )
    return rules


def filter_nondiscriminative(
    rules: Sequence[SignatureRule], corpus: StringCorpus
) -> list[SignatureRule]:
    """Drop rule strings seen in samples of two or more families.

    A rule emptied by the filter is dropped with a warning. Thresholds are
    re-clamped to the surviving string count.
    """
    seen_in: dict[str, set[str]] = {}
    for fam, strings in corpus:
        for s in strings:
            seen_in.setdefault(s, set()).add(fam)
    multi_family = {s for s, fams in seen_in.items() if len(fams) >= 2}
    out = []
    for rule in rules:
        kept = tuple((s, v) for s, v in rule.strings if s not in multi_family)
        if not kept:
            logger.warning("rule for %s emptied by filtering; dropped", rule.family)
            continue
        out.append(
            replace(
                rule,
                strings=kept,
                min_hits=min(rule.min_hits, len(kept)),
                clamped=rule.clamped or len(kept) < rule.min_hits,
            )
        )
    return out


def match(rule: SignatureRule, strings: frozenset[str]) -> bool:
    """True when at least ``min_hits`` distinct rule strings are present."""
    hits = 0
    for s, _ in rule.strings:
        if s in strings:
            hits += 1
            if hits >= rule.min_hits:
                return True
    return False


@dataclass(frozen=True)
class FamilyEval:
    family: str
    precision: float | None  # None when the rule matched nothing
    recall: float
    matched: int
    true_matches: int


@dataclass(frozen=True)
class RuleEvalReport:
    per_family: tuple[FamilyEval, ...]
    ruleset_f1: float  # per-family F1 weighted by family size

    def row(self, family: str) -> FamilyEval:
        for fe in self.per_family:
            if fe.family == family:
                return fe
        raise KeyError(family)


def evaluate_rules(
    rules: Sequence[SignatureRule], corpus: StringCorpus
) -> RuleEvalReport:
    """Precision/recall per rule over the samples that carry string sets.

    Precision is matches-of-own-family over all matches (undefined and
    flagged None at zero matches, contributing 0 to the weighted F1);
    recall is over the family's sample count.
    """
    family_sizes: Counter = Counter(fam for fam, _ in corpus)
    rows = []
    weighted = 0.0
    total = sum(family_sizes.values())
    for rule in rules:
        matched = 0
        true_matches = 0
        for fam, strings in corpus:
            if match(rule, strings):
                matched += 1
                if fam == rule.family:
                    true_matches += 1
        fam_size = family_sizes.get(rule.family, 0)
        precision = true_matches / matched if matched else None
        recall = true_matches / fam_size if fam_size else 0.0
        if precision is not None and precision + recall > 0:
            f1 = 2 * precision * recall / (precision + recall)
        else:
            f1 = 0.0
        weighted += f1 * fam_size
        rows.append(
            FamilyEval(
                family=rule.family,
                precision=precision,
                recall=recall,
                matched=matched,
                true_matches=true_matches,
            )
        )
    return RuleEvalReport(
        per_family=tuple(rows),
        ruleset_f1=weighted / total if total else 0.0,
    )


def eval_report_csv(report: RuleEvalReport) -> str:
    lines = ["family,precision,recall,matched,true_matches"]
    for fe in report.per_family:
        precision = f"{fe.precision:.6f}" if fe.precision is not None else "undefined"
        lines.append(
            f"{fe.family},{precision},{fe.recall:.6f},{fe.matched},{fe.true_matches}"
        )
    lines.append(f"ruleset_f1,{report.ruleset_f1:.6f},,,")
    return "\n".join(lines) + "\n"


# --- serialization -----------------------------------------------------------


def rules_to_json(rules: Sequence[SignatureRule]) -> str:
    payload = [
        {
            "family": r.family,
            "min_hits": r.min_hits,
            "clamped": r.clamped,
            "strings": [[s, v] for s, v in r.strings],
        }
        for r in rules
    ]
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def rules_from_json(text: str) -> list[SignatureRule]:
    try:
        payload = json.loads(text)
        return [
            SignatureRule(
                family=entry["family"],
                strings=tuple((s, float(v)) for s, v in entry["strings"]),
                min_hits=int(entry["min_hits"]),
                clamped=bool(entry.get("clamped", False)),
            )
            for entry in payload
        ]
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"bad rules file: {exc}") from exc


def _yara_escape(s: str) -> str:
    out = []
    for ch in s:
        code = ord(ch)
        if ch == "\\":
            out.append("\\\\")
        elif ch == '"':
            out.append('\\"')
        elif 0x20 <= code < 0x7F:
            out.append(ch)
        else:
            for byte in ch.encode("utf-8"):
                out.append(f"\\x{byte:02x}")
    return "".join(out)


def _identifier(family: str) -> str:
    return "".join(ch if ch.isalnum() or ch == "_" else "_" for ch in family)


def export_yara(rules: Sequence[SignatureRule]) -> str:
    """Yara-style text mirroring the internal matcher semantics."""
    chunks = []
    for rule in rules:
        lines = [f"rule {_identifier(rule.family)}_strings", "{", "    strings:"]
        for i, (s, _) in enumerate(rule.strings):
            lines.append(f'        $s{i} = "{_yara_escape(s)}"')
        lines.append("    condition:")
        lines.append(f"        {rule.min_hits} of them")
        lines.append("}")
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + "\n"
