"""The evidence graph and the 12 sentence-level extraction rules.

A labeled sentence is a valid explanation only when its set of
uncertain/positive labels equals one rule's evidence + diagnosis set
exactly; any extra label (Support Devices, Cardiomegaly, Fracture, ...)
blocks every rule.  The rules are mutually exclusive, which
:func:`audit_exclusivity` verifies by full enumeration.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

from .labels import Certainty, Label, LabelState

#: Marker for explanatory evidence not captured by any of the 14 labels.
OTHER_MISC = "other_misc"

EVIDENCE_CAPABLE: frozenset[Label] = frozenset(
    {
        Label.LUNG_OPACITY,
        Label.CONSOLIDATION,
        Label.LUNG_LESION,
        Label.ENLARGED_CARDIOMEDIASTINUM,
    }
)

DIAGNOSIS_CAPABLE: frozenset[Label] = frozenset(
    {
        Label.PLEURAL_EFFUSION,
        Label.EDEMA,
        Label.PLEURAL_OTHER,
        Label.PNEUMOTHORAX,
        Label.PNEUMONIA,
        Label.ATELECTASIS,
        Label.CONSOLIDATION,
    }
)

# Diagnosis candidate sets shared by several rules.
SET_A: tuple[Label, ...] = (
    Label.PLEURAL_EFFUSION,
    Label.EDEMA,
    Label.PLEURAL_OTHER,
    Label.PNEUMOTHORAX,
)
SET_B: tuple[Label, ...] = SET_A + (Label.PNEUMONIA, Label.ATELECTASIS)

#: Labels that participate in any rule, in code order.
RULE_LABELS: tuple[Label, ...] = tuple(sorted(EVIDENCE_CAPABLE | DIAGNOSIS_CAPABLE))


@dataclass(frozen=True)
class EvidenceGraph:
    """Which labels can serve as evidence for which diagnoses."""

    evidence_capable: frozenset[Label]
    diagnosis_capable: frozenset[Label]
    edges: Mapping[Label, frozenset[Label]]

    def has_edge(self, evidence: Label, diagnosis: Label) -> bool:
        return diagnosis in self.edges.get(evidence, frozenset())


def evidence_graph() -> EvidenceGraph:
    """Graph reconstructed from the rule table."""
    return EvidenceGraph(
        evidence_capable=EVIDENCE_CAPABLE,
        diagnosis_capable=DIAGNOSIS_CAPABLE,
        edges={
            Label.LUNG_OPACITY: frozenset(SET_B) | {Label.CONSOLIDATION},
            Label.CONSOLIDATION: frozenset({Label.PNEUMONIA, Label.ATELECTASIS}),
            Label.LUNG_LESION: frozenset({Label.PNEUMONIA}),
            Label.ENLARGED_CARDIOMEDIASTINUM: frozenset(
                {Label.EDEMA, Label.ATELECTASIS}
            ),
        },
    )


class DiagnosisForm(Enum):
    """Shape of a rule's diagnosis side."""

    SINGLE = "single"            # exactly one label out of a candidate set
    UNCERTAIN_SUBSET = "subset"  # >= 2 candidates, all uncertain
    FIXED = "fixed"              # an exact label set with per-label certainty


@dataclass(frozen=True)
class RuleMatch:
    """A fired rule with its diagnosis/evidence assignment."""

    rule_id: str
    diagnosis: tuple[tuple[Label, Certainty], ...]
    evidence: tuple[Label | str, ...]


@dataclass(frozen=True)
class RulePattern:
    """One row of the rule table.

    ``evidence`` is empty for other/misc evidence.  For FIXED rules,
    ``required_certainty`` aligns with ``candidates``; None means
    uncertain or positive both qualify.
    """

    rule_id: str
    evidence: tuple[Label, ...]
    form: DiagnosisForm
    candidates: tuple[Label, ...]
    required_certainty: tuple[Certainty | None, ...] = ()
    kw_required: bool = False

    def matches(self, present: Mapping[Label, Certainty], has_kw: bool) -> bool:
        """Exact-set test against the present (uncertain/positive) labels."""
        if self.kw_required and not has_kw:
            return False
        for label in self.evidence:
            if label not in present:
                return False
        n_diagnosis = len(present) - len(self.evidence)
        if self.form is DiagnosisForm.SINGLE:
            if n_diagnosis != 1:
                return False
            for label in present:
                if label not in self.evidence:
                    return label in self.candidates
            return False
        if self.form is DiagnosisForm.UNCERTAIN_SUBSET:
            if n_diagnosis < 2:
                return False
            for label, certainty in present.items():
                if label in self.evidence:
                    continue
                if label not in self.candidates or certainty is not Certainty.UNCERTAIN:
                    return False
            return True
        # FIXED
        if n_diagnosis != len(self.candidates):
            return False
        for label, required in zip(self.candidates, self.required_certainty):
            certainty = present.get(label)
            if certainty is None or label in self.evidence:
                return False
            if required is not None and certainty is not required:
                return False
        return True

    def to_match(self, present: Mapping[Label, Certainty]) -> RuleMatch:
        diagnosis = tuple(
            sorted(
                ((label, certainty) for label, certainty in present.items()
                 if label not in self.evidence),
                key=lambda item: item[0],
            )
        )
        evidence: tuple[Label | str, ...]
        evidence = tuple(sorted(self.evidence)) if self.evidence else (OTHER_MISC,)
        return RuleMatch(rule_id=self.rule_id, diagnosis=diagnosis, evidence=evidence)


def _fixed(
    rule_id: str,
    evidence: tuple[Label, ...],
    spec: tuple[tuple[Label, Certainty | None], ...],
    kw_required: bool = False,
) -> RulePattern:
    return RulePattern(
        rule_id=rule_id,
        evidence=evidence,
        form=DiagnosisForm.FIXED,
        candidates=tuple(label for label, _ in spec),
        required_certainty=tuple(required for _, required in spec),
        kw_required=kw_required,
    )


_BUILTIN_RULES: tuple[RulePattern, ...] = (
    RulePattern("R1", (), DiagnosisForm.SINGLE, SET_A, kw_required=True),
    RulePattern("R2", (), DiagnosisForm.UNCERTAIN_SUBSET, SET_A, kw_required=True),
    RulePattern("R3", (Label.LUNG_OPACITY,), DiagnosisForm.SINGLE, SET_B),
    RulePattern("R4", (Label.LUNG_OPACITY,), DiagnosisForm.UNCERTAIN_SUBSET, SET_B),
    _fixed("R5", (Label.LUNG_OPACITY,), ((Label.CONSOLIDATION, None),)),
    _fixed("R6", (Label.CONSOLIDATION,), ((Label.PNEUMONIA, None),)),
    _fixed("R7", (Label.LUNG_OPACITY, Label.CONSOLIDATION), ((Label.PNEUMONIA, None),)),
    _fixed("R8", (Label.LUNG_LESION,), ((Label.PNEUMONIA, None),), kw_required=True),
    _fixed(
        "R9",
        (Label.LUNG_OPACITY,),
        ((Label.ATELECTASIS, Certainty.POSITIVE), (Label.PNEUMONIA, Certainty.UNCERTAIN)),
    ),
    _fixed(
        "R10",
        (Label.CONSOLIDATION,),
        ((Label.ATELECTASIS, Certainty.UNCERTAIN), (Label.PNEUMONIA, Certainty.UNCERTAIN)),
    ),
    _fixed(
        "R11",
        (Label.ENLARGED_CARDIOMEDIASTINUM,),
        ((Label.EDEMA, None),),
        kw_required=True,
    ),
    _fixed(
        "R12",
        (Label.ENLARGED_CARDIOMEDIASTINUM,),
        ((Label.ATELECTASIS, None),),
        kw_required=True,
    ),
)


def builtin_rules() -> tuple[RulePattern, ...]:
    """The 12 shipped extraction rules, in table order."""
    return _BUILTIN_RULES


def match_rule(
    state: LabelState,
    has_explanation_kw: bool,
    rules: Iterable[RulePattern] | None = None,
) -> RuleMatch | None:
    """Return the unique rule fired by this label state, if any.

    Only the 13 substantive labels take part; No Finding is ignored.
    Negative and absent labels never influence the outcome.
    """
    present = state.substantive_present()
    if not present:
        return None
    return match_present(present, has_explanation_kw, rules)


def match_present(
    present: Mapping[Label, Certainty],
    has_explanation_kw: bool,
    rules: Iterable[RulePattern] | None = None,
) -> RuleMatch | None:
    """:func:`match_rule` over a precomputed present-label map."""
    for pattern in rules if rules is not None else _BUILTIN_RULES:
        if pattern.matches(present, has_explanation_kw):
            return pattern.to_match(present)
    return None


def matching_rule_ids(
    present: Mapping[Label, Certainty],
    has_kw: bool,
    rules: Iterable[RulePattern] | None = None,
) -> list[str]:
    """All rules that fire (the audit expects at most one)."""
    return [
        pattern.rule_id
        for pattern in (rules if rules is not None else _BUILTIN_RULES)
        if pattern.matches(present, has_kw)
    ]


@dataclass
class ExclusivityReport:
    """Outcome of the exhaustive mutual-exclusivity check."""

    total_inputs: int
    zero_match: int
    single_match: int
    double_matches: list[tuple[tuple[tuple[Label, Certainty], ...], bool, tuple[str, ...]]]
    per_rule: dict[str, int]

    @property
    def exclusive(self) -> bool:
        return not self.double_matches

    def format_table(self) -> str:
        lines = [
            "rule exclusivity audit",
            f"  inputs enumerated : {self.total_inputs}",
            f"  matched by none   : {self.zero_match}",
            f"  matched by one    : {self.single_match}",
            f"  matched by many   : {len(self.double_matches)}",
            "",
            "  matches per rule:",
        ]
        for rule_id, count in sorted(self.per_rule.items(), key=lambda kv: int(kv[0][1:])):
            lines.append(f"    {rule_id:<4} {count:>6}")
        for present, kw, rule_ids in self.double_matches:
            state = ", ".join(f"{lb.display}={c.value}" for lb, c in present)
            lines.append(f"  CONFLICT kw={kw} [{state}] -> {'/'.join(rule_ids)}")
        return "\n".join(lines)


def audit_exclusivity(rules: Iterable[RulePattern] | None = None) -> ExclusivityReport:
    """Enumerate all 3^10 x 2 inputs over the rule-relevant labels.

    Labels outside :data:`RULE_LABELS` stay absent: any of them being
    present blocks every rule anyway under exact-set matching.
    """
    rule_list = tuple(rules if rules is not None else _BUILTIN_RULES)
    states = (None, Certainty.UNCERTAIN, Certainty.POSITIVE)
    total = 0
    zero = 0
    single = 0
    doubles: list[tuple[tuple[tuple[Label, Certainty], ...], bool, tuple[str, ...]]] = []
    per_rule = {pattern.rule_id: 0 for pattern in rule_list}
    for combo in itertools.product(states, repeat=len(RULE_LABELS)):
        present = {
            label: certainty
            for label, certainty in zip(RULE_LABELS, combo)
            if certainty is not None
        }
        for has_kw in (False, True):
            total += 1
            fired = [p.rule_id for p in rule_list if p.matches(present, has_kw)]
            if not fired:
                zero += 1
            elif len(fired) == 1:
                single += 1
                per_rule[fired[0]] += 1
            else:
                doubles.append(
                    (tuple(sorted(present.items())), has_kw, tuple(fired))
                )
    return ExclusivityReport(
        total_inputs=total,
        zero_match=zero,
        single_match=single,
        double_matches=doubles,
        per_rule=per_rule,
    )


def rule_table_hash(rules: Iterable[RulePattern] | None = None) -> str:
    """Short stable digest of the active rule table."""
    parts = []
    for pattern in rules if rules is not None else _BUILTIN_RULES:
        parts.append(
            "|".join(
                (
                    pattern.rule_id,
                    ",".join(label.display for label in pattern.evidence),
                    pattern.form.value,
                    ",".join(label.display for label in pattern.candidates),
                    ",".join(
                        certainty.value if certainty else "-"
                        for certainty in pattern.required_certainty
                    ),
                    "kw" if pattern.kw_required else "nokw",
                )
            )
        )
    digest = hashlib.sha256("\n".join(parts).encode("utf-8")).hexdigest()
    return digest[:12]
