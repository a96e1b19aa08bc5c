"""radnle: distill and score natural language explanations from chest
X-ray radiology reports.

The extraction side turns raw reports into per-image explanation
records through a fixed funnel of filters, a pluggable sentence
labeler, and an exact-set rule table.  The evaluation side scores
prediction matrices (support-weighted AUC) and explanation pairs
(clinical-evidence accuracy plus BLEU/ROUGE-L/METEOR/CIDEr).
"""

__version__ = "0.1.0"

from .corpus import (
    CorpusFormatError,
    ImageMeta,
    IngestError,
    Report,
    Split,
    StudyMeta,
    ViewPosition,
    extract_sections,
    load_corpus,
)
from .keywords import (
    FilterReason,
    KeywordLexicon,
    TagResult,
    classify_filter,
    default_lexicon,
    tag_explanation,
    tag_sentence,
)
from .labels import (
    BuiltinLabeler,
    Certainty,
    ExternalLabeler,
    Label,
    LabelState,
    LabelsFormatError,
    MentionLexicon,
    default_mention_lexicon,
    label_sentence,
    load_external_labels,
)
from .metrics import (
    EvalFormatError,
    EvalPair,
    MetricReport,
    PredictionMatrix,
    bleu,
    cider,
    clev,
    default_pathologies,
    evaluate,
    filter_correct,
    meteor_lite,
    rouge_l,
    weighted_auc,
)
from .pipeline import (
    FunnelStats,
    NleRecord,
    PipelineConfig,
    PipelineResult,
    audit_roundtrip,
    dedup,
    expand_per_image,
    emit_stats,
    process_report,
    run_pipeline,
)
from .rules import (
    DIAGNOSIS_CAPABLE,
    EVIDENCE_CAPABLE,
    OTHER_MISC,
    EvidenceGraph,
    RuleMatch,
    RulePattern,
    audit_exclusivity,
    builtin_rules,
    evidence_graph,
    match_rule,
)
from .segment import Section, Sentence, split_sentences, tokenize

__all__ = [
    "__version__",
    "BuiltinLabeler",
    "Certainty",
    "CorpusFormatError",
    "DIAGNOSIS_CAPABLE",
    "EVIDENCE_CAPABLE",
    "EvalFormatError",
    "EvalPair",
    "EvidenceGraph",
    "ExternalLabeler",
    "FilterReason",
    "FunnelStats",
    "ImageMeta",
    "IngestError",
    "KeywordLexicon",
    "Label",
    "LabelState",
    "LabelsFormatError",
    "MentionLexicon",
    "MetricReport",
    "NleRecord",
    "OTHER_MISC",
    "PipelineConfig",
    "PipelineResult",
    "PredictionMatrix",
    "Report",
    "RuleMatch",
    "RulePattern",
    "Section",
    "Sentence",
    "Split",
    "StudyMeta",
    "TagResult",
    "ViewPosition",
    "audit_exclusivity",
    "audit_roundtrip",
    "bleu",
    "builtin_rules",
    "cider",
    "classify_filter",
    "clev",
    "dedup",
    "default_lexicon",
    "default_mention_lexicon",
    "default_pathologies",
    "emit_stats",
    "evaluate",
    "evidence_graph",
    "expand_per_image",
    "extract_sections",
    "filter_correct",
    "label_sentence",
    "load_corpus",
    "load_external_labels",
    "match_rule",
    "meteor_lite",
    "process_report",
    "rouge_l",
    "run_pipeline",
    "split_sentences",
    "tag_explanation",
    "tag_sentence",
    "tokenize",
    "weighted_auc",
]
