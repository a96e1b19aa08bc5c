"""Evaluation: task AUC, clinical-evidence accuracy, and NLG metrics.

The task score is a support-weighted AUC with uncertain and positive
merged into one class.  The clinical-evidence score checks that a
generated explanation names exactly the same evidence labels as the
ground truth.  Text-overlap metrics (BLEU, ROUGE-L, a METEOR variant
without synonym resources, CIDEr) share the package tokenizer.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .labels import Label, LabelState, MentionLexicon, default_mention_lexicon, label_text
from .rules import EVIDENCE_CAPABLE
from .segment import tokenize

log = logging.getLogger(__name__)

CERTAINTY_ROWS = ("negative", "uncertain", "positive")


class EvalFormatError(Exception):
    """Fatal problem in an evaluation input file."""


def default_pathologies() -> tuple[Label, ...]:
    """The 10 scored pathologies, in label-code order.

    The exact pathology axis is configuration-driven; this default is
    the seven rule-table diagnosis labels plus the three pure evidence
    labels.  Override it (config ``pathologies`` or ``--pathologies``)
    if your prediction files use a different axis.
    """
    return (
        Label.ENLARGED_CARDIOMEDIASTINUM,
        Label.LUNG_OPACITY,
        Label.LUNG_LESION,
        Label.EDEMA,
        Label.CONSOLIDATION,
        Label.PNEUMONIA,
        Label.ATELECTASIS,
        Label.PNEUMOTHORAX,
        Label.PLEURAL_EFFUSION,
        Label.PLEURAL_OTHER,
    )


@dataclass(frozen=True)
class PredictionMatrix:
    """Per-image scores: 3 certainty rows x n_path pathology columns."""

    image_id: str
    scores: tuple[tuple[float, ...], ...]

    def __post_init__(self) -> None:
        if len(self.scores) != 3:
            raise ValueError("expected 3 certainty rows")
        n_path = len(self.scores[0])
        if any(len(row) != n_path for row in self.scores):
            raise ValueError("ragged score rows")
        for row in self.scores:
            for value in row:
                if not -1e-6 <= value <= 1.0 + 1e-6:
                    raise ValueError(
                        f"{self.image_id}: score {value} outside [0, 1]"
                    )
        for j in range(n_path):
            total = sum(row[j] for row in self.scores)
            if abs(total - 1.0) > 1e-6:
                raise ValueError(
                    f"{self.image_id}: pathology {j} scores sum to {total}, not 1"
                )

    @property
    def n_path(self) -> int:
        return len(self.scores[0])

    def merged(self, pathology_index: int) -> float:
        """P(uncertain) + P(positive) for one pathology."""
        return self.scores[1][pathology_index] + self.scores[2][pathology_index]


@dataclass
class EvalPair:
    """One ground-truth/generated explanation pair for a diagnosis."""

    image_id: str
    diagnosis: Label
    gt_nle: str
    gen_nle: str
    gt_binary: bool
    pred_score: float | None = None
    gt_evidence: frozenset[Label] | None = None
    gen_evidence: frozenset[Label] | None = None
    spice: float | None = None
    bertscore: float | None = None


def filter_correct(pairs: Sequence[EvalPair], threshold: float = 0.5) -> list[EvalPair]:
    """Keep pairs whose diagnosis was correctly predicted present.

    Only positive/uncertain ground truths carry explanations, so a pair
    survives iff gt_binary is true and pred_score clears the threshold.
    """
    return [
        pair
        for pair in pairs
        if pair.gt_binary
        and pair.pred_score is not None
        and (pair.pred_score >= threshold) == pair.gt_binary
    ]


TextLabeler = Callable[[str], LabelState]


def nle_evidence_labels(
    text: str, diagnosis: Label, text_labeler: TextLabeler
) -> frozenset[Label]:
    """Evidence labels an explanation refers to, minus its own diagnosis."""
    state = text_labeler(text)
    return frozenset((state.present_set & EVIDENCE_CAPABLE) - {diagnosis})


def builtin_text_labeler(lexicon: MentionLexicon | None = None) -> TextLabeler:
    lex = lexicon if lexicon is not None else default_mention_lexicon()
    return lambda text: label_text(text, lex)


def clev(pairs: Sequence[EvalPair], text_labeler: TextLabeler | None = None) -> float | None:
    """Share of pairs whose evidence-label sets match exactly.

    Pairs carrying precomputed evidence sets use them; otherwise the
    labeler extracts evidence from both texts.  None for zero pairs.
    """
    if not pairs:
        return None
    if text_labeler is None:
        text_labeler = builtin_text_labeler()
    hits = 0
    for pair in pairs:
        gt = pair.gt_evidence
        if gt is None:
            gt = nle_evidence_labels(pair.gt_nle, pair.diagnosis, text_labeler)
        gen = pair.gen_evidence
        if gen is None:
            gen = nle_evidence_labels(pair.gen_nle, pair.diagnosis, text_labeler)
        if gt == gen:
            hits += 1
    return hits / len(pairs)


def _rank_auc(scores: Sequence[float], positives: Sequence[bool]) -> float | None:
    """AUC via the rank statistic; ties count one half."""
    n_pos = sum(positives)
    n_neg = len(positives) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = sorted(range(len(scores)), key=lambda i: scores[i])
    rank_sum_pos = 0.0
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and scores[order[j + 1]] == scores[order[i]]:
            j += 1
        midrank = (i + j) / 2 + 1  # 1-based average rank of the tie block
        for k in range(i, j + 1):
            if positives[order[k]]:
                rank_sum_pos += midrank
        i = j + 1
    return (rank_sum_pos - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)


def _support_weighted_auc(
    groups: Mapping[Label, tuple[Sequence[float], Sequence[bool]]]
) -> float | None:
    """Combine per-pathology AUCs weighted by positive support."""
    weighted = 0.0
    support_total = 0
    for label in sorted(groups):
        scores, positives = groups[label]
        auc = _rank_auc(scores, positives)
        if auc is None:
            log.warning(
                "pathology %s has a single class (%d instances); excluded from AUC",
                label.display,
                len(scores),
            )
            continue
        support = sum(positives)
        weighted += support * auc
        support_total += support
    if support_total == 0:
        return None
    return weighted / support_total


def weighted_auc(
    predictions: Sequence[PredictionMatrix],
    ground_truth: Sequence[LabelState],
    pathologies: Sequence[Label] | None = None,
) -> float | None:
    """Task score over full prediction matrices.

    Per pathology the binary score is P(uncertain)+P(positive) and the
    binary ground truth is "mentioned uncertain or positive".
    Pathologies without both classes are excluded with a warning; the
    rest combine weighted by positive support.
    """
    if len(predictions) != len(ground_truth):
        raise EvalFormatError("predictions and ground truth differ in length")
    axis = tuple(pathologies if pathologies is not None else default_pathologies())
    groups: dict[Label, tuple[list[float], list[bool]]] = {}
    for j, label in enumerate(axis):
        scores = [matrix.merged(j) for matrix in predictions]
        positives = [state[label].present for state in ground_truth]
        groups[label] = (scores, positives)
    return _support_weighted_auc(groups)


def pairwise_auc(
    pairs: Sequence[EvalPair],
) -> float | None:
    """Support-weighted AUC over eval pairs, grouped by diagnosis."""
    groups: dict[Label, tuple[list[float], list[bool]]] = {}
    for pair in pairs:
        if pair.pred_score is None:
            continue
        scores, positives = groups.setdefault(pair.diagnosis, ([], []))
        scores.append(pair.pred_score)
        positives.append(pair.gt_binary)
    return _support_weighted_auc(groups)


# --- text-overlap metrics -------------------------------------------------


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    cands: Sequence[str], refs: Sequence[str], max_n: int = 4
) -> tuple[float, ...]:
    """Corpus-level BLEU-1..max_n with brevity penalty, no smoothing."""
    if len(cands) != len(refs):
        raise EvalFormatError("candidate/reference count mismatch")
    clipped = [0] * (max_n + 1)
    totals = [0] * (max_n + 1)
    cand_len = 0
    ref_len = 0
    for cand, ref in zip(cands, refs):
        cand_tokens = tokenize(cand)
        ref_tokens = tokenize(ref)
        cand_len += len(cand_tokens)
        ref_len += len(ref_tokens)
        for n in range(1, max_n + 1):
            cand_counts = _ngrams(cand_tokens, n)
            if not cand_counts:
                continue
            ref_counts = _ngrams(ref_tokens, n)
            totals[n] += sum(cand_counts.values())
            clipped[n] += sum(
                min(count, ref_counts.get(gram, 0)) for gram, count in cand_counts.items()
            )
    if cand_len == 0:
        return tuple(0.0 for _ in range(max_n))
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    precisions = [
        (clipped[n] / totals[n]) if totals[n] else 0.0 for n in range(1, max_n + 1)
    ]
    scores = []
    for n in range(1, max_n + 1):
        window = precisions[:n]
        if any(p == 0.0 for p in window):
            scores.append(0.0)
        else:
            scores.append(brevity * math.exp(sum(math.log(p) for p in window) / n))
    return tuple(scores)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    previous = [0] * (len(b) + 1)
    for token_a in a:
        current = [0]
        for j, token_b in enumerate(b, start=1):
            if token_a == token_b:
                current.append(previous[j - 1] + 1)
            else:
                current.append(max(previous[j], current[j - 1]))
        previous = current
    return previous[len(b)]


def rouge_l(cands: Sequence[str], refs: Sequence[str], beta: float = 1.2) -> float:
    """Mean sentence-level ROUGE-L F score."""
    if len(cands) != len(refs):
        raise EvalFormatError("candidate/reference count mismatch")
    if not cands:
        return 0.0
    total = 0.0
    for cand, ref in zip(cands, refs):
        cand_tokens = tokenize(cand)
        ref_tokens = tokenize(ref)
        lcs = _lcs_length(cand_tokens, ref_tokens)
        if lcs == 0:
            continue
        precision = lcs / len(cand_tokens)
        recall = lcs / len(ref_tokens)
        denominator = recall + beta * beta * precision
        if denominator > 0:
            total += (1 + beta * beta) * precision * recall / denominator
    return total / len(cands)


def stem(token: str) -> str:
    """Tiny suffix stemmer: just enough to pair inflected forms."""
    if len(token) > 4 and token.endswith("ies"):
        return token[:-3] + "y"
    if len(token) > 5 and token.endswith("ing"):
        return token[:-3]
    if len(token) > 4 and token.endswith("ed"):
        return token[:-2]
    if len(token) > 4 and token.endswith("es"):
        return token[:-2]
    if len(token) > 3 and token.endswith("s") and not token.endswith("ss"):
        return token[:-1]
    return token


def _align(cand: Sequence[str], ref: Sequence[str]) -> list[tuple[int, int]]:
    """Greedy earliest-match alignment: exact pass, then stem pass."""
    matches: list[tuple[int, int]] = []
    ref_used = [False] * len(ref)
    cand_used = [False] * len(cand)
    for i, token in enumerate(cand):
        for j, ref_token in enumerate(ref):
            if not ref_used[j] and token == ref_token:
                matches.append((i, j))
                ref_used[j] = True
                cand_used[i] = True
                break
    for i, token in enumerate(cand):
        if cand_used[i]:
            continue
        stemmed = stem(token)
        for j, ref_token in enumerate(ref):
            if not ref_used[j] and stemmed == stem(ref_token):
                matches.append((i, j))
                ref_used[j] = True
                break
    matches.sort()
    return matches


def _meteor_pair(
    cand: Sequence[str],
    ref: Sequence[str],
    alpha: float,
    beta: float,
    gamma: float,
) -> float:
    if not cand or not ref:
        return 0.0
    matches = _align(cand, ref)
    m = len(matches)
    if m == 0:
        return 0.0
    precision = m / len(cand)
    recall = m / len(ref)
    f_mean = precision * recall / (alpha * precision + (1 - alpha) * recall)
    chunks = 1
    for (ci, ri), (cj, rj) in zip(matches, matches[1:]):
        if cj != ci + 1 or rj != ri + 1:
            chunks += 1
    penalty = gamma * (chunks / m) ** beta
    return f_mean * (1 - penalty)


def meteor_lite(
    cands: Sequence[str],
    refs: Sequence[str],
    alpha: float = 0.9,
    beta: float = 3.0,
    gamma: float = 0.5,
) -> float:
    """Mean unigram-alignment METEOR (exact + suffix-stem stages only)."""
    if len(cands) != len(refs):
        raise EvalFormatError("candidate/reference count mismatch")
    if not cands:
        return 0.0
    total = sum(
        _meteor_pair(tokenize(cand), tokenize(ref), alpha, beta, gamma)
        for cand, ref in zip(cands, refs)
    )
    return total / len(cands)


def cider(cands: Sequence[str], refs: Sequence[str], max_n: int = 4) -> float:
    """Consensus TF-IDF metric: mean of per-n cosine similarities x 10.

    Document frequencies come from the reference corpus; n-grams unseen
    in any reference fall back to df=1.
    """
    if len(cands) != len(refs):
        raise EvalFormatError("candidate/reference count mismatch")
    if not cands:
        return 0.0
    ref_tokens = [tokenize(ref) for ref in refs]
    cand_tokens = [tokenize(cand) for cand in cands]
    corpus_size = len(refs)
    doc_freq: list[Counter] = [Counter() for _ in range(max_n + 1)]
    for tokens in ref_tokens:
        for n in range(1, max_n + 1):
            for gram in set(_ngrams(tokens, n)):
                doc_freq[n][gram] += 1

    def tfidf(counts: Counter, n: int) -> dict:
        return {
            gram: count * (math.log(corpus_size) - math.log(max(doc_freq[n][gram], 1)))
            for gram, count in counts.items()
        }

    total = 0.0
    for cand, ref in zip(cand_tokens, ref_tokens):
        sims = 0.0
        for n in range(1, max_n + 1):
            vec_c = tfidf(_ngrams(cand, n), n)
            vec_r = tfidf(_ngrams(ref, n), n)
            norm_c = math.sqrt(sum(v * v for v in vec_c.values()))
            norm_r = math.sqrt(sum(v * v for v in vec_r.values()))
            if norm_c == 0.0 or norm_r == 0.0:
                continue
            dot = sum(v * vec_r.get(gram, 0.0) for gram, v in vec_c.items())
            sims += dot / (norm_c * norm_r)
        total += 10.0 * sims / max_n
    return total / len(cands)


# --- batch evaluation ------------------------------------------------------


@dataclass
class MetricReport:
    """All scores for one evaluation run."""

    auc_weighted: float | None
    clev: float | None
    bleu1: float | None
    bleu2: float | None
    bleu3: float | None
    bleu4: float | None
    rouge_l: float | None
    meteor: float | None
    cider: float | None
    n_pairs_scored: int
    n_missing_pred: int = 0
    spice: float | None = None
    bertscore: float | None = None

    def to_json_dict(self) -> dict:
        payload = {
            "auc_weighted": self.auc_weighted,
            "clev": self.clev,
            "bleu1": self.bleu1,
            "bleu2": self.bleu2,
            "bleu3": self.bleu3,
            "bleu4": self.bleu4,
            "rouge_l": self.rouge_l,
            "meteor": self.meteor,
            "cider": self.cider,
            "n_pairs_scored": self.n_pairs_scored,
            "n_missing_pred": self.n_missing_pred,
        }
        if self.spice is not None:
            payload["spice"] = self.spice
        if self.bertscore is not None:
            payload["bertscore"] = self.bertscore
        return payload

    def format_table(self) -> str:
        def fmt(value: float | None) -> str:
            return "null" if value is None else f"{value:.4f}"

        rows = [
            ("weighted AUC", fmt(self.auc_weighted)),
            ("CLEV", fmt(self.clev)),
            ("BLEU-1", fmt(self.bleu1)),
            ("BLEU-2", fmt(self.bleu2)),
            ("BLEU-3", fmt(self.bleu3)),
            ("BLEU-4", fmt(self.bleu4)),
            ("ROUGE-L", fmt(self.rouge_l)),
            ("METEOR", fmt(self.meteor)),
            ("CIDEr", fmt(self.cider)),
        ]
        if self.spice is not None:
            rows.append(("SPICE (precomputed)", fmt(self.spice)))
        if self.bertscore is not None:
            rows.append(("BERTScore (precomputed)", fmt(self.bertscore)))
        rows.append(("pairs scored", str(self.n_pairs_scored)))
        rows.append(("pairs missing preds", str(self.n_missing_pred)))
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def read_eval_pairs(path: str | Path) -> list[EvalPair]:
    """Read the evaluation JSONL (one pair per line)."""
    pairs: list[EvalPair] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvalFormatError(f"{path}:{line_no}: bad JSON: {exc}") from None
            try:
                gt_binary = row["gt_binary"]
                if not isinstance(gt_binary, bool):
                    raise ValueError(f"gt_binary must be true/false, got {gt_binary!r}")
                pair = EvalPair(
                    image_id=row["image_id"],
                    diagnosis=Label.from_display(row["diagnosis"]),
                    gt_nle=row["gt_nle"],
                    gen_nle=row["gen_nle"],
                    gt_binary=gt_binary,
                )
            except (KeyError, ValueError) as exc:
                raise EvalFormatError(f"{path}:{line_no}: {exc}") from None
            for attr in ("gt_evidence", "gen_evidence"):
                if attr in row and row[attr] is not None:
                    setattr(
                        pair,
                        attr,
                        frozenset(Label.from_display(name) for name in row[attr]),
                    )
            for attr in ("spice", "bertscore"):
                if attr in row and row[attr] is not None:
                    setattr(pair, attr, float(row[attr]))
            pairs.append(pair)
    return pairs


def read_predictions(
    path: str | Path, n_path: int = 10
) -> dict[str, PredictionMatrix]:
    """Read the prediction CSV: image_id + 3*n_path fixed-order columns."""
    import csv

    expected = ["image_id"] + [
        f"{certainty}_{j}" for certainty in CERTAINTY_ROWS for j in range(n_path)
    ]
    matrices: dict[str, PredictionMatrix] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise EvalFormatError(f"{path}: empty prediction file") from None
        if header != expected:
            raise EvalFormatError(
                f"{path}: bad header; expected image_id plus "
                f"{CERTAINTY_ROWS[0]}_0..{CERTAINTY_ROWS[-1]}_{n_path - 1}"
            )
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise EvalFormatError(f"{path}: row {row_no}: wrong field count")
            image_id = row[0]
            if image_id in matrices:
                raise EvalFormatError(f"{path}: row {row_no}: duplicate image {image_id!r}")
            try:
                values = [float(v) for v in row[1:]]
            except ValueError:
                raise EvalFormatError(f"{path}: row {row_no}: non-numeric score") from None
            rows = tuple(
                tuple(values[r * n_path : (r + 1) * n_path]) for r in range(3)
            )
            try:
                matrices[image_id] = PredictionMatrix(image_id=image_id, scores=rows)
            except ValueError as exc:
                raise EvalFormatError(f"{path}: row {row_no}: {exc}") from None
    return matrices


def evaluate(
    eval_file: str | Path,
    pred_file: str | Path,
    out_dir: str | Path,
    *,
    threshold: float = 0.5,
    text_labeler: TextLabeler | None = None,
    pathologies: Sequence[Label] | None = None,
) -> MetricReport:
    """Batch wrapper: join, filter to correct predictions, score, report.

    Pairs whose image has no prediction row (or whose diagnosis is not
    on the pathology axis) are dropped with a warning count.  AUC uses
    all joined pairs; the explanation metrics use only survivors of the
    correct-prediction filter.
    """
    axis = tuple(pathologies if pathologies is not None else default_pathologies())
    pairs = read_eval_pairs(eval_file)
    matrices = read_predictions(pred_file, n_path=len(axis))
    axis_index = {label: j for j, label in enumerate(axis)}

    joined: list[EvalPair] = []
    missing = 0
    for pair in pairs:
        matrix = matrices.get(pair.image_id)
        j = axis_index.get(pair.diagnosis)
        if matrix is None or j is None:
            missing += 1
            continue
        pair.pred_score = matrix.merged(j)
        joined.append(pair)
    if missing:
        log.warning("%d pairs dropped: no prediction available", missing)

    auc = pairwise_auc(joined)
    surviving = filter_correct(joined, threshold)

    if surviving:
        cands = [pair.gen_nle for pair in surviving]
        refs = [pair.gt_nle for pair in surviving]
        bleu_scores = bleu(cands, refs)
        report = MetricReport(
            auc_weighted=auc,
            clev=clev(surviving, text_labeler),
            bleu1=bleu_scores[0],
            bleu2=bleu_scores[1],
            bleu3=bleu_scores[2],
            bleu4=bleu_scores[3],
            rouge_l=rouge_l(cands, refs),
            meteor=meteor_lite(cands, refs),
            cider=cider(cands, refs),
            n_pairs_scored=len(surviving),
            n_missing_pred=missing,
        )
        spices = [pair.spice for pair in surviving if pair.spice is not None]
        if spices:
            report.spice = sum(spices) / len(spices)
        berts = [pair.bertscore for pair in surviving if pair.bertscore is not None]
        if berts:
            report.bertscore = sum(berts) / len(berts)
    else:
        report = MetricReport(
            auc_weighted=auc,
            clev=None,
            bleu1=None,
            bleu2=None,
            bleu3=None,
            bleu4=None,
            rouge_l=None,
            meteor=None,
            cider=None,
            n_pairs_scored=0,
            n_missing_pred=missing,
        )

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / "report.json"
    with open(report_path, "w", encoding="utf-8", newline="\n") as handle:
        json.dump(report.to_json_dict(), handle, indent=2)
        handle.write("\n")
    return report
