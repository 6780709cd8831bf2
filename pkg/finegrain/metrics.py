"""
Evaluation measures: classification accuracy, coarse-from-fine mappings, Exact-Match, BLEU@4, ROUGE-L,
a resource-free METEOR-style score ('meteor_lite'), and the most-frequent-category and template-fill baselines.

Caption pairs are (prediction, reference) tuples of token lists, normalized by :func:`corpus.tokenize_caption`;
there is a single reference per video.
"""

import math
import logging
import itertools
from collections import Counter, namedtuple

import numpy as np

from . import utils
from .corpus import PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, SOMETHING_TOKEN, expand_template, simplify_placeholder, count_slots


logger = logging.getLogger('metrics')


CaptionPair = namedtuple('CaptionPair', ['prediction', 'reference'])


def classification_accuracy(predictions, labels):
    """Fraction of predictions equal to labels."""
    predictions, labels = list(predictions), list(labels)
    if len(predictions) != len(labels):
        raise ValueError('Got {:d} predictions for {:d} labels'.format(len(predictions), len(labels)))
    if not labels:
        raise ValueError('Cannot compute accuracy of an empty list')
    return sum(int(prediction) == int(label) for prediction, label in zip(predictions, labels)) / len(labels)


def _group_matrix(hierarchy):
    matrix = np.zeros((hierarchy.category_count, hierarchy.group_count), dtype='f8')
    matrix[np.arange(hierarchy.category_count), hierarchy.group_of] = 1.
    return matrix


def group_probs_from_fine(fine_probs, hierarchy):
    """
    Sum probabilities of the fine-grained categories belonging to each group.

    Parameters
    ----------
    fine_probs : array
        Probabilities of shape (..., K).

    hierarchy : LabelHierarchy
        Label hierarchy.

    Returns
    -------
    group_probs : array
        Probabilities of shape (..., G).
    """
    fine_probs = np.asarray(fine_probs, dtype='f8')
    if fine_probs.shape[-1] != hierarchy.category_count:
        raise ValueError('Expected {:d} fine probabilities, got {:d}'.format(hierarchy.category_count, fine_probs.shape[-1]))
    return fine_probs @ _group_matrix(hierarchy)


def coarse_from_fine_argmax(fine_probs, hierarchy):
    """Group of the most probable fine category (hard mapping)."""
    fine = np.argmax(np.asarray(fine_probs), axis=-1)
    return np.asarray(hierarchy.group_of)[fine]


def strip_special(tokens):
    """Tokens stripped from BOS and PAD, truncated at EOS."""
    toret = []
    for token in tokens:
        if token == EOS_TOKEN: break
        if token in (BOS_TOKEN, PAD_TOKEN): continue
        toret.append(token)
    return toret


def _as_pairs(pairs):
    pairs = [CaptionPair(strip_special(prediction), strip_special(reference)) for prediction, reference in pairs]
    if not pairs:
        raise ValueError('Cannot evaluate an empty list of caption pairs')
    return pairs


def exact_match_accuracy(pairs):
    """Fraction of predictions identical to their reference, word by word."""
    pairs = _as_pairs(pairs)
    return sum(pair.prediction == pair.reference for pair in pairs) / len(pairs)


def ngrams(tokens, n):
    """Counter of the ``n``-grams of ``tokens``."""
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(pairs):
    """
    Corpus-level BLEU@4: clipped n-gram precisions (n = 1 to 4) pooled over the corpus,
    geometric mean with uniform weights, times the brevity penalty exp(1 - r / c) if c < r. No smoothing.
    """
    pairs = _as_pairs(pairs)
    matches, totals = [0] * 4, [0] * 4
    pred_length = ref_length = 0
    for prediction, reference in pairs:
        pred_length += len(prediction)
        ref_length += len(reference)
        for n in range(1, 5):
            pred_ngrams, ref_ngrams = ngrams(prediction, n), ngrams(reference, n)
            matches[n - 1] += sum(min(count, ref_ngrams[ngram]) for ngram, count in pred_ngrams.items())
            totals[n - 1] += max(len(prediction) - n + 1, 0)
    if pred_length == 0 or any(match == 0 for match in matches):
        return 0.
    log_precision = sum(math.log(match / total) for match, total in zip(matches, totals)) / 4.
    brevity = 1. if pred_length >= ref_length else math.exp(1. - ref_length / pred_length)
    return brevity * math.exp(log_precision)


def lcs_length(first, second):
    """Length of the longest common subsequence."""
    previous = [0] * (len(second) + 1)
    for token in first:
        current = [0]
        for j, other in enumerate(second):
            current.append(previous[j] + 1 if token == other else max(previous[j + 1], current[j]))
        previous = current
    return previous[-1]


def rouge_l(pairs, beta=1.2):
    """
    Mean over pairs of the LCS-based F-measure: P = LCS / |prediction|, R = LCS / |reference|,
    F = (1 + beta^2) P R / (R + beta^2 P).
    """
    pairs = _as_pairs(pairs)
    scores = []
    for prediction, reference in pairs:
        lcs = lcs_length(prediction, reference)
        if lcs == 0:
            scores.append(0.)
            continue
        precision, recall = lcs / len(prediction), lcs / len(reference)
        scores.append((1. + beta**2) * precision * recall / (recall + beta**2 * precision))
    return sum(scores) / len(scores)


_stemmer = None


def stem(token):
    """Porter stem of ``token``."""
    global _stemmer
    if _stemmer is None:
        from nltk.stem.porter import PorterStemmer
        _stemmer = PorterStemmer()
    return _stemmer.stem(token)


def count_chunks(alignment):
    """Number of chunks (runs of adjacent tokens, adjacent in both prediction and reference) of alignment [(i, j), ...]."""
    alignment = sorted(alignment)
    chunks = 0
    for index, (i, j) in enumerate(alignment):
        if index == 0 or alignment[index - 1] != (i - 1, j - 1):
            chunks += 1
    return chunks


def _key_matchings(pred_positions, ref_positions):
    # all ways to pair min(a, b) positions sharing one key
    if len(pred_positions) <= len(ref_positions):
        return [list(zip(pred_positions, perm)) for perm in itertools.permutations(ref_positions, len(pred_positions))]
    return [list(zip(perm, ref_positions)) for perm in itertools.permutations(pred_positions, len(ref_positions))]


def _stage_matchings(prediction, reference, pred_free, ref_free, key, max_combinations):
    pred_keys, ref_keys = {}, {}
    for i in pred_free: pred_keys.setdefault(key(prediction[i]), []).append(i)
    for j in ref_free: ref_keys.setdefault(key(reference[j]), []).append(j)
    options = [_key_matchings(pred_keys[k], ref_keys[k]) for k in sorted(pred_keys) if k in ref_keys]
    if math.prod(len(option) for option in options) > max_combinations:
        # order-preserving pairing within each key
        options = [[list(zip(pred_keys[k], ref_keys[k]))] for k in sorted(pred_keys) if k in ref_keys]
    for combination in itertools.product(*options):
        yield [pair for pairs in combination for pair in pairs]


def meteor_alignment(prediction, reference, max_combinations=2000):
    """
    Unigram alignment: maximal number of exact matches, then maximal number of additional matches of Porter stems
    among unmatched tokens; among those, the alignment with fewest chunks.

    At most ``max_combinations`` alignments are scored in total: stages exceeding their share fall back
    to order-preserving pairing within each key.

    Returns
    -------
    alignment : list
        List of (prediction index, reference index).
    """
    best, best_chunks = [], None
    exacts = list(_stage_matchings(prediction, reference, range(len(prediction)), range(len(reference)), lambda token: token, max_combinations))
    stem_combinations = max(max_combinations // len(exacts), 1)
    for exact in exacts:
        pred_used, ref_used = {i for i, _ in exact}, {j for _, j in exact}
        pred_free = [i for i in range(len(prediction)) if i not in pred_used]
        ref_free = [j for j in range(len(reference)) if j not in ref_used]
        for stemmed in _stage_matchings(prediction, reference, pred_free, ref_free, stem, stem_combinations):
            alignment = exact + stemmed
            chunks = count_chunks(alignment)
            if best_chunks is None or chunks < best_chunks:
                best, best_chunks = sorted(alignment), chunks
    return best


def meteor_pair(prediction, reference):
    """METEOR-style score of one (prediction, reference) pair."""
    alignment = meteor_alignment(prediction, reference)
    matches = len(alignment)
    if matches == 0:
        return 0.
    precision, recall = matches / len(prediction), matches / len(reference)
    fmean = 10. * precision * recall / (recall + 9. * precision)
    penalty = 0.5 * (count_chunks(alignment) / matches) ** 3
    return fmean * (1. - penalty)


def meteor_lite(pairs):
    """
    Mean over pairs of a resource-free METEOR-style score: exact then stem unigram alignment,
    Fmean = 10 P R / (R + 9 P), penalty = 0.5 (chunks / m)^3, score = Fmean (1 - penalty).
    No synonym or paraphrase matching; scores are comparable within this package only.
    """
    pairs = _as_pairs(pairs)
    return sum(meteor_pair(prediction, reference) for prediction, reference in pairs) / len(pairs)


def caption_scores(pairs):
    """
    All caption metrics of ``pairs``.

    Returns
    -------
    scores : dict
        exact_match, bleu4, rouge_l, meteor_lite, and md5 digest 'pairs_md5' of the evaluated pairs.
    """
    pairs = _as_pairs(pairs)
    return {'exact_match': exact_match_accuracy(pairs), 'bleu4': bleu4(pairs), 'rouge_l': rouge_l(pairs),
            'meteor_lite': meteor_lite(pairs), 'pairs_md5': utils.hash_json([list(pair) for pair in pairs])}


def baseline_frequent_fine(coarse_predictions, train_label_counts, hierarchy):
    """
    For each predicted group, the most frequent fine category of that group in training (ties to lowest id).

    Parameters
    ----------
    coarse_predictions : list
        Predicted group ids.

    train_label_counts : dict, list
        Training count of each fine category.

    hierarchy : LabelHierarchy
        Label hierarchy.

    Returns
    -------
    fine_predictions : list
    """
    if isinstance(train_label_counts, dict):
        missing = [category for category in range(hierarchy.category_count) if category not in train_label_counts]
        if missing:
            raise ValueError('Training counts are missing categories {}'.format(missing))
        counts = [train_label_counts[category] for category in range(hierarchy.category_count)]
    else:
        counts = list(train_label_counts)
        if len(counts) != hierarchy.category_count:
            raise ValueError('Expected {:d} training counts, got {:d}'.format(hierarchy.category_count, len(counts)))
    most_frequent = {}
    for group in range(hierarchy.group_count):
        members = hierarchy.members(group)
        if members:
            most_frequent[group] = min(members, key=lambda category: (-counts[category], category))
    toret = []
    for group in coarse_predictions:
        try:
            toret.append(most_frequent[int(group)])
        except KeyError as exc:
            raise ValueError('Unknown group {}'.format(group)) from exc
    return toret


def count_object_strings(records, simplified=True):
    """Dictionary category: :class:`Counter` of object strings (simplified placeholders if ``simplified``) filling its slots."""
    toret = {}
    for record in records:
        strings = record.placeholders
        if simplified:
            strings = [simplify_placeholder(placeholder) for placeholder in strings]
        toret.setdefault(record.action_category_id, Counter()).update(strings)
    return toret


def modal_string(counts):
    """Most frequent string of ``counts``, ties to lexicographic order; '[something]' if empty."""
    if not counts:
        return SOMETHING_TOKEN
    return min(counts, key=lambda string: (-counts[string], string))


def baseline_template_fill(predicted_category, object_string_counts, templates):
    """
    Caption obtained by filling every slot of the template of ``predicted_category``
    with the most frequent object string observed for that category.

    >>> baseline_template_fill(0, {0: Counter({'cup': 3, 'box': 1})}, {0: 'Putting [something] on [something]'})
    'Putting cup on cup'
    """
    template = templates[int(predicted_category)]
    string = modal_string(object_string_counts.get(int(predicted_category), Counter()))
    return expand_template(template, [string] * count_slots(template))
