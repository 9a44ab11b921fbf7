"""Greedy and beam decoding, BLEU, perplexity and hypothesis length."""
import math
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from attention_decoder import decoder_step, init_decoder_state, prepare_memory, sequence_nll
from encoder import encode
from numeric_core import log_softmax
from subword import BOS_ID, EOS_ID, PAD_ID, RESERVED, detokenize
from utils import TreeNMTError, EmptyCorpus

logger = logging.getLogger(__name__)

BLEU_ORDER = 4


class EmptySource(TreeNMTError, ValueError):
    pass


class CountMismatch(TreeNMTError, ValueError):
    pass


@dataclass
class Hypothesis:
    tokens: list
    log_prob: float
    finished: bool = False
    # (alpha values, beta value or None) per emitted token
    steps: list = field(default_factory=list)

    @property
    def score(self):
        """Length-normalized log-probability."""
        return self.log_prob / len(self.tokens) if self.tokens else 0.0

    def output_ids(self):
        return [t for t in self.tokens if t != EOS_ID]


@dataclass
class _Partial:
    tokens: list
    log_prob: float
    y: int
    s: object
    c: object
    steps: list


def _token_log_probs(logits):
    lps = log_softmax(logits)
    lps[PAD_ID] = -np.inf
    lps[BOS_ID] = -np.inf
    return lps


def _ranked_tokens(lps):
    """Token ids best first: higher log-prob, then non-reserved, then lower id."""
    ids = np.arange(len(lps))
    reserved = (ids < len(RESERVED)).astype(int)
    order = np.lexsort((ids, reserved, -lps))
    return [int(i) for i in order if np.isfinite(lps[i])]


def _step_trace(step):
    return (step.alpha.value.copy(), step.beta_value)


def _start(model, src_ids, tree):
    if not len(src_ids):
        raise EmptySource('cannot translate an empty source sentence')
    tape = model.tape(record=False)
    encoded = encode(src_ids, tree, tape, model.config)
    memory = prepare_memory(encoded, tape, model.config)
    s, c = init_decoder_state(encoded, tape, model.config)
    return tape, encoded, memory, s, c


def greedy_decode(model, src_ids, tree, max_len, trace=False):
    tape, _, memory, s, c = _start(model, src_ids, tree)
    hyp = Hypothesis([], 0.0)
    y = BOS_ID
    for _ in range(max_len):
        step = decoder_step(y, s, c, memory, tape, model.config)
        lps = _token_log_probs(step.logits.value)
        y = _ranked_tokens(lps)[0]
        hyp.tokens.append(y)
        hyp.log_prob += float(lps[y])
        if trace:
            hyp.steps.append(_step_trace(step))
        s, c = step.s, step.c
        if y == EOS_ID:
            hyp.finished = True
            break
    return hyp


def _rank(hyp):
    """Finished hypotheses outrank unfinished ones, then mean log-prob decides."""
    return (hyp.finished, hyp.score)


def _beam_pass(model, memory, tape, s, c, beam, max_len, trace):
    live = [_Partial([], 0.0, BOS_ID, s, c, [])]
    finished = []
    for _ in range(max_len):
        width = beam - len(finished)
        if width <= 0 or not live:
            break
        candidates = []
        for h, part in enumerate(live):
            step = decoder_step(part.y, part.s, part.c, memory, tape, model.config)
            lps = _token_log_probs(step.logits.value)
            for tok in _ranked_tokens(lps)[:width]:
                lp = float(lps[tok])
                candidates.append((part.log_prob + lp, lp, tok, h, step))
        candidates.sort(key=lambda cand: (-cand[0], -cand[1], cand[2] < len(RESERVED), cand[2], cand[3]))
        next_live = []
        for total, _, tok, h, step in candidates[:width]:
            part = live[h]
            steps = part.steps + [_step_trace(step)] if trace else part.steps
            if tok == EOS_ID:
                finished.append(Hypothesis(part.tokens + [tok], total, True, steps))
            else:
                next_live.append(_Partial(part.tokens + [tok], total, tok, step.s, step.c, steps))
        live = next_live
    pool = finished or [Hypothesis(p.tokens, p.log_prob, False, p.steps) for p in live]
    if not pool:
        return Hypothesis([], 0.0)
    # max keeps the first of equal scores
    return max(pool, key=lambda hyp: hyp.score)


def beam_search(model, src_ids, tree, beam, max_len, trace=False, widen=False):
    """Partial hypotheses are ranked by total log-prob; finished ones leave the
    beam, which shrinks accordingly, and are ranked by mean log-prob.

    A wider beam can end on a worse hypothesis. With `widen` every width from
    1 to `beam` is searched and the best result by `_rank` is kept, so the
    result never gets worse as `beam` grows.
    """
    if beam < 1:
        raise ValueError('beam must be >= 1')
    tape, _, memory, s, c = _start(model, src_ids, tree)
    widths = range(1, beam + 1) if widen else (beam,)
    results = [_beam_pass(model, memory, tape, s, c, width, max_len, trace) for width in widths]
    return max(results, key=_rank)


def translate_sentence(model, src_ids, tree, beam=5, max_len=100, greedy=False, trace=False,
                       widen=False):
    if greedy or beam == 1:
        return greedy_decode(model, src_ids, tree, max_len, trace=trace)
    return beam_search(model, src_ids, tree, beam, max_len, trace=trace, widen=widen)


def translate_corpus(model, sources, beam=5, max_len=100, greedy=False, trace=False, threads=1,
                     widen=False):
    """`sources` holds (src_ids, tree) pairs; output order follows input order."""
    def run(item):
        src_ids, tree = item
        return translate_sentence(model, src_ids, tree, beam, max_len, greedy, trace, widen)

    logger.debug('translating %d sentences (%s, max_len %d)', len(sources),
                 'greedy' if greedy or beam == 1 else f'beam {beam}', max_len)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, sources))
    return [run(item) for item in sources]


def hypothesis_text(hyp, vocab):
    return detokenize(vocab.decode(hyp.output_ids()))


# --- metrics ---

def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references, max_n=BLEU_ORDER):
    """Corpus BLEU over token lists, one reference per hypothesis.

    Orders with no candidate n-grams are left out of the geometric mean; a
    zero match count at orders >= 2 counts as half a match.
    """
    if len(hypotheses) != len(references):
        raise CountMismatch(f'{len(hypotheses)} hypotheses for {len(references)} references')
    if not hypotheses:
        raise EmptyCorpus('BLEU needs at least one hypothesis')
    matches = [0] * max_n
    counts = [0] * max_n
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp, ref = list(hyp), list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            cand = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            matches[n - 1] += sum(min(c, ref_counts[g]) for g, c in cand.items())
            counts[n - 1] += sum(cand.values())
    if hyp_len == 0:
        return 0.0
    log_precisions = []
    for n in range(max_n):
        if counts[n] == 0:
            continue
        if matches[n] == 0:
            if n == 0:
                return 0.0
            log_precisions.append(math.log(0.5 / counts[n]))
        else:
            log_precisions.append(math.log(matches[n] / counts[n]))
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(sum(log_precisions) / len(log_precisions))


def perplexity(model, examples):
    """exp of the per-token NLL over examples with src_ids, tree and tgt_ids."""
    nll_sum, tokens = 0.0, 0
    for ex in examples:
        tape = model.tape(record=False)
        loss = sequence_nll(model, ex.src_ids, ex.tree, ex.tgt_ids, tape=tape, reduction='sum')
        nll_sum += float(loss.value[0])
        tokens += len(ex.tgt_ids)
    if tokens == 0:
        raise EmptyCorpus('perplexity needs at least one target token')
    return math.exp(nll_sum / tokens)


def avg_hypothesis_length(hypotheses):
    """Mean length in tokens, <eos> excluded."""
    lengths = []
    for hyp in hypotheses:
        tokens = hyp.tokens if isinstance(hyp, Hypothesis) else list(hyp)
        lengths.append(sum(1 for t in tokens if t != EOS_ID and t != RESERVED[EOS_ID]))
    return sum(lengths) / len(lengths) if lengths else 0.0
