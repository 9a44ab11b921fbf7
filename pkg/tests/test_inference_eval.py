import itertools
import math

import numpy as np
import pytest

import inference_eval as ie
from attention_decoder import sequence_nll
from subword import EOS_ID, RESERVED, Vocab
from synthetic import left_branching_tree
from training import Example
from utils import EmptyCorpus

TREE = left_branching_tree(['a', 'b', 'c'])
SRC = (4, 5, 6)


def _flat_output(model):
    model.params['dec.out.W'] = np.zeros_like(model.params['dec.out.W'])
    model.params['dec.out.b'] = np.zeros_like(model.params['dec.out.b'])
    return model


@pytest.mark.parametrize('beta_mode', ['gating', 'fixed:0.5', 'unweighted'])
def test_beam_of_one_is_greedy(make_model, beta_mode):
    model = make_model(beta_mode, seed=8)
    greedy = ie.greedy_decode(model, SRC, TREE, max_len=6)
    beam = ie.beam_search(model, SRC, TREE, beam=1, max_len=6)
    assert beam.tokens == greedy.tokens
    assert beam.log_prob == greedy.log_prob
    routed = ie.translate_sentence(model, SRC, TREE, beam=1, max_len=6)
    assert routed.tokens == greedy.tokens


@pytest.mark.parametrize('seed', [1, 2, 3, 4])
def test_beam_matches_exhaustive_search(make_model, seed):
    # emittable tokens: <eos>, <unk> and one word
    model = make_model(tgt_words=1, seed=seed)
    emittable = [EOS_ID, 3, 4]
    best, best_score = None, -math.inf
    for length in range(1, 4):
        for prefix in itertools.product([3, 4], repeat=length - 1):
            seq = list(prefix) + [EOS_ID]
            nll = float(sequence_nll(model, SRC, TREE, seq, reduction='sum').value[0])
            if -nll / len(seq) > best_score:
                best, best_score = seq, -nll / len(seq)
    hyp = ie.beam_search(model, SRC, TREE, beam=len(emittable) ** 3, max_len=3)
    assert hyp.finished
    assert hyp.tokens == best
    assert hyp.score == pytest.approx(best_score, abs=1e-12)


@pytest.mark.parametrize('seed', [0, 1, 2, 3, 4, 5])
def test_widened_beam_never_gets_worse(make_model, seed):
    model = make_model(seed=seed)
    ranks = [ie._rank(ie.beam_search(model, SRC, TREE, beam=k, max_len=6, widen=True))
             for k in range(1, 7)]
    assert ranks == sorted(ranks)
    # a finished result stays finished and its score only grows
    finished = [score for done, score in ranks if done]
    assert finished == sorted(finished)


def test_widened_beam_keeps_the_exhaustive_optimum(make_model):
    model = make_model(tgt_words=1, seed=2)
    plain = ie.beam_search(model, SRC, TREE, beam=27, max_len=3)
    wide = ie.beam_search(model, SRC, TREE, beam=27, max_len=3, widen=True)
    assert wide.tokens == plain.tokens and wide.score == plain.score


def test_flat_output_prefers_the_first_word(make_model):
    model = _flat_output(make_model())
    assert ie.greedy_decode(model, SRC, TREE, max_len=3).tokens == [4, 4, 4]
    hyp = ie.beam_search(model, SRC, TREE, beam=2, max_len=3)
    assert hyp.tokens == [4, 4, 4] and not hyp.finished


def test_pad_and_bos_are_never_emitted(make_model):
    model = make_model(seed=5)
    model.params['dec.out.b'] = np.zeros_like(model.params['dec.out.b'])
    model.params['dec.out.b'][[0, 1]] = 50.0
    hyp = ie.greedy_decode(model, SRC, TREE, max_len=4)
    assert not {0, 1} & set(hyp.tokens)


def test_eos_ends_decoding(make_model):
    model = make_model(seed=5)
    model.params['dec.out.b'] = np.zeros_like(model.params['dec.out.b'])
    model.params['dec.out.b'][EOS_ID] = 50.0
    for hyp in (ie.greedy_decode(model, SRC, TREE, 10), ie.beam_search(model, SRC, TREE, 3, 10)):
        assert hyp.tokens == [EOS_ID] and hyp.finished
        assert hyp.output_ids() == []


def test_zero_max_len_gives_an_empty_hypothesis(make_model):
    model = make_model()
    assert ie.greedy_decode(model, SRC, TREE, 0).tokens == []
    assert ie.beam_search(model, SRC, TREE, 4, 0).tokens == []


def test_empty_source_is_rejected(make_model):
    with pytest.raises(ie.EmptySource):
        ie.greedy_decode(make_model(), (), None, 5)


def test_trace_records_attention(make_model):
    model = make_model(seed=9)
    hyp = ie.greedy_decode(model, SRC, TREE, max_len=4, trace=True)
    assert len(hyp.steps) == len(hyp.tokens)
    # 3 leaves, 2 phrases, eos
    for alpha, beta in hyp.steps:
        assert alpha.shape == (6,)
        assert alpha.sum() == pytest.approx(1.0, abs=1e-12)
        assert 0.0 <= beta <= 1.0
    assert ie.beam_search(model, SRC, TREE, 2, 4, trace=True).steps


def test_translate_corpus_keeps_order(make_model):
    model = make_model(seed=10)
    sources = [(SRC, TREE), ((5, 4), left_branching_tree(['x', 'y'])), ((6,), left_branching_tree(['z']))]
    serial = ie.translate_corpus(model, sources, beam=3, max_len=5)
    threaded = ie.translate_corpus(model, sources, beam=3, max_len=5, threads=3)
    assert [h.tokens for h in serial] == [h.tokens for h in threaded]
    assert len(serial) == 3


def test_hypothesis_text_joins_subwords():
    vocab = Vocab(RESERVED + ('un@@', 'der@@', 'stood', 'it'), 10)
    hyp = ie.Hypothesis([7, 4, 5, 6, EOS_ID], -1.0, True)
    assert ie.hypothesis_text(hyp, vocab) == 'it understood'


def test_bleu_of_identical_corpora_is_one():
    corpus = [['a', 'b', 'c', 'd', 'e'], ['x', 'y'], ['z']]
    assert ie.bleu(corpus, corpus) == 1.0


def test_bleu_clipped_precision():
    score = ie.bleu([['the'] * 4], [['the', 'cat', 'sat', 'down']])
    expected = math.exp((math.log(1 / 4) + math.log(0.5 / 3) + math.log(0.5 / 2) + math.log(0.5 / 1)) / 4)
    assert score == pytest.approx(expected, abs=1e-12)


def test_bleu_short_hypothesis():
    # only unigrams exist; brevity penalty exp(1 - 4/1)
    score = ie.bleu([['the']], [['the', 'cat', 'sat', 'down']])
    assert score == pytest.approx(math.exp(-3.0), abs=1e-12)
    assert ie.bleu([['dog']], [['the', 'cat']]) == 0.0
    assert ie.bleu([[]], [['the']]) == 0.0


def test_bleu_bounds():
    rng = np.random.default_rng(0)
    words = ['a', 'b', 'c', 'd']
    for _ in range(50):
        hyps = [list(rng.choice(words, size=rng.integers(1, 8))) for _ in range(3)]
        refs = [list(rng.choice(words, size=rng.integers(1, 8))) for _ in range(3)]
        assert 0.0 <= ie.bleu(hyps, refs) <= 1.0


def test_bleu_errors():
    with pytest.raises(ie.CountMismatch):
        ie.bleu([['a']], [['a'], ['b']])
    with pytest.raises(EmptyCorpus):
        ie.bleu([], [])


def test_uniform_model_perplexity(make_model):
    model = _flat_output(make_model(tgt_words=50 - len(RESERVED)))
    examples = [Example(0, (), TREE, (), SRC, (4, 9, EOS_ID)),
                Example(1, (), left_branching_tree(['x', 'y']), (), (4, 5), (EOS_ID,))]
    assert ie.perplexity(model, examples) == pytest.approx(50.0, abs=1e-9)
    with pytest.raises(EmptyCorpus):
        ie.perplexity(model, [])


def test_avg_hypothesis_length():
    assert ie.avg_hypothesis_length([['a', 'b'], ['c']]) == 1.5
    assert ie.avg_hypothesis_length([['a', '<eos>']]) == 1.0
    assert ie.avg_hypothesis_length([ie.Hypothesis([4, 5, EOS_ID], -2.0, True)]) == 2.0
    assert ie.avg_hypothesis_length([]) == 0.0
