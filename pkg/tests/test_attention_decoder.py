import math

import numpy as np
import pytest

import attention_decoder as ad
from config import BetaMode, ModelConfig
from encoder import EncodedSource, encode
from numeric_core import ModelParams, Tape
from subword import EOS_ID
from syntax_tree import enumerate_nodes, parse_bracketed

D = 8


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _attention_arrays(rng, gating=True):
    arrays = {
        'att.V': rng.normal(size=D),
        'att.U': rng.normal(scale=0.5, size=(D, D)),
        'att.W': rng.normal(scale=0.5, size=(D, D)),
        'att.b': rng.normal(size=D),
    }
    if gating:
        arrays['att.gate.W'] = rng.normal(size=(1, D))
        arrays['att.gate.b'] = rng.normal(size=1)
    return arrays


def _annotations(rng, leaves=3, phrases=2):
    arrays = {f'in.leaf{i}': rng.normal(size=D) for i in range(leaves)}
    arrays.update({f'in.phrase{i}': rng.normal(size=D) for i in range(phrases)})
    arrays['in.eos'] = rng.normal(size=D)
    return arrays


def _encoded(tape, leaves=3, phrases=2):
    leaf = [tape.param(f'in.leaf{i}') for i in range(leaves)]
    phrase = [tape.param(f'in.phrase{i}') for i in range(phrases)]
    root = phrase[-1] if phrase else leaf[0]
    return EncodedSource(leaf, phrase, tape.param('in.eos'), None, root)


def _config(beta_mode='gating', attend_eos=True):
    return ModelConfig(d_emb=6, d_hidden=D, beta_mode=BetaMode.parse(beta_mode), attend_eos=attend_eos)


def test_attention_and_gating_gradients(cell_check):
    rng = np.random.default_rng(0)
    config = _config()
    for draw in range(20):
        arrays = {**_attention_arrays(rng), **_annotations(rng)}
        arrays['in.s'] = rng.normal(size=D)
        arrays['in.c'] = rng.normal(size=D)

        def build(tape):
            memory = ad.prepare_memory(_encoded(tape), tape, config)
            alpha = ad.attention_weights(ad.attention_scores(tape.param('in.s'), memory, tape))
            beta = ad.gating_scalar(tape.param('in.c'), tape)
            return ad.context_vector(alpha, config.beta_mode, beta, memory)

        assert cell_check(arrays, build, seed=draw) < 1e-4


def test_decoder_step_gradients(make_model, cell_check):
    rng = np.random.default_rng(1)
    for draw in range(20):
        model = make_model(tgt_words=3, seed=draw)
        config = model.config
        arrays = {name: arr for name, arr in model.params.items()
                  if name.startswith(('dec.', 'att.')) and not name.startswith('dec.init')}
        # non-zero biases so their gradients are checked away from the origin
        for name in arrays:
            if name.rsplit('.', 1)[-1].startswith('b'):
                arrays[name] = rng.normal(scale=0.1, size=arrays[name].shape)
        arrays.update(_annotations(rng))
        arrays['in.s'] = rng.normal(scale=0.5, size=D)
        arrays['in.c'] = rng.normal(scale=0.5, size=D)

        def build(tape):
            memory = ad.prepare_memory(_encoded(tape), tape, config)
            step = ad.decoder_step(5, tape.param('in.s'), tape.param('in.c'), memory, tape, config)
            return step.logits

        assert cell_check(arrays, build, seed=draw) < 1e-4


def test_attention_scores_match_formula():
    rng = np.random.default_rng(2)
    config = _config()
    for _ in range(100):
        arrays = {**_attention_arrays(rng), **_annotations(rng)}
        tape = Tape(ModelParams(arrays))
        memory = ad.prepare_memory(_encoded(tape), tape, config)
        s = rng.normal(size=D)
        got = ad.attention_scores(tape.const(s), memory, tape).value

        nodes = [arrays[f'in.leaf{i}'] for i in range(3)] + \
                [arrays[f'in.phrase{i}'] for i in range(2)] + [arrays['in.eos']]
        expected = [arrays['att.V'] @ np.tanh(arrays['att.U'] @ s + arrays['att.W'] @ h + arrays['att.b'])
                    for h in nodes]
        np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)


def test_gating_scalar_matches_formula():
    rng = np.random.default_rng(3)
    for _ in range(100):
        arrays = _attention_arrays(rng)
        tape = Tape(ModelParams(arrays))
        c = rng.normal(size=D)
        got = ad.gating_scalar(tape.const(c), tape).value
        expected = _sigmoid(arrays['att.gate.W'] @ c + arrays['att.gate.b'])
        np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)
        assert 0.0 < got[0] < 1.0


def _context_setup(rng, beta_mode):
    config = _config(beta_mode)
    arrays = {**_attention_arrays(rng, gating=False), **_annotations(rng)}
    tape = Tape(ModelParams(arrays))
    memory = ad.prepare_memory(_encoded(tape), tape, config)
    alpha = ad.attention_weights(ad.attention_scores(tape.const(rng.normal(size=D)), memory, tape))
    a = alpha.value
    leaves = [arrays[f'in.leaf{i}'] for i in range(3)] + [arrays['in.eos']]
    phrases = [arrays[f'in.phrase{i}'] for i in range(2)]
    lexical = memory.lexical_t.value @ np.concatenate([a[:3], a[5:]])
    phrasal = memory.phrasal_t.value @ a[3:5]
    return config, memory, alpha, lexical, phrasal, leaves, phrases


def test_context_vector_matches_formula():
    rng = np.random.default_rng(4)
    for _ in range(100):
        beta = rng.random()
        config, memory, alpha, _, _, leaves, phrases = _context_setup(rng, f'fixed:{beta}')
        a = alpha.value
        got = ad.context_vector(alpha, config.beta_mode, None, memory).value
        lex = sum(w * h for w, h in zip(np.concatenate([a[:3], a[5:]]), leaves))
        phr = sum(w * h for w, h in zip(a[3:5], phrases))
        np.testing.assert_allclose(got, (1 - config.beta_mode.value) * lex + config.beta_mode.value * phr,
                                   rtol=0, atol=1e-12)


def test_beta_mode_reductions_are_exact():
    rng = np.random.default_rng(5)
    for _ in range(50):
        config, memory, alpha, lexical, phrasal, _, _ = _context_setup(rng, 'fixed:0.0')
        assert np.array_equal(ad.context_vector(alpha, config.beta_mode, None, memory).value, lexical)
        one = BetaMode.parse('fixed:1.0')
        assert np.array_equal(ad.context_vector(alpha, one, None, memory).value, phrasal)
        half = ad.context_vector(alpha, BetaMode.parse('fixed:0.5'), None, memory).value
        unweighted = ad.context_vector(alpha, BetaMode('unweighted'), None, memory).value
        assert np.array_equal(half, 0.5 * unweighted)


def test_attention_normalizes_over_all_nodes():
    rng = np.random.default_rng(6)
    for attend_eos in (True, False):
        config = _config(attend_eos=attend_eos)
        tape = Tape(ModelParams({**_attention_arrays(rng), **_annotations(rng)}))
        memory = ad.prepare_memory(_encoded(tape), tape, config)
        alpha = ad.attention_weights(ad.attention_scores(tape.const(rng.normal(size=D)), memory, tape))
        assert alpha.shape == (6 if attend_eos else 5,)
        assert abs(alpha.value.sum() - 1.0) < 1e-9
        assert (alpha.value > 0).all()


def test_parameter_sets_depend_on_beta_mode(make_model):
    gating = make_model('gating')
    fixed = make_model('fixed:0.5')
    assert 'att.gate.W' in gating.params and 'att.gate.b' in gating.params
    assert 'att.gate.W' not in fixed.params
    assert set(gating.params) - set(fixed.params) == {'att.gate.W', 'att.gate.b'}


def test_uniform_model_loss_is_log_vocab(make_model):
    model = make_model(tgt_words=46)
    model.params['dec.out.W'] = np.zeros_like(model.params['dec.out.W'])
    model.params['dec.out.b'] = np.zeros_like(model.params['dec.out.b'])
    tree = parse_bracketed('(S a (X b c))')
    loss = ad.sequence_nll(model, [4, 5, 6], tree, [7, 8, EOS_ID])
    assert abs(loss.value[0] - math.log(50)) < 1e-12
    total = ad.sequence_nll(model, [4, 5, 6], tree, [7, 8, EOS_ID], reduction='sum')
    assert abs(total.value[0] - 3 * math.log(50)) < 1e-12


def test_sequence_nll_contracts(make_model):
    model = make_model()
    tree = parse_bracketed('(S a b)')
    with pytest.raises(ad.EmptyTarget):
        ad.sequence_nll(model, [4, 5], tree, [])
    with pytest.raises(ValueError):
        ad.sequence_nll(model, [4, 5], tree, [4, 5])


def test_gating_beta_stays_in_unit_interval(make_model):
    model = make_model('gating')
    tree = parse_bracketed('(S (NP a b) c)')
    tape = model.tape()
    encoded = encode([4, 5, 6], tree, tape, model.config)
    memory = ad.prepare_memory(encoded, tape, model.config)
    s, c = ad.init_decoder_state(encoded, tape, model.config)
    for y in (1, 4, 5, 6):
        step = ad.decoder_step(y, s, c, memory, tape, model.config)
        assert 0.0 < step.beta_value < 1.0
        assert abs(step.alpha.value.sum() - 1.0) < 1e-9
        s, c = step.s, step.c


def test_trace_format():
    config = _config()
    table = enumerate_nodes(parse_bracketed('(S (NP a b) c)'))
    names = ad.node_names(table, 3, config)
    assert names == ['w1', 'w2', 'w3', 'p1-2', 'p1-3', '<eos>']
    lines = ad.format_trace(1, names, ['x', '<eos>'],
                            [([0.5, 0.5, 0, 0, 0, 0], 0.25), ([1, 0, 0, 0, 0, 0], None)])
    assert lines[0] == '# sentence 1'
    assert lines[1] == 'step\ttoken\tbeta\tw1\tw2\tw3\tp1-2\tp1-3\t<eos>'
    assert lines[2].split('\t')[:4] == ['0', 'x', '0.250000', '0.500000']
    assert lines[3].split('\t')[2] == '-'
    assert ad.node_names(None, 2, _config(attend_eos=False)) == ['w1', 'w2']
