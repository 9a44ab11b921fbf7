import logging
from dataclasses import dataclass

import numpy as np

from numeric_core import ModelParams, init_params, Tape
from utils import substream_seed

logger = logging.getLogger(__name__)

TREE_GATES = ('UL_z', 'UR_z', 'b_z', 'UL_rl', 'UR_rl', 'b_rl',
              'UL_rr', 'UR_rr', 'b_rr', 'UL_h', 'UR_h', 'b_h')


def _gru_shapes(prefix, d_in, d_state):
    shapes = {}
    for gate in 'zrh':
        shapes[f'{prefix}.W_{gate}'] = (d_state, d_in)
        shapes[f'{prefix}.U_{gate}'] = (d_state, d_state)
        shapes[f'{prefix}.b_{gate}'] = (d_state,)
    return shapes


def parameter_shapes(config, src_vocab_size, tgt_vocab_size):
    """Every parameter name and shape the configuration needs, in canonical order."""
    d, e = config.d_hidden, config.d_emb
    a, dc = config.att_dim, config.comp_dim
    shapes = {'enc.emb': (src_vocab_size, e)}
    shapes.update(_gru_shapes('enc.fwd', e, config.leaf_dim))
    if config.backward_leaf:
        shapes.update(_gru_shapes('enc.bwd', e, config.leaf_dim))
    if config.uses_tree:
        for name in TREE_GATES:
            shapes[f'enc.tree.{name}'] = (d,) if name.startswith('b_') else (d, d)
        if config.top_down:
            shapes.update(_gru_shapes('enc.td.left', d, d))
            shapes.update(_gru_shapes('enc.td.right', d, d))
    shapes.update({
        'att.V': (a,),
        'att.U': (a, d),
        'att.W': (a, d),
        'att.b': (a,),
    })
    if config.beta_mode.kind == 'gating':
        shapes['att.gate.W'] = (1, dc)
        shapes['att.gate.b'] = (1,)
    shapes['dec.emb'] = (tgt_vocab_size, e)
    shapes.update(_gru_shapes('dec.gru', e + dc, d))
    shapes.update({
        'dec.comp.W': (dc, 2 * d),
        'dec.comp.b': (dc,),
        'dec.out.W': (tgt_vocab_size, dc),
        'dec.out.b': (tgt_vocab_size,),
        'dec.init.W': (d, d),
        'dec.init.b': (d,),
    })
    return shapes


def _is_bias(name):
    return name.rsplit('.', 1)[-1].startswith('b')


def init_model_params(shapes, seed):
    params = ModelParams()
    for name, shape in shapes.items():
        if _is_bias(name):
            params[name] = np.zeros(shape)
        elif len(shape) == 1:
            params[name] = init_params((1, shape[0]), substream_seed(seed, f'init:{name}'))[0]
        else:
            params[name] = init_params(shape, substream_seed(seed, f'init:{name}'))
    return params


@dataclass
class Model:
    config: object
    params: ModelParams
    src_vocab: object
    tgt_vocab: object

    def tape(self, record=True, debug=False):
        return Tape(self.params, record=record, debug=debug)

    def expected_shapes(self):
        return parameter_shapes(self.config, len(self.src_vocab), len(self.tgt_vocab))


def build_model(config, src_vocab, tgt_vocab, seed=1):
    shapes = parameter_shapes(config, len(src_vocab), len(tgt_vocab))
    model = Model(config, init_model_params(shapes, seed), src_vocab, tgt_vocab)
    logger.info('built model with %d parameters (%s encoder, beta %s)',
                count_parameters(model), config.encoder, config.beta_mode)
    return model


def count_parameters(model):
    return model.params.count()
