"""Tree-based attention with the weighted (beta) context, the input-feeding
GRU decoder and the output distribution."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from encoder import embed, encode, gru_step
from numeric_core import (Var, add, addrow, affine, concat, matmul, matvec, mix, nll, row,
                          scale, sigmoid, softmax, stack, take, tanh, total, transpose)
from subword import BOS_ID, EOS_ID
from utils import TreeNMTError


class EmptyTarget(TreeNMTError, ValueError):
    pass


@dataclass
class AttentionMemory:
    """Per-sentence annotations, stacked once and reused by every step.

    Node order: leaves left to right, internals bottom-up, then eos.
    """
    num_leaves: int
    num_phrases: int
    has_eos: bool
    projected: Var             # annotations @ W_a^T, one row per node
    lexical_t: Var             # (d, leaves [+ eos])
    phrasal_t: Optional[Var]   # (d, internals)
    dim: int

    @property
    def num_nodes(self):
        return self.num_leaves + self.num_phrases + int(self.has_eos)


@dataclass
class DecoderStep:
    s: Var
    d_ctx: Var
    c: Var
    beta: Optional[Var]
    alpha: Var
    logits: Var

    @property
    def beta_value(self):
        return None if self.beta is None else float(self.beta.value[0])


def annotation_list(encoded, config):
    nodes = list(encoded.leaf_states) + list(encoded.phrase_states)
    if config.attend_eos:
        nodes.append(encoded.eos_state)
    return nodes


def prepare_memory(encoded, tape, config):
    nodes = annotation_list(encoded, config)
    projected = matmul(stack(nodes), transpose(tape.param('att.W')))
    lexical = list(encoded.leaf_states) + ([encoded.eos_state] if config.attend_eos else [])
    phrasal_t = transpose(stack(encoded.phrase_states)) if encoded.phrase_states else None
    return AttentionMemory(
        num_leaves=len(encoded.leaf_states),
        num_phrases=len(encoded.phrase_states),
        has_eos=config.attend_eos,
        projected=projected,
        lexical_t=transpose(stack(lexical)),
        phrasal_t=phrasal_t,
        dim=nodes[0].shape[0],
    )


def attention_scores(s, memory, tape):
    """e_t = V_a . tanh(U_a s + W_a h_t + b_a), one score per memory node."""
    p = tape.scope('att')
    return matvec(tanh(addrow(memory.projected, affine(p['U'], s, p['b']))), p['V'])


def attention_weights(scores):
    # one normalization across leaves and phrases together
    return softmax(scores)


def gating_scalar(c_prev, tape):
    p = tape.scope('att.gate')
    return sigmoid(affine(p['W'], c_prev, p['b']))


def context_vector(alpha, beta_mode, beta, memory):
    tape = alpha.tape
    n, k = memory.num_leaves, memory.num_phrases
    alpha_lex = take(alpha, 0, n)
    if memory.has_eos:
        alpha_lex = concat(alpha_lex, take(alpha, n + k, n + k + 1))
    lexical = matvec(memory.lexical_t, alpha_lex)
    if k:
        phrasal = matvec(memory.phrasal_t, take(alpha, n, n + k))
    else:
        phrasal = tape.const(np.zeros(memory.dim))
    if beta_mode.kind == 'unweighted':
        return add(lexical, phrasal)
    if beta is None:
        beta = tape.const([beta_mode.value])
    return mix(beta, lexical, phrasal)


def init_decoder_state(encoded, tape, config):
    p = tape.scope('dec.init')
    s0 = tanh(affine(p['W'], encoded.root_state, p['b']))
    c0 = tape.const(np.zeros(config.comp_dim))
    return s0, c0


def decoder_step(y_prev, s_prev, c_prev, memory, tape, config, y_emb=None):
    if y_emb is None:
        y_emb = row(embed(tape, 'dec.emb', [y_prev]), 0)
    p = tape.scope('dec')
    s = gru_step(concat(y_emb, c_prev), s_prev, p.sub('gru'))
    alpha = attention_weights(attention_scores(s, memory, tape))
    beta = None
    if config.beta_mode.kind == 'gating':
        beta = gating_scalar(c_prev, tape)
    elif config.beta_mode.kind == 'fixed':
        beta = tape.const([config.beta_mode.value])
    d_ctx = context_vector(alpha, config.beta_mode, beta, memory)
    c = tanh(affine(p['comp.W'], concat(s, d_ctx), p['comp.b']))
    logits = affine(p['out.W'], c, p['out.b'])
    return DecoderStep(s=s, d_ctx=d_ctx, c=c, beta=beta, alpha=alpha, logits=logits)


def sequence_nll(model, src_ids, tree, tgt_ids, tape=None, reduction='mean'):
    """Negative log-likelihood of `tgt_ids` (ending in <eos>) under teacher forcing."""
    tgt_ids = list(tgt_ids)
    if not tgt_ids:
        raise EmptyTarget('target sequence is empty')
    if tgt_ids[-1] != EOS_ID:
        raise ValueError('target sequence must end with <eos>')
    tape = tape if tape is not None else model.tape()
    config = model.config
    encoded = encode(src_ids, tree, tape, config)
    memory = prepare_memory(encoded, tape, config)
    s, c = init_decoder_state(encoded, tape, config)
    inputs = [BOS_ID] + tgt_ids[:-1]
    emb = embed(tape, 'dec.emb', inputs)
    losses = []
    for j, (y_prev, y) in enumerate(zip(inputs, tgt_ids)):
        step = decoder_step(y_prev, s, c, memory, tape, config, y_emb=row(emb, j))
        losses.append(nll(step.logits, y))
        s, c = step.s, step.c
    loss = total(concat(*losses))
    if reduction == 'mean':
        return scale(loss, 1.0 / len(tgt_ids))
    return loss


def node_names(table, num_leaves, config):
    """Column names for trace files, in attention node order."""
    names = []
    if table is None:
        names.extend(f'w{i + 1}' for i in range(num_leaves))
    else:
        for nid in table.leaves + table.internals:
            i, j = table.nodes[nid].span
            names.append(f'w{i}' if i == j else f'p{i}-{j}')
    if config.attend_eos:
        names.append('<eos>')
    return names


def format_trace(sentence_index, names, tokens, steps):
    """One trace block: a header, then `step  token  beta  alpha...` per step."""
    lines = [f'# sentence {sentence_index}', '\t'.join(['step', 'token', 'beta'] + names)]
    for j, (token, (alpha, beta)) in enumerate(zip(tokens, steps)):
        beta_text = '-' if beta is None else f'{beta:.6f}'
        lines.append('\t'.join([str(j), token, beta_text] + [f'{a:.6f}' for a in alpha]))
    return lines
