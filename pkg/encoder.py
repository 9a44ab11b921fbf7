"""Hierarchical source encoder: bidirectional leaf GRU, bottom-up tree-GRU
and side-aware top-down GRU."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from numeric_core import (add, affine, concat, matvec, mul, one_minus, row, rows,
                          sigmoid, stack, tanh, transpose, Var)
from subword import EOS_ID
from syntax_tree import NodeTable, enumerate_nodes
from utils import TreeNMTError, AlignmentMismatch

SIDES = ('left', 'right')


class UnknownTokenId(TreeNMTError, IndexError):
    pass


@dataclass
class EncodedSource:
    leaf_states: list
    phrase_states: list
    eos_state: Optional[Var]
    node_table: Optional[NodeTable]
    root_state: Var
    up_states: Optional[list] = None

    @property
    def num_leaves(self):
        return len(self.leaf_states)


def embed(tape, table_name, token_ids):
    table = tape.params[table_name]
    for i in token_ids:
        if not 0 <= i < table.shape[0]:
            raise UnknownTokenId(f'token id {i} outside {table_name} of size {table.shape[0]}')
    return rows(tape.param(table_name), token_ids)


def gated_update(z, h_prev, candidate):
    return add(mul(one_minus(z), h_prev), mul(z, candidate))


def gru_step(x, h, p):
    """h' = (1 - z) * h + z * tanh(W_h x + U_h (r * h) + b_h)."""
    z = sigmoid(add(affine(p['W_z'], x, p['b_z']), matvec(p['U_z'], h)))
    r = sigmoid(add(affine(p['W_r'], x, p['b_r']), matvec(p['U_r'], h)))
    candidate = tanh(add(affine(p['W_h'], x, p['b_h']), matvec(p['U_h'], mul(r, h))))
    return gated_update(z, h, candidate)


def _run_gru(xs, p, dim, reverse=False):
    tape = p.tape
    h = tape.const(np.zeros(dim))
    out = [None] * len(xs)
    order = range(len(xs) - 1, -1, -1) if reverse else range(len(xs))
    for i in order:
        h = gru_step(xs[i], h, p)
        out[i] = h
    return out


def encode_leaves(token_ids, tape, config):
    if not token_ids:
        raise ValueError('cannot encode an empty token sequence')
    emb = embed(tape, 'enc.emb', token_ids)
    xs = [row(emb, i) for i in range(len(token_ids))]
    forward = _run_gru(xs, tape.scope('enc.fwd'), config.leaf_dim)
    if not config.backward_leaf:
        return forward
    backward = _run_gru(xs, tape.scope('enc.bwd'), config.leaf_dim, reverse=True)
    return [concat(f, b) for f, b in zip(forward, backward)]


def tree_gru_node(h_left, h_right, p):
    z = sigmoid(add(affine(p['UL_z'], h_left, p['b_z']), matvec(p['UR_z'], h_right)))
    r_left = sigmoid(add(affine(p['UL_rl'], h_left, p['b_rl']), matvec(p['UR_rl'], h_right)))
    r_right = sigmoid(add(affine(p['UL_rr'], h_left, p['b_rr']), matvec(p['UR_rr'], h_right)))
    candidate = tanh(add(affine(p['UL_h'], mul(r_left, h_left), p['b_h']),
                         matvec(p['UR_h'], mul(r_right, h_right))))
    return add(mul(z, candidate), mul(one_minus(z), add(h_left, h_right)))


def encode_bottom_up(table, leaf_states, tape):
    """h_up for every node id; leaves start from their leaf annotations."""
    if len(leaf_states) != len(table.leaves):
        raise AlignmentMismatch(f'{len(leaf_states)} leaf states for {len(table.leaves)} leaves')
    p = tape.scope('enc.tree')
    up = list(leaf_states) + [None] * len(table.internals)
    for nid in table.internals:
        left, right = table.children[nid]
        up[nid] = tree_gru_node(up[left], up[right], p)
    return up


def top_down_child(h_child_up, h_parent_down, side, p):
    """A GRU step with input h_up and the parent's h_down as state."""
    if side not in SIDES:
        raise ValueError(f'side must be one of {SIDES}, got {side!r}')
    return gru_step(h_child_up, h_parent_down, p.sub(side))


def encode_top_down(table, up_states, tape):
    p = tape.scope('enc.td')
    down = [None] * len(up_states)
    down[table.root] = up_states[table.root]
    for nid in table.top_down_order():
        for child in table.children[nid]:
            down[child] = top_down_child(up_states[child], down[nid], table.side[child], p)
    n = len(table.leaves)
    return down[:n], down[n:]


def _mean(states):
    tape = states[0].tape
    weights = tape.const(np.full(len(states), 1.0 / len(states)))
    return matvec(transpose(stack(states)), weights)


def encode(token_ids, tree, tape, config):
    token_ids = list(token_ids)
    if config.uses_tree and (tree is None or tree.num_leaves != len(token_ids)):
        leaves = None if tree is None else tree.num_leaves
        raise AlignmentMismatch(f'{len(token_ids)} tokens for a tree with {leaves} leaves')
    states = encode_leaves(token_ids + [EOS_ID], tape, config)
    leaf, eos = states[:-1], states[-1]
    if not config.uses_tree:
        return EncodedSource(leaf, [], eos, None, _mean(leaf))

    table = enumerate_nodes(tree)
    up = encode_bottom_up(table, leaf, tape)
    if config.top_down:
        leaf_final, phrase_final = encode_top_down(table, up, tape)
    else:
        n = len(table.leaves)
        leaf_final, phrase_final = up[:n], up[n:]
    return EncodedSource(leaf_final, phrase_final, eos, table, up[table.root], up)
