"""Synthetic parallel corpora with trees: a copy task and a reversal
(reordering) task over a closed word list."""
import os
import logging
from dataclasses import dataclass

import numpy as np

from syntax_tree import SyntaxTree, build_tree, make_leaf, make_node, serialize
from utils import write_lines

logger = logging.getLogger(__name__)

TASKS = ('copy', 'reorder')


@dataclass(frozen=True)
class SyntheticPair:
    src: tuple
    tree: SyntaxTree
    tgt: tuple


def word_list(vocab_size):
    return [f'w{i}' for i in range(vocab_size)]


def left_branching_tree(tokens, label='S', leaf_label='W'):
    if not tokens:
        raise ValueError('cannot build a tree over no tokens')
    acc = make_leaf(tokens[0], leaf_label)
    for tok in tokens[1:]:
        acc = make_node(label, (acc, make_leaf(tok, leaf_label)))
    return build_tree(acc)


def random_sentences(count, vocab_size, min_len, max_len, seed):
    if not 1 <= min_len <= max_len:
        raise ValueError('need 1 <= min_len <= max_len')
    rng = np.random.default_rng(seed)
    words = word_list(vocab_size)
    out = []
    for _ in range(count):
        length = int(rng.integers(min_len, max_len + 1))
        out.append(tuple(words[i] for i in rng.integers(0, vocab_size, size=length)))
    return out


def make_corpus(task, num_pairs, vocab_size=20, min_len=3, max_len=8, seed=1):
    if task not in TASKS:
        raise ValueError(f'task must be one of {TASKS}')
    pairs = []
    for src in random_sentences(num_pairs, vocab_size, min_len, max_len, seed):
        tgt = src if task == 'copy' else tuple(reversed(src))
        pairs.append(SyntheticPair(src, left_branching_tree(list(src)), tgt))
    return pairs


def copy_corpus(num_pairs, **kwargs):
    return make_corpus('copy', num_pairs, **kwargs)


def write_corpus(prefix, pairs):
    """Write `<prefix>.src`, `<prefix>.tree` and `<prefix>.tgt`; returns the paths."""
    directory = os.path.dirname(prefix)
    if directory:
        os.makedirs(directory, exist_ok=True)
    paths = {ext: f'{prefix}.{ext}' for ext in ('src', 'tree', 'tgt')}
    write_lines(paths['src'], [' '.join(p.src) for p in pairs])
    write_lines(paths['tree'], [serialize(p.tree) for p in pairs])
    write_lines(paths['tgt'], [' '.join(p.tgt) for p in pairs])
    logger.info('wrote %d pairs to %s.*', len(pairs), prefix)
    return paths
