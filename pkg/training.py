"""Corpus loading, batching, the AdaDelta epoch loop and checkpoints."""
import os
import time
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

import syntax_tree
from attention_decoder import sequence_nll
from config import ModelConfig
from model import Model, parameter_shapes
from numeric_core import (CheckpointError, MissingParameter, ModelParams, OptState, ShapeMismatch,
                          adadelta_step, backward, read_container, write_container)
from subword import EOS_ID, UNK_ID, Vocab, apply_rare_word_encoding, generalize_tokens, segment_tokens
from utils import TreeNMTError, AlignmentMismatch, read_lines, substream_seed

logger = logging.getLogger(__name__)


class LineCountMismatch(TreeNMTError, ValueError):
    pass


class TreeLeafMismatch(AlignmentMismatch):
    pass


class TrainingError(TreeNMTError):
    def __init__(self, index, cause):
        self.index = index
        self.cause = cause
        super().__init__(f'sentence {index}: {cause}')


@dataclass(frozen=True)
class Example:
    index: int
    src_tokens: tuple
    tree: Optional[syntax_tree.SyntaxTree]
    tgt_tokens: tuple
    src_ids: tuple
    tgt_ids: tuple


@dataclass
class ParallelDataset:
    items: list
    src_vocab: Vocab
    tgt_vocab: Vocab
    dropped: int = 0

    def __len__(self):
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def __getitem__(self, i):
        return self.items[i]


@dataclass
class EpochStats:
    epoch: int
    loss: float
    tokens: int
    seconds: float
    batches: int = 0

    def line(self):
        return f'{self.epoch}\t{self.loss:.6f}\t{self.tokens}\t{self.seconds:.3f}'


def prepare_source(tokens, tree, vocab, merges, config):
    """Generalize, then apply the configured rare-word encoding to one source sentence."""
    tokens = generalize_tokens(tokens)
    if tree is not None:
        tree = syntax_tree.with_leaf_tokens(tree, tokens)
    if config.rare_words == 'tree' and merges is not None and tree is not None:
        tokens, tree = apply_rare_word_encoding(tokens, tree, vocab, merges)
    elif config.rare_words == 'sequential' and merges is not None:
        tokens = segment_tokens(tokens, vocab, merges)
    if not config.uses_tree:
        tree = None
    return tokens, tree


def prepare_target(tokens, vocab, merges):
    tokens = generalize_tokens(tokens)
    if merges is not None:
        tokens = segment_tokens(tokens, vocab, merges)
    return tokens


def _read_trees(tree_path, sources, src_path):
    trees = syntax_tree.read_tree_file(tree_path)
    if len(trees) != len(sources):
        raise LineCountMismatch(f'{src_path} has {len(sources)} lines, {tree_path} has {len(trees)}')
    out = []
    for num, (tree, src) in enumerate(zip(trees, sources), start=1):
        if tree.tokens() != src:
            raise TreeLeafMismatch(f'{tree_path}:{num}: tree leaves {tree.tokens()} != tokens {src}')
        out.append(syntax_tree.binarize(tree))
    return out


def _source_trees(src_path, tree_path, sources, config):
    if tree_path is not None:
        return _read_trees(tree_path, sources, src_path)
    if config.uses_tree:
        raise AlignmentMismatch('the tree encoder needs a tree file')
    return [None] * len(sources)


def load_source_corpus(src_path, tree_path, vocab, merges, config):
    """Source side only (translation input). Returns (tokens, tree, ids) triples."""
    sources = [line.split() for line in read_lines(src_path)]
    out = []
    for tokens, tree in zip(sources, _source_trees(src_path, tree_path, sources, config)):
        tokens, tree = prepare_source(tokens, tree, vocab, merges, config)
        out.append((tokens, tree, tuple(vocab.encode(tokens))))
    return out


def load_parallel_corpus(src_path, tree_path, tgt_path, vocabs, merges, config,
                         max_sentence_length=40):
    src_vocab, tgt_vocab = vocabs
    src_merges, tgt_merges = merges
    sources = [line.split() for line in read_lines(src_path)]
    targets = [line.split() for line in read_lines(tgt_path)]
    if len(sources) != len(targets):
        raise LineCountMismatch(f'{src_path} has {len(sources)} lines, {tgt_path} has {len(targets)}')
    trees = _source_trees(src_path, tree_path, sources, config)

    items, dropped, unknown = [], 0, 0
    for index, (src, tree, tgt) in enumerate(zip(sources, trees, targets)):
        if not src or not tgt or len(src) > max_sentence_length or len(tgt) > max_sentence_length:
            dropped += 1
            continue
        src_tokens, tree = prepare_source(src, tree, src_vocab, src_merges, config)
        tgt_tokens = prepare_target(tgt, tgt_vocab, tgt_merges)
        items.append(Example(
            index=index,
            src_tokens=tuple(src_tokens),
            tree=tree,
            tgt_tokens=tuple(tgt_tokens),
            src_ids=tuple(src_vocab.encode(src_tokens)),
            tgt_ids=tuple(tgt_vocab.encode(tgt_tokens)) + (EOS_ID,),
        ))
        unknown += items[-1].src_ids.count(UNK_ID) + items[-1].tgt_ids.count(UNK_ID)
    if dropped:
        logger.warning('dropped %d of %d sentence pairs (empty or longer than %d tokens)',
                       dropped, len(sources), max_sentence_length)
    if unknown:
        logger.warning('%d tokens outside the vocabularies were replaced by <unk>', unknown)
    logger.info('loaded %d sentence pairs from %s', len(items), src_path)
    return ParallelDataset(items, src_vocab, tgt_vocab, dropped)


def make_batches(items, batch_size, shuffle_seed, epoch):
    if batch_size < 1:
        raise ValueError('batch_size must be >= 1')
    items = list(items)
    order = np.random.default_rng(shuffle_seed ^ epoch).permutation(len(items))
    shuffled = [items[i] for i in order]
    return [shuffled[i:i + batch_size] for i in range(0, len(shuffled), batch_size)]


def example_gradients(model, example, debug=False):
    """Summed NLL, token count and parameter gradients for one sentence pair."""
    tape = model.tape(debug=debug)
    try:
        loss = sequence_nll(model, example.src_ids, example.tree, example.tgt_ids,
                            tape=tape, reduction='sum')
        grads = backward(tape, loss).params()
    except (TreeNMTError, FloatingPointError) as e:
        raise TrainingError(example.index, e) from e
    return float(loss.value[0]), len(example.tgt_ids), grads


def batch_gradients(model, batch, threads=1, debug=False):
    """Gradients summed over the batch and divided by its target token count."""
    if threads > 1 and len(batch) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda ex: example_gradients(model, ex, debug), batch))
    else:
        results = [example_gradients(model, ex, debug) for ex in batch]

    summed, loss_sum, tokens = {}, 0.0, 0
    # merged in batch order regardless of completion order
    for loss, count, grads in results:
        loss_sum += loss
        tokens += count
        for name, g in grads.items():
            summed[name] = g if name not in summed else summed[name] + g
    if tokens:
        summed = {name: g / tokens for name, g in summed.items()}
    return summed, loss_sum, tokens


def train_epoch(model, batches, opt_state, epoch=0, threads=1, debug=False):
    start = time.perf_counter()
    loss_sum, tokens = 0.0, 0
    for batch in batches:
        grads, batch_loss, batch_tokens = batch_gradients(model, batch, threads, debug)
        if grads:
            adadelta_step(model.params, grads, opt_state)
        loss_sum += batch_loss
        tokens += batch_tokens
    mean = loss_sum / tokens if tokens else 0.0
    return EpochStats(epoch, mean, tokens, time.perf_counter() - start, len(batches))


def shuffle_seed_for(config):
    if config.shuffle_seed >= 0:
        return config.shuffle_seed
    return substream_seed(config.seed, 'shuffle')


def train(model, dataset, config, opt_state=None, start_epoch=0, out_dir=None,
          stats_path=None, on_epoch=None):
    opt_state = opt_state or OptState(rho=config.rho, eps=config.eps)
    seed = shuffle_seed_for(config)
    history = []
    for epoch in range(start_epoch, config.max_epochs):
        batches = make_batches(dataset.items, config.batch_size, seed, epoch)
        stats = train_epoch(model, batches, opt_state, epoch=epoch + 1,
                            threads=config.threads, debug=config.debug)
        history.append(stats)
        logger.info('epoch %d: loss %.4f over %d tokens (%.1fs)',
                    stats.epoch, stats.loss, stats.tokens, stats.seconds)
        if stats_path is not None:
            with open(stats_path, 'a', encoding='utf-8') as f:
                f.write(stats.line() + '\n')
        if out_dir is not None and config.checkpoint_every and stats.epoch % config.checkpoint_every == 0:
            save_checkpoint(model, opt_state, os.path.join(out_dir, f'epoch{stats.epoch}.ckpt.npz'),
                            epoch=stats.epoch)
        if on_epoch is not None:
            on_epoch(stats)
    return history, opt_state


# --- checkpoints ---

def save_checkpoint(model, opt_state, path, epoch=0, dtype='float64'):
    arrays = {f'param:{name}': arr for name, arr in model.params.items()}
    opt_meta = None
    if opt_state is not None:
        for name, arr in opt_state.acc_grad.items():
            arrays[f'opt.g:{name}'] = arr
        for name, arr in opt_state.acc_delta.items():
            arrays[f'opt.d:{name}'] = arr
        opt_meta = {'rho': opt_state.rho, 'eps': opt_state.eps, 'steps': opt_state.steps}
    meta = {
        'config': model.config.to_dict(),
        'src_vocab': list(model.src_vocab.tokens),
        'tgt_vocab': list(model.tgt_vocab.tokens),
        'src_vocab_max': model.src_vocab.max_size,
        'tgt_vocab_max': model.tgt_vocab.max_size,
        'epoch': epoch,
        'opt': opt_meta,
        'dtype': dtype,
    }
    write_container(path, arrays, meta, dtype=dtype)
    logger.info('saved checkpoint %s (epoch %d)', path, epoch)


def _check_params(arrays, shapes, path):
    params = ModelParams()
    for name, shape in shapes.items():
        arr = arrays.get(f'param:{name}')
        if arr is None:
            raise MissingParameter(f'{path}: parameter {name!r} missing')
        if arr.shape != tuple(shape):
            raise ShapeMismatch(f'{path}: parameter {name!r} has shape {arr.shape}, expected {tuple(shape)}')
        params[name] = arr
    return params


def load_checkpoint(path):
    """Returns (model, opt_state or None, meta)."""
    meta, arrays = read_container(path)
    try:
        config = ModelConfig.from_dict(meta['config'])
        src_vocab = Vocab(tuple(meta['src_vocab']), meta['src_vocab_max'])
        tgt_vocab = Vocab(tuple(meta['tgt_vocab']), meta['tgt_vocab_max'])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f'{path}: bad metadata: {e}') from e
    params = _check_params(arrays, parameter_shapes(config, len(src_vocab), len(tgt_vocab)), path)
    model = Model(config, params, src_vocab, tgt_vocab)
    opt_state = None
    if meta.get('opt') is not None:
        opt = meta['opt']
        opt_state = OptState(rho=opt['rho'], eps=opt['eps'], steps=opt['steps'])
        for key, arr in arrays.items():
            if key.startswith('opt.g:'):
                opt_state.acc_grad[key[len('opt.g:'):]] = arr
            elif key.startswith('opt.d:'):
                opt_state.acc_delta[key[len('opt.d:'):]] = arr
    return model, opt_state, meta


def restore_params(model, path):
    """Load checkpoint parameters into an existing model of the same shape."""
    _, arrays = read_container(path)
    model.params = _check_params(arrays, model.expected_shapes(), path)
    return model


def resume_state(path):
    model, opt_state, meta = load_checkpoint(path)
    if opt_state is None:
        raise CheckpointError(f'{path}: no optimizer state saved; it can only be used for inference')
    if meta.get('dtype') != 'float64':
        raise CheckpointError(f'{path}: {meta.get("dtype")} checkpoints cannot resume training')
    return model, opt_state, meta.get('epoch', 0)
