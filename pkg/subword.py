"""Vocabularies, token generalization, BPE for rare words and grafting of
left-composed lexical trees onto syntactic trees."""
import re
import logging
from collections import Counter
from dataclasses import dataclass, field

import syntax_tree
from utils import TreeNMTError, AlignmentMismatch, EmptyCorpus, read_lines, write_lines

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = '<pad>', '<bos>', '<eos>', '<unk>'
RESERVED = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(4)

EOW = '</w>'
CONTINUATION = '@@'
SUB_LABEL = '<SUB>'
MERGES_HEADER = '#version: treenmt-bpe-1'

_DATE_RE = re.compile(r'^(\d{1,2}/\d{1,2}/\d{2,4}|\d{4}-\d{2}-\d{2})$')
_TIME_RE = re.compile(r'^\d{1,2}:\d{2}(:\d{2})?$')
_NUMBER_RE = re.compile(r'^\d+([.,]\d+)*$')


class InvalidLeafIndex(TreeNMTError, IndexError):
    pass


@dataclass(frozen=True)
class Vocab:
    tokens: tuple
    max_size: int
    index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if tuple(self.tokens[:4]) != RESERVED:
            raise ValueError(f'reserved tokens must occupy ids 0-3, got {self.tokens[:4]}')
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError('vocabulary contains duplicate tokens')
        if len(self.tokens) > self.max_size:
            raise ValueError(f'vocabulary size {len(self.tokens)} exceeds max_size {self.max_size}')
        object.__setattr__(self, 'index', index)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def id(self, token):
        return self.index.get(token, UNK_ID)

    def token(self, token_id):
        return self.tokens[token_id]

    def encode(self, tokens):
        return [self.id(t) for t in tokens]

    def decode(self, ids):
        return [self.tokens[i] for i in ids]

    def save(self, path):
        write_lines(path, [f'{tok}\t{i}' for i, tok in enumerate(self.tokens)])

    @classmethod
    def load(cls, path, max_size=None):
        pairs = []
        for num, line in enumerate(read_lines(path), start=1):
            if not line:
                continue
            tok, _, raw_id = line.rpartition('\t')
            if not tok or not raw_id.isdigit():
                raise ValueError(f'{path}:{num}: expected `token<TAB>id`')
            pairs.append((int(raw_id), tok))
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise ValueError(f'{path}: ids are not dense from 0')
        tokens = tuple(tok for _, tok in pairs)
        return cls(tokens, max_size or len(tokens))


@dataclass(frozen=True)
class MergeTable:
    merges: tuple = ()
    ranks: dict = field(init=False, repr=False, compare=False, hash=False)
    segments: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        merges = tuple(tuple(p) for p in self.merges)
        object.__setattr__(self, 'merges', merges)
        ranks = {pair: rank for rank, pair in enumerate(merges)}
        if len(ranks) != len(merges):
            raise ValueError('merge table contains duplicate pairs')
        object.__setattr__(self, 'ranks', ranks)
        object.__setattr__(self, 'segments', {})

    def __len__(self):
        return len(self.merges)

    def save(self, path):
        write_lines(path, [MERGES_HEADER] + [f'{left} {right}' for left, right in self.merges])

    @classmethod
    def load(cls, path):
        lines = read_lines(path)
        if not lines or lines[0] != MERGES_HEADER:
            raise ValueError(f'{path}: missing header {MERGES_HEADER!r}')
        merges = []
        for num, line in enumerate(lines[1:], start=2):
            parts = line.split(' ')
            if len(parts) != 2:
                raise ValueError(f'{path}:{num}: expected `left right`')
            merges.append(tuple(parts))
        return cls(tuple(merges))


@dataclass(frozen=True)
class Segmentation:
    word: str
    units: tuple

    def surface(self):
        """Units as emitted text tokens: `@@` on every unit but the last."""
        last = self.units[-1]
        if last.endswith(EOW):
            last = last[:-len(EOW)]
        return [u + CONTINUATION for u in self.units[:-1]] + [last]


def generalize_token(token):
    if _DATE_RE.match(token):
        return '$date'
    if _TIME_RE.match(token):
        return '$time'
    if _NUMBER_RE.match(token):
        return '$number'
    return token


def generalize_tokens(tokens):
    return [generalize_token(t) for t in tokens]


def _word_counts(corpus):
    counts = Counter()
    for sentence in corpus:
        counts.update(t for t in sentence if t not in RESERVED)
    if not counts:
        raise EmptyCorpus('corpus has no tokens')
    return counts


def build_vocab(corpus, max_size):
    if max_size < len(RESERVED):
        raise ValueError(f'max_size must be at least {len(RESERVED)}')
    counts = _word_counts(corpus)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[:max_size - len(RESERVED)]]
    if len(ranked) > len(kept):
        logger.debug('vocabulary keeps %d of %d token types', len(kept), len(ranked))
    return Vocab(RESERVED + tuple(kept), max_size)


def _merge_symbols(symbols, pair, joined):
    out = []
    i = 0
    while i < len(symbols):
        if i < len(symbols) - 1 and symbols[i] == pair[0] and symbols[i + 1] == pair[1]:
            out.append(joined)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def learn_bpe(corpus, num_merges):
    if num_merges < 0:
        raise ValueError('num_merges must be >= 0')
    counts = _word_counts(corpus)
    words = {tuple(w) + (EOW,): c for w, c in counts.items()}
    merges = []
    while len(merges) < num_merges:
        pairs = Counter()
        for symbols, freq in words.items():
            for pair in zip(symbols, symbols[1:]):
                pairs[pair] += freq
        if not pairs:
            break
        best, freq = min(pairs.items(), key=lambda kv: (-kv[1], kv[0]))
        if freq < 2:
            break
        merges.append(best)
        joined = best[0] + best[1]
        words = {_merge_symbols(s, best, joined): f for s, f in words.items()}
    logger.debug('learned %d merges (requested %d)', len(merges), num_merges)
    return MergeTable(tuple(merges))


def segment_word(word, merges):
    """Results are memoized per table in `merges.segments`."""
    seg = merges.segments.get(word)
    if seg is not None:
        return seg
    if not word:
        raise ValueError('cannot segment an empty word')
    symbols = tuple(word) + (EOW,)
    ranks = merges.ranks
    while len(symbols) > 1:
        candidates = [ranks[p] for p in zip(symbols, symbols[1:]) if p in ranks]
        if not candidates:
            break
        pair = merges.merges[min(candidates)]
        symbols = _merge_symbols(symbols, pair, pair[0] + pair[1])
    units = list(symbols)
    if len(units) > 1 and units[-1] == EOW:
        units[-2] += units.pop()
    seg = Segmentation(word, tuple(units))
    merges.segments[word] = seg
    return seg


def segment_tokens(tokens, vocab, merges):
    """Flat rare-word splitting: OOV tokens are replaced by their units."""
    out = []
    for tok in tokens:
        if tok in vocab or tok in RESERVED:
            out.append(tok)
        else:
            out.extend(segment_word(tok, merges).surface())
    return out


def graft_lexical_tree(tree, leaf_index, units):
    n = tree.num_leaves
    if not 1 <= leaf_index <= n:
        raise InvalidLeafIndex(f'leaf index {leaf_index} outside 1..{n}')
    if len(units) < 2:
        return tree
    return syntax_tree.build_tree(_graft(tree.root, leaf_index, units))


def _graft(node, leaf_index, units):
    if node.is_leaf:
        if node.span != (leaf_index, leaf_index):
            return node
        acc = syntax_tree.make_leaf(units[0], SUB_LABEL)
        for unit in units[1:-1]:
            acc = syntax_tree.make_node(SUB_LABEL, (acc, syntax_tree.make_leaf(unit, SUB_LABEL)))
        return syntax_tree.make_node(node.label, (acc, syntax_tree.make_leaf(units[-1], SUB_LABEL)))
    lo, hi = node.span
    if not lo <= leaf_index <= hi:
        return node
    return syntax_tree.make_node(node.label, [_graft(c, leaf_index, units) for c in node.children])


def apply_rare_word_encoding(sentence, tree, vocab, merges):
    if tree.tokens() != list(sentence):
        raise AlignmentMismatch(
            f'tree leaves {tree.tokens()} do not match sentence {list(sentence)}')
    tokens = list(sentence)
    # right to left, so earlier leaf indices stay valid
    for pos in range(len(tokens), 0, -1):
        tok = tokens[pos - 1]
        if tok in vocab or tok in RESERVED:
            continue
        units = segment_word(tok, merges).surface()
        if len(units) < 2:
            continue
        tree = graft_lexical_tree(tree, pos, units)
        tokens[pos - 1:pos] = units
    return tokens, tree


def detokenize(tokens):
    text = ' '.join(tokens)
    text = text.replace(CONTINUATION + ' ', '')
    if text.endswith(CONTINUATION):
        text = text[:-len(CONTINUATION)]
    return text


def type_count(corpus):
    return len({t for sentence in corpus for t in sentence})


def compress_corpus(corpus, max_size, num_merges):
    """Build the word vocabulary, learn BPE over the words it leaves out, and
    rebuild the vocabulary over the segmented corpus.

    Returns (vocab, merges, segmented corpus).
    """
    word_vocab = build_vocab(corpus, max_size)
    rare = [[t for t in sentence if t not in word_vocab and t not in RESERVED] for sentence in corpus]
    merges = learn_bpe(rare, num_merges) if any(rare) else MergeTable()
    segmented = [segment_tokens(sentence, word_vocab, merges) for sentence in corpus]
    vocab = build_vocab(segmented, max_size)
    logger.info('%d rare word types split with %d merges; vocabulary %d',
                len({t for s in rare for t in s}), len(merges), len(vocab))
    return vocab, merges, segmented


def effective_type_count(corpus, vocab):
    """Distinct tokens once everything outside `vocab` becomes <unk>."""
    return len({t if t in vocab else UNK for sentence in corpus for t in sentence})
