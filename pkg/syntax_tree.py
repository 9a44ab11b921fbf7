"""Bracketed constituency trees: parsing, binarization, serialization and
node indexing for the bottom-up / top-down encoder passes.

Spans are 1-based and inclusive. Trees are immutable once built.
"""
import re
import logging
from dataclasses import dataclass, field
from typing import Optional

from utils import TreeNMTError

logger = logging.getLogger(__name__)

BIN_LABEL = '<BIN>'

_TOKEN_RE = re.compile(r'\(|\)|[^\s()]+')
_ESCAPES = {'(': '-LRB-', ')': '-RRB-'}
_UNESCAPES = {v: k for k, v in _ESCAPES.items()}


class TreeParseError(TreeNMTError, ValueError):
    pass


class UnbalancedBrackets(TreeParseError):
    pass


class EmptyNode(TreeParseError):
    pass


class MultipleRoots(TreeParseError):
    pass


class NonBinaryTree(TreeNMTError, ValueError):
    pass


@dataclass(frozen=True)
class TreeNode:
    span: tuple
    label: Optional[str] = None
    children: tuple = ()
    token: Optional[str] = None

    @property
    def is_leaf(self):
        return self.token is not None


@dataclass(frozen=True)
class SyntaxTree:
    root: TreeNode

    def leaves(self):
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend(reversed(node.children))
        return out

    def tokens(self):
        return [leaf.token for leaf in self.leaves()]

    @property
    def num_leaves(self):
        return self.root.span[1]

    def is_binary(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            if not node.is_leaf:
                if len(node.children) != 2:
                    return False
                stack.extend(node.children)
        return True

    def __str__(self):
        return serialize(self)


@dataclass
class NodeTable:
    """Flat index over a binary tree.

    Node ids: leaves are 0..N-1 left to right, internals N..2N-2 in
    bottom-up (post-order) order, so the id order is also the attention
    order (leaves, then internals bottom-up).
    """
    nodes: list
    leaves: list
    internals: list
    children: dict = field(default_factory=dict)
    parent: dict = field(default_factory=dict)
    side: dict = field(default_factory=dict)

    @property
    def root(self):
        return self.internals[-1] if self.internals else self.leaves[0]

    def top_down_order(self):
        return list(reversed(self.internals))


def escape_token(token):
    return _ESCAPES.get(token, token)


def unescape_token(token):
    return _UNESCAPES.get(token, token)


def make_leaf(token, label=None):
    return TreeNode(span=(1, 1), label=label, token=token)


def make_node(label, children):
    return TreeNode(span=(1, 1), label=label, children=tuple(children))


def _respan(node, start):
    if node.is_leaf:
        return TreeNode(span=(start, start), label=node.label, token=node.token), start + 1
    children = []
    pos = start
    for child in node.children:
        new_child, pos = _respan(child, pos)
        children.append(new_child)
    return TreeNode(span=(start, pos - 1), label=node.label, children=tuple(children)), pos


def build_tree(root):
    """Wrap a node structure as a SyntaxTree, re-indexing every span."""
    if root.is_leaf and root.label is None:
        raise TreeParseError(f'single-leaf tree {root.token!r} needs a label')
    new_root, _ = _respan(root, 1)
    return SyntaxTree(new_root)


def parse_bracketed(text):
    tokens = _TOKEN_RE.findall(text)
    if not tokens:
        raise EmptyNode('empty tree string')
    if tokens[0] != '(':
        raise TreeParseError(f'tree must start with "(", got {tokens[0]!r}')

    stack = []
    root = None
    for tok in tokens:
        if root is not None:
            if tok == ')':
                raise UnbalancedBrackets(f'unmatched ")" in {text!r}')
            raise MultipleRoots(f'unexpected {tok!r} after the root node closed: {text!r}')
        if tok == '(':
            stack.append([None, [], True])  # label, items, expecting label
        elif tok == ')':
            if not stack:
                raise UnbalancedBrackets(f'unmatched ")" in {text!r}')
            label, items, _ = stack.pop()
            node = _close_node(label, items, text)
            if stack:
                stack[-1][1].append(node)
                stack[-1][2] = False
            else:
                root = node
        else:
            if not stack:
                raise MultipleRoots(f'token {tok!r} outside the root node')
            frame = stack[-1]
            if frame[2] and not frame[1]:
                frame[0] = tok
                frame[2] = False
            else:
                frame[1].append(unescape_token(tok))
    if stack:
        raise UnbalancedBrackets(f'{len(stack)} unclosed "(" in {text!r}')
    return build_tree(root)


def _close_node(label, items, text):
    if not items:
        raise EmptyNode(f'node {label!r} has no children and no token in {text!r}')
    if len(items) == 1 and isinstance(items[0], str):
        return make_leaf(items[0], label)
    children = [make_leaf(it) if isinstance(it, str) else it for it in items]
    return make_node(label, children)


def serialize(tree):
    node = tree.root if isinstance(tree, SyntaxTree) else tree
    return _serialize_node(node)


def _serialize_node(node):
    if node.is_leaf:
        tok = escape_token(node.token)
        if node.label is None:
            return tok
        return f'({node.label} {tok})'
    inner = ' '.join(_serialize_node(c) for c in node.children)
    if node.label is None:
        return f'({inner})'
    return f'({node.label} {inner})'


def binarize(tree):
    return build_tree(_binarize_node(tree.root))


def _binarize_node(node):
    if node.is_leaf:
        return node
    children = [_binarize_node(c) for c in node.children]
    if len(children) == 1:
        return children[0]
    acc = children[0]
    for child in children[1:-1]:
        acc = make_node(BIN_LABEL, (acc, child))
    return make_node(node.label, (acc, children[-1]))


def enumerate_nodes(tree):
    if not tree.is_binary():
        raise NonBinaryTree(f'tree is not binary: {serialize(tree)}')
    leaves, post = [], []

    def visit(node):
        if node.is_leaf:
            leaves.append(node)
            return
        for child in node.children:
            visit(child)
        post.append(node)

    visit(tree.root)
    n = len(leaves)
    nodes = list(leaves) + post
    index = {id(node): i for i, node in enumerate(nodes)}
    table = NodeTable(nodes=nodes, leaves=list(range(n)), internals=list(range(n, n + len(post))))
    for nid in table.internals:
        left, right = (index[id(c)] for c in nodes[nid].children)
        table.children[nid] = (left, right)
        table.parent[left] = table.parent[right] = nid
        table.side[left], table.side[right] = 'left', 'right'
    return table


def read_tree_file(path):
    trees = []
    with open(path, 'r', encoding='utf-8') as f:
        for num, line in enumerate(f, start=1):
            line = line.strip()
            try:
                trees.append(parse_bracketed(line))
            except TreeParseError as e:
                raise type(e)(f'{path}:{num}: {e}') from e
    logger.debug('read %d trees from %s', len(trees), path)
    return trees


def with_leaf_tokens(tree, tokens):
    """Same tree shape and labels with the leaf tokens replaced in order."""
    tokens = list(tokens)
    if len(tokens) != tree.num_leaves:
        raise ValueError(f'{len(tokens)} tokens for a tree with {tree.num_leaves} leaves')
    it = iter(tokens)

    def relabel(node):
        if node.is_leaf:
            return TreeNode(span=node.span, label=node.label, token=next(it))
        return TreeNode(span=node.span, label=node.label,
                        children=tuple(relabel(c) for c in node.children))

    return SyntaxTree(relabel(tree.root))
