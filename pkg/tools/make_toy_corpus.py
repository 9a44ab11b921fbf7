#!/usr/bin/env python3
"""
Write a synthetic copy or reordering corpus (source, tree, target files).

Usage:
    python tools/make_toy_corpus.py copy data/toy/train --pairs 50 --vocab 20
"""
import os
import sys
import argparse

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

import synthetic  # noqa: E402
from utils import setup_logging  # noqa: E402


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument('task', choices=synthetic.TASKS)
    parser.add_argument('prefix', help='output path prefix; .src/.tree/.tgt are appended')
    parser.add_argument('--pairs', type=int, default=50)
    parser.add_argument('--vocab', type=int, default=20)
    parser.add_argument('--min-len', type=int, default=3)
    parser.add_argument('--max-len', type=int, default=8)
    parser.add_argument('--seed', type=int, default=1)
    args = parser.parse_args(argv)
    setup_logging()
    pairs = synthetic.make_corpus(args.task, args.pairs, vocab_size=args.vocab,
                                  min_len=args.min_len, max_len=args.max_len, seed=args.seed)
    for ext, path in synthetic.write_corpus(args.prefix, pairs).items():
        print(f'{ext}={path}')
    return 0


if __name__ == '__main__':
    sys.exit(main())
