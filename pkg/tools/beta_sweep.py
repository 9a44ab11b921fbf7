#!/usr/bin/env python3
"""
Train one model per beta mode and report dev BLEU, perplexity and average
hypothesis length side by side.

Usage:
    python tools/beta_sweep.py --data-dir data/prep --src train.src --tree train.tree \
        --tgt train.tgt --dev-src dev.src --dev-tree dev.tree --dev-tgt dev.tgt
"""
import os
import sys
import argparse
import logging
from dataclasses import dataclass

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from config import build_config, load_config  # noqa: E402
from inference_eval import avg_hypothesis_length, bleu, perplexity, translate_corpus  # noqa: E402
from main import data_paths, load_merges  # noqa: E402
from model import build_model  # noqa: E402
from subword import Vocab  # noqa: E402
from training import load_parallel_corpus, train  # noqa: E402
from utils import TreeNMTError, setup_logging  # noqa: E402

logger = logging.getLogger('beta_sweep')

MODES = ('fixed:0.0', 'fixed:0.5', 'fixed:1.0', 'gating')


@dataclass
class SweepRow:
    mode: str
    bleu: float
    perplexity: float
    avg_length: float


def sweep(train_data, dev_data, base_config, modes=MODES, beam=5, max_len=100):
    rows = []
    sources = [(ex.src_ids, ex.tree) for ex in dev_data]
    refs = [list(ex.tgt_ids[:-1]) for ex in dev_data]
    for mode in modes:
        config = build_config({'beta_mode': mode}, base_config)
        model = build_model(config.model, train_data.src_vocab, train_data.tgt_vocab, seed=config.seed)
        train(model, train_data, config)
        hyps = translate_corpus(model, sources, beam=beam, max_len=max_len, threads=config.threads)
        row = SweepRow(mode, bleu([h.output_ids() for h in hyps], refs),
                       perplexity(model, dev_data.items), avg_hypothesis_length(hyps))
        logger.info('%s: bleu %.4f, perplexity %.3f, length %.2f',
                    mode, row.bleu, row.perplexity, row.avg_length)
        rows.append(row)
    return rows


def format_report(rows, reference_length=None):
    lines = ['mode\tbleu\tperplexity\tavg_length']
    for row in rows:
        lines.append(f'{row.mode}\t{row.bleu:.4f}\t{row.perplexity:.4f}\t{row.avg_length:.2f}')
    if reference_length is not None:
        lines.append(f'# reference avg_length {reference_length:.2f}')
    return lines


def main(argv=None):
    parser = argparse.ArgumentParser(description='beta mode sweep')
    for flag in ('--data-dir', '--src', '--tgt', '--dev-src', '--dev-tgt'):
        parser.add_argument(flag, required=True)
    parser.add_argument('--tree')
    parser.add_argument('--dev-tree')
    parser.add_argument('--config')
    parser.add_argument('--epochs', type=int)
    parser.add_argument('--beam', type=int, default=5)
    parser.add_argument('--modes', default=','.join(MODES))
    args = parser.parse_args(argv)
    setup_logging()
    try:
        overrides = {} if args.epochs is None else {'max_epochs': args.epochs}
        config = load_config(args.config, overrides)
        paths = data_paths(args.data_dir)
        vocabs = (Vocab.load(paths['src_vocab']), Vocab.load(paths['tgt_vocab']))
        merges = load_merges(args.data_dir, config.model.rare_words)
        train_data = load_parallel_corpus(args.src, args.tree, args.tgt, vocabs, merges, config.model,
                                          max_sentence_length=config.max_sentence_length)
        dev_data = load_parallel_corpus(args.dev_src, args.dev_tree, args.dev_tgt, vocabs, merges,
                                        config.model, max_sentence_length=10 ** 6)
        rows = sweep(train_data, dev_data, config, modes=args.modes.split(','), beam=args.beam)
    except (TreeNMTError, OSError, ValueError) as e:
        logger.error('sweep failed: %s', e)
        return 1
    ref_length = avg_hypothesis_length([ex.tgt_ids for ex in dev_data])
    for line in format_report(rows, ref_length):
        print(line)
    return 0


if __name__ == '__main__':
    sys.exit(main())
