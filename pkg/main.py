"""treenmt command line: preprocess, train, translate and eval.

Exit codes: 0 on success, 2 on usage errors, 1 on runtime errors.
"""
import os
import sys
import time
import logging
import argparse
from dataclasses import dataclass, field, asdict

import utils
from attention_decoder import format_trace, node_names
from config import DESK_DEFAULTS, load_config
from inference_eval import (avg_hypothesis_length, bleu, hypothesis_text, perplexity,
                            translate_corpus)
from model import build_model, count_parameters
from numeric_core import CheckpointError
from subword import (MergeTable, Vocab, compress_corpus, effective_type_count,
                     generalize_tokens, type_count)
from syntax_tree import enumerate_nodes, serialize
from training import (load_checkpoint, load_parallel_corpus, load_source_corpus, resume_state,
                      save_checkpoint, train)

logger = logging.getLogger('treenmt')

VERSION = '1.0'
DEFAULT_MERGES = 500
DEFAULT_MAX_DECODE = 100


class VocabMismatch(CheckpointError):
    pass


@dataclass
class RunManifest:
    """Written when a command starts and rewritten with output digests when it ends."""
    command: str
    argv: list
    path: str
    version: str = VERSION
    started: str = ''
    finished: str = ''
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)

    @classmethod
    def begin(cls, args, path, inputs, config):
        manifest = cls(args.command, list(args.argv), path, started=time.strftime('%Y-%m-%dT%H:%M:%S'),
                       config=config,
                       inputs={p: utils.file_digest(p) for p in inputs if p and os.path.exists(p)})
        manifest.write()
        return manifest

    def write(self):
        utils.save_json(self.path, asdict(self))

    def finish(self, outputs):
        self.outputs = {p: utils.file_digest(p) for p in outputs if p and os.path.exists(p)}
        self.finished = time.strftime('%Y-%m-%dT%H:%M:%S')
        self.write()
        logger.info('wrote run manifest %s', self.path)


# --- shared helpers ---

def data_paths(data_dir):
    return {
        'src_vocab': os.path.join(data_dir, 'src.vocab'),
        'tgt_vocab': os.path.join(data_dir, 'tgt.vocab'),
        'src_bpe': os.path.join(data_dir, 'src.bpe'),
        'tgt_bpe': os.path.join(data_dir, 'tgt.bpe'),
    }


def load_merges(data_dir, rare_words):
    if rare_words == 'none':
        return None, None
    paths = data_paths(data_dir)
    return MergeTable.load(paths['src_bpe']), MergeTable.load(paths['tgt_bpe'])


def check_vocab(model, data_dir):
    paths = data_paths(data_dir)
    for side, vocab in (('src', model.src_vocab), ('tgt', model.tgt_vocab)):
        path = paths[f'{side}_vocab']
        if os.path.exists(path) and Vocab.load(path).tokens != vocab.tokens:
            raise VocabMismatch(f'{path} does not match the vocabulary stored in the checkpoint')


def _existing_file(parser, flag, path):
    if path is not None and not os.path.isfile(path):
        parser.error(f'{flag}: no such file {path!r}')


def config_overrides(args):
    names = {
        'beta_mode': 'beta_mode', 'encoder': 'encoder', 'rare_words': 'rare_words',
        'd_emb': 'd_emb', 'd_hidden': 'd_hidden', 'epochs': 'max_epochs',
        'batch_size': 'batch_size', 'seed': 'seed', 'threads': 'threads',
        'checkpoint_every': 'checkpoint_every', 'max_len': 'max_sentence_length',
        'attend_eos': 'attend_eos',
    }
    values = {key: getattr(args, attr) for attr, key in names.items()
              if getattr(args, attr, None) is not None}
    if getattr(args, 'no_top_down', False):
        values['top_down'] = False
    if getattr(args, 'no_backward_leaf', False):
        values['backward_leaf'] = False
    if getattr(args, 'debug', False):
        values['debug'] = True
    for item in getattr(args, 'set', None) or []:
        key, sep, value = item.partition('=')
        if not sep:
            raise utils.ConfigError([f'--set expects key=value, got {item!r}'])
        values[key.strip()] = value.strip()
    return values


# --- commands ---

def cmd_preprocess(args):
    os.makedirs(args.out_dir, exist_ok=True)
    manifest = RunManifest.begin(args, os.path.join(args.out_dir, 'preprocess.manifest.json'),
                                 [args.src, args.tree, args.tgt],
                                 {'src_vocab_size': args.src_vocab_size,
                                  'tgt_vocab_size': args.tgt_vocab_size,
                                  'merges': args.merges, 'max_len': args.max_len})
    paths = data_paths(args.out_dir)
    raw = {'src': [line.split() for line in utils.read_lines(args.src)],
           'tgt': [line.split() for line in utils.read_lines(args.tgt)]}
    sizes = {'src': args.src_vocab_size, 'tgt': args.tgt_vocab_size}
    rows = []
    for side in ('src', 'tgt'):
        generalized = [generalize_tokens(s) for s in raw[side]]
        vocab, merges, segmented = compress_corpus(generalized, sizes[side], args.merges)
        vocab.save(paths[f'{side}_vocab'])
        merges.save(paths[f'{side}_bpe'])
        rows.append((side, type_count(raw[side]), type_count(generalized),
                     effective_type_count(segmented, vocab)))

    config = load_config(overrides={'rare_words': 'tree'}).model
    dataset = load_parallel_corpus(
        args.src, args.tree, args.tgt,
        (Vocab.load(paths['src_vocab']), Vocab.load(paths['tgt_vocab'])),
        (MergeTable.load(paths['src_bpe']), MergeTable.load(paths['tgt_bpe'])),
        config, max_sentence_length=args.max_len)
    out = {ext: os.path.join(args.out_dir, f'train.{ext}') for ext in ('src', 'tree', 'tgt')}
    utils.write_lines(out['src'], [' '.join(ex.src_tokens) for ex in dataset])
    utils.write_lines(out['tree'], [serialize(ex.tree) for ex in dataset])
    utils.write_lines(out['tgt'], [' '.join(ex.tgt_tokens) for ex in dataset])

    print('side\toriginal\tgeneralized\tbpe')
    for row in rows:
        print('\t'.join(str(v) for v in row))
    print(f'pairs={len(dataset)}')
    print(f'dropped={dataset.dropped}')
    manifest.finish(list(paths.values()) + list(out.values()))
    return 0


def _dev_scorer(args, config, merges, model):
    if not args.dev_src:
        return None
    dev = load_parallel_corpus(args.dev_src, args.dev_tree, args.dev_tgt,
                               (model.src_vocab, model.tgt_vocab), merges, config.model,
                               max_sentence_length=10 ** 6)
    refs = [list(ex.tgt_ids[:-1]) for ex in dev]
    sources = [(ex.src_ids, ex.tree) for ex in dev]
    best = {'bleu': -1.0}
    best_path = os.path.join(args.out_dir, 'best.ckpt.npz')

    def on_epoch(stats):
        hyps = translate_corpus(model, sources, max_len=DEFAULT_MAX_DECODE, greedy=True,
                                threads=config.threads)
        score = bleu([h.output_ids() for h in hyps], refs)
        logger.info('epoch %d: dev bleu %.4f, dev perplexity %.3f',
                    stats.epoch, score, perplexity(model, dev.items))
        if score > best['bleu']:
            best['bleu'] = score
            save_checkpoint(model, None, best_path, epoch=stats.epoch)

    return on_epoch


def cmd_train(args):
    config = load_config(args.config, config_overrides(args))
    os.makedirs(args.out_dir, exist_ok=True)
    manifest = RunManifest.begin(args, os.path.join(args.out_dir, 'train.manifest.json'),
                                 [args.src, args.tree, args.tgt, args.config, args.resume]
                                 + list(data_paths(args.data_dir).values()),
                                 config.to_dict())

    paths = data_paths(args.data_dir)
    vocabs = (Vocab.load(paths['src_vocab']), Vocab.load(paths['tgt_vocab']))
    merges = load_merges(args.data_dir, config.model.rare_words)
    dataset = load_parallel_corpus(args.src, args.tree, args.tgt, vocabs, merges, config.model,
                                   max_sentence_length=config.max_sentence_length)
    if not len(dataset):
        raise utils.EmptyCorpus('no training pairs left after filtering')

    if args.resume:
        model, opt_state, start_epoch = resume_state(args.resume)
        check_vocab(model, args.data_dir)
        if model.config != config.model:
            raise utils.ConfigError(['model settings differ from the checkpoint being resumed'])
        logger.info('resuming from %s at epoch %d', args.resume, start_epoch)
    else:
        model = build_model(config.model, vocabs[0], vocabs[1], seed=config.seed)
        opt_state, start_epoch = None, 0
    manifest.config['parameters'] = count_parameters(model)
    manifest.write()

    stats_path = os.path.join(args.out_dir, 'stats.tsv')
    if start_epoch == 0:
        utils.write_lines(stats_path, ['epoch\tloss\ttokens\tseconds'])
    history, opt_state = train(model, dataset, config, opt_state=opt_state, start_epoch=start_epoch,
                               out_dir=args.out_dir, stats_path=stats_path,
                               on_epoch=_dev_scorer(args, config, merges, model))
    final_path = os.path.join(args.out_dir, 'final.ckpt.npz')
    save_checkpoint(model, opt_state, final_path, epoch=config.max_epochs)

    print(f'parameters={count_parameters(model)}')
    print(f'pairs={len(dataset)}')
    if history:
        print(f'final_loss={history[-1].loss:.6f}')
    manifest.finish([final_path, stats_path])
    return 0


def cmd_translate(args):
    model, _, meta = load_checkpoint(args.checkpoint)
    if model.config.uses_tree and not args.tree:
        raise utils.AlignmentMismatch('--tree is required for a tree-encoder checkpoint')
    check_vocab(model, args.data_dir)
    manifest_path = (args.output or args.checkpoint + '.translate') + '.manifest.json'
    manifest = RunManifest.begin(
        args, manifest_path,
        [args.checkpoint, args.src, args.tree] + list(data_paths(args.data_dir).values()),
        {'model': meta['config'], 'beam': args.beam, 'greedy': args.greedy, 'max_len': args.max_len,
         'widen_beam': args.widen_beam})
    src_merges, _ = load_merges(args.data_dir, model.config.rare_words)
    sources = load_source_corpus(args.src, args.tree if model.config.uses_tree else None,
                                 model.src_vocab, src_merges, model.config)
    hyps = translate_corpus(model, [(ids, tree) for _, tree, ids in sources], beam=args.beam,
                            max_len=args.max_len, greedy=args.greedy, trace=bool(args.trace),
                            threads=args.threads, widen=args.widen_beam)
    lines = [hypothesis_text(h, model.tgt_vocab) for h in hyps]
    if args.output:
        utils.write_lines(args.output, lines)
    else:
        for line in lines:
            print(line)
    if args.trace:
        trace = []
        for i, ((tokens, tree, _), hyp) in enumerate(zip(sources, hyps), start=1):
            table = enumerate_nodes(tree) if tree is not None else None
            names = node_names(table, len(tokens), model.config)
            trace.extend(format_trace(i, names, model.tgt_vocab.decode(hyp.tokens), hyp.steps))
        utils.write_lines(args.trace, trace)
    manifest.finish([args.output, args.trace])
    return 0


def cmd_eval(args):
    manifest = RunManifest.begin(args, args.hyp + '.eval.manifest.json',
                                 [args.hyp, args.ref, args.checkpoint, args.src, args.tree, args.tgt], {})
    hyps = [line.split() for line in utils.read_lines(args.hyp)]
    refs = [line.split() for line in utils.read_lines(args.ref)]
    scores = {'bleu': round(bleu(hyps, refs), 6), 'avg_length': round(avg_hypothesis_length(hyps), 6)}
    if args.checkpoint:
        model, _, meta = load_checkpoint(args.checkpoint)
        check_vocab(model, args.data_dir)
        merges = load_merges(args.data_dir, model.config.rare_words)
        data = load_parallel_corpus(args.src, args.tree if model.config.uses_tree else None, args.tgt,
                                    (model.src_vocab, model.tgt_vocab), merges, model.config,
                                    max_sentence_length=10 ** 6)
        scores['perplexity'] = round(perplexity(model, data), 6)
        manifest.config['model'] = meta['config']
    for key, value in scores.items():
        print(f'{key}={value}')
    manifest.config['scores'] = scores
    manifest.finish([])
    return 0


# --- argument parsing ---

def _model_flags(p):
    p.add_argument('--config', help='key = value config file')
    p.add_argument('--set', action='append', metavar='KEY=VALUE', help='override one config key')
    p.add_argument('--beta-mode', help='fixed:<x>, gating or unweighted')
    p.add_argument('--encoder', choices=('tree', 'sequential'))
    p.add_argument('--rare-words', choices=('tree', 'sequential', 'none'))
    p.add_argument('--no-top-down', action='store_true')
    p.add_argument('--no-backward-leaf', action='store_true')
    p.add_argument('--attend-eos', dest='attend_eos', action='store_true', default=None)
    p.add_argument('--no-attend-eos', dest='attend_eos', action='store_false')
    p.add_argument('--d-emb', type=int)
    p.add_argument('--d-hidden', type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog='treenmt', description='Tree-to-sequence translation toolkit')
    parser.add_argument('-v', '--verbose', action='store_true')
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('preprocess', help='generalize, learn BPE and build vocabularies')
    p.add_argument('--src', required=True)
    p.add_argument('--tree', required=True)
    p.add_argument('--tgt', required=True)
    p.add_argument('--out-dir', required=True)
    p.add_argument('--src-vocab-size', type=int, default=DESK_DEFAULTS['vocab_size'])
    p.add_argument('--tgt-vocab-size', type=int, default=DESK_DEFAULTS['vocab_size'])
    p.add_argument('--merges', type=int, default=DEFAULT_MERGES)
    p.add_argument('--max-len', type=int, default=DESK_DEFAULTS['max_sentence_length'])
    p.set_defaults(func=cmd_preprocess, files=('src', 'tree', 'tgt'))

    p = sub.add_parser('train', help='train a model')
    p.add_argument('--data-dir', required=True)
    p.add_argument('--src', required=True)
    p.add_argument('--tree')
    p.add_argument('--tgt', required=True)
    p.add_argument('--out-dir', required=True)
    _model_flags(p)
    p.add_argument('--epochs', type=int)
    p.add_argument('--batch-size', type=int)
    p.add_argument('--seed', type=int)
    p.add_argument('--threads', type=int)
    p.add_argument('--checkpoint-every', type=int)
    p.add_argument('--max-len', type=int)
    p.add_argument('--resume', metavar='CHECKPOINT')
    p.add_argument('--debug', action='store_true', help='check every value for NaN/Inf')
    p.add_argument('--dev-src')
    p.add_argument('--dev-tree')
    p.add_argument('--dev-tgt')
    p.set_defaults(func=cmd_train, files=('src', 'tree', 'tgt', 'config', 'resume',
                                          'dev_src', 'dev_tree', 'dev_tgt'))

    p = sub.add_parser('translate', help='translate a source file')
    p.add_argument('--checkpoint', required=True)
    p.add_argument('--data-dir', required=True)
    p.add_argument('--src', required=True)
    p.add_argument('--tree')
    p.add_argument('--output')
    p.add_argument('--beam', type=int, default=DESK_DEFAULTS['beam'])
    p.add_argument('--greedy', action='store_true')
    p.add_argument('--widen-beam', action='store_true',
                   help='search every width up to --beam and keep the best result')
    p.add_argument('--max-len', type=int, default=DEFAULT_MAX_DECODE)
    p.add_argument('--trace', metavar='PATH', help='write attention and beta per step')
    p.add_argument('--threads', type=int, default=1)
    p.set_defaults(func=cmd_translate, files=('checkpoint', 'src', 'tree'))

    p = sub.add_parser('eval', help='score hypotheses')
    p.add_argument('--hyp', required=True)
    p.add_argument('--ref', required=True)
    p.add_argument('--checkpoint')
    p.add_argument('--data-dir')
    p.add_argument('--src')
    p.add_argument('--tree')
    p.add_argument('--tgt')
    p.set_defaults(func=cmd_eval, files=('hyp', 'ref', 'checkpoint', 'src', 'tree', 'tgt'))
    return parser


def _check_args(parser, args):
    for name in args.files:
        _existing_file(parser, '--' + name.replace('_', '-'), getattr(args, name, None))
    if args.command == 'train' and args.dev_src and not args.dev_tgt:
        parser.error('--dev-src needs --dev-tgt')
    if args.command == 'translate' and args.beam < 1:
        parser.error('--beam must be >= 1')
    if args.command == 'eval' and args.checkpoint:
        for flag in ('data_dir', 'src', 'tgt'):
            if not getattr(args, flag):
                parser.error(f'--checkpoint needs --{flag.replace("_", "-")}')


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = list(sys.argv[1:] if argv is None else argv)
    _check_args(parser, args)
    utils.setup_logging(args.verbose)
    try:
        return args.func(args)
    except utils.ConfigError as e:
        for problem in e.problems:
            logger.error('config: %s', problem)
        return 1
    except (utils.TreeNMTError, OSError) as e:
        logger.error('%s failed: %s', args.command, e)
        return 1


if __name__ == '__main__':
    sys.exit(main())
