#!/usr/bin/env python3
"""
Export a checkpoint for inference: float32 storage, optimizer state dropped.

Usage:
    python tools/export_checkpoint.py runs/final.ckpt.npz runs/final.f32.npz
"""
import os
import sys
import argparse
import logging

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from training import load_checkpoint, save_checkpoint  # noqa: E402
from utils import TreeNMTError, setup_logging  # noqa: E402

logger = logging.getLogger('export_checkpoint')


def export_checkpoint(src, dst, dtype='float32'):
    model, _, meta = load_checkpoint(src)
    save_checkpoint(model, None, dst, epoch=meta.get('epoch', 0), dtype=dtype)
    return os.path.getsize(src), os.path.getsize(dst)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.strip().splitlines()[0])
    parser.add_argument('src')
    parser.add_argument('dst')
    parser.add_argument('--dtype', choices=('float32', 'float64'), default='float32')
    args = parser.parse_args(argv)
    setup_logging()
    try:
        before, after = export_checkpoint(args.src, args.dst, args.dtype)
    except (TreeNMTError, OSError) as e:
        logger.error('export failed: %s', e)
        return 1
    print(f'Exported {args.src} ({before} bytes) -> {args.dst} ({after} bytes)')
    return 0


if __name__ == '__main__':
    sys.exit(main())
