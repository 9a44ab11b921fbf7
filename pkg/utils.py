import os
import json
import hashlib
import logging

logger = logging.getLogger(__name__)


class TreeNMTError(Exception):
    """Root of every error raised by treenmt."""


class AlignmentMismatch(TreeNMTError, ValueError):
    pass


class EmptyCorpus(TreeNMTError, ValueError):
    pass


class ConfigError(TreeNMTError, ValueError):
    """Carries every problem found in a configuration, not just the first."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__('; '.join(self.problems))


def setup_logging(verbose=False):
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format='[%(name)s] %(message)s')


def read_lines(path):
    with open(path, 'r', encoding='utf-8') as f:
        return [line.rstrip('\n') for line in f]


def write_lines(path, lines):
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for line in lines:
            f.write(line + '\n')


def read_key_values(path):
    """Read a flat `key = value` file. Returns (pairs, problems)."""
    pairs, problems = {}, []
    for num, raw in enumerate(read_lines(path), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            problems.append(f'{path}:{num}: expected `key = value`, got {raw!r}')
            continue
        key, value = (part.strip() for part in line.split('=', 1))
        if key in pairs:
            problems.append(f'{path}:{num}: duplicate key {key!r}')
        pairs[key] = value
    return pairs, problems


def file_digest(path):
    h = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 16), b''):
            h.update(chunk)
    return h.hexdigest()


def substream_seed(seed, name):
    """Derive a deterministic 63-bit seed for a named random substream."""
    digest = hashlib.sha256(f'{seed}:{name}'.encode('utf-8')).digest()
    return int.from_bytes(digest[:8], 'little') >> 1


def save_json(path, data):
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')


def load_json(path):
    if not os.path.exists(path):
        logger.warning('No JSON file found at %s', path)
        return None
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)
