"""Entry point so the toolkit runs as `python -m treenmt <command>` from the repo root."""
import sys

import main as main_mod


class Runner:
    """Thin wrapper around the CLI module's `main(argv)`."""

    def __init__(self, module=main_mod):
        self.main_module = module

    def run(self, argv=None):
        main_fn = getattr(self.main_module, 'main', None)
        if not callable(main_fn):
            raise RuntimeError('CLI module has no main(argv) entry point')
        return main_fn(argv)


if __name__ == '__main__':
    sys.exit(Runner().run())
