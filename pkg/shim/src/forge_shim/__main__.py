"""Module execution entry: ``python -m forge_shim ...``."""

from forge_shim.cli import main

if __name__ == "__main__":
    raise SystemExit(main())
