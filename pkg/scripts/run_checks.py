#!/usr/bin/env python3
"""Full check suite on the four-equation linear config."""

import pathlib
import sys

from slowfast.cli import main

ROOT = pathlib.Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(
        main(
            [
                "check",
                "--config", str(ROOT / "configs" / "model2_linear.toml"),
                "--out", "out/checks",
            ]
            + sys.argv[1:]
        )
    )
