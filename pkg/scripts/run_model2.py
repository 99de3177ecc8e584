#!/usr/bin/env python3
"""Mean-square convergence and gap study for the four-equation model."""

import pathlib
import sys

from slowfast.cli import main

ROOT = pathlib.Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(
        main(
            [
                "converge", "--model", "2",
                "--config", str(ROOT / "configs" / "model2_linear.toml"),
                "--out", "out/model2",
            ]
            + sys.argv[1:]
        )
    )
