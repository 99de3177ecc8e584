#!/usr/bin/env python3
"""Convergence study for the reduced model on the shipped default config."""

import pathlib
import sys

from slowfast.cli import main

ROOT = pathlib.Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    sys.exit(
        main(
            [
                "converge", "--model", "1",
                "--config", str(ROOT / "configs" / "model1_default.toml"),
                "--out", "out/model1",
            ]
            + sys.argv[1:]
        )
    )
