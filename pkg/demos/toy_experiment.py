"""Build the synthetic corpus and run the full train/decode/score pipeline.

    python3 demos/toy_experiment.py [workdir]

Takes about a minute.  Re-running in the same directory resumes from the
checkpoints left by the previous run.
"""

import sys
import tempfile
from pathlib import Path

from miniasr.cli import main


def run(root):
    root = Path(root)
    if not (root / "toy.cfg").exists():
        main(["make-toy-corpus", "--out", str(root), "--seed", "0",
              "--num-train", "320", "--num-test", "50", "--iterations", "4"])
    code = main(["experiment", "--config", str(root / "toy.cfg")])
    print()
    print((root / "exp" / "summary.txt").read_text())
    return code


if __name__ == "__main__":
    if len(sys.argv) > 1:
        sys.exit(run(sys.argv[1]))
    with tempfile.TemporaryDirectory() as tmp:
        sys.exit(run(tmp))
