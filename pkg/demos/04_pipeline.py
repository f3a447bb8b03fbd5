"""The whole pipeline through the command-line interface.

Equivalent shell session:

    patsel synth --out pool.fsel --n 200 --grid-h 6 --grid-w 6 --feat-dim 48 \
                 --categories 8 --noise 0.05 --seed 1
    patsel validate pool.fsel
    patsel patterns pool.fsel --out pool.fspt --tau 0.5 --k 5 --d0 2 --threads 2
    patsel select pool.fspt --strategy prob --budget 30 --seed 9 --out sel.jsonl
    patsel stats sel.jsonl pool.fspt --out coverage.csv
"""

import csv
import tempfile
from pathlib import Path

from patsel import cli

workdir = Path(tempfile.mkdtemp(prefix="patsel-demo-"))
bundle = workdir / "pool.fsel"
patterns = workdir / "pool.fspt"
sel = workdir / "sel.jsonl"
stats = workdir / "coverage.csv"

steps = [
    ["synth", "--out", str(bundle), "--n", "200", "--grid-h", "6",
     "--grid-w", "6", "--feat-dim", "48", "--categories", "8",
     "--noise", "0.05", "--seed", "1"],
    ["validate", str(bundle)],
    ["patterns", str(bundle), "--out", str(patterns), "--tau", "0.5",
     "--k", "5", "--d0", "2", "--threads", "2"],
    ["select", str(patterns), "--strategy", "prob", "--budget", "30",
     "--seed", "9", "--out", str(sel)],
    ["stats", str(sel), str(patterns), "--out", str(stats)],
]

for argv in steps:
    print(f"\n$ patsel {' '.join(argv)}")
    code = cli.main(argv)
    assert code == 0, f"exit code {code}"

print("\ncovering radius per step (how far the worst-covered pattern sits "
      "from the selected pool):")
with open(stats, newline="") as fh:
    rows = list(csv.DictReader(fh))
for row in rows[:: max(1, len(rows) // 10)]:
    print(f"  step {row['step']:>3}  {row['image_id']}  "
          f"radius {float(row['covering_radius']):.4f}")
print(f"\nartifacts in {workdir}")
