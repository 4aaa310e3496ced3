"""
A reproducible simulation cell
==============================

Run one cell of the logistic estimation grid and write the reports.
Rerunning with the same seed rewrites identical bytes.
"""

import tempfile
from pathlib import Path

from onestep_glm.cli import main

out = Path(tempfile.mkdtemp())
main(["simulate", "--preset", "table1", "--cell", "N=10000,K=5,p=0.1",
      "--reps", "20", "--seed", "1", "--threads", "1", "--out", str(out)])
print("reports in", out, sorted(p.name for p in out.iterdir()))
