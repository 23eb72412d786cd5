"""Write a synthetic corpus to disk and run the whole pipeline on it.

The same run from the shell:

    matdnn synth --out corpus
    matdnn run --config run.cfg
    matdnn validate run

    python3 demos/full_run.py [workdir]
"""

import sys
import tempfile
from pathlib import Path

from matdnn.pipeline import desk_config, run_pipeline, validate_run
from matdnn.synth import SynthConfig, generate_corpus, write_corpus

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp())
write_corpus(work / "corpus", generate_corpus(SynthConfig(num_utterances=30, seed=0)))

cfg = desk_config(corpus=str(work / "corpus"), output=str(work / "run"))
(work / "run.cfg").write_text(cfg.to_text())
print(cfg.to_text())

state = run_pipeline(cfg)
print(state.path("reports", "summary.txt").read_text())
print("validate:", validate_run(work / "run") or "ok")
print("artifacts under", work / "run")
