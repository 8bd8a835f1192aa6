"""
Whole-corpus analysis
=====================

Generate the bundled synthetic mini-corpus (TIMIT layout plus a scripted
oracle backend), run the full analysis pipeline, and peek at the emitted
tables. Swap the oracle spec for ``exec:...`` or ``http://...`` to analyze a
real corpus with a real model server.
"""

import tempfile
from pathlib import Path

from phonsal import RunConfig, dump_saliency, run_pipeline
from phonsal.synth import build_mini_corpus

workdir = Path(tempfile.mkdtemp(prefix="phonsal_demo_"))
corpus_root, script_path = build_mini_corpus(workdir / "corpus")
print(f"synthetic corpus at {corpus_root}")

cfg = RunConfig(
    corpus_root=str(corpus_root),
    backend_spec=f"oracle:{script_path}",
    output_dir=str(workdir / "out"),
    iterations=300,  # 20000 for real runs; 300 keeps the demo quick
    seed=11,
)
summary = run_pipeline(cfg)
print(f"analyzed {summary.n_analyzed}/{summary.n_utterances} utterances, "
      f"WER {summary.wer:.2f}, skips {summary.skips}")
print(f"word reference coverage: {summary.word_reference_coverage:.1f}%")

out = Path(cfg.output_dir)
print("\nspectral match for formants (Table-1-shaped):")
print((out / "sm_formants.csv").read_text())

print("time coverage boxplot data (first lines):")
for line in (out / "tc_boxplot.csv").read_text().splitlines()[:6]:
    print(" ", line)

files = dump_saliency(cfg, "train/dr1/mjd0/sx101", token_index=0)
print("\nper-token map triple for external plotting:")
for f in files:
    print(" ", f.name)
