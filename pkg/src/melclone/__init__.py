"""One-shot mel-domain voice cloning on a deterministic synthetic corpus.

Library layout:

- :mod:`melclone.dsp` — mel analysis, cepstra/MCD, energy, pitch, durations
- :mod:`melclone.autodiff` / :mod:`melclone.nn` — numpy reverse-mode kernels
- :mod:`melclone.corpus` — the synthetic multi-speaker, multi-style corpus
- :mod:`melclone.model` — content encoder, duration predictor, statistics-skip
  encoder/decoder, synthesis
- :mod:`melclone.training` — two-stage optimization and checkpoints
- :mod:`melclone.evaluation` — reconstruction, transfer and embedding analyses
- :mod:`melclone.cli` — the ``melclone`` command
"""

__version__ = "0.1.0"

from . import autodiff, container, corpus, dsp, errors, nn  # noqa: F401
from . import model, training  # noqa: F401
