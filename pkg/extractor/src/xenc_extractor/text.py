"""Word-level text features: one row per word from a context window."""

from __future__ import annotations

import numpy as np

from xenc.data_model import FeatureMatrix
from xenc.errors import ArgError


def read_transcript(path) -> list[tuple[str, float, float]]:
    """Parse `word<TAB>start<TAB>end` lines; blank lines ignored."""
    words = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ArgError(f"{path}:{lineno}: expected word<TAB>start<TAB>end")
            word, start, end = parts
            words.append((word, float(start), float(end)))
    return words


def extract_text_features(transcript: list[tuple[str, float, float]],
                          backend, layer: int, context_words: int = 20,
                          scan_id: str = "", batch_note: None = None) -> FeatureMatrix:
    """One feature row per word, timestamped at the word's midpoint.

    Each word is padded with up to ``context_words`` words of context on
    both sides (truncated at the transcript boundaries); the row is the
    hidden state at the target word's position, sub-tokens mean-pooled
    by the backend.
    """
    if not transcript:
        raise ArgError("empty transcript")
    words = [w for w, _, _ in transcript]
    times = np.array([(start + end) / 2.0 for _, start, end in transcript])
    if len(times) > 1 and not np.all(np.diff(times) > 0):
        raise ArgError("word midpoints must be strictly increasing")
    rows = np.empty((len(words), backend.hidden_size))
    for i in range(len(words)):
        lo = max(0, i - context_words)
        hi = min(len(words), i + context_words + 1)
        states = backend.word_states(words[lo:hi], layer)
        rows[i] = states[i - lo]
    return FeatureMatrix(scan_id=scan_id, modality="language", layer=layer,
                         sample_times=times, data=rows)
