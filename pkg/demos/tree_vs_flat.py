"""Per-example cost of the flat and hierarchical softmax heads as V grows."""
import time

import numpy as np

from vaeas.classifier import AuxClassifier
from vaeas.mathops import SeededRng

z = SeededRng(0).normal((1000, 40))
print("    V    flat us/ex   tree us/ex")
for V in (64, 256, 1024, 4096, 16384):
    cats = np.arange(1000) % V
    out = []
    for mode in ("flat", "tree"):
        clf = AuxClassifier.create(40, 500, 2, V, mode, SeededRng(1))
        clf.log_prob_true(z, cats)
        t = time.perf_counter()
        for _ in range(5):
            clf.log_prob_true(z, cats)
        out.append((time.perf_counter() - t) / 5 / 1000 * 1e6)
    print(f"{V:6d} {out[0]:12.2f} {out[1]:12.2f}")
