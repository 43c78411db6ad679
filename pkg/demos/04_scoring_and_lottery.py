"""
Contribution scores and the weighted lottery
============================================

Weights mix normalized parameter volume with normalized loss reduction.
The lottery is driven by a hash of the published reports, so anyone can
replay the draw.
"""

import hashlib
from collections import Counter

from pout.consensus import score_contribution, weighted_lottery

metrics = [(100, 0.2), (300, 0.2)]   # (parameter volume, loss reduction)
for alpha in (0.0, 0.5, 1.0):
    scores = score_contribution(metrics, alpha)
    print(f"alpha={alpha}: weights", [round(s.weight, 4) for s in scores])

weights = [s.weight for s in score_contribution(metrics, 0.5)]
seed = hashlib.sha256(b"cycle 0 reports").digest()
print("winner for this seed:", weighted_lottery(weights, seed))

draws = Counter(weighted_lottery(weights, hashlib.sha256(b"%d" % i).digest())
                for i in range(50_000))
print("empirical frequencies:", {k: v / 50_000 for k, v in sorted(draws.items())})
