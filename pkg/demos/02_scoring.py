"""
Equal error rate and run-to-run intervals
=========================================

Scores are replay probabilities.  A trial counts as genuine when its score
is below the threshold, and the EER is where false acceptances and false
rejections balance.
"""

import numpy as np

from replayarray.evaluation import compute_eer, confidence_interval

rng = np.random.default_rng(0)

# Clean separation, total inversion, and one overlap.
print(compute_eer([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]).eer)  # 0.0
print(compute_eer([0.8, 0.9, 0.1, 0.2], [0, 0, 1, 1]).eer)  # 1.0
print(compute_eer([0.1, 0.6, 0.4, 0.9], [0, 0, 1, 1]).eer)  # 0.5

# Overlapping Gaussian scores: the EER only depends on the ranking, so a
# logistic squashing leaves it unchanged.
genuine = rng.normal(-1.0, 1.0, 500)
replay = rng.normal(1.0, 1.0, 500)
scores = np.r_[genuine, replay]
labels = np.r_[np.zeros(500), np.ones(500)]
res = compute_eer(scores, labels)
squashed = compute_eer(1 / (1 + np.exp(-scores)), labels)
print("EER %.4f at threshold %.3f; after logistic %.4f" % (res.eer, res.threshold, squashed.eer))

# Five runs summarised by a Student-t 95% interval.
runs = [0.10, 0.12, 0.11, 0.13, 0.14]
print("five runs:", confidence_interval(runs))
