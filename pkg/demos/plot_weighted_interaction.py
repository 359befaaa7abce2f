"""
Weighted token interaction on a toy pair
========================================

Two tiny token matrices, one image and one caption, scored with and without
column weights. Column 1 carries shared content, column 2 carries a style
pattern that disagrees between the two sides.
"""

import numpy as np

from pico import aggregate_score, correlation_matrix, pair_score
from pico.embeddings import normalize_rows

image = np.array([[0.9, 0.6, -0.8],
                  [0.1, -0.7, 0.9]])
text = np.array([[0.8, 0.7, 0.9],
                 [0.2, -0.6, -0.7],
                 [0.0, 0.1, 0.8]])
image, text = normalize_rows(image)[0], normalize_rows(text)[0]

###############################################################################
# Plain interaction: every column counts fully.
plain = correlation_matrix(image, text)
print("correlations\n", plain.values.round(3))
print("row argmax", plain.argmax_rows, "column argmax", plain.argmax_cols)
print("score", round(aggregate_score(plain), 4))

###############################################################################
# Down-weight the third column on both sides. Semantic probabilities never
# drop below one half under the default sign convention.
p = np.array([1.0, 1.0, 0.5])
print("weighted score", round(pair_score(image, text, p, p), 4))

###############################################################################
# With all-ones weights the weighted path is the plain path, bit for bit.
assert pair_score(image, text, np.ones(3), np.ones(3)) == pair_score(image, text)
