# Balls & urns, generalizing predictor.
import numpy as np

def predict(tokens, m):
    """Dirichlet(1) posterior predictive: add one pseudo-count per type."""
    counts = np.zeros(m)
    out = []
    for t in tokens:
        out.append((counts + 1) / (counts.sum() + m))
        counts[t] += 1
    return out
