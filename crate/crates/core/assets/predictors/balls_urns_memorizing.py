# Balls & urns, memorizing predictor.
import numpy as np

def predict(tokens, urns):
    """Posterior-weighted average of the training urns."""
    m = urns.shape[1]
    counts = np.zeros(m)
    out = []
    for t in tokens:
        log_lik = np.log(urns) @ counts
        w = np.exp(log_lik - log_lik.max())
        w = w / w.sum()
        out.append(w @ urns)
        counts[t] += 1
    return out
