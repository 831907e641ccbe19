# Linear regression, memorizing predictor.
import numpy as np

def predict(xs, ys, weights, sigma2):
    """Bayesian average over the training regression vectors."""
    out = []
    sse = np.zeros(len(weights))
    for x, y in zip(xs, ys):
        log_w = -sse / (2 * sigma2)
        p = np.exp(log_w - log_w.max())
        p = p / p.sum()
        out.append(x @ (p @ weights))
        sse += (y - weights @ x) ** 2
    return out
