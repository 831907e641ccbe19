# Classification, generalizing predictor.
import numpy as np

def predict(query, context_items, context_labels, sigma2):
    """Noisy-copy vote over the in-context item-label pairs."""
    m = context_items.shape[1]
    d2 = ((query - context_items / (1 + sigma2)) ** 2).sum(axis=1)
    log_w = -m * (1 + sigma2) ** 2 / (2 * sigma2 * (2 + sigma2)) * d2
    w = np.exp(log_w - log_w.max())
    return (w * (context_labels == 1)).sum() / w.sum()
