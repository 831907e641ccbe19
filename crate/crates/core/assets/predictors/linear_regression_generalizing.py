# Linear regression, generalizing predictor.
import numpy as np

def predict(xs, ys, sigma2):
    """Ridge regression on the pairs seen so far."""
    m = xs.shape[1]
    out = []
    for c in range(len(xs)):
        x, y = xs[:c], ys[:c]
        w = np.linalg.solve(x.T @ x + sigma2 * np.eye(m), x.T @ y)
        out.append(xs[c] @ w)
    return out
