import numpy as np

BCE_EPS = 1e-7


def compute_loss(kind: str, prediction, target, delta: float = 3.0, weights=None):
    """Mean loss over the batch and its gradient with respect to ``prediction``.

    ``pairwise-rank`` takes the ranking score d(C1, C2) as the prediction and
    y in {-1, +1} as the target: L = max(0, delta - y * d).
    """
    p = np.asarray(prediction, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64).reshape(p.shape)
    w = np.ones_like(p) if weights is None else np.asarray(weights, dtype=np.float64).reshape(p.shape)
    n = p.size
    if kind == "mae":
        r = p - t
        return float(np.sum(w * np.abs(r)) / n), w * np.sign(r) / n
    if kind == "bce":
        if not np.all((t == 0) | (t == 1)):
            raise ValueError("bce targets must be 0 or 1")
        q = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
        loss = -np.sum(w * (t * np.log(q) + (1 - t) * np.log(1 - q))) / n
        grad = -w * (t / q - (1 - t) / (1 - q)) / n
        return float(loss), grad
    if kind == "pairwise-rank":
        if not np.all((t == 1) | (t == -1)):
            raise ValueError("pairwise-rank targets must be -1 or +1")
        hinge = delta - t * p
        active = hinge > 0
        return float(np.sum(w * np.where(active, hinge, 0.0)) / n), np.where(active, -t * w, 0.0) / n
    raise ValueError(f"unknown loss kind {kind!r}")


def balanced_class_weights(labels) -> np.ndarray:
    """Per-sample weights n / (n_classes * n_c) so each class carries equal mass."""
    labels = np.asarray(labels)
    classes, counts = np.unique(labels, return_counts=True)
    lookup = {c: len(labels) / (len(classes) * k) for c, k in zip(classes, counts)}
    return np.array([lookup[v] for v in labels], dtype=np.float64)
