"""Per-class counting reference for support-weighted F1."""


def f1_oracle(preds, truths):
    classes = sorted(set(truths) | set(preds))
    total = 0.0
    for c in classes:
        tp = sum(p == c and t == c for p, t in zip(preds, truths))
        fp = sum(p == c and t != c for p, t in zip(preds, truths))
        fn = sum(p != c and t == c for p, t in zip(preds, truths))
        prec = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * recall / (prec + recall) if prec + recall else 0.0
        total += f1 * (tp + fn)
    return total / len(truths)
