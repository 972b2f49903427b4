"""Independent reference implementations used to cross-check the pipeline."""

import warnings
from fractions import Fraction

import numpy as np
from scipy.special import softmax
from sklearn.metrics import roc_auc_score
from sklearn.neighbors import NearestCentroid
from sklearn.preprocessing import OneHotEncoder, StandardScaler

from protollm.dataset import few_shot_split


def brute_force_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = Fraction(0)
    for p in pos:
        for n in neg:
            wins += 1 if p > n else Fraction(1, 2) if p == n else 0
    return float(wins / (len(pos) * len(neg)))


def _design(rows, schema, scaler=None, encoder=None):
    num = [d for d, f in enumerate(schema.features) if not f.is_categorical]
    cat = [d for d, f in enumerate(schema.features) if f.is_categorical]
    blocks = []
    if num:
        Xn = np.array([[r.values[d] for d in num] for r in rows], dtype=float)
        if scaler is None:
            scaler = StandardScaler().fit(Xn)
        blocks.append(scaler.transform(Xn))
    if cat:
        Xc = np.array([[r.values[d] for d in cat] for r in rows], dtype=object)
        if encoder is None:
            encoder = OneHotEncoder(categories=[list(schema.features[d].categories) for d in cat],
                                    sparse_output=False).fit(Xc)
        blocks.append(encoder.transform(Xc))
    return np.hstack(blocks), scaler, encoder


def centroid_oracle(schema, samples, shot, seed):
    """Nearest class centroid on standardized numerics and one-hot categoricals.

    Returns ``(argmax, probs, auc)`` for the test rows of the same split.
    """
    train, test = few_shot_split(samples, schema, shot, seed)
    Xtr, scaler, encoder = _design(train, schema)
    Xte, _, _ = _design(test, schema, scaler, encoder)
    ytr = np.array([r.label for r in train])
    yte = np.array([r.label for r in test])
    with warnings.catch_warnings():
        # constant columns and one-sample classes only affect the unused shrinkage statistics
        warnings.simplefilter("ignore", UserWarning)
        warnings.simplefilter("ignore", RuntimeWarning)
        clf = NearestCentroid().fit(Xtr, ytr)
    pred = clf.predict(Xte)
    dist = np.linalg.norm(Xte[:, None, :] - clf.centroids_[None, :, :], axis=2)
    # uniform weights 1/D scale every coordinate, hence every distance, by 1/D
    probs = softmax(-dist / schema.n_features, axis=1)
    if schema.n_classes == 2:
        auc = roc_auc_score(yte, probs[:, 1])
    else:
        auc = roc_auc_score(yte, probs, multi_class="ovr", average="macro", labels=list(range(schema.n_classes)))
    return pred, probs, auc
