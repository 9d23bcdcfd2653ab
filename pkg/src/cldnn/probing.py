"""Module-wise probing of trained CLDNNs.

Each utterance is summarized at four taps (raw spliced input, conv stack,
BLSTM, final FC layer), a linear one-vs-rest probe is trained on every tap,
and the class structure of each tap is scored with the intra/inter cluster
inertia ratio and visualized through an LDA projection.
"""

import csv
import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import models as M
from .errors import InfiniteRho, LDAError, ProbeError, ShapeError
from .training import unweighted_accuracy


class Tap(str, enum.Enum):
    RAW = "Raw"
    CNN = "CNN"
    BLSTM = "BLSTM"
    MLP = "MLP"


LABEL_TYPES = ("emotion", "speaker", "gender")


def taps_for(config):
    return [t for t in Tap if config.is_cldnn or t is not Tap.CNN]


def representations(blocks, params, config):
    """All taps of one utterance from a single eval-mode forward pass.

    Raw, CNN and BLSTM are temporal means of per-frame vectors; MLP is the
    pre-softmax output of the last FC layer.
    """
    _, cache = M.forward(blocks, params, config, M.Mode.EVAL)
    out = {Tap.RAW: cache.raw.mean(axis=0), Tap.BLSTM: cache.pooled.copy(),
           Tap.MLP: cache.logits.copy()}
    if config.is_cldnn:
        out[Tap.CNN] = cache.frames.mean(axis=0)
    return out


def extract_representation(blocks, params, config, tap):
    tap = Tap(tap)
    if tap is Tap.CNN and not config.is_cldnn:
        raise ShapeError("an LDNN has no convolutional module to tap")
    return representations(blocks, params, config)[tap]


# -- linear probe --

@dataclass
class LinearProbe:
    """One-vs-rest linear classifier on standardized inputs."""

    W: np.ndarray        # (n_classes, dim)
    b: np.ndarray
    mean: np.ndarray
    scale: np.ndarray
    classes: np.ndarray

    def scores(self, X):
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.scale
        return Z @ self.W.T + self.b

    def predict(self, X):
        return self.classes[np.argmax(self.scores(X), axis=1)]


def fit_linear_probe(X, y, seed=0, lam=1e-3, epochs=200, batch_size=32, lr=0.1):
    """L2-regularized hinge loss, one-vs-rest, mini-batch sub-gradient descent.

    Batches are drawn from a generator seeded with ``seed``; the step size
    decays as ``lr / sqrt(epoch)``. Features are standardized with training
    statistics (constant features are left unscaled).
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    classes = np.unique(y)
    if classes.size < 2:
        raise ProbeError("a probe needs at least two classes")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12] = 1.0
    Z = (X - mean) / scale
    Y = np.where(y[:, None] == classes[None, :], 1.0, -1.0)     # (n, K) targets
    n, d = Z.shape
    W = np.zeros((classes.size, d))
    b = np.zeros(classes.size)
    rng = np.random.default_rng(seed)
    for epoch in range(1, epochs + 1):
        step = lr / np.sqrt(epoch)
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            margins = Y[idx] * (Z[idx] @ W.T + b)
            active = (margins < 1.0) * Y[idx]                   # d(hinge)/d(score) = -y where active
            gW = lam * W - active.T @ Z[idx] / idx.size
            gb = -active.sum(axis=0) / idx.size
            W -= step * gW
            b -= step * gb
    return LinearProbe(W, b, mean, scale, classes)


def train_linear_probe(X_train, y_train, X_test, y_test, seed=0, **kw):
    """Fit on the training vectors; return the probe and its UA on the test vectors."""
    probe = fit_linear_probe(X_train, y_train, seed=seed, **kw)
    return probe, unweighted_accuracy(probe.predict(X_test), y_test)


# -- cluster inertia --

@dataclass(frozen=True)
class ClusterStats:
    centers: np.ndarray
    intra: float
    inter: float

    @property
    def rho(self):
        return self.intra / self.inter


def cluster_inertia(X, labels):
    """Intra-class inertia, inter-class inertia and their ratio.

    intra = mean over classes of the mean squared distance to the class center;
    inter = mean squared distance over ordered pairs of distinct class centers.
    Raises :class:`InfiniteRho` when all class centers coincide.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise ProbeError("inertia needs at least two classes")
    centers = np.stack([X[labels == c].mean(axis=0) for c in classes])
    intra = np.mean([np.mean(np.sum((X[labels == c] - centers[i]) ** 2, axis=1))
                     for i, c in enumerate(classes)])
    diff = centers[:, None, :] - centers[None, :, :]
    K = classes.size
    inter = np.sum(diff ** 2) / (K * K - K)
    if inter <= 0.0:
        raise InfiniteRho("all class centers coincide; the inertia ratio is unbounded")
    return ClusterStats(centers, float(intra), float(inter))


# -- LDA --

@dataclass
class LDAProjection:
    mean: np.ndarray
    components: np.ndarray   # (dim, out_dim)
    eigenvalues: np.ndarray

    def transform(self, X):
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components


def scatter_matrices(X, labels):
    """Within- and between-class scatter with class priors n_c / n."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    n, d = X.shape
    mu = X.mean(axis=0)
    Sw = np.zeros((d, d))
    Sb = np.zeros((d, d))
    for c in np.unique(labels):
        Xc = X[labels == c]
        prior = Xc.shape[0] / n
        dc = Xc - Xc.mean(axis=0)
        Sw += prior * (dc.T @ dc) / Xc.shape[0]
        m = (Xc.mean(axis=0) - mu)[:, None]
        Sb += prior * (m @ m.T)
    return Sw, Sb


def fit_lda(X, labels, out_dim=None):
    """Top generalized eigenvectors of (Sb, Sw + reg * I).

    ``reg = 1e-6 * trace(Sw) / dim``. ``out_dim`` defaults to min(N - 1, 2).
    """
    X = np.asarray(X, dtype=np.float64)
    n_classes = np.unique(labels).size
    if n_classes < 2:
        raise LDAError("LDA needs at least two classes")
    if out_dim is None:
        out_dim = min(n_classes - 1, 2)
    mu = X.mean(axis=0)
    n, d = X.shape
    basis = None
    if d > n:
        # discriminant directions lie in the span of the centered data and
        # (Sw + reg*I) maps that span onto itself, so solving there is exact
        u, sv, _ = np.linalg.svd((X - mu).T, full_matrices=False)
        basis = u[:, sv > sv.max() * 1e-12]
        Sw, Sb = scatter_matrices((X - mu) @ basis, labels)
    else:
        Sw, Sb = scatter_matrices(X, labels)
    # trace(Sw) is unchanged by the projection; the scale uses the full dimension
    reg = 1e-6 * np.trace(Sw) / d
    if not np.isfinite(reg) or reg <= 0.0:
        raise LDAError("within-class scatter is degenerate")
    A = Sw + reg * np.eye(Sw.shape[0])
    try:
        evals, evecs = scipy.linalg.eigh(Sb, A)
    except np.linalg.LinAlgError as e:
        raise LDAError(f"generalized eigenproblem failed: {e}") from e
    top = np.argsort(evals)[::-1][:out_dim]
    comps = evecs[:, top] if basis is None else basis @ evecs[:, top]
    if comps.shape[1] < out_dim:
        raise LDAError(f"only {comps.shape[1]} discriminant directions available")
    return LDAProjection(mu, comps, evals[top])


def lda_project(X, labels, out_dim=None):
    return fit_lda(X, labels, out_dim).transform(X)


# -- report --

@dataclass
class ProbeRow:
    model: str
    tap: Tap
    label_type: str
    probe_ua: float
    rho: float
    coords: list = field(default_factory=list)   # (uid, label, projected vector)


def _holdout(labels, seed):
    """Alternate utterances of each class between fit and check halves."""
    rng = np.random.default_rng(seed)
    fit = np.zeros(len(labels), dtype=bool)
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        fit[idx[::2]] = True
    if fit.all():
        fit[np.flatnonzero(fit)[-1]] = False
    return fit


def probe_table(model_name, train_vecs, train_meta, test_vecs, test_meta, seed=0):
    """Probe every tap x label type.

    ``*_vecs`` map Tap -> (n, dim) arrays; ``*_meta`` are lists of
    (uid, {label_type: label}) tuples. When some class of a label type never
    occurs in the test split (speakers never do, by construction of a
    speaker-independent partition) the probe is scored on a stratified
    holdout of the training utterances instead.
    """
    rows = []
    for tap in train_vecs:
        Xtr, Xte = train_vecs[tap], test_vecs[tap]
        for lt in LABEL_TYPES:
            ytr = np.array([m[lt] for _, m in train_meta])
            yte = np.array([m[lt] for _, m in test_meta])
            if np.unique(ytr).size < 2:
                continue
            if set(np.unique(ytr)) <= set(np.unique(yte)):
                _, ua = train_linear_probe(Xtr, ytr, Xte, yte, seed=seed)
            else:
                fit = _holdout(ytr, seed)
                _, ua = train_linear_probe(Xtr[fit], ytr[fit], Xtr[~fit], ytr[~fit], seed=seed)
            try:
                rho = cluster_inertia(Xtr, ytr).rho
            except InfiniteRho:
                rho = float("inf")
            lda = fit_lda(Xtr, ytr)
            coords = []
            for uid_meta, X in ((train_meta, Xtr), (test_meta, Xte)):
                proj = lda.transform(X) if len(X) else np.zeros((0, lda.components.shape[1]))
                coords += [(uid, m[lt], p) for (uid, m), p in zip(uid_meta, proj)]
            rows.append(ProbeRow(model_name, tap, lt, float(ua), float(rho), coords))
    return rows


def probe_all(params, config, train_utts, test_utts, seed=0):
    """Probe a trained model on clean utterances.

    ``train_utts`` / ``test_utts`` are iterables of (uid, blocks, labels) with
    ``labels = {"emotion": ..., "speaker": ..., "gender": ...}``.
    """
    def collect(utts):
        vecs = {t: [] for t in taps_for(config)}
        meta = []
        for uid, blocks, labels in utts:
            reps = representations(blocks, params, config)
            for t in vecs:
                vecs[t].append(reps[t])
            meta.append((uid, labels))
        return {t: np.array(v) for t, v in vecs.items()}, meta

    tr_vecs, tr_meta = collect(train_utts)
    te_vecs, te_meta = collect(test_utts)
    return probe_table(config.name, tr_vecs, tr_meta, te_vecs, te_meta, seed)


def write_report(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model", "tap", "label_type", "probe_ua", "rho"])
        for r in rows:
            w.writerow([r.model, Tap(r.tap).value, r.label_type, repr(r.probe_ua), repr(r.rho)])


def write_scatter(path, row):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        two_d = bool(row.coords) and len(row.coords[0][2]) > 1
        w.writerow(["utterance_id", "label", "x", "y"] if two_d else ["utterance_id", "label", "x"])
        for uid, label, p in row.coords:
            w.writerow([uid, label] + [repr(float(v)) for v in p[:2]])
