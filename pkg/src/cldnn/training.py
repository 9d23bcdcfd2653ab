"""Speaker-independent partitioning, Adam, mini-batch training with early stopping."""

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import models as M
from .errors import DivergedError, MetricError, PartitionError, ShapeError

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


# -- partitioning --

@dataclass(frozen=True)
class Partition:
    train: frozenset
    val: frozenset
    test: frozenset

    def __post_init__(self):
        if self.train & self.val or self.train & self.test or self.val & self.test:
            raise PartitionError("speaker sets overlap between splits")

    def split_of(self, speaker):
        for name in SPLITS:
            if speaker in getattr(self, name):
                return name
        raise KeyError(f"speaker {speaker!r} is not in the partition")

    def select(self, utterances, split):
        """Utterances whose speaker belongs to ``split``; children follow their parent."""
        speakers = getattr(self, split)
        return [u for u in utterances if u.speaker in speakers]

    def sizes(self):
        return len(self.train), len(self.val), len(self.test)


def split_sizes(n, ratios=(0.70, 0.10, 0.20)):
    """Floor the train and validation shares, give the remainder to test.

    Validation and test always get at least one speaker.
    """
    if n < 3:
        raise PartitionError(f"need at least 3 speakers, got {n}")
    n_train = int(math.floor(ratios[0] * n + 1e-9))
    n_val = max(1, int(math.floor(ratios[1] * n + 1e-9)))
    n_train = min(n_train, n - n_val - 1)
    n_train = max(n_train, 1)
    return n_train, n_val, n - n_train - n_val


def make_partitions(speakers, ratios=(0.70, 0.10, 0.20), seed=0):
    """Shuffle the speaker set with ``seed`` and cut it by cumulative ratio."""
    unique = sorted(set(speakers))
    n_train, n_val, _ = split_sizes(len(unique), ratios)
    order = np.random.default_rng(seed).permutation(len(unique))
    shuffled = [unique[i] for i in order]
    return Partition(frozenset(shuffled[:n_train]),
                     frozenset(shuffled[n_train:n_train + n_val]),
                     frozenset(shuffled[n_train + n_val:]))


def write_partition(path, partition):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["speaker", "split"])
        for split in SPLITS:
            for spk in sorted(getattr(partition, split)):
                w.writerow([spk, split])


def read_partition(path):
    groups = {s: set() for s in SPLITS}
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            groups[row["split"]].add(row["speaker"])
    return Partition(*(frozenset(groups[s]) for s in SPLITS))


# -- metric --

def unweighted_accuracy(preds, labels, n_classes=None):
    """Mean per-class recall.

    With ``n_classes`` every class in ``range(n_classes)`` must occur in
    ``labels``; otherwise the classes present in ``labels`` are averaged.
    """
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if labels.size == 0 or preds.shape != labels.shape:
        raise MetricError("need equally sized, nonempty predictions and labels")
    classes = np.unique(labels)
    if n_classes is not None:
        absent = sorted(set(range(n_classes)) - set(classes.tolist()))
        if absent:
            raise MetricError(f"classes {absent} do not occur in the labels")
        classes = np.arange(n_classes)
    recalls = [np.mean(preds[labels == c] == c) for c in classes]
    return float(np.mean(recalls))


# -- Adam --

@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def to_tensors(self):
        out = {}
        for k in self.m:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out

    @classmethod
    def from_tensors(cls, tensors, t, **hyper):
        state = cls(t=t, **hyper)
        for name, arr in tensors.items():
            kind, key = name[len("adam."):].split(".", 1)
            getattr(state, kind)[key] = arr.copy()
        return state


def adam_step(params, grads, state):
    """In-place bias-corrected Adam update of ``params``; returns (params, state)."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {k} has shape {g.shape}, parameter {p.shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


# -- early stopping --

@dataclass
class EarlyStopping:
    """Maximize a validation metric; stop after ``patience`` epochs without a strict gain."""

    patience: int = 3
    best: float = -math.inf
    best_epoch: int = 0
    bad_epochs: int = 0

    def update(self, metric, epoch):
        """Record ``metric`` for ``epoch``; returns (improved, should_stop)."""
        if metric > self.best:
            self.best, self.best_epoch, self.bad_epochs = metric, epoch, 0
            return True, False
        self.bad_epochs += 1
        return False, self.bad_epochs >= self.patience


# -- training loop --

@dataclass
class Example:
    """One utterance ready for the model: spliced blocks and a class label."""

    blocks: np.ndarray
    label: int
    uid: str = ""
    speaker: str = ""


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_ua: float
    train_ua: float = float("nan")


@dataclass
class TrainResult:
    params: dict
    best_epoch: int
    history: list
    adam: AdamState
    stopped_early: bool
    last_params: dict = None
    stopper: EarlyStopping = None


def predict(examples, params, config):
    return np.array([int(np.argmax(M.predict_proba(ex.blocks, params, config))) for ex in examples])


def evaluate(examples, params, config):
    """Unweighted accuracy over the classes present in ``examples``."""
    return unweighted_accuracy(predict(examples, params, config), [ex.label for ex in examples])


def _copy(params):
    return {k: v.copy() for k, v in params.items()}


def train(config, train_set, val_set, seed=0, params=None, batch_size=10, lr=0.001,
          patience=3, max_epochs=200, target_train_ua=None, track_train_ua=False,
          adam=None, start_epoch=1, stopper=None):
    """Mini-batch Adam on cross-entropy with early stopping on validation UA.

    Each epoch shuffles ``train_set`` with a generator derived from
    ``(seed, epoch)``; dropout masks come from the same generator, so a run is
    fully determined by its inputs. Gradients are averaged over the utterances of
    a batch in index order. Returns the parameters of the best validation epoch.

    ``patience=None`` disables early stopping; ``target_train_ua`` stops as soon
    as the training UA reaches that value (implies tracking it). Passing a saved
    ``adam`` state (and the ``stopper`` state) with ``start_epoch`` and the
    last parameters resumes an interrupted run exactly.
    """
    if not train_set:
        raise ValueError("empty training set")
    if params is None:
        params = M.init_params(config, np.random.default_rng([seed, 0xC1D]))
    params = _copy(params)
    adam = adam if adam is not None else AdamState(lr=lr)
    if stopper is None:
        stopper = EarlyStopping(patience if patience is not None else max_epochs + 1)
    best = _copy(params)
    history = []
    track = track_train_ua or target_train_ua is not None
    stopped = False

    for epoch in range(start_epoch, max_epochs + 1):
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(len(train_set))
        losses = []
        for start in range(0, len(order), batch_size):
            batch = [train_set[i] for i in order[start:start + batch_size]]
            acc = None
            for ex in batch:
                loss, grads, _ = M.loss_and_grads(ex.blocks, ex.label, params, config,
                                                  M.Mode.TRAIN, rng)
                if not np.isfinite(loss):
                    raise DivergedError(f"non-finite loss at epoch {epoch}", params=best,
                                        history=history)
                losses.append(loss)
                if acc is None:
                    acc = grads
                else:
                    for k in acc:
                        acc[k] += grads[k]
            for k in acc:
                acc[k] /= len(batch)
            adam_step(params, acc, adam)

        val_ua = evaluate(val_set, params, config) if val_set else float("nan")
        rec = EpochRecord(epoch, float(np.mean(losses)), val_ua)
        if track:
            rec.train_ua = evaluate(train_set, params, config)
        history.append(rec)
        log.info("epoch %d loss %.4f val_ua %.4f train_ua %.4f", epoch, rec.train_loss,
                 rec.val_ua, rec.train_ua)

        if target_train_ua is not None and rec.train_ua >= target_train_ua:
            best, stopper.best_epoch = _copy(params), epoch
            break
        improved, stop = stopper.update(val_ua if val_set else -rec.train_loss, epoch)
        if improved:
            best = _copy(params)
        if stop:
            stopped = True
            break
    return TrainResult(best, stopper.best_epoch, history, adam, stopped, params, stopper)


def write_history(path, history):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_loss", "val_ua"])
        for rec in history:
            w.writerow([rec.epoch, repr(rec.train_loss), repr(rec.val_ua)])
