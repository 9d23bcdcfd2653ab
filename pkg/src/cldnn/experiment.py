"""Config-driven experiments: extract, augment, partition, train, evaluate, probe, sweep.

A config is flat ``key = value`` text; ``#`` starts a comment. Artifacts land in
``<out>/<name>/{features,checkpoints,reports}`` and every one of them is a pure
function of the config, the input audio and the seeds.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import augment as A
from . import corpus as K
from . import dsp
from . import models as M
from . import probing as P
from . import training as T
from .errors import CLDNNError, ConfigError

log = logging.getLogger(__name__)


# -- config --

def _parse_bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_str(s):
    s = str(s).strip()
    return None if s.lower() in ("", "none", "ldnn") else s


def _opt_int(s):
    s = str(s).strip()
    return None if s.lower() in ("", "none") else int(s)


def _opt_float(s):
    s = str(s).strip()
    return None if s.lower() in ("", "none") else float(s)


def _int_tuple(s):
    return tuple(int(v) for v in str(s).split(",") if v.strip())


def _float_tuple(s):
    return tuple(float(v) for v in str(s).split(",") if v.strip())


def parse_values(s):
    """Sweep values: ``4,5,9`` or the inclusive range ``4..12``."""
    s = str(s).strip()
    if ".." in s:
        lo, hi = s.split("..")
        return tuple(range(int(lo), int(hi) + 1))
    return _int_tuple(s)


# key -> (parser, default); a default of ``REQUIRED`` must appear in the config
REQUIRED = object()

KEYS = {
    "name": (str, REQUIRED),
    "corpus": (str, REQUIRED),
    "noise": (str, ""),
    "out": (str, "out"),
    "seed": (int, 0),
    # model
    "conv_type": (_opt_str, None),
    "input_kind": (str, "logmel"),
    "h1": (_opt_int, None),
    "w1": (_opt_int, None),
    "h2": (_opt_int, None),
    "w2": (_opt_int, None),
    "conv_maps": (int, 32),
    "blstm_cells": (int, 128),
    "fc_hidden": (_int_tuple, (128, 32, 32)),
    "dropout": (float, 0.2),
    # data
    "condition": (str, "noisy"),
    "eval_condition": (_opt_str, None),
    "n_noise": (int, A.N_NOISE),
    "n_snr": (int, A.N_SNR),
    "snr_low": (float, A.SNR_RANGE[0]),
    "snr_high": (float, A.SNR_RANGE[1]),
    "ratios": (_float_tuple, (0.70, 0.10, 0.20)),
    # training
    "batch_size": (int, 10),
    "lr": (float, 0.001),
    "patience": (_opt_int, 3),
    "max_epochs": (int, 200),
    "target_train_ua": (_opt_float, None),
    # stages
    "probe": (_parse_bool, True),
    "sweep.param": (str, "h1"),
    "sweep.values": (parse_values, ()),
    # synthetic data
    "synth.n_classes": (int, 6),
    "synth.n_speakers": (int, 4),
    "synth.utterances": (int, 5),
    "synth.min_duration": (float, 0.30),
    "synth.max_duration": (float, 0.45),
    "synth.noise_clips": (int, 24),
    "synth.noise_duration": (float, 1.0),
}

CONDITIONS = ("clean", "noisy")
SWEEPABLE = ("h1", "w1", "h2", "w2", "conv_maps", "blstm_cells")


def parse_config_text(text, source="<config>"):
    """Raw ``key -> string`` pairs; no defaults or validation."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'", key=None)
        k, v = (s.strip() for s in line.split("=", 1))
        raw[k] = v
    return raw


def build_config(raw, base_dir=None):
    """Typed config dict from raw strings, with defaults filled in.

    Unknown and missing keys raise :class:`ConfigError` carrying the key name.
    Relative ``corpus``/``noise``/``out`` paths resolve against ``base_dir``.
    """
    for k in raw:
        if k not in KEYS:
            raise ConfigError(f"unknown config key {k!r}", key=k)
    cfg = {}
    for k, (parse, default) in KEYS.items():
        if k in raw and raw[k] is not None:
            try:
                cfg[k] = parse(raw[k]) if isinstance(raw[k], str) else raw[k]
            except (TypeError, ValueError) as e:
                raise ConfigError(f"bad value for {k!r}: {e}", key=k) from e
        elif default is REQUIRED:
            raise ConfigError(f"missing required config key {k!r}", key=k)
        else:
            cfg[k] = default
    if cfg["condition"] not in CONDITIONS:
        raise ConfigError(f"condition must be one of {CONDITIONS}", key="condition")
    if cfg["eval_condition"] is None:
        cfg["eval_condition"] = cfg["condition"]
    if cfg["eval_condition"] not in CONDITIONS:
        raise ConfigError(f"eval_condition must be one of {CONDITIONS}", key="eval_condition")
    if cfg["input_kind"] not in ("logmel", "mfcc"):
        raise ConfigError("input_kind must be logmel or mfcc", key="input_kind")
    if cfg["sweep.param"] not in SWEEPABLE:
        raise ConfigError(f"sweep.param must be one of {SWEEPABLE}", key="sweep.param")
    if base_dir is not None:
        for k in ("corpus", "noise", "out"):
            if cfg[k] and not Path(cfg[k]).is_absolute():
                cfg[k] = str(Path(base_dir) / cfg[k])
    return cfg


def load_config(path, overrides=None):
    """Read a config file; ``overrides`` (key -> string) win over file values."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}", key=None) from e
    raw = parse_config_text(text, str(path))
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_config(raw, base_dir=path.parent)


def model_config(cfg, n_classes):
    try:
        return M.make_config(cfg["conv_type"], cfg["input_kind"], n_classes, cfg["h1"], cfg["w1"],
                             cfg["h2"], cfg["w2"], cfg["conv_maps"], cfg["blstm_cells"],
                             cfg["fc_hidden"], cfg["dropout"])
    except (CLDNNError, ValueError, KeyError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"invalid model configuration: {e}", key="conv_type") from e


# -- workspace --

@dataclass(frozen=True)
class Workspace:
    root: Path

    @property
    def features(self):
        return self.root / "features"

    @property
    def checkpoints(self):
        return self.root / "checkpoints"

    @property
    def reports(self):
        return self.root / "reports"

    @property
    def augmented_manifest(self):
        return self.features / "augmented.csv"

    @property
    def partition_csv(self):
        return self.reports / "partition.csv"

    def make(self):
        for d in (self.features, self.checkpoints, self.reports):
            d.mkdir(parents=True, exist_ok=True)
        return self


def workspace(cfg):
    return Workspace(Path(cfg["out"]) / cfg["name"]).make()


# -- stages --

def synth_data(cfg):
    """Generate the synthetic corpus and noise pool at the configured manifest paths."""
    from . import synth as S

    spec = S.SynthSpec(cfg["synth.n_classes"], cfg["synth.n_speakers"], cfg["synth.utterances"],
                       (cfg["synth.min_duration"], cfg["synth.max_duration"]), cfg["seed"])
    corpus = Path(cfg["corpus"])
    made = S.synth_corpus(spec, corpus.parent)
    if made != corpus:
        made.replace(corpus)
    out = [corpus]
    if cfg["noise"]:
        noise = Path(cfg["noise"])
        made = S.synth_noise_pool(cfg["synth.noise_clips"], noise.parent, cfg["seed"],
                                  cfg["synth.noise_duration"])
        if made != noise:
            made.replace(noise)
        out.append(noise)
    return out


def clean_utterances(cfg):
    return K.read_clean_manifest(cfg["corpus"])


def noise_refs(cfg):
    if not cfg["noise"]:
        raise ConfigError("the noisy condition needs a noise manifest", key="noise")
    return K.read_noise_manifest(cfg["noise"])


def augment_stage(cfg, ws=None):
    """Write the augmented manifest; returns the noisy utterances."""
    ws = ws or workspace(cfg)
    clean = clean_utterances(cfg)
    pool = {}
    for ref in noise_refs(cfg):
        pool[ref.id] = dsp.read_wav(ref.path).shape[0]
    noisy = A.augment_corpus(clean, pool, cfg["n_noise"], cfg["n_snr"],
                             (cfg["snr_low"], cfg["snr_high"]), cfg["seed"])
    K.write_augmented_manifest(ws.augmented_manifest, noisy)
    return noisy


def noisy_utterances(cfg, ws=None, clean=None):
    ws = ws or workspace(cfg)
    if not ws.augmented_manifest.exists():
        augment_stage(cfg, ws)
    return K.read_augmented_manifest(ws.augmented_manifest, clean or clean_utterances(cfg))


def partition_stage(cfg, ws=None):
    ws = ws or workspace(cfg)
    part = T.make_partitions([u.speaker for u in clean_utterances(cfg)], cfg["ratios"], cfg["seed"])
    T.write_partition(ws.partition_csv, part)
    return part


def load_partition(cfg, ws=None):
    ws = ws or workspace(cfg)
    if not ws.partition_csv.exists():
        return partition_stage(cfg, ws)
    return T.read_partition(ws.partition_csv)


class FeatureStore:
    """Log-Mel/MFCC sequences per utterance, cached as feature dumps.

    Noisy utterances are rendered from their recipe on first use.
    """

    def __init__(self, ws, clean, noise_paths=None):
        self.dir = Path(ws.features)
        self.clean = {u.uid: u for u in clean}
        self.noise_paths = dict(noise_paths or {})
        self._wav = {}
        self._fb = dsp.default_filterbank()

    def _audio(self, path):
        if path not in self._wav:
            self._wav[path] = dsp.read_wav(path)
        return self._wav[path]

    def samples(self, utt):
        clean = self._audio(self.clean[utt.parent_id].path if utt.parent_id else utt.path)
        if utt.is_clean:
            return clean
        if utt.noise_id not in self.noise_paths:
            raise KeyError(f"noise id {utt.noise_id!r} is not in the noise manifest")
        return A.render(utt, clean, self._audio(self.noise_paths[utt.noise_id]))

    def sequence(self, utt, kind):
        kind = M.InputKind(kind)
        path = self.dir / kind.value / f"{utt.uid}.feat"
        if path.exists():
            return dsp.read_features(path)
        logmel_path = self.dir / "logmel" / f"{utt.uid}.feat"
        if logmel_path.exists():
            lm = dsp.read_features(logmel_path)
        else:
            lm = dsp.log_mels(self.samples(utt), self._fb)
            logmel_path.parent.mkdir(parents=True, exist_ok=True)
            dsp.save_features(logmel_path, lm)
        if kind is M.InputKind.LOGMEL:
            return lm
        seq = dsp.mfcc_from_logmels(lm)
        path.parent.mkdir(parents=True, exist_ok=True)
        dsp.save_features(path, seq)
        return seq

    def blocks(self, utt, kind, context=(dsp.SPLICE_LEFT, dsp.SPLICE_RIGHT)):
        return dsp.splice(self.sequence(utt, kind), *context).blocks


@dataclass
class Data:
    """Everything a run needs, resolved from the config."""

    cfg: dict
    ws: Workspace
    clean: list
    noisy: list
    partition: T.Partition
    labels: dict
    store: FeatureStore

    def utterances(self, split, condition):
        pool = self.clean + (self.noisy if condition == "noisy" else [])
        return self.partition.select(pool, split)

    def examples(self, split, condition, kind=None):
        kind = kind or self.cfg["input_kind"]
        return [T.Example(self.store.blocks(u, kind), self.labels[u.label], u.uid, u.speaker)
                for u in self.utterances(split, condition)]


def load_data(cfg, need_noisy=None):
    ws = workspace(cfg)
    clean = clean_utterances(cfg)
    if need_noisy is None:
        need_noisy = "noisy" in (cfg["condition"], cfg["eval_condition"])
    noisy, noise_paths = [], {}
    if need_noisy:
        noise_paths = {r.id: r.path for r in noise_refs(cfg)}
        noisy = noisy_utterances(cfg, ws, clean)
    part = load_partition(cfg, ws)
    return Data(cfg, ws, clean, noisy, part, K.label_index(clean),
                FeatureStore(ws, clean, noise_paths))


def features_stage(cfg):
    """Extract and cache features for every utterance the config touches."""
    data = load_data(cfg)
    n = 0
    for u in data.clean + data.noisy:
        data.store.sequence(u, cfg["input_kind"])
        n += 1
    return n


def _train(cfg, data, seed, condition=None, eval_condition=None, mcfg=None):
    condition = condition or cfg["condition"]
    eval_condition = eval_condition or cfg["eval_condition"]
    mcfg = mcfg or model_config(cfg, len(data.labels))
    train_set = data.examples("train", condition)
    val_set = data.examples("val", eval_condition)
    result = T.train(mcfg, train_set, val_set, seed=seed, batch_size=cfg["batch_size"],
                     lr=cfg["lr"], patience=cfg["patience"], max_epochs=cfg["max_epochs"],
                     target_train_ua=cfg["target_train_ua"])
    return mcfg, result


def _meta(cfg, data, result):
    return {"name": cfg["name"], "seed": cfg["seed"], "condition": cfg["condition"],
            "eval_condition": cfg["eval_condition"], "labels": sorted(data.labels, key=data.labels.get),
            "best_epoch": result.best_epoch, "epochs_run": len(result.history),
            "adam_t": result.adam.t, "stop_best": result.stopper.best,
            "stop_bad_epochs": result.stopper.bad_epochs}


def train_stage(cfg, data=None):
    data = data or load_data(cfg)
    mcfg, result = _train(cfg, data, cfg["seed"])
    meta = _meta(cfg, data, result)
    M.save_checkpoint(data.ws.checkpoints / "best.ckpt", mcfg, result.params, meta=meta)
    M.save_checkpoint(data.ws.checkpoints / "last.ckpt", mcfg, result.last_params,
                      extra=result.adam.to_tensors(), meta=meta)
    T.write_history(data.ws.reports / "history.csv", result.history)
    return mcfg, result


def _load_best(data):
    path = data.ws.checkpoints / "best.ckpt"
    if not path.exists():
        raise ConfigError(f"no trained checkpoint at {path}; run the train stage first", key="name")
    mcfg, params, _, meta = M.read_checkpoint(path)
    return mcfg, params, meta


def eval_stage(cfg, data=None):
    """UA on the validation and test splits under ``eval_condition``."""
    data = data or load_data(cfg)
    mcfg, params, _ = _load_best(data)
    rows = []
    for split in ("val", "test"):
        ex = data.examples(split, cfg["eval_condition"], mcfg.input_kind.value)
        ua = T.evaluate(ex, params, mcfg) if ex else float("nan")
        rows.append((split, cfg["eval_condition"], ua, len(ex)))
    with open(data.ws.reports / "eval.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["model", "split", "condition", "ua", "n"])
        for split, cond, ua, n in rows:
            w.writerow([mcfg.name, split, cond, repr(ua), n])
    return rows


def _probe_items(data, split, kind):
    out = []
    for u in data.utterances(split, data.cfg["eval_condition"]):
        meta = {"emotion": u.label, "speaker": u.speaker, "gender": u.gender or "unknown"}
        out.append((u.uid, data.store.blocks(u, kind), meta))
    return out


def probe_stage(cfg, data=None):
    """Probe report plus one LDA scatter file per (tap, label type)."""
    data = data or load_data(cfg)
    mcfg, params, _ = _load_best(data)
    kind = mcfg.input_kind.value
    rows = P.probe_all(params, mcfg, _probe_items(data, "train", kind),
                       _probe_items(data, "test", kind), seed=cfg["seed"])
    P.write_report(data.ws.reports / "probe.csv", rows)
    scatter = data.ws.reports / "scatter"
    scatter.mkdir(exist_ok=True)
    for r in rows:
        P.write_scatter(scatter / f"{P.Tap(r.tap).value}_{r.label_type}.csv", r)
    return rows


def run_experiment(config_path, overrides=None):
    """Run every stage the config asks for; returns the workspace root."""
    cfg = load_config(config_path, overrides) if not isinstance(config_path, dict) else config_path
    data = load_data(cfg)
    T.write_partition(data.ws.partition_csv, data.partition)
    train_stage(cfg, data)
    eval_stage(cfg, data)
    if cfg["probe"]:
        probe_stage(cfg, data)
    return data.ws.root


# -- sweep --

def median_filter(values, window=5):
    """Running median with edge clamping (the series is padded by repeating its ends)."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        return x
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    half = window // 2
    padded = np.concatenate([np.repeat(x[:1], half), x, np.repeat(x[-1:], half)])
    return np.array([np.median(padded[i:i + window]) for i in range(x.size)])


@dataclass(frozen=True)
class SweepSpec:
    param: str
    values: tuple
    fixed: dict
    conditions: tuple = CONDITIONS

    def __post_init__(self):
        if self.param not in SWEEPABLE:
            raise ConfigError(f"cannot sweep {self.param!r}", key="sweep.param")
        if not self.values:
            raise ConfigError("sweep needs at least one value", key="sweep.values")


def cell_seed(seed, index, condition):
    return int(np.random.SeedSequence([seed, index, CONDITIONS.index(condition)])
               .generate_state(1, np.uint64)[0] >> 1)


def sweep_configs(spec):
    """Model config per value; every value is validated before any training starts."""
    n_classes = len(K.label_index(clean_utterances(spec.fixed)))
    out = []
    for v in spec.values:
        cfg = dict(spec.fixed, **{spec.param: v})
        try:
            out.append(model_config(cfg, n_classes))
        except (CLDNNError, ValueError) as e:
            raise ConfigError(f"sweep value {spec.param}={v} is invalid: {e}", key="sweep.values") from e
    return out


def run_sweep(spec, window=5):
    """Train one model per (value, condition); write ``reports/sweep.csv``.

    Each condition trains and validates under that condition. Rows carry the
    cell seeds so any cell can be re-run on its own.
    """
    cfg = spec.fixed
    mcfgs = sweep_configs(spec)
    data = load_data(cfg, need_noisy="noisy" in spec.conditions)
    ua = {c: [] for c in CONDITIONS}
    seeds = {c: [] for c in CONDITIONS}
    for i, mcfg in enumerate(mcfgs):
        for cond in CONDITIONS:
            if cond not in spec.conditions:
                ua[cond].append(float("nan"))
                seeds[cond].append("")
                continue
            s = cell_seed(cfg["seed"], i, cond)
            _, result = _train(cfg, data, s, cond, cond, mcfg)
            best = max((h.val_ua for h in result.history if h.epoch == result.best_epoch),
                       default=float("nan"))
            ua[cond].append(best)
            seeds[cond].append(s)
            log.info("sweep %s=%s %s val_ua %.4f", spec.param, spec.values[i], cond, best)
    smooth = {c: median_filter(ua[c], window) for c in CONDITIONS}
    path = data.ws.reports / "sweep.csv"
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["value", "val_ua_clean", "val_ua_noisy", "val_ua_clean_median",
                    "val_ua_noisy_median", "seed_clean", "seed_noisy"])
        for i, v in enumerate(spec.values):
            w.writerow([v, repr(ua["clean"][i]), repr(ua["noisy"][i]),
                        repr(float(smooth["clean"][i])), repr(float(smooth["noisy"][i])),
                        seeds["clean"][i], seeds["noisy"][i]])
    return path


def sweep_stage(cfg):
    return run_sweep(SweepSpec(cfg["sweep.param"], tuple(cfg["sweep.values"]), cfg))

