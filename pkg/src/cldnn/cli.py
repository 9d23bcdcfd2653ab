"""Command-line entry point.

    cldnn <subcommand> --config <path> [--out <dir>] [--seed <n>] [--<key> <value> ...]

Every config key has a matching flag (``conv_type`` -> ``--conv-type``,
``sweep.values`` -> ``--sweep-values``). On failure the tool exits nonzero and
prints one JSON line on stderr: ``{"error": <type>, "message": ..., "key": ...}``.
"""

import argparse
import json
import logging
import sys

from . import experiment as E
from .errors import CLDNNError, ConfigError

SUBCOMMANDS = {
    "synth": "generate the synthetic corpus and noise pool at the configured manifest paths",
    "features": "extract and cache log-Mel/MFCC feature dumps",
    "augment": "write the augmented (noisy) manifest",
    "partition": "write the speaker-independent partition",
    "train": "train a model and write checkpoints and history",
    "eval": "score the best checkpoint on the validation and test splits",
    "probe": "probe every tap of the best checkpoint and export LDA scatter data",
    "sweep": "train one model per sweep value and condition",
    "run": "partition, train, evaluate and probe in one go",
}


def flag_for(key):
    return "--" + key.replace(".", "-").replace("_", "-")


def build_parser():
    parser = argparse.ArgumentParser(prog="cldnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="flat key = value experiment config")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        for key in E.KEYS:
            p.add_argument(flag_for(key), dest=key, default=None, metavar="VALUE",
                           help=f"override config key {key!r}")
    return parser


def _dispatch(command, cfg):
    if command == "synth":
        return {"written": [str(p) for p in E.synth_data(cfg)]}
    if command == "features":
        return {"utterances": E.features_stage(cfg)}
    if command == "augment":
        return {"noisy": len(E.augment_stage(cfg))}
    if command == "partition":
        part = E.partition_stage(cfg)
        return dict(zip(("train", "val", "test"), part.sizes()))
    if command == "train":
        _, result = E.train_stage(cfg)
        return {"best_epoch": result.best_epoch, "epochs": len(result.history)}
    if command == "eval":
        return {f"{split}_ua": ua for split, _, ua, _ in E.eval_stage(cfg)}
    if command == "probe":
        return {"rows": len(E.probe_stage(cfg))}
    if command == "sweep":
        return {"report": str(E.sweep_stage(cfg))}
    if command == "run":
        return {"workspace": str(E.run_experiment(cfg))}
    raise ConfigError(f"unknown subcommand {command!r}")


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in E.KEYS}
    try:
        cfg = E.load_config(args.config, overrides)
        result = _dispatch(args.command, cfg)
    except (CLDNNError, OSError, ValueError, KeyError) as e:
        err = {"error": type(e).__name__, "message": str(e)}
        if getattr(e, "key", None):
            err["key"] = e.key
        print(json.dumps(err), file=sys.stderr)
        return 2 if isinstance(e, ConfigError) else 1
    print(json.dumps(dict(result, command=args.command)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
