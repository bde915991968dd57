"""Command-line driver: ``retcn <subcommand> [flags]``.

Subcommands: synth, augment, train, eval, corrupt-eval, cost, gradcheck.

Every option is a config key. Values come from the built-in defaults, then
an optional ``--config`` file (``KEY=VALUE`` lines, ``#`` starts a comment),
then command-line flags, each layer overriding the previous one. Unknown keys
are rejected. The resolved configuration is logged to stderr as a single
``KEY=VALUE`` line, which can be pasted into a config file to replay the run.

Output is an aligned table by default, or ``key=value`` records (one record
per line, stable key names) with ``--format kv``.

Exit codes: 0 success, 1 invalid input or configuration (including a missing
input file), 2 runtime failure (divergence, failed gradient check, other I/O
errors).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from typing import Dict, List, Optional

from .errors import BadConfig, RetcnError, ValidationError

log = logging.getLogger("retcn.cli")

COMMON = {"seed": 0, "out": "", "format": "table"}
FORMATS = ("table", "kv")

# Model keys that are taken from the dataset rather than configured.
_DATA_DIMS = ("num_classes", "V", "T", "in_channels", "edges")


def _dataclass_defaults(cls, skip=()):
    return {f.name: getattr(cls(), f.name) for f in fields(cls) if f.name not in skip}


def _keys(command) -> Dict[str, object]:
    """Config keys (with defaults) accepted by ``command``."""
    from .data import SynthConfig
    from .model import ModelConfig
    from .train import TrainConfig

    keys = dict(COMMON)
    if command == "synth":
        keys.update(_dataclass_defaults(SynthConfig, skip=("seed",)))
    elif command == "augment":
        keys.update(data="", augmentation="R+N")
    elif command == "train":
        keys.update(data="")
        keys.update(_dataclass_defaults(ModelConfig, skip=_DATA_DIMS))
        keys.update(_dataclass_defaults(TrainConfig, skip=("seed",)))
    elif command == "eval":
        keys.update(data="", checkpoint="", split="val")
    elif command == "corrupt-eval":
        keys.update(data="", checkpoint="", split="val", protocol="jitter", grid="",
                    sigma=0.1, parts="")
    elif command == "cost":
        keys.update(cin=0, cmid=0, cout=0, t=1, v=1, n=1, kh=0, kw=1, checkpoint="")
    elif command == "gradcheck":
        keys.update(trials=10)
    return keys


COMMANDS = ("synth", "augment", "train", "eval", "corrupt-eval", "cost", "gradcheck")

_HELP = {
    "synth": "generate a synthetic dataset file",
    "augment": "write an augmented copy of a dataset file",
    "train": "train a model and save the best-validation checkpoint",
    "eval": "evaluate a checkpoint on a dataset split",
    "corrupt-eval": "robustness sweep of a checkpoint under one corruption protocol",
    "cost": "analytical MAC / parameter counts",
    "gradcheck": "finite-difference check of every backward pass",
}


# -- value handling -----------------------------------------------------------

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def coerce(key: str, raw: str, default):
    """Parse ``raw`` to the type of ``default``."""
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            if raw.lower() in ("", "none"):
                return ()
            items = [s.strip() for s in raw.split(",")]
            if default and isinstance(default[0], int):
                return tuple(int(s) for s in items)
            return tuple(items)
    except ValueError:
        raise BadConfig(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def render(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def read_config_file(path: str, allowed) -> Dict[str, str]:
    """Parse ``KEY=VALUE`` lines; unknown keys raise BadConfig naming the line."""
    out = {}
    try:
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
    except OSError as e:
        raise BadConfig(f"--config: cannot read {path}: {e.strerror}") from None
    for no, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadConfig(f"{path}:{no}: expected KEY=VALUE, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in allowed:
            raise BadConfig(f"{path}:{no}: unknown key {key!r} for this subcommand")
        out[key] = value
    return out


def resolve(command: str, flags: Dict[str, Optional[str]], config_path: Optional[str]) -> Dict[str, object]:
    keys = _keys(command)
    raw = read_config_file(config_path, keys) if config_path else {}
    raw.update({k: v for k, v in flags.items() if v is not None})
    cfg = dict(keys)
    for k, v in raw.items():
        cfg[k] = coerce(k, v, keys[k])
    if cfg["format"] not in FORMATS:
        raise BadConfig(f"format: choose from {FORMATS}, got {cfg['format']!r}")
    return cfg


# -- output -------------------------------------------------------------------

def kv_line(record: dict) -> str:
    parts = []
    for k, v in record.items():
        if isinstance(v, float):
            v = repr(v)
        elif isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        parts.append(f"{k}={v}")
    return " ".join(parts)


def table(rows: List[dict], columns: List[str]) -> str:
    def cell(v):
        return f"{v:.4f}" if isinstance(v, float) else str(v)

    body = [[cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max([len(c)] + [len(b[i]) for b in body]) for i, c in enumerate(columns)]
    lines = ["  ".join(c.rjust(w) for c, w in zip(columns, widths))]
    lines += ["  ".join(v.rjust(w) for v, w in zip(b, widths)) for b in body]
    return "\n".join(lines)


class Output:
    def __init__(self, fmt, stream=None):
        self.fmt = fmt
        self.stream = stream or sys.stdout

    def records(self, records: List[dict], text: Optional[str] = None):
        if self.fmt == "kv":
            for r in records:
                print(kv_line(r), file=self.stream)
        else:
            print(text if text is not None else "\n".join(kv_line(r) for r in records), file=self.stream)
        self.stream.flush()


# -- subcommands --------------------------------------------------------------

def _need(cfg, key):
    if not cfg[key]:
        raise BadConfig(f"--{key.replace('_', '-')} is required")
    return cfg[key]


def _load_split(cfg):
    from .data import read_dataset

    ds = read_dataset(_need(cfg, "data"))
    split = cfg["split"]
    if split == "val":
        return ds.val_split()
    if split == "train":
        return ds.train_split()
    if split == "all":
        return ds
    raise BadConfig(f"split: choose from val, train, all; got {split!r}")


def _dataset_record(ds, path):
    from .data import dataset_hash

    c, t, v, m = ds.dims
    return {"record": "dataset", "path": path, "samples": len(ds), "train": len(ds) - ds.num_val,
            "val": ds.num_val, "classes": ds.num_classes, "C": c, "T": t, "V": v, "M": m,
            "sha256": dataset_hash(ds)}


def cmd_synth(cfg, out: Output):
    from .data import SynthConfig, synth_generate, write_dataset

    names = {f.name for f in fields(SynthConfig)}
    sc = SynthConfig(**{k: v for k, v in cfg.items() if k in names and k != "seed"}, seed=cfg["seed"])
    path = _need(cfg, "out")
    ds = synth_generate(sc)
    write_dataset(path, ds)
    rec = _dataset_record(ds, path)
    out.records([rec], table([rec], list(rec)[1:]))


def cmd_augment(cfg, out: Output):
    from .augment import augment_dataset, preset
    from .data import read_dataset, write_dataset

    ds = read_dataset(_need(cfg, "data"))
    path = _need(cfg, "out")
    aug = augment_dataset(ds, preset(cfg["augmentation"]), cfg["seed"])
    write_dataset(path, aug)
    rec = _dataset_record(aug, path)
    rec["augmentation"] = cfg["augmentation"]
    out.records([rec], table([rec], list(rec)[1:]))


def cmd_train(cfg, out: Output):
    from .data import read_dataset
    from .model import ModelConfig, build
    from .train import TrainConfig, train_loop

    ds = read_dataset(_need(cfg, "data"))
    path = _need(cfg, "out")
    c, t, v, _ = ds.dims
    mnames = {f.name for f in fields(ModelConfig)} - set(_DATA_DIMS)
    tnames = {f.name for f in fields(TrainConfig)} - {"seed"}
    mc = ModelConfig(num_classes=ds.num_classes, V=v, T=t, in_channels=c,
                     **{k: cfg[k] for k in mnames})
    tc = TrainConfig(seed=cfg["seed"], **{k: cfg[k] for k in tnames})
    tc.validate()
    model = build(mc, cfg["seed"])
    if out.fmt == "table":
        print(f"{'epoch':>5}  {'lr':>8}  {'train_loss':>10}  {'val_accuracy':>12}  {'val_loss':>8}",
              file=out.stream)

    def on_epoch(rec):
        if out.fmt == "kv":
            print(kv_line(rec.to_record()), file=out.stream)
        else:
            print(f"{rec.epoch:>5}  {rec.lr:>8.4g}  {rec.train_loss:>10.5f}  {rec.val_accuracy:>12.4f}  "
                  f"{rec.val_loss:>8.4f}", file=out.stream)
        out.stream.flush()

    result = train_loop(model, ds.train_split(), ds.val_split(), tc, checkpoint_path=path, on_epoch=on_epoch)
    rec = {"record": "best", "epoch": result.best_epoch, "val_accuracy": result.best_val_accuracy,
           "checkpoint": path, "params": model.param_count()}
    out.records([rec], f"best epoch {result.best_epoch}: val_accuracy={result.best_val_accuracy:.4f} "
                       f"-> {path}")


def cmd_eval(cfg, out: Output):
    from .model import load_checkpoint
    from .train import evaluate

    model, _ = load_checkpoint(_need(cfg, "checkpoint"))
    ds = _load_split(cfg)
    metrics = evaluate(model, ds)
    records = metrics.to_records()
    records += [{"record": "confusion", "true": k, "counts": list(map(int, row))}
                for k, row in enumerate(metrics.confusion)]
    text = [f"accuracy {metrics.accuracy:.4f}  loss {metrics.loss:.5f}  ({len(ds)} samples)", "",
            table([{"class": k, "precision": p, "recall": r} for k, p, r in metrics.per_class],
                  ["class", "precision", "recall"]), "", "confusion (rows = true class):"]
    text += ["  " + " ".join(f"{int(c):5d}" for c in row) for row in metrics.confusion]
    out.records(records, "\n".join(text))


def cmd_corrupt_eval(cfg, out: Output):
    from .corrupt import DEFAULT_GRIDS, PROTOCOLS, robustness_sweep
    from .model import load_checkpoint

    protocol = cfg["protocol"]
    if protocol not in PROTOCOLS:
        raise BadConfig(f"protocol: choose from {PROTOCOLS}, got {protocol!r}")
    model, _ = load_checkpoint(_need(cfg, "checkpoint"))
    ds = _load_split(cfg)
    grid = DEFAULT_GRIDS[protocol]
    if cfg["grid"]:
        items = [s.strip() for s in cfg["grid"].split(",")]
        try:
            grid = items if protocol == "part" else [float(s) if protocol != "frame" else int(s) for s in items]
        except ValueError:
            raise BadConfig(f"grid: cannot parse {cfg['grid']!r} for protocol {protocol}") from None
    parts = None
    if cfg["parts"]:
        try:
            with open(cfg["parts"], encoding="utf-8") as f:
                parts = json.load(f)
        except (OSError, ValueError) as e:
            raise BadConfig(f"parts: cannot load {cfg['parts']}: {e}") from None
    sweep = robustness_sweep(model, ds, protocol, grid, seed=cfg["seed"], sigma=cfg["sigma"], parts=parts)
    out.records(sweep.to_records(), sweep.to_text())


def cmd_cost(cfg, out: Output):
    from . import costmodel as cm

    records, text = [], []
    if (cfg["cin"] or cfg["cout"]) and not (cfg["cmid"] or cfg["kh"]):
        raise BadConfig("--cin/--cout need --cmid (ATW two-step cost) or --kh (DSC cost)")
    if cfg["cmid"]:
        from .atw import atw_cost_ratio

        ci, cmid, co = cfg["cin"], cfg["cmid"], cfg["cout"]
        ratio = atw_cost_ratio(ci, cmid, co)
        two, _ = cm.cost_two_step(cfg["n"], ci, cmid, co, cfg["t"], cfg["v"])
        single = cm.cost_conv1x1(cfg["n"], ci, co, cfg["t"], cfg["v"])
        records.append({"record": "atw_cost", "c_in": ci, "c_mid": cmid, "c_out": co,
                        "single_macs": single, "two_step_macs": two,
                        "ratio": float(ratio), "ratio_exact": str(ratio)})
        text.append(f"two-step / single 1x1 cost: ratio = {float(ratio):g} ({ratio})")
        text.append(f"  single {single:,} MACs, two-step {two:,} MACs at N={cfg['n']} T={cfg['t']} V={cfg['v']}")
    if cfg["kh"]:
        ci, co = cfg["cin"], cfg["cout"]
        if not ci or not co:
            raise BadConfig("--kh needs --cin and --cout")
        std = cm.cost_standard_conv(cfg["t"], cfg["v"], ci, co, cfg["kh"], cfg["kw"])
        dsc, ratio = cm.cost_dsc(cfg["t"], cfg["v"], ci, co, cfg["kh"], cfg["kw"])
        records.append({"record": "dsc_cost", "c_in": ci, "c_out": co, "k_h": cfg["kh"], "k_w": cfg["kw"],
                        "standard_macs": std, "dsc_macs": dsc, "ratio": float(ratio),
                        "ratio_exact": str(ratio),
                        "standard_params": cm.standard_conv_param_count(ci, co, cfg["kh"], cfg["kw"]),
                        "dsc_params": cm.dsc_param_count(ci, co, cfg["kh"], cfg["kw"])})
        text.append(f"DSC / standard conv cost: ratio = {float(ratio):g} ({ratio})")
        text.append(f"  standard {std:,} MACs, DSC {dsc:,} MACs at T={cfg['t']} V={cfg['v']}")
    if not records:
        from .model import ModelConfig, build, load_checkpoint

        model = load_checkpoint(cfg["checkpoint"])[0] if cfg["checkpoint"] else build(ModelConfig(), cfg["seed"])
        report = cm.count_model(model)
        records, text = report.to_records(), [report.to_text()]
    out.records(records, "\n".join(text))


def cmd_gradcheck(cfg, out: Output):
    from .gradcheck import run_suite

    if cfg["trials"] < 1:
        raise BadConfig("trials must be >= 1")
    results = run_suite(cfg["trials"], cfg["seed"])
    rows = [{"check": r.name, "trials": r.trials, "max_rel_error": f"{r.max_rel_error:.3e}",
             "tolerance": f"{r.tolerance:.0e}", "status": "ok" if r.passed else "FAIL"} for r in results]
    out.records([r.to_record() for r in results], table(rows, list(rows[0])))
    if not all(r.passed for r in results):
        raise GradcheckFailed("gradient check failed: " + ", ".join(r.name for r in results if not r.passed))


class GradcheckFailed(RetcnError, RuntimeError):
    pass


HANDLERS = {"synth": cmd_synth, "augment": cmd_augment, "train": cmd_train, "eval": cmd_eval,
            "corrupt-eval": cmd_corrupt_eval, "cost": cmd_cost, "gradcheck": cmd_gradcheck}


# -- entry point --------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise BadConfig(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="retcn", description="Skeleton action recognition micro-framework.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for command in COMMANDS:
        p = sub.add_parser(command, help=_HELP[command], description=_HELP[command])
        p.add_argument("--config", help="KEY=VALUE file; flags override it")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        for key, default in _keys(command).items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, metavar=key.upper(),
                           help=f"default: {render(default) or 'unset'}")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        if not args.command:
            raise BadConfig("a subcommand is required: " + ", ".join(COMMANDS))
        logging.getLogger("retcn").setLevel(logging.INFO if args.verbose else logging.WARNING)
        log.setLevel(logging.INFO)
        flags = {k: getattr(args, k) for k in _keys(args.command)}
        cfg = resolve(args.command, flags, args.config)
        log.info("resolved %s: %s", args.command, " ".join(f"{k}={render(v)}" for k, v in cfg.items()))
        HANDLERS[args.command](cfg, Output(cfg["format"]))
    except (ValidationError, FileNotFoundError) as e:
        print(f"retcn: error: {e}", file=sys.stderr)
        return 1
    except (RetcnError, OSError, RuntimeError, FloatingPointError) as e:
        print(f"retcn: runtime error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
