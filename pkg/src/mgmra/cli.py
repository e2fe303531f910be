"""
Command-line entry point: ``mgmra <command> [flags]``.

Commands: synth, train, eval, gradcheck, ablate, export-memory.  Settings
come from an optional ``key = value`` file (``--config``) overridden by
flags; every command writes the fully resolved settings to
``<out>/config.resolved``, which can be fed back through ``--config``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import numerics as nx
from .data import RecordSet, SynthConfig, generate, pk_sample, read_csv_dataset, read_dataset, write_dataset
from .errors import ConfigurationError, ContractError, MGMRAError
from .evaluation import MODES, evaluate
from .experiments import ablate, write_ablation_csv
from .losses import LossReport, LossWeights
from .memory import mg_mra_forward
from .trainer import (
    STREAM_SAMPLER,
    Checkpoint,
    ModelParams,
    TrainConfig,
    batch_losses,
    init_model,
    load_model,
    relabel,
    train,
    write_loss_csv,
)

log = logging.getLogger("mgmra")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_MISSING = 0, 1, 2, 3
COMMANDS = ("synth", "train", "eval", "gradcheck", "ablate", "export-memory")
GRADCHECK_TOL = 1e-4
PATH_KEYS = ("out", "dataset", "checkpoint")
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def _on_off(text):
    v = str(text).strip().lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise ValueError(f"expected on/off, got {text!r}")


def _defaults() -> dict[str, object]:
    """Every recognised key with its default value."""
    out: dict[str, object] = {}
    for f in fields(SynthConfig):
        out[f.name] = getattr(SynthConfig(), f.name)
    train_defaults = TrainConfig()
    for f in fields(TrainConfig):
        if f.name != "weights":
            out[f.name] = getattr(train_defaults, f.name)
    for f in fields(LossWeights):
        out[f.name] = getattr(LossWeights(), f.name)
    out.update(mode="main", eval_seeds=10, seeds=5, dump_rankings=False, out="out", dataset="", checkpoint="")
    return out


DEFAULTS = _defaults()


def _coerce(key, value):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            return _on_off(value)
        return type(default)(value)
    except ValueError as exc:
        raise ConfigurationError(f"config key {key!r}: {exc}") from None


def read_config_file(path) -> dict[str, object]:
    settings = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        if key not in DEFAULTS:
            raise ConfigurationError(f"{path}:{lineno}: unknown config key {key!r}")
        settings[key] = _coerce(key, value.strip())
    return settings


def write_config_file(path, settings, command) -> None:
    lines = [f"# resolved settings for: {command}"]
    lines += [f"{k} = {_format(settings[k])}" for k in sorted(settings)]
    Path(path).write_text("\n".join(lines) + "\n")


def _format(v):
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgmra", description=__doc__.strip().splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    add = parser.add_argument
    add("--config", help="key = value settings file")
    add("--seed", type=int)
    add("--out")
    add("--dataset", help="directory written by 'synth', a .mgmr file or a .csv file")
    add("--checkpoint")
    add("--mode", choices=MODES)
    add("--mgmra", choices=("on", "off"))
    add("--epochs", type=int)
    add("--lr", type=float)
    add("--p", type=int, dest="P")
    add("--k", type=int, dest="K")
    add("--lambda1", type=float)
    add("--lambda2", type=float)
    add("--lambda3", type=float)
    add("--margin", type=float, help="sets both triplet margins")
    add("--proto-p", type=int, dest="parts_per")
    add("--proto-i", type=int, dest="instances_per")
    add("--proto-s", type=int, dest="semantics_per")
    add("--seeds", type=int, help="number of paired seeds for 'ablate'")
    add("--dump-rankings", action="store_true", default=None)
    return parser


def resolve(args) -> dict[str, object]:
    settings = dict(DEFAULTS)
    if args.config:
        settings.update(read_config_file(args.config))
    flags = vars(args)
    for key in ("seed", "out", "dataset", "checkpoint", "mode", "epochs", "lr", "P", "K", "lambda1", "lambda2",
                "lambda3", "parts_per", "instances_per", "semantics_per", "seeds", "dump_rankings"):
        if flags.get(key) is not None:
            settings[key] = flags[key]
    if args.mgmra is not None:
        settings["mgmra_enabled"] = args.mgmra == "on"
    if args.margin is not None:
        settings["margin_tri"] = settings["margin_sem"] = args.margin
    return settings


def synth_config(s) -> SynthConfig:
    return SynthConfig(**{f.name: s[f.name] for f in fields(SynthConfig)})


def train_config(s) -> TrainConfig:
    weights = LossWeights(**{f.name: s[f.name] for f in fields(LossWeights)})
    kw = {f.name: s[f.name] for f in fields(TrainConfig) if f.name != "weights"}
    return TrainConfig(weights=weights, **kw)


def _load_split(dataset, name) -> RecordSet:
    path = Path(dataset)
    if not dataset:
        raise ContractError("--dataset is required for this command")
    if path.is_dir():
        path = path / f"{name}.mgmr"
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    if path.suffix == ".csv":
        return read_csv_dataset(path)
    return read_dataset(path)


def _load_checkpoint(s) -> Checkpoint:
    if not s["checkpoint"]:
        raise ContractError("--checkpoint is required for this command")
    if not Path(s["checkpoint"]).exists():
        raise FileNotFoundError(f"checkpoint not found: {s['checkpoint']}")
    return Checkpoint.load(s["checkpoint"])


# ---------------------------------------------------------------- commands


def cmd_synth(s, out: Path) -> int:
    for name, records in zip(("train", "query", "gallery"), generate(synth_config(s))):
        write_dataset(out / f"{name}.mgmr", records)
        log.info("wrote %s (%d records)", out / f"{name}.mgmr", len(records))
    return EXIT_OK


def cmd_train(s, out: Path) -> int:
    cfg = train_config(s)
    result = train(cfg, _load_split(s["dataset"], "train"))
    # Paths are left out so the same settings give the same checkpoint bytes anywhere.
    echo = {k: _format(v) for k, v in s.items() if k not in PATH_KEYS}
    result.checkpoint(extra_config=echo).save(out / "model.ckpt")
    write_loss_csv(out / "loss.csv", result.history)
    log.info("wrote %s and %s", out / "model.ckpt", out / "loss.csv")
    return EXIT_OK


def cmd_eval(s, out: Path) -> int:
    ckpt = _load_checkpoint(s)
    query, gallery = _load_split(s["dataset"], "query"), _load_split(s["dataset"], "gallery")
    result = evaluate(
        ckpt, query, gallery, s["mode"], range(s["eval_seeds"]), out / "metrics.csv", s["dump_rankings"]
    )
    print(f"mode={s['mode']} rank1={result.rank1:.4f} mAP={result.map:.4f}")
    return EXIT_OK


def gradcheck_report(s) -> dict[str, float]:
    """Max relative gradient error per loss on a small freshly initialised model."""
    synth = SynthConfig(num_train_ids=4, num_test_ids=1, samples_per_id_per_modality=3, input_dim=6,
                        num_stripes=2, seed=s["seed"])
    records = generate(synth)[0]
    cfg = TrainConfig(hidden_dim=5, feature_dim=4, parts_per=2, instances_per=2, semantics_per=1,
                      P=3, K=2, seed=s["seed"], mgmra_enabled=s["mgmra_enabled"], weights=train_config(s).weights)
    class_ids = np.unique(records.identities)
    model = init_model(cfg, class_ids.size, synth.input_dim, synth.num_stripes)
    batch = pk_sample(records, cfg.P, cfg.K, nx.make_rng(s["seed"], STREAM_SAMPLER))
    x, labels, mods = batch.features(), relabel(batch.identities, class_ids), batch.modalities.astype(np.int64)
    params = list(model.tensors().values())

    names = LossReport.COLUMNS if model.memory is not None else ("id", "hc_tri", "total")
    report = {}
    for name in names:
        fn = lambda name=name: getattr(batch_losses(model, x, labels, mods, cfg.weights), name)  # noqa: E731
        report[name] = nx.grad_check(fn, params)
    if model.memory is not None:
        probe = nx.make_rng(s["seed"], 9).standard_normal((len(batch), cfg.feature_dim))
        q = nx.parameter(nx.make_rng(s["seed"], 10).standard_normal((len(batch), cfg.feature_dim)))

        def forward():
            return nx.sum(nx.mul(mg_mra_forward(q, model.memory).h_sem, probe))

        report["mg_mra_forward"] = nx.grad_check(forward, [q, *model.memory.tensors().values()])
    return report


def cmd_gradcheck(s, out: Path) -> int:
    report = gradcheck_report(s)
    lines = ["loss,max_rel_error"] + [f"{k},{v!r}" for k, v in report.items()]
    (out / "gradcheck.csv").write_text("\n".join(lines) + "\n")
    worst = max(report.values())
    for k, v in report.items():
        print(f"{k:16s} {v:.3e}")
    ok = worst < GRADCHECK_TOL
    print(f"{'PASS' if ok else 'FAIL'} worst={worst:.3e} tol={GRADCHECK_TOL:g}")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_ablate(s, out: Path) -> int:
    runs = ablate(range(s["seed"], s["seed"] + s["seeds"]), synth_config(s), train_config(s), range(s["eval_seeds"]))
    write_ablation_csv(out / "ablation.csv", runs)
    print(f"{'seed':>4} {'rank1_base':>10} {'rank1_mgmra':>11} {'map_base':>9} {'map_mgmra':>9}")
    for run in runs:
        r = run.row()
        print(f"{r['seed']:>4} {r['rank1_base']:>10.4f} {r['rank1_mgmra']:>11.4f} {r['map_base']:>9.4f} {r['map_mgmra']:>9.4f}")
    return EXIT_OK


def export_memory(ckpt: Checkpoint) -> Checkpoint:
    model: ModelParams = load_model(ckpt)
    if model.memory is None:
        raise ContractError("checkpoint has no prototype memory to export")
    part, ins, sem = (level.value.copy() for level in model.memory.levels())
    tensors = {"level.part": part, "level.instance": ins, "level.semantic": sem}
    tensors.update({k: t.value.copy() for k, t in model.memory.tensors().items() if "gate" in k})
    return Checkpoint(tensors, dict(ckpt.config), ckpt.epoch)


def cmd_export_memory(s, out: Path) -> int:
    export_memory(_load_checkpoint(s)).save(out / "memory.ckpt")
    log.info("wrote %s", out / "memory.ckpt")
    return EXIT_OK


HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
    "export-memory": cmd_export_memory,
}


def _setup_logging():
    level = os.environ.get("MGMRA_LOG_LEVEL", "info").strip().lower()
    if level not in LOG_LEVELS:
        raise ConfigurationError(f"MGMRA_LOG_LEVEL must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    log.setLevel(LOG_LEVELS[level])
    if not log.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        log.addHandler(handler)


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        _setup_logging()
        settings = resolve(args)
        out = Path(settings["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_config_file(out / "config.resolved", settings, args.command)
        return HANDLERS[args.command](settings, out)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except MGMRAError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
