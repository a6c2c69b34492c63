"""``legalmt`` command line: one executable, one subcommand per pipeline stage.

Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .corpus import CorpusError, format_stats, load_parallel
from .decode import DecodeConfig, translate_corpus
from .metrics.report import AlignmentError, EvalReport, evaluate, format_table
from .model import ModelConfig, TransformerModel
from .subword import SubwordConfigError, SubwordModel, train_subword
from .train import Checkpoint, CheckpointError, TrainConfig, TrainingDiverged, continue_training, train

log = logging.getLogger("legalmt")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------- config

SECTIONS = {
    "data": {"train": str, "valid": str, "test": str, "format": str, "policy": str,
             "source_lang": str, "target_lang": str},
    "subword": {"model": str, "vocab_size": int},
    "model": {f.name: f.type for f in dataclasses.fields(ModelConfig) if f.name != "vocab_size"},
    "train": {f.name: f.type for f in dataclasses.fields(TrainConfig) if f.name != "seed"},
    "decode": {f.name: f.type for f in dataclasses.fields(DecodeConfig)},
    "run": {"output_dir": str, "seed": int},
}
PATH_KEYS = {("data", "train"), ("data", "valid"), ("data", "test"), ("subword", "model"), ("run", "output_dir")}
DEFAULTS = {
    "data": {"format": "tsv", "policy": "drop", "source_lang": "en", "target_lang": "hi"},
    "subword": {"model": "subword.model", "vocab_size": 32000},
    "run": {"output_dir": "runs", "seed": 0},
}


def _coerce(value: str, kind, where):
    kind = kind.__name__ if isinstance(kind, type) else str(kind)
    if value.strip().lower() in ("none", "") and "None" in kind:
        return None
    try:
        if kind.startswith("bool"):
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind.startswith("int"):
            return int(value)
        if kind.startswith("float"):
            return float(value)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {value!r} as {kind}") from None
    return value.strip()


def load_config(path, overrides=()) -> dict:
    """Parse an INI run config plus ``section.key=value`` overrides.

    Unknown sections or keys are errors.  Relative paths resolve against the
    config file's directory.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(path.read_text(encoding="utf-8-sig"), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    raw = {s: dict(parser[s]) for s in parser.sections()}
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        raw.setdefault(section, {})[name] = value

    cfg = {s: dict(DEFAULTS.get(s, {})) for s in SECTIONS}
    for section, items in raw.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, value in items.items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            v = _coerce(value, SECTIONS[section][key], f"{section}.{key}")
            if (section, key) in PATH_KEYS and v and not Path(v).is_absolute():
                v = str((path.parent / v).resolve())
            cfg[section][key] = v
    for section, key in PATH_KEYS:
        v = cfg[section].get(key)
        if v and not Path(v).is_absolute():
            cfg[section][key] = str((path.parent / v).resolve())
    return cfg


def model_config(cfg) -> ModelConfig:
    try:
        return ModelConfig(vocab_size=cfg["subword"]["vocab_size"], **cfg["model"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[model]: {exc}") from None


def train_config(cfg, default_preset="scratch") -> TrainConfig:
    items = dict(cfg["train"])
    preset = items.pop("preset", default_preset)
    try:
        return TrainConfig.from_preset(preset, seed=cfg["run"]["seed"], **items)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[train]: {exc}") from None


def decode_config(cfg, strategy=None) -> DecodeConfig:
    items = dict(cfg["decode"])
    if strategy:
        items["strategy"] = strategy
    try:
        return DecodeConfig(**items)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[decode]: {exc}") from None


def _out_dir(cfg) -> Path:
    out = Path(cfg["run"]["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def snapshot(cfg, command, **resolved) -> Path:
    """Write the fully-resolved configuration beside the command's outputs."""
    doc = {"command": command, "config": cfg}
    doc.update({k: dataclasses.asdict(v) if dataclasses.is_dataclass(v) else v for k, v in resolved.items()})
    path = _out_dir(cfg) / f"{command}.resolved.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def _corpus(cfg, key, split):
    path = cfg["data"].get(key)
    if not path:
        return None
    if not Path(path).is_file():
        raise ConfigError(f"data.{key} not found: {path}")
    d = cfg["data"]
    return load_parallel(path, d["format"], split, d["policy"], d["source_lang"], d["target_lang"])


def _subword(cfg) -> SubwordModel:
    path = Path(cfg["subword"]["model"])
    if not path.is_file():
        raise ConfigError(f"subword model not found: {path} (run tokenizer-train first)")
    return SubwordModel.load(path)


# ------------------------------------------------------------- commands


def cmd_tokenizer_train(args):
    cfg = load_config(args.config, args.set)
    corpus = _corpus(cfg, "train", "train")
    if corpus is None:
        raise ConfigError("data.train is required")
    snapshot(cfg, "tokenizer-train")
    try:
        model = train_subword(corpus.sources + corpus.targets, cfg["subword"]["vocab_size"])
    except SubwordConfigError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(cfg["subword"]["model"])
    out.parent.mkdir(parents=True, exist_ok=True)
    digest = model.save(out)
    n_tok = sum(len(model.encode(t)) for t in corpus.sources + corpus.targets)
    n_words = sum(len(t.split(" ")) for t in corpus.sources + corpus.targets)
    print(f"vocab_size\t{model.vocab_size}")
    print(f"merges\t{len(model.merges)}")
    print(f"base_symbols\t{model.num_base}")
    print(f"tokens_per_word\t{n_tok / max(n_words, 1):.3f}")
    valid = _corpus(cfg, "valid", "validation")
    if valid is not None:
        ids = [i for t in valid.sources + valid.targets for i in model.encode(t)]
        print(f"valid_unk_rate\t{sum(i == model.unk_id for i in ids) / max(len(ids), 1):.5f}")
    print(f"sha256\t{digest}")
    return 0


def _run_training(cfg, command, tcfg, args, start=None):
    corpus = _corpus(cfg, "train", "train")
    if corpus is None:
        raise ConfigError("data.train is required")
    valid = _corpus(cfg, "valid", "validation")
    out = _out_dir(cfg) / ("checkpoints" if command == "train" else "continued")
    log_path = _out_dir(cfg) / ("loss.jsonl" if command == "train" else "continued_loss.jsonl")
    sw = _subword(cfg)
    if log_path.exists():
        log_path.unlink()
    try:
        if start is None:
            mcfg = dataclasses.replace(model_config(cfg), vocab_size=sw.vocab_size)
            model = TransformerModel(mcfg, seed=cfg["run"]["seed"])
            resume = Checkpoint.load(args.resume) if getattr(args, "resume", None) else None
            result = train(model, corpus, sw, tcfg, valid=valid, checkpoint_dir=out, log_path=log_path,
                           resume=resume)
        else:
            result = continue_training(start, corpus, sw, tcfg, valid=valid, checkpoint_dir=out, log_path=log_path)
    except TrainingDiverged as exc:
        print(f"error: {exc}; last good checkpoint kept in {out}", file=sys.stderr)
        return 1
    if result.history:
        last = result.history[-1]
        print(f"epochs\t{last.epoch}\nfinal_train_loss\t{last.train_loss:.4f}\nsteps\t{last.step}")
    print(f"checkpoint\t{result.checkpoint_path}")
    return 0


def cmd_train(args):
    cfg = load_config(args.config, args.set)
    tcfg = train_config(cfg, "scratch")
    mcfg = model_config(cfg)
    if Path(cfg["subword"]["model"]).is_file():
        mcfg = dataclasses.replace(mcfg, vocab_size=_subword(cfg).vocab_size)
    snapshot(cfg, "train", model_config=mcfg, train_config=tcfg)
    if args.dry_run:
        return 0
    return _run_training(cfg, "train", tcfg, args)


def cmd_continue(args):
    cfg = load_config(args.config, args.set)
    if not args.checkpoint or not Path(args.checkpoint).is_file():
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    tcfg = train_config(cfg, "continued")
    if tcfg.preset != "continued":
        raise ConfigError("continue requires train.preset = continued")
    try:
        ckpt = Checkpoint.load(args.checkpoint)
    except CheckpointError as exc:
        raise ConfigError(str(exc)) from None
    snapshot(cfg, "continue", model_config=ckpt.model_config, train_config=tcfg,
             checkpoint=str(Path(args.checkpoint).resolve()))
    if args.dry_run:
        return 0
    sw = _subword(cfg)
    if ckpt.subword_hash != sw.content_hash:
        raise ConfigError("subword model hash does not match the checkpoint")
    return _run_training(cfg, "continue", tcfg, args, start=ckpt)


def cmd_translate(args):
    cfg = load_config(args.config, args.set)
    if not args.checkpoint or not Path(args.checkpoint).is_file():
        raise ConfigError(f"checkpoint not found: {args.checkpoint}")
    if not Path(args.input).is_file():
        raise ConfigError(f"input file not found: {args.input}")
    dcfg = decode_config(cfg, args.strategy)
    sw = _subword(cfg)
    ckpt = Checkpoint.load(args.checkpoint)
    if ckpt.subword_hash != sw.content_hash:
        raise ConfigError("subword model hash does not match the checkpoint")
    snapshot(cfg, "translate", decode_config=dcfg, checkpoint=str(Path(args.checkpoint).resolve()))
    model = ckpt.build_model().eval()
    from .metrics.report import read_lines
    lines = read_lines(args.input)
    outputs, failures = translate_corpus(model, sw, lines, dcfg)
    Path(args.output).write_text("".join(o + "\n" for o in outputs), encoding="utf-8")
    print(f"translated\t{len(outputs)}\nfailures\t{failures}")
    return 0


def cmd_evaluate(args):
    for p in (args.hyp, args.ref):
        if not Path(p).is_file():
            raise ConfigError(f"file not found: {p}")
    try:
        report = evaluate(args.hyp, args.ref, per_sentence=args.per_sentence)
    except AlignmentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    prefix = Path(args.output)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    Path(f"{prefix}.json").write_text(report.to_json() + "\n", encoding="utf-8")
    table = format_table([(args.label, report)])
    Path(f"{prefix}.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def cmd_report(args):
    if args.label and len(args.label) != len(args.reports):
        raise ConfigError("give one --label per report")
    rows = []
    for k, path in enumerate(args.reports):
        if not Path(path).is_file():
            raise ConfigError(f"report not found: {path}")
        label = args.label[k] if args.label else Path(path).stem
        rows.append((label, EvalReport.from_json(Path(path).read_text(encoding="utf-8"))))
    table = format_table(rows)
    if args.output:
        Path(args.output).write_text(table + "\n", encoding="utf-8")
    print(table)
    return 0


def cmd_corpus_stats(args):
    cfg = load_config(args.config, args.set)
    rows = []
    for key, split in (("train", "train"), ("valid", "validation"), ("test", "test")):
        c = _corpus(cfg, key, split)
        if c is not None:
            rows.append((split, len(c)))
    if not rows:
        raise ConfigError("no corpus paths configured in [data]")
    print(format_stats(rows))
    return 0


# ----------------------------------------------------------------- main


def build_parser():
    p = argparse.ArgumentParser(prog="legalmt", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        sp.set_defaults(func=func)
        return sp

    with_config("tokenizer-train", cmd_tokenizer_train, "train the subword model")
    sp = with_config("train", cmd_train, "train a model from scratch")
    sp.add_argument("--dry-run", action="store_true", help="resolve and snapshot the config only")
    sp.add_argument("--resume", help="checkpoint to resume from")
    sp = with_config("continue", cmd_continue, "continued training from a checkpoint")
    sp.add_argument("--checkpoint")
    sp.add_argument("--dry-run", action="store_true")
    sp = with_config("translate", cmd_translate, "translate a file line by line")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--input", required=True)
    sp.add_argument("--output", required=True)
    sp.add_argument("--strategy", choices=("greedy", "beam"))
    with_config("corpus-stats", cmd_corpus_stats, "print pair counts per split")

    sp = sub.add_parser("evaluate", help="score a hypothesis file against references")
    sp.add_argument("--hyp", required=True)
    sp.add_argument("--ref", required=True)
    sp.add_argument("--output", required=True, help="output prefix; writes PREFIX.json and PREFIX.txt")
    sp.add_argument("--label", default="system")
    sp.add_argument("--per-sentence", action="store_true")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="render saved reports as one results table")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--label", action="append")
    sp.add_argument("--output")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, CheckpointError, SubwordConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
