"""Command-line surface: one INI config file plus per-command flags.

Commands: prepare, stats, train, evaluate, predict, icl-eval. Every config
key is documented in docs/config.md and listed by ``--help``; unknown keys
or sections are rejected. Artifacts land under ``<output_dir>/<run-id>/``
and are written atomically (temp file + rename), so a rerun with the same
config and seed reproduces byte-identical outputs.

Exit codes: 0 success, 1 user error (bad config/input), 2 internal error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import candidates, corpus, incontext, model as model_mod, train_eval
from .candidates import GenerationPolicy, RelationInstance
from .encoding import EncoderSettings, LabelSpace, Vocab, build_vocab, encode
from .incontext import HttpClient, PromptTemplate
from .model import ModelConfig
from .train_eval import TrainConfig


class UserError(Exception):
    pass


def _parse_pairs(value: str):
    """'*' -> wildcard (None); 'a:b, c:d' -> frozenset of ordered pairs;
    empty -> empty frozenset."""
    value = value.strip()
    if value == "*":
        return None
    pairs = set()
    if value:
        for part in value.split(","):
            bits = part.strip().split(":")
            if len(bits) != 2:
                raise UserError(f"bad type pair {part.strip()!r}; expected 'left:right'")
            pairs.add((bits[0].strip(), bits[1].strip()))
    return frozenset(pairs)


_BOOL, _INT, _FLOAT, _STR, _PAIRS = "bool", "int", "float", "str", "pairs"

CONFIG_SCHEMA: dict[str, dict[str, tuple[str, str]]] = {
    "paths": {
        "corpus_dir": (_STR, ""),
        "corpus_format": (_STR, "brat"),
        "type_map": (_STR, ""),
        "output_dir": (_STR, ""),
    },
    "generation": {
        "allowed_relation_tui_pairs": (_PAIRS, "*"),
        "nonrelation_tui_pairs": (_PAIRS, "*"),
        "nonrelation_cui_pairs": (_PAIRS, ""),
        "max_nonrelations_per_project": (_INT, "70"),
        "max_entity_distance": (_INT, "1000"),
        "require_validated": (_BOOL, "true"),
        "split_other_by_tui_pair": (_BOOL, "false"),
        "rng_seed": (_INT, "0"),
    },
    "encoder": {
        "max_seq_len": (_INT, "128"),
        "context_window": (_INT, "16"),
        "marker_mode": (_STR, "markers"),
        "lowercase": (_BOOL, "true"),
        "vocab_size": (_INT, "8192"),
        "vocab_min_freq": (_INT, "1"),
    },
    "model": {
        "d_model": (_INT, "64"),
        "n_layers": (_INT, "2"),
        "n_heads": (_INT, "4"),
        "d_ff": (_INT, "128"),
        "use_marker_states": (_BOOL, "true"),
        "use_pooled_output": (_BOOL, "true"),
        "dropout_rate": (_FLOAT, "0.1"),
        "head_hidden": (_INT, "128"),
    },
    "train": {
        "epochs": (_INT, "20"),
        "lr": (_FLOAT, "0.001"),
        "batch_size": (_INT, "32"),
        "freeze": (_STR, "all_unfrozen"),
        "use_class_weights": (_BOOL, "true"),
        "use_stratified_batching": (_BOOL, "true"),
        "seed": (_INT, "0"),
        "early_stop_patience": (_INT, "5"),
        "eval_split_fraction": (_FLOAT, "0.2"),
    },
    "icl": {
        "template": (_STR, "llama_style"),
        "endpoint": (_STR, "http://127.0.0.1:8751/"),
        "shots_per_class": (_INT, "0"),
        "seed": (_INT, "0"),
        "timeout": (_FLOAT, "30"),
        "max_retries": (_INT, "3"),
        "concurrency": (_INT, "4"),
        "max_failure_rate": (_FLOAT, "0.1"),
        "max_tokens": (_INT, "16"),
    },
}


@dataclass
class RunConfig:
    paths: dict
    policy: GenerationPolicy
    encoder: EncoderSettings
    vocab_size: int
    vocab_min_freq: int
    model_kw: dict
    train: TrainConfig
    icl: dict


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise UserError(f"config file not found: {path}")
    values: dict[str, dict] = {}
    for section in parser.sections():
        if section not in CONFIG_SCHEMA:
            raise UserError(f"unknown config section [{section}]")
    for section, keys in CONFIG_SCHEMA.items():
        values[section] = {}
        present = dict(parser[section]) if parser.has_section(section) else {}
        for key in present:
            if key not in keys:
                raise UserError(f"unknown config key [{section}] {key}")
        for key, (kind, default) in keys.items():
            raw = present.get(key, default)
            try:
                if kind == _BOOL:
                    values[section][key] = raw.strip().lower() in ("1", "true", "yes", "on")
                elif kind == _INT:
                    values[section][key] = int(raw)
                elif kind == _FLOAT:
                    values[section][key] = float(raw)
                elif kind == _PAIRS:
                    values[section][key] = _parse_pairs(raw)
                else:
                    values[section][key] = raw.strip()
            except ValueError:
                raise UserError(f"bad value for [{section}] {key}: {raw!r}") from None

    gen = values["generation"]
    nonrel_cui = gen["nonrelation_cui_pairs"]
    try:
        policy = GenerationPolicy(
            allowed_relation_tui_pairs=gen["allowed_relation_tui_pairs"],
            nonrelation_tui_pairs=gen["nonrelation_tui_pairs"],
            nonrelation_cui_pairs=nonrel_cui if nonrel_cui else None,
            max_nonrelations_per_project=gen["max_nonrelations_per_project"],
            max_entity_distance=gen["max_entity_distance"],
            require_validated=gen["require_validated"],
            split_other_by_tui_pair=gen["split_other_by_tui_pair"],
            rng_seed=gen["rng_seed"])
        encoder = EncoderSettings(
            max_seq_len=values["encoder"]["max_seq_len"],
            context_window=values["encoder"]["context_window"],
            marker_mode=values["encoder"]["marker_mode"],
            lowercase=values["encoder"]["lowercase"])
        if values["train"]["freeze"] not in model_mod.FREEZE_MODES:
            raise ValueError(f"freeze must be one of {model_mod.FREEZE_MODES}, "
                             f"got {values['train']['freeze']!r}")
        train_cfg = TrainConfig(**values["train"])
    except ValueError as exc:
        raise UserError(f"invalid config: {exc}") from None

    if values["paths"]["corpus_format"] not in ("brat", "trainer"):
        raise UserError("corpus_format must be 'brat' or 'trainer'")
    if values["model"]["use_marker_states"] and encoder.marker_mode != "markers":
        raise UserError("use_marker_states requires [encoder] marker_mode = markers")
    for key in ("corpus_dir", "type_map"):
        p = values["paths"][key]
        if p and not Path(p).exists():
            raise UserError(f"[paths] {key} does not exist: {p}")
    return RunConfig(paths=values["paths"], policy=policy, encoder=encoder,
                     vocab_size=values["encoder"]["vocab_size"],
                     vocab_min_freq=values["encoder"]["vocab_min_freq"],
                     model_kw=dict(values["model"]), train=train_cfg,
                     icl=dict(values["icl"]))


def _atomic_write(path: Path, content: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(content, encoding="utf-8")
    os.replace(tmp, path)


def _run_dir(cfg: RunConfig, args, default_suffix: str) -> Path:
    out_root = cfg.paths["output_dir"]
    if not out_root:
        raise UserError("[paths] output_dir is required for this command")
    run_id = args.run_id or default_suffix
    run_dir = Path(out_root) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _load_corpus(cfg: RunConfig) -> list[corpus.Document]:
    corpus_dir = cfg.paths["corpus_dir"]
    if not corpus_dir:
        raise UserError("[paths] corpus_dir is required for this command")
    root = Path(corpus_dir)
    docs: list[corpus.Document] = []
    if cfg.paths["corpus_format"] == "brat":
        txt_files = sorted(root.glob("*.txt"))
        if not txt_files:
            raise UserError(f"no .txt files in corpus_dir {root}")
        for txt_path in txt_files:
            ann_path = txt_path.with_suffix(".ann")
            if not ann_path.exists():
                raise UserError(f"missing annotation file {ann_path}")
            docs.append(corpus.parse_standoff(
                txt_path.read_text(encoding="utf-8"),
                ann_path.read_text(encoding="utf-8"),
                doc_id=txt_path.stem, project_id=root.name))
    else:
        type_map = None
        if cfg.paths["type_map"]:
            type_map = corpus.load_type_map(
                Path(cfg.paths["type_map"]).read_text(encoding="utf-8"))
        json_files = sorted(root.glob("*.json"))
        if not json_files:
            raise UserError(f"no .json files in corpus_dir {root}")
        for json_path in json_files:
            docs.extend(corpus.parse_trainer_export(
                json_path.read_text(encoding="utf-8"), type_map))
    return docs


def _read_instances(path) -> list[RelationInstance]:
    try:
        return candidates.read_instances_jsonl(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UserError(f"instances file not found: {path}") from None


def _read_texts(path) -> dict[str, str]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UserError(f"texts file not found: {path}") from None


def cmd_prepare(cfg: RunConfig, args) -> int:
    docs = _load_corpus(cfg)
    run_dir = _run_dir(cfg, args, f"prepare-s{cfg.policy.rng_seed}")
    gold, report = candidates.build_gold_instances(docs, cfg.policy)
    other = candidates.synthesize_nonrelations(docs, cfg.policy)
    instances = gold + other
    stats = candidates.dataset_stats(instances)
    _atomic_write(run_dir / "instances.jsonl", candidates.write_instances_jsonl(instances))
    _atomic_write(run_dir / "texts.json",
                  json.dumps({d.doc_id: d.text for d in docs}, sort_keys=True,
                             ensure_ascii=False, indent=0) + "\n")
    _atomic_write(run_dir / "stats.json",
                  json.dumps(stats.to_json_dict(), sort_keys=True, indent=2) + "\n")
    _atomic_write(run_dir / "stats.txt", stats.to_text())
    print(f"{len(docs)} documents -> {len(gold)} gold + {len(other)} synthesized "
          f"instances (dropped: {report.unvalidated} unvalidated, "
          f"{report.distance} over-distance, {report.tui_filtered} type-filtered)")
    print(f"artifacts in {run_dir}")
    return 0


def cmd_stats(cfg: RunConfig, args) -> int:
    instances = _read_instances(args.instances)
    print(candidates.dataset_stats(instances).to_text(), end="")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    instances = _read_instances(args.instances)
    texts = _read_texts(args.texts)
    run_dir = _run_dir(cfg, args, f"train-s{cfg.train.seed}")
    vocab = build_vocab(list(texts.values()),
                        max_size=args.vocab_size or cfg.vocab_size,
                        min_freq=cfg.vocab_min_freq,
                        lowercase=cfg.encoder.lowercase)
    labels = LabelSpace.from_labels(inst.label for inst in instances)
    try:
        mcfg = ModelConfig(vocab_size=len(vocab), n_labels=len(labels),
                           max_seq_len=cfg.encoder.max_seq_len, **cfg.model_kw)
        trained, log = train_eval.train(instances, texts, vocab, mcfg, cfg.train,
                                        settings=cfg.encoder)
    except ValueError as exc:
        raise UserError(str(exc)) from None
    _atomic_write(run_dir / "vocab.txt", vocab.serialize())
    tmp = run_dir / "model.bin.tmp"
    model_mod.save(trained, tmp)
    os.replace(tmp, run_dir / "model.bin")
    _atomic_write(run_dir / "trainlog.jsonl",
                  "".join(json.dumps(e, sort_keys=True) + "\n" for e in log))
    if log:
        best = max(e.get("heldout_macro_f1") or 0.0 for e in log)
        print(f"trained {len(log)} epochs; best held-out macro F1: {best:.3f}")
    else:
        print("trained 0 epochs (initial model saved)")
    print(f"artifacts in {run_dir}")
    return 0


def _load_model_and_vocab(args):
    model_path = Path(args.model)
    if not model_path.exists():
        raise UserError(f"model file not found: {model_path}")
    vocab_path = Path(args.vocab) if args.vocab else model_path.parent / "vocab.txt"
    if not vocab_path.exists():
        raise UserError(f"vocab file not found: {vocab_path}")
    vocab = Vocab.deserialize(vocab_path.read_text(encoding="utf-8"))
    try:
        trained = model_mod.load(model_path, expect_vocab_hash=vocab.content_hash)
    except model_mod.ModelIOError as exc:
        raise UserError(str(exc)) from None
    return trained, vocab


def _encode_all(instances, texts, vocab, settings, labels):
    encoded = []
    for inst in instances:
        if inst.doc_id not in texts:
            raise UserError(f"document text missing for {inst.doc_id}")
        encoded.append(encode(inst, texts[inst.doc_id], vocab, settings, labels))
    return encoded


def cmd_evaluate(cfg: RunConfig, args) -> int:
    trained, vocab = _load_model_and_vocab(args)
    instances = _read_instances(args.instances)
    texts = _read_texts(args.texts)
    labels = LabelSpace(trained.labels)
    encoded = _encode_all(instances, texts, vocab, cfg.encoder, labels)
    report = train_eval.evaluate(trained, encoded)
    rendered = train_eval.render_report(report, args.format)
    print(rendered, end="")
    if cfg.paths["output_dir"]:
        run_dir = _run_dir(cfg, args, f"evaluate-s{cfg.train.seed}")
        ext = {"text": "txt", "json": "json", "csv": "csv"}[args.format]
        _atomic_write(run_dir / f"report.{ext}", rendered)
    return 0


def cmd_predict(cfg: RunConfig, args) -> int:
    trained, vocab = _load_model_and_vocab(args)
    raw = sys.stdin.read() if args.input == "-" else Path(args.input).read_text("utf-8")
    try:
        payload = json.loads(raw)
        text = payload["text"]
        ents = {}
        for side in ("left", "right"):
            spec = payload[side]
            ents[side] = corpus.Entity(
                ent_id=spec.get("ent_id", side), start=spec["start"], end=spec["end"],
                surface=text[spec["start"]:spec["end"]],
                cui=spec.get("cui", ""), tui=spec.get("tui", ""))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UserError(f"bad predict input: {exc}") from None
    inst = RelationInstance(doc_id=payload.get("doc_id", "input"), left=ents["left"],
                            right=ents["right"], label="", project_id="")
    encoded = encode(inst, text, vocab, cfg.encoder, labels=None)
    probs = model_mod.predict_proba(trained, [encoded])[0]
    dist = {label: float(p) for label, p in zip(trained.labels, probs)}
    best = trained.labels[int(np.argmax(probs))]
    print(json.dumps({"label": best, "probs": dist}, sort_keys=True))
    return 0


def cmd_icl_eval(cfg: RunConfig, args) -> int:
    instances = _read_instances(args.instances)
    texts = _read_texts(args.texts)
    template = PromptTemplate.load(cfg.icl["template"])
    client = HttpClient(endpoint=cfg.icl["endpoint"], timeout=cfg.icl["timeout"],
                        max_retries=cfg.icl["max_retries"],
                        concurrency=cfg.icl["concurrency"])
    shots = args.shots if args.shots is not None else cfg.icl["shots_per_class"]
    train_instances = _read_instances(args.train_instances) if args.train_instances else None
    try:
        result = incontext.icl_evaluate(
            instances, texts, template, client, shots_per_class=shots,
            seed=cfg.icl["seed"], train_instances=train_instances,
            settings=cfg.encoder, max_tokens=cfg.icl["max_tokens"],
            max_failure_rate=cfg.icl["max_failure_rate"])
    except incontext.ClientError as exc:
        raise UserError(f"inference endpoint failure: {exc}") from None
    rendered = train_eval.render_report(result.report, "text")
    print(rendered, end="")
    print(f"unparseable: {result.n_unparseable}  failed: {result.n_failed}")
    if cfg.paths["output_dir"]:
        run_dir = _run_dir(cfg, args, f"icl-s{cfg.icl['seed']}")
        _atomic_write(run_dir / "icl_report.txt", rendered)
        _atomic_write(run_dir / "icl_records.jsonl",
                      "".join(json.dumps(r, sort_keys=True) + "\n"
                              for r in result.records))
    return 0


def _config_help() -> str:
    lines = ["config keys (see docs/config.md):"]
    for section, keys in CONFIG_SCHEMA.items():
        for key, (kind, default) in keys.items():
            lines.append(f"  [{section}] {key} ({kind}, default {default!r})")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relex",
        description="Relation classification pipeline: corpus preparation, "
                    "training, evaluation, prediction, and prompt-based evaluation.",
        epilog=_config_help(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--config", required=True, help="INI config file")
    parser.add_argument("--run-id", default=None,
                        help="artifact subdirectory name (default: command + seed)")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("prepare", help="parse corpus, synthesize non-relations, "
                                   "write instances + stats")
    p = sub.add_parser("stats", help="print label/type-pair statistics of an "
                                     "instances file")
    p.add_argument("--instances", required=True)
    p = sub.add_parser("train", help="train a model on prepared instances")
    p.add_argument("--instances", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--vocab-size", type=int, default=None, dest="vocab_size",
                   help="override [encoder] vocab_size")
    p = sub.add_parser("evaluate", help="score a model on labeled instances")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--instances", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--format", choices=("text", "json", "csv"), default="text")
    p = sub.add_parser("predict", help="classify one document/entity-pair input")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", default=None)
    p.add_argument("--input", required=True, help="JSON file or '-' for stdin")
    p = sub.add_parser("icl-eval", help="prompt-based evaluation via an "
                                        "inference endpoint")
    p.add_argument("--instances", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--shots", type=int, default=None,
                   help="override [icl] shots_per_class")
    p.add_argument("--train-instances", default=None,
                   help="instances file shots are drawn from")
    return parser


_COMMANDS = {
    "prepare": cmd_prepare,
    "stats": cmd_stats,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "icl-eval": cmd_icl_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return _COMMANDS[args.command](cfg, args)
    except (UserError, corpus.ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
