"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 malformed
input artifact.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .arena import (ProtocolConfig, UtilityTable, derive_seed, load_report, run_protocol,
                    solve_stages, write_artifacts)
from .attacks import (ATTACK_KINDS, FgsmParams, OnePixelParams, attack_dataset,
                      save_outcomes, write_outcome_csv)
from .dataset import (LABEL_SPACE, Distortion, GenConfig, generate_dataset, load_dataset,
                      save_dataset, split, write_manifest)
from .errors import (ConfigError, DomainError, FormatError, IncompleteTableError,
                     MalformedTreeError, MissingStageError)
from .game import ATTACKS, AttackStages, GameConfig, render_tree
from .netcore import (Model, TrainConfig, evaluate, load_checkpoint, save_checkpoint, train,
                      write_loss_curve)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_FORMAT = 0, 2, 3, 4

log = logging.getLogger("captcha_arena")

_SECTIONS = {"gen": GenConfig, "distortion": Distortion, "train": TrainConfig,
             "fgsm": FgsmParams, "one_pixel": OnePixelParams, "game": GameConfig}
_PROTOCOL_KEYS = ("max_retrain_rounds", "master_seed", "test_fraction", "retrain_epochs",
                  "holdout_mode", "strict_gating")


def _coerce(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            return configparser.ConfigParser.BOOLEAN_STATES[raw.lower()]
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except (KeyError, ValueError):
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


def _section_values(parser: configparser.ConfigParser, name: str, cls) -> dict:
    if not parser.has_section(name):
        return {}
    fields = {f.name: f for f in dataclasses.fields(cls)}
    defaults = cls()
    out = {}
    for key, raw in parser.items(name):
        if key not in fields:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        out[key] = _coerce(raw, getattr(defaults, key), f"[{name}] {key}")
    return out


def load_config(path=None, seed: int | None = None) -> ProtocolConfig:
    """Build a protocol config from an INI file; ``seed`` overrides the file."""
    parser = configparser.ConfigParser()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    unknown = set(parser.sections()) - set(_SECTIONS) - {"protocol"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    values = {name: _section_values(parser, name, cls) for name, cls in _SECTIONS.items()}
    gen = GenConfig(**values["gen"], distortion=Distortion(**values["distortion"]))
    proto = {}
    if parser.has_section("protocol"):
        defaults = ProtocolConfig()
        for key, raw in parser.items("protocol"):
            if key not in _PROTOCOL_KEYS:
                raise ConfigError(f"[protocol] unknown key {key!r}")
            default = getattr(defaults, key)
            proto[key] = _coerce(raw, 0 if default is None else default, f"[protocol] {key}")
    if seed is not None:
        proto["master_seed"] = seed
    return ProtocolConfig(gen=gen, train=TrainConfig(**values["train"]),
                          fgsm=FgsmParams(**values["fgsm"]),
                          one_pixel=OnePixelParams(**values["one_pixel"]),
                          game=GameConfig(**values["game"]), **proto)


def read_accuracy_table(path) -> dict[str, AttackStages]:
    """Parse ``attack,stage,defender_choice,accuracy`` rows.

    Stage 1 ``Original`` is the post-attack accuracy; the ``Retrain`` entry
    of stage k is the accuracy after retraining round k.
    """
    aliases = {"fgsm": "FGSM", "onepixel": "OnePixel", "one pixel": "OnePixel",
               "one_pixel": "OnePixel"}
    cells: dict[str, dict[tuple[int, str], float]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != \
                ["attack", "stage", "defender_choice", "accuracy"]:
            raise FormatError(f"{path}: header must be attack,stage,defender_choice,accuracy")
        for lineno, row in enumerate(reader, start=2):
            try:
                attack = aliases.get(row["attack"].strip().lower(), row["attack"].strip())
                stage = int(row["stage"])
                choice = row["defender_choice"].strip()
                acc = float(row["accuracy"])
            except (TypeError, ValueError, AttributeError):
                raise FormatError(f"{path}:{lineno}: malformed row {row}") from None
            if attack not in ATTACKS or choice not in ("Original", "Retrain") or stage < 1:
                raise FormatError(f"{path}:{lineno}: unknown attack, stage or choice in {row}")
            if not 0.0 <= acc <= 1.0:
                raise FormatError(f"{path}:{lineno}: accuracy {acc} outside [0, 1]")
            cells.setdefault(attack, {})[stage, choice] = acc
    out = {}
    for attack in ATTACKS:
        c = cells.get(attack, {})
        if (1, "Original") not in c:
            raise FormatError(f"{path}: no stage 1 Original accuracy for {attack}")
        rounds = []
        k = 1
        while (k, "Retrain") in c:
            rounds.append(c[k, "Retrain"])
            k += 1
        if not rounds:
            raise FormatError(f"{path}: no Retrain accuracy for {attack}")
        out[attack] = AttackStages(c[1, "Original"], tuple(rounds))
    return out


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args) -> int:
    cfg = load_config(args.config, args.seed)
    gen = cfg.gen if args.count is None else dataclasses.replace(cfg.gen, count=args.count)
    ds = generate_dataset(gen, cfg.master_seed, workers=args.threads)
    out = _out_dir(args)
    save_dataset(ds, out / "dataset.bin")
    write_manifest(ds, out / "manifest.txt")
    print(f"generated {len(ds)} unique captchas, seed {cfg.master_seed}, "
          f"covering {len(ds) / LABEL_SPACE:.6%} of the {LABEL_SPACE} label space")
    return EXIT_OK


def _load_split(args, cfg: ProtocolConfig):
    ds = load_dataset(args.dataset or Path(args.out) / "dataset.bin")
    return split(ds, cfg.test_fraction)


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.seed)
    tcfg = cfg.train
    if args.epochs is not None:
        tcfg = dataclasses.replace(tcfg, epochs=args.epochs)
    if args.lr is not None:
        tcfg = dataclasses.replace(tcfg, learning_rate=args.lr)
    train_ds, test_ds = _load_split(args, cfg)
    model_cfg = dataclasses.replace(cfg, gen=train_ds.config).model_config
    model = Model(model_cfg, seed=derive_seed(cfg.master_seed, "init"))
    _, curve = train(model, train_ds,
                     dataclasses.replace(tcfg, seed=derive_seed(cfg.master_seed, "train")),
                     on_epoch=lambda e, l: log.info("epoch %d mean loss %.4f", e, l))
    out = _out_dir(args)
    save_checkpoint(model, out / "model.ckpt")
    write_loss_curve(curve, out / "loss_curve.csv")
    acc = evaluate(model, test_ds)
    print(f"trained {tcfg.epochs} epochs on {len(train_ds)} images; test per-char accuracy "
          f"{acc.per_char_acc:.4f}, full-match {acc.full_match_acc:.4f}")
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = load_config(args.config, args.seed)
    _, test_ds = _load_split(args, cfg)
    if args.limit is not None:
        test_ds = test_ds.subset(np.arange(min(args.limit, len(test_ds))))
    model = load_checkpoint(args.model or Path(args.out) / "model.ckpt")
    if args.kind == "fgsm":
        params = cfg.fgsm if args.epsilon is None else FgsmParams(args.epsilon)
    else:
        params = cfg.one_pixel
        for name in ("d", "pop_size", "generations"):
            if getattr(args, name) is not None:
                params = dataclasses.replace(params, **{name: getattr(args, name)})
        params = dataclasses.replace(params, seed=derive_seed(cfg.master_seed, args.kind))
    clean = evaluate(model, test_ds)
    outcomes, report = attack_dataset(model, test_ds, args.kind, params, workers=args.threads)
    out = _out_dir(args) / "attacks"
    out.mkdir(exist_ok=True)
    save_outcomes(outcomes, out / f"{args.kind}.bin")
    write_outcome_csv(outcomes, out / f"{args.kind}.csv")
    print(f"{args.kind}: {sum(o.success for o in outcomes)}/{len(outcomes)} images flipped; "
          f"per-char accuracy {clean.per_char_acc:.4f} -> {report.per_char_acc:.4f}")
    return EXIT_OK


def cmd_game(args) -> int:
    cfg = load_config(args.config)
    stages = read_accuracy_table(args.accuracies)
    sol = solve_stages(stages, cfg.game)
    print(sol.normal_form.render())
    print()
    if not sol.equilibria:
        print("no pure-strategy Nash equilibrium")
    for eq in sol.equilibria:
        print(f"Nash equilibrium: ({eq.row}, {eq.col}) {eq.payoff}")
    if args.out:
        out = _out_dir(args)
        (out / "utility_table.csv").write_text(UtilityTable.from_stages(stages, cfg.game).to_csv(),
                                               encoding="utf-8")
        (out / "kuhn_tree.txt").write_text(render_tree(sol.tree) + "\n", encoding="utf-8")
        (out / "game.json").write_text(json.dumps(sol.to_dict(), indent=2, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = load_config(args.config, args.seed)
    out = _out_dir(args)
    report = run_protocol(cfg, out, workers=args.threads)
    _print_report(report)
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.report) if args.report else Path(args.out) / "report.json"
    report = load_report(path)
    if args.rewrite:
        write_artifacts(report, path.parent)
    _print_report(report)
    return EXIT_OK


def _print_report(report) -> None:
    metric = report.accuracy_metric
    for rec in report.stages:
        acc = rec.accuracy.per_char_acc if metric == "per_char" else rec.accuracy.full_match_acc
        tag = f"  [{rec.classification}]" if rec.classification else ""
        print(f"{rec.stage_id:<24} {acc:.4f}{tag}")
    game = report.game
    if game is None:
        print("game not solved")
        return
    for eq in game["equilibria"]:
        a, d = eq["payoff"]
        print(f"Nash equilibrium: ({eq['attack']}, {eq['defense']}) ({a:.4g}, {d:.4g})")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads and workers")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="captcha-arena", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a captcha dataset")
    g.add_argument("--count", type=int)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="train a clean model")
    t.add_argument("--dataset")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", parents=[common], help="attack the test split")
    a.add_argument("--kind", choices=ATTACK_KINDS, required=True)
    a.add_argument("--dataset")
    a.add_argument("--model")
    a.add_argument("--epsilon", type=float)
    a.add_argument("--d", type=int)
    a.add_argument("--pop-size", dest="pop_size", type=int)
    a.add_argument("--generations", type=int)
    a.add_argument("--limit", type=int, help="attack only the first N test images")
    a.set_defaults(func=cmd_attack)

    gm = sub.add_parser("game", parents=[common], help="solve the game from an accuracy table")
    gm.add_argument("--accuracies", required=True)
    gm.set_defaults(func=cmd_game, out=None)

    r = sub.add_parser("run", parents=[common], help="run the full protocol")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("report", parents=[common], help="print a saved report")
    rp.add_argument("--report")
    rp.add_argument("--rewrite", action="store_true",
                    help="regenerate utility_table.csv and kuhn_tree.txt next to the report")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, MissingStageError, IncompleteTableError, MalformedTreeError,
            DomainError) as exc:
        print(f"malformed artifact: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
