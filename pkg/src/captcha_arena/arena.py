"""End-to-end protocol: train, attack, threshold-gated retraining, game solve.

Every stage is recorded as a :class:`StageRecord`.  When a working
directory is given, each stage also leaves its artifacts (checkpoint,
attack outcomes, a JSON record) on disk, and a rerun reuses finished stages
instead of recomputing them.  All seeds derive from ``master_seed``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
import zlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .attacks import (ATTACK_KINDS, DISPLAY_NAMES, AttackOutcome, FgsmParams, OnePixelParams,
                      attack_dataset, load_outcomes, save_outcomes, write_outcome_csv)
from .dataset import (Dataset, GenConfig, generate_dataset, save_dataset, split,
                      write_manifest)
from .errors import ConfigError, FormatError, MissingStageError
from .game import (ATTACKS, AttackStages, Equilibrium, GameConfig, KuhnNode, NormalForm2x2,
                   PayoffPair, backward_induction, build_kuhn_tree, classify_attack,
                   classify_defense, cost_pair, pure_nash, render_tree, stackelberg_objective,
                   to_normal_form, utility_from_accuracy)
from .netcore import (AccuracyReport, Model, ModelConfig, TrainConfig,
                      accuracy_from_predictions, desk_model_config, load_checkpoint, loss_ce,
                      predict_proba, save_checkpoint, train, write_loss_curve)

log = logging.getLogger(__name__)

CLEAN, POST_ATTACK, POST_RETRAIN = "clean", "post_attack", "post_retrain"
_STAGE_ORDER = {CLEAN: 0, POST_ATTACK: 1, POST_RETRAIN: 2}


def derive_seed(master_seed: int, *tags) -> int:
    """Stable 32-bit seed for a named sub-stream of ``master_seed``."""
    words = [int(master_seed)]
    words += [zlib.crc32(t.encode()) if isinstance(t, str) else int(t) for t in tags]
    return int(np.random.SeedSequence(words).generate_state(1, np.uint32)[0])


@dataclass(frozen=True)
class ProtocolConfig:
    gen: GenConfig = field(default_factory=GenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fgsm: FgsmParams = field(default_factory=FgsmParams)
    one_pixel: OnePixelParams = field(default_factory=OnePixelParams)
    game: GameConfig = field(default_factory=GameConfig)
    model: ModelConfig | None = None
    max_retrain_rounds: int = 2
    master_seed: int = 0
    test_fraction: float = 0.2
    retrain_epochs: int | None = None
    holdout_mode: bool = False
    strict_gating: bool = False

    def __post_init__(self):
        if self.max_retrain_rounds < 1:
            raise ConfigError("max_retrain_rounds must be >= 1")
        if self.retrain_epochs is not None and self.retrain_epochs < 1:
            raise ConfigError("retrain_epochs must be >= 1")
        if not 0 < self.test_fraction < 1:
            raise ConfigError("test_fraction must be in (0, 1)")
        if self.model is not None and self.model.input_shape != self.gen.shape:
            raise ConfigError(f"model input {self.model.input_shape} does not match "
                              f"image shape {self.gen.shape}")

    @property
    def model_config(self) -> ModelConfig:
        return self.model if self.model is not None else desk_model_config(self.gen.shape)

    @property
    def effective_retrain_epochs(self) -> int:
        if self.retrain_epochs is not None:
            return self.retrain_epochs
        return max(1, self.train.epochs // 2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model_config.to_dict()
        d["retrain_epochs"] = self.effective_retrain_epochs
        return d


def desk_protocol_config(master_seed: int = 0) -> ProtocolConfig:
    """Desk-scale run: 2,500 images, four-conv model, 12 epochs at lr 1e-3."""
    return ProtocolConfig(train=TrainConfig(learning_rate=1e-3, epochs=12),
                          master_seed=master_seed)


@dataclass
class StageRecord:
    stage: str
    accuracy: AccuracyReport
    attack: str | None = None
    round: int = 0
    classification: str | None = None
    checkpoint: str | None = None
    eval_set: str = "test"
    details: dict = field(default_factory=dict)

    @property
    def stage_id(self) -> str:
        if self.stage == CLEAN:
            return "Clean"
        name = DISPLAY_NAMES.get(self.attack, self.attack)
        if self.stage == POST_ATTACK:
            return f"PostAttack({name})"
        return f"PostRetrain({name},{self.round})"

    @property
    def key(self) -> str:
        if self.stage == CLEAN:
            return "clean"
        if self.stage == POST_ATTACK:
            return f"{self.attack}_attack"
        return f"{self.attack}_retrain_r{self.round}"

    def metric(self, name: str) -> float:
        return self.accuracy.per_char_acc if name == "per_char" else self.accuracy.full_match_acc

    def to_dict(self) -> dict:
        return {"stage_id": self.stage_id, "stage": self.stage, "attack": self.attack,
                "round": self.round, "accuracy": self.accuracy.to_dict(),
                "classification": self.classification, "checkpoint": self.checkpoint,
                "eval_set": self.eval_set, "details": self.details}

    @classmethod
    def from_dict(cls, d: dict) -> StageRecord:
        return cls(stage=d["stage"], accuracy=AccuracyReport(**d["accuracy"]),
                   attack=d["attack"], round=d["round"], classification=d["classification"],
                   checkpoint=d["checkpoint"], eval_set=d["eval_set"], details=d["details"])


@dataclass
class ExperimentReport:
    config: dict
    seeds: dict
    stages: list[StageRecord]
    utility_table: dict | None = None
    game: dict | None = None
    notes: list[str] = field(default_factory=list)
    timing: dict[str, float] = field(default_factory=dict)

    def find(self, stage: str, attack: str | None = None, round: int = 0) -> StageRecord:
        for rec in self.stages:
            if rec.stage == stage and rec.attack == attack and rec.round == round:
                return rec
        raise MissingStageError(f"report has no {stage} stage for attack={attack} round={round}")

    def retrain_rounds(self, attack: str) -> list[StageRecord]:
        return sorted((r for r in self.stages if r.stage == POST_RETRAIN and r.attack == attack),
                      key=lambda r: r.round)

    @property
    def accuracy_metric(self) -> str:
        return self.config.get("game", {}).get("accuracy_metric", "per_char")

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {"config": self.config, "seeds": self.seeds,
             "stages": [s.to_dict() for s in self.stages],
             "utility_table": self.utility_table, "game": self.game, "notes": self.notes}
        if include_timing:
            d["timing"] = self.timing
        return d

    def to_json(self, include_timing: bool = True) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentReport:
        return cls(config=d["config"], seeds=d["seeds"],
                   stages=[StageRecord.from_dict(s) for s in d["stages"]],
                   utility_table=d.get("utility_table"), game=d.get("game"),
                   notes=list(d.get("notes", [])), timing=dict(d.get("timing", {})))


def save_report(report: ExperimentReport, path) -> None:
    Path(path).write_text(report.to_json(), encoding="utf-8")


def load_report(path) -> ExperimentReport:
    try:
        return ExperimentReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: not a valid experiment report: {exc}") from exc


class LabeledImages(NamedTuple):
    """Images with labels; unlike :class:`Dataset` duplicates are allowed."""

    images: np.ndarray
    labels: np.ndarray


def retrain(model: Model, train_ds, adversarial_outcomes: list[AttackOutcome],
            cfg: TrainConfig) -> Model:
    """Fine-tune a copy of ``model`` on the training data plus the adversarial
    images, each labelled with its true label.  ``model`` itself is untouched."""
    if not adversarial_outcomes:
        raise ConfigError("retraining needs at least one adversarial outcome")
    adv_x = np.stack([o.adversarial for o in adversarial_outcomes]).astype(train_ds.images.dtype)
    adv_y = np.stack([o.true_label for o in adversarial_outcomes]).astype(np.int64)
    union = LabeledImages(np.concatenate([train_ds.images, adv_x]),
                          np.concatenate([train_ds.labels, adv_y]))
    tuned = model.copy()
    train(tuned, union, cfg)
    return tuned


def _slice_report(model: Model, images: np.ndarray, labels: np.ndarray):
    probs = predict_proba(model, images)
    return probs, accuracy_from_predictions(probs.argmax(-1), labels)


def evaluate_mixed(model: Model, test: Dataset, outcomes: list[AttackOutcome]
                   ) -> tuple[AccuracyReport, dict]:
    """Accuracy on ``X_test`` together with the adversarial versions of those images."""
    adv_x = np.stack([o.adversarial for o in outcomes])
    adv_y = np.stack([o.true_label for o in outcomes])
    p_test, acc_test = _slice_report(model, test.images, test.labels)
    p_adv, acc_adv = _slice_report(model, adv_x, adv_y)
    probs = np.concatenate([p_test, p_adv])
    labels = np.concatenate([test.labels, adv_y])
    mixed = accuracy_from_predictions(probs.argmax(-1), labels)
    loss = loss_ce(probs, labels)
    details = {"test_only": acc_test.to_dict(), "adversarial_only": acc_adv.to_dict(),
               "mean_loss": loss, "cost": asdict(cost_pair(loss))}
    return mixed, details


class _Store:
    """Optional on-disk home of stage artifacts."""

    def __init__(self, root):
        self.root = Path(root) if root is not None else None
        if self.root is not None:
            for sub in ("stages", "attacks", "checkpoints"):
                (self.root / sub).mkdir(parents=True, exist_ok=True)

    def rel(self, *parts) -> str | None:
        return "/".join(parts) if self.root is not None else None

    def path(self, rel: str) -> Path:
        return self.root / rel

    def load_record(self, key: str) -> StageRecord | None:
        if self.root is None:
            return None
        p = self.root / "stages" / f"{key}.json"
        if not p.exists():
            return None
        try:
            return StageRecord.from_dict(json.loads(p.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise FormatError(f"{p}: corrupt stage record: {exc}") from exc

    def save_record(self, rec: StageRecord) -> None:
        if self.root is None:
            return
        p = self.root / "stages" / f"{rec.key}.json"
        tmp = p.with_suffix(".tmp")
        tmp.write_text(json.dumps(rec.to_dict(), indent=2, sort_keys=True) + "\n",
                       encoding="utf-8")
        tmp.replace(p)


def run_protocol(cfg: ProtocolConfig, workdir=None, workers: int = 1) -> ExperimentReport:
    """Run the full train / attack / retrain / game protocol.

    Both attack branches start from the same clean model.  After the attack
    the model is always retrained once; a further round runs while the
    defence has not succeeded, up to ``max_retrain_rounds``.  Each round
    attacks the current model on the test split, adds those adversarial
    images to everything accumulated so far and fine-tunes on the training
    data plus that pool.  With ``strict_gating`` the first round instead
    runs only when post-attack accuracy exceeds the attack threshold and
    later rounds only when clean test accuracy is below the defence
    threshold.  With ``holdout_mode`` the retraining pool is drawn from a
    slice of the training split, so test images are never trained on.
    """
    store = _Store(workdir)
    metric = cfg.game.accuracy_metric
    ms = cfg.master_seed
    seeds = {"master": ms, "init": derive_seed(ms, "init"), "train": derive_seed(ms, "train")}
    timing: dict[str, float] = {}
    stages: list[StageRecord] = []

    t0 = time.perf_counter()
    data = generate_dataset(cfg.gen, ms, workers=workers)
    train_ds, test_ds = split(data, cfg.test_fraction)
    holdout_ds = split(train_ds, cfg.test_fraction)[1] if cfg.holdout_mode else None
    if store.root is not None:
        save_dataset(data, store.path("dataset.bin"))
        write_manifest(data, store.path("manifest.txt"))
    timing["dataset"] = time.perf_counter() - t0

    # clean model
    t0 = time.perf_counter()
    rec = store.load_record("clean")
    if rec is not None:
        clean = load_checkpoint(store.path(rec.checkpoint))
    else:
        clean = Model(cfg.model_config, seed=seeds["init"])
        _, curve = train(clean, train_ds, replace(cfg.train, seed=seeds["train"]),
                         on_epoch=lambda e, l: log.info("clean epoch %d loss %.4f", e, l))
        _, acc = _slice_report(clean, test_ds.images, test_ds.labels)
        rec = StageRecord(CLEAN, acc, checkpoint=store.rel("model.ckpt"),
                          details={"loss_curve": curve})
        if store.root is not None:
            save_checkpoint(clean, store.path("model.ckpt"))
            write_loss_curve(curve, store.path("loss_curve.csv"))
            store.save_record(rec)
    stages.append(rec)
    timing[rec.stage_id] = time.perf_counter() - t0
    log.info("clean accuracy %.4f", rec.metric(metric))

    retrain_cfg = replace(cfg.train, epochs=cfg.effective_retrain_epochs)
    for kind in ATTACK_KINDS:
        params = cfg.fgsm if kind == "fgsm" else cfg.one_pixel

        def attack(model: Model, ds: Dataset, rnd: int, tag: str) -> list[AttackOutcome]:
            rel = store.rel("attacks", f"{kind}_{tag}_r{rnd}.bin")
            if rel is not None and store.path(rel).exists():
                return load_outcomes(store.path(rel))
            p = params
            if kind == "onepixel":
                p = replace(params, seed=derive_seed(ms, kind, tag, rnd))
            outcomes, _ = attack_dataset(model, ds, kind, p, workers=workers)
            if rel is not None:
                save_outcomes(outcomes, store.path(rel))
                write_outcome_csv(outcomes, store.path(rel[:-4] + ".csv"))
            return outcomes

        # post-attack stage
        t0 = time.perf_counter()
        rec = store.load_record(f"{kind}_attack")
        test_outcomes = attack(clean, test_ds, 1, "test")
        if rec is None:
            acc = accuracy_from_predictions(np.stack([o.pred_after for o in test_outcomes]),
                                            test_ds.labels)
            rec = StageRecord(POST_ATTACK, acc, attack=kind, eval_set="adversarial(test)",
                              checkpoint=store.rel("model.ckpt"),
                              details={"success_count": sum(o.success for o in test_outcomes),
                                       "attacked": len(test_outcomes)})
            rec.classification = classify_attack(rec.metric(metric), cfg.game).value
            store.save_record(rec)
        stages.append(rec)
        timing[rec.stage_id] = time.perf_counter() - t0
        log.info("%s post-attack accuracy %.4f", kind, rec.metric(metric))

        current, pool = clean, []
        last = rec
        for rnd in range(1, cfg.max_retrain_rounds + 1):
            if not _round_gate(cfg, rnd, last, current, test_ds, metric):
                continue
            t0 = time.perf_counter()
            key = f"{kind}_retrain_r{rnd}"
            eval_outcomes = test_outcomes if rnd == 1 else attack(current, test_ds, rnd, "test")
            source = attack(current, holdout_ds, rnd, "holdout") if cfg.holdout_mode \
                else eval_outcomes
            pool = pool + source
            rec = store.load_record(key)
            if rec is not None:
                current = load_checkpoint(store.path(rec.checkpoint))
            else:
                rcfg = replace(retrain_cfg, seed=derive_seed(ms, kind, "retrain", rnd))
                current = retrain(current, train_ds, pool, rcfg)
                acc, details = evaluate_mixed(current, test_ds, eval_outcomes)
                details["pool_size"] = len(pool)
                ckpt = store.rel("checkpoints", f"{key}.ckpt")
                rec = StageRecord(POST_RETRAIN, acc, attack=kind, round=rnd,
                                  eval_set="test+adversarial(test)", checkpoint=ckpt,
                                  details=details)
                rec.classification = classify_defense(rec.metric(metric), cfg.game).value
                if ckpt is not None:
                    save_checkpoint(current, store.path(ckpt))
                store.save_record(rec)
            stages.append(rec)
            timing[rec.stage_id] = time.perf_counter() - t0
            log.info("%s retrain round %d accuracy %.4f", kind, rnd, rec.metric(metric))
            last = rec

    notes = []
    if cfg.holdout_mode:
        notes.append("retraining pool drawn from a training-split holdout; "
                     "test images are never trained on")
    else:
        notes.append("retraining pool contains adversarial versions of test images, so the "
                     "mixed evaluation set overlaps the retraining data")
    report = ExperimentReport(config=cfg.to_dict(), seeds=seeds, stages=stages, notes=notes,
                              timing=timing)
    try:
        solve_game_from_report(report, cfg.game)
    except MissingStageError as exc:
        report.notes.append(f"game not solved: {exc}")
    if store.root is not None:
        write_artifacts(report, store.root)
    return report


def _round_gate(cfg: ProtocolConfig, rnd: int, last: StageRecord, model: Model,
                test_ds: Dataset, metric: str) -> bool:
    if not cfg.strict_gating:
        return rnd == 1 or last.classification == "NotSuccessful_D"
    if rnd == 1:
        return last.metric(metric) > cfg.game.attacker_success_threshold
    _, acc = _slice_report(model, test_ds.images, test_ds.labels)
    value = acc.per_char_acc if metric == "per_char" else acc.full_match_acc
    return value < cfg.game.defense_success_threshold


# utility table -----------------------------------------------------------

def stages_from_report(report: ExperimentReport) -> dict[str, AttackStages]:
    """Accuracies per attack (display name) in the shape the game layer expects."""
    metric = report.accuracy_metric
    clean = report.find(CLEAN).metric(metric)
    out = {}
    for kind in ATTACK_KINDS:
        post = report.find(POST_ATTACK, kind).metric(metric)
        rounds = tuple(r.metric(metric) for r in report.retrain_rounds(kind))
        if not rounds:
            raise MissingStageError(f"no retraining stage for attack {kind}")
        out[DISPLAY_NAMES[kind]] = AttackStages(post, rounds, clean)
    return out


@dataclass(frozen=True)
class UtilityCell:
    label: str
    accuracy: float
    payoff: PayoffPair
    carried: bool = False


@dataclass(frozen=True)
class UtilityRow:
    stage: int
    attack: str
    original: UtilityCell
    retrain: UtilityCell


@dataclass(frozen=True)
class UtilityTable:
    """Two-column table per stage: stage 1 compares the attacked model with
    the first retrain, stage k > 1 carries over the previous retrain value.

    With ``n_stages`` larger than the rounds an attack actually ran, the
    missing rounds repeat the last retrained model's accuracy and are
    flagged ``carried``: the defence had already succeeded, so the model
    was left as it was.
    """

    rows: tuple[UtilityRow, ...]

    @classmethod
    def from_stages(cls, stages: dict[str, AttackStages], cfg: GameConfig = GameConfig(),
                    n_stages: int | None = None) -> UtilityTable:
        missing = [a for a in ATTACKS if a not in stages]
        if missing:
            raise MissingStageError(f"no stage data for attacks {missing}")
        ran = max(len(stages[a].retrain) for a in ATTACKS)
        n_stages = ran if n_stages is None else max(n_stages, ran)
        rows = []
        for k in range(n_stages):
            for attack in ATTACKS:
                s = stages[attack]
                accs = s.retrain + (s.final_retrain,) * (n_stages - len(s.retrain))
                before = s.post_attack if k == 0 else accs[k - 1]
                left = "Original" if k == 0 else f"Value from Step {k}"
                right = "Retrain" if k == 0 else f"Retrain {k + 1}"
                rows.append(UtilityRow(
                    k + 1, attack,
                    UtilityCell(left, before, utility_from_accuracy(before, cfg),
                                carried=k - 1 >= len(s.retrain)),
                    UtilityCell(right, accs[k], utility_from_accuracy(accs[k], cfg),
                                carried=k >= len(s.retrain))))
        return cls(tuple(rows))

    @property
    def n_stages(self) -> int:
        return max((r.stage for r in self.rows), default=0)

    def to_dict(self) -> dict:
        return {"rows": [{"stage": r.stage, "attack": r.attack,
                          "original": _cell_dict(r.original), "retrain": _cell_dict(r.retrain)}
                         for r in self.rows]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "attack", "original_label", "original_acc", "original_attacker",
                    "original_defender", "retrain_label", "retrain_acc", "retrain_attacker",
                    "retrain_defender", "retrain_carried"])
        for r in self.rows:
            w.writerow([r.stage, r.attack,
                        r.original.label, repr(r.original.accuracy),
                        repr(r.original.payoff.attacker), repr(r.original.payoff.defender),
                        r.retrain.label, repr(r.retrain.accuracy),
                        repr(r.retrain.payoff.attacker), repr(r.retrain.payoff.defender),
                        int(r.retrain.carried)])
        return buf.getvalue()

    def render(self) -> str:
        lines = [f"{'stage':<6}{'attack':<10}{'left':<22}{'right':<22}"]
        for r in self.rows:
            left = f"{r.original.label} {100 * r.original.accuracy:.1f}%"
            right = f"{r.retrain.label} {100 * r.retrain.accuracy:.1f}%"
            if r.retrain.carried:
                right += " (kept)"
            lines.append(f"{r.stage:<6}{r.attack:<10}{left:<22}{right:<22}")
        return "\n".join(lines)


def _cell_dict(c: UtilityCell) -> dict:
    return {"label": c.label, "accuracy": c.accuracy, "payoff": list(c.payoff.astuple()),
            "carried": c.carried}


def build_utility_table(report: ExperimentReport, cfg: GameConfig = GameConfig()) -> UtilityTable:
    table = UtilityTable.from_stages(stages_from_report(report), cfg,
                                     report.config.get("max_retrain_rounds"))
    report.utility_table = table.to_dict()
    return table


# game --------------------------------------------------------------------

@dataclass
class GameSolution:
    tree: KuhnNode
    normal_form: NormalForm2x2
    equilibria: list[Equilibrium]
    value: PayoffPair
    path: dict[str, str]
    classifications: dict[str, dict[str, str]]

    def to_dict(self) -> dict:
        table = {(r, c): self.normal_form.payoff(r, c)
                 for r in self.normal_form.rows for c in self.normal_form.cols}
        leader = stackelberg_objective(table)
        return {
            "tree": self.tree.to_dict(),
            "normal_form": self.normal_form.to_dict(),
            "equilibria": [{"attack": e.row, "defense": e.col,
                            "payoff": list(e.payoff.astuple())} for e in self.equilibria],
            "value": list(self.value.astuple()),
            "path": dict(sorted(self.path.items())),
            "leader_follower": {"attack": leader.attack, "defense": leader.defense,
                                "payoff": list(leader.value.astuple()),
                                "follower_response": leader.follower_response},
            "classifications": self.classifications,
        }


def solve_stages(stages: dict[str, AttackStages], cfg: GameConfig = GameConfig()) -> GameSolution:
    tree = build_kuhn_tree(stages, cfg)
    nf = to_normal_form(tree)
    value, path = backward_induction(tree)
    classes = {a: {"attack": classify_attack(s.post_attack, cfg).value,
                   "defense": classify_defense(s.final_retrain, cfg).value}
               for a, s in stages.items()}
    return GameSolution(tree, nf, pure_nash(nf), value, path, classes)


def solve_game_from_report(report: ExperimentReport, cfg: GameConfig = GameConfig()
                           ) -> GameSolution:
    """Solve the game on the report's accuracies and attach the results to it."""
    stages = stages_from_report(report)
    build_utility_table(report, cfg)
    solution = solve_stages(stages, cfg)
    report.game = solution.to_dict()
    return solution


def write_artifacts(report: ExperimentReport, out_dir) -> None:
    """``report.json``, ``utility_table.csv`` and ``kuhn_tree.txt`` under ``out_dir``."""
    out = Path(out_dir)
    save_report(report, out / "report.json")
    if report.utility_table is not None:
        stages = stages_from_report(report)
        cfg = GameConfig(**report.config["game"])
        table = UtilityTable.from_stages(stages, cfg, report.config.get("max_retrain_rounds"))
        (out / "utility_table.csv").write_text(table.to_csv(), encoding="utf-8")
        (out / "kuhn_tree.txt").write_text(render_tree(build_kuhn_tree(stages, cfg)) + "\n",
                                           encoding="utf-8")
