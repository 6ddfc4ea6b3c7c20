"""Experiment runner: config parsing, end-to-end scenarios, metric reports.

A TOML config fully determines an experiment. Every trial derives its seed
from the master seed, so the metrics CSV is byte-identical across runs;
wall-clock runtimes are inherently nondeterministic and therefore live in
the JSON summary and the compare-runtimes table, never in the CSV.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import attacks as attacks_mod
from . import data as data_mod
from . import federation as fed_mod
from . import unlearn as unlearn_mod
from .nn import ContractError, SgdConfig
from .privacy import PrivacyConfig

METHODS = ("ours", "retrain", "finetune", "amnesiac", "ga")
SCENARIOS = ("single_class", "two_class", "multi_class")
DATASETS = ("images", "blobs", "mnist")

CSV_COLUMNS = (
    "trial", "phase", "method", "dr_acc", "du_acc", "asr",
    "leakage_acc", "pmc_retained", "pmc_forgotten", "seed", "config_hash",
)


class ConfigError(ValueError):
    """A config file failed validation; the message names the key path."""


# schema: section -> key -> (type tag, default)
_SCHEMA = {
    "": {"seed": ("int", 0)},
    "dataset": {
        "name": ("enum:" + ",".join(DATASETS), "images"),
        "classes": ("int", 10),
        "per_class_train": ("int", 1200),
        "per_class_test": ("int", 250),
        "noise": ("float", 0.35),
        "dim": ("int", 784),
        "separation": ("float", 3.0),
        "path": ("str", ""),
    },
    "federation": {
        "num_parties": ("int", 2),
        "embedding_dim": ("int", 64),
        "top_hidden": ("intlist", [64]),
        "bottom_hidden": ("intlist", []),
    },
    "training": {
        "epochs": ("int", 4),
        "learning_rate": ("float", 0.1),
        "momentum": ("float", 0.9),
        "weight_decay": ("float", 0.0),
        "batch_size": ("int", 32),
    },
    "scenario": {
        "kind": ("enum:" + ",".join(SCENARIOS), "single_class"),
        "unlearn_classes": ("intlist", [0]),
        "method": ("enum:" + ",".join(METHODS), "ours"),
        "trials": ("int", 5),
    },
    "unlearn": {
        "rate": ("float", 2e-7),
        "epochs": ("int", 10),
        "probe_size": ("int", 40),
        "batch_size": ("int", 32),
        "momentum": ("float", 0.9),
        "weight_decay": ("float", 5e-4),
        "lambda_sampler": ("enum:uniform01,fixed", "uniform01"),
        "fixed_lambda": ("float", 0.5),
        "pair_scope": ("enum:all_pairs,sampled_pairs", "all_pairs"),
        "pairs_per_epoch": ("int", 0),
        "same_class_only": ("bool", False),
        "ga_samples": ("int", 40),
    },
    "finetune": {"epochs": ("int", 5), "learning_rate": ("float", 0.01)},
    "amnesiac": {"epochs": ("int", 3), "learning_rate": ("float", 0.01)},
    "privacy": {
        "mechanism": ("enum:none,gaussian_noise,top_k", "none"),
        "noise_variance": ("float", 0.0),
        "compression_ratio": ("float", 1.0),
    },
    "attacks": {
        "mia": ("bool", True),
        "leakage": ("bool", False),
        "pmc": ("bool", False),
        "mia_shadow_per_side": ("int", 300),
        "leakage_samples_per_class": ("int", 60),
        "pmc_labeled_per_class": ("int", 10),
        "pmc_party": ("int", 1),
    },
    "output": {"dir": ("str", "")},
}


def _check_type(path: str, value, tag: str):
    if tag == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a boolean")
        return value
    if tag == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer")
        return value
    if tag == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number")
        return float(value)
    if tag == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string")
        return value
    if tag == "intlist":
        if not isinstance(value, list) or any(
            isinstance(v, bool) or not isinstance(v, int) for v in value
        ):
            raise ConfigError(f"{path}: expected a list of integers")
        return list(value)
    if tag.startswith("enum:"):
        choices = tag[5:].split(",")
        if value not in choices:
            raise ConfigError(f"{path}: must be one of {choices}, got {value!r}")
        return value
    raise AssertionError(tag)


def _validated(raw: dict) -> dict:
    out: dict = {}
    for section, keys in _SCHEMA.items():
        src = raw if section == "" else raw.get(section, {})
        if section and not isinstance(src, dict):
            raise ConfigError(f"{section}: expected a table")
        dst = {}
        for key, (tag, default) in keys.items():
            if key in src:
                dst[key] = _check_type(
                    f"{section+'.' if section else ''}{key}", src[key], tag
                )
            else:
                dst[key] = copy.deepcopy(default)
        out[section] = dst
    known_top = {s for s in _SCHEMA if s} | set(_SCHEMA[""])
    for key in raw:
        if key not in known_top:
            raise ConfigError(f"unknown key {key!r}")
    for section in _SCHEMA:
        if not section:
            continue
        for key in raw.get(section, {}):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key!r}")
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description; see _SCHEMA for defaults."""

    seed: int
    dataset: dict
    federation: dict
    training: dict
    scenario: dict
    unlearn: dict
    finetune: dict
    amnesiac: dict
    privacy_cfg: PrivacyConfig
    attacks: dict
    output_dir: str

    def canonical(self) -> dict:
        return {
            "seed": self.seed,
            "dataset": self.dataset,
            "federation": self.federation,
            "training": self.training,
            "scenario": self.scenario,
            "unlearn": self.unlearn,
            "finetune": self.finetune,
            "amnesiac": self.amnesiac,
            "privacy": {
                "mechanism": self.privacy_cfg.mechanism,
                "noise_variance": self.privacy_cfg.noise_variance,
                "compression_ratio": self.privacy_cfg.compression_ratio,
            },
            "attacks": self.attacks,
            "output": {"dir": self.output_dir},
        }

    def config_hash(self) -> str:
        return config_hash_of(self.canonical())

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return dataclasses.replace(self, seed=int(seed))

    def with_trials(self, trials: int) -> "ExperimentConfig":
        scenario = dict(self.scenario)
        scenario["trials"] = int(trials)
        return dataclasses.replace(self, scenario=scenario)

    def with_method(self, method: str) -> "ExperimentConfig":
        scenario = dict(self.scenario)
        scenario["method"] = method
        return dataclasses.replace(self, scenario=scenario)

    def unlearn_config(self) -> unlearn_mod.UnlearnConfig:
        u = self.unlearn
        return unlearn_mod.UnlearnConfig(
            unlearn_classes=tuple(self.scenario["unlearn_classes"]),
            unlearning_rate=u["rate"],
            epochs=u["epochs"],
            batch_size=u["batch_size"],
            momentum=u["momentum"],
            weight_decay=u["weight_decay"],
            mix=unlearn_mod.MixConfig(
                lambda_sampler=u["lambda_sampler"],
                fixed_lambda=u["fixed_lambda"],
                pair_scope=u["pair_scope"],
                pairs_per_epoch=u["pairs_per_epoch"],
                same_class_only=u["same_class_only"],
            ),
        )

    def training_config(self) -> SgdConfig:
        t = self.training
        return SgdConfig(
            t["learning_rate"], t["momentum"], t["weight_decay"], "descent"
        )


def config_hash_of(canonical: dict) -> str:
    blob = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _cross_checks(cfg: ExperimentConfig) -> None:
    kind = cfg.scenario["kind"]
    n_unlearn = len(cfg.scenario["unlearn_classes"])
    wanted = {"single_class": (1, 1), "two_class": (2, 2), "multi_class": (3, None)}
    lo, hi = wanted[kind]
    if n_unlearn < lo or (hi is not None and n_unlearn > hi):
        raise ConfigError(
            f"scenario.kind {kind!r} is inconsistent with "
            f"{n_unlearn} unlearn classes"
        )
    classes = cfg.dataset["classes"]
    bad = [c for c in cfg.scenario["unlearn_classes"] if not 0 <= c < classes]
    if bad:
        raise ConfigError(f"scenario.unlearn_classes out of range: {bad}")
    if len(set(cfg.scenario["unlearn_classes"])) != n_unlearn:
        raise ConfigError("scenario.unlearn_classes contains duplicates")
    if cfg.scenario["trials"] < 1:
        raise ConfigError("scenario.trials must be at least 1")
    if cfg.dataset["name"] == "mnist" and not cfg.dataset["path"]:
        raise ConfigError("dataset.path is required for dataset.name = 'mnist'")
    # fail fast on invalid unlearning hyperparameters
    try:
        cfg.unlearn_config()
    except ContractError as exc:
        raise ConfigError(f"unlearn: {exc}") from exc


def config_from_dict(raw: dict) -> ExperimentConfig:
    v = _validated(raw)
    p = v["privacy"]
    cfg = ExperimentConfig(
        seed=v[""]["seed"],
        dataset=v["dataset"],
        federation=v["federation"],
        training=v["training"],
        scenario=v["scenario"],
        unlearn=v["unlearn"],
        finetune=v["finetune"],
        amnesiac=v["amnesiac"],
        privacy_cfg=PrivacyConfig(
            mechanism=p["mechanism"],
            noise_variance=p["noise_variance"],
            compression_ratio=p["compression_ratio"],
        ),
        attacks=v["attacks"],
        output_dir=v["output"]["dir"],
    )
    _cross_checks(cfg)
    return cfg


def parse_config(path) -> ExperimentConfig:
    """Load and validate a TOML experiment config (duplicate keys rejected)."""
    with open(path, "rb") as f:
        try:
            raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw)


def load_dataset(cfg: ExperimentConfig):
    """Build the (train, test) vertical datasets this config describes."""
    d = cfg.dataset
    k = cfg.federation["num_parties"]
    if d["name"] == "mnist":
        root = d["path"]
        x_train = data_mod.load_idx(os.path.join(root, "train-images-idx3-ubyte"))
        y_train = data_mod.load_idx(os.path.join(root, "train-labels-idx1-ubyte"))
        x_test = data_mod.load_idx(os.path.join(root, "t10k-images-idx3-ubyte"))
        y_test = data_mod.load_idx(os.path.join(root, "t10k-labels-idx1-ubyte"))
        x_train = x_train.reshape(x_train.shape[0], -1)
        x_test = x_test.reshape(x_test.shape[0], -1)
        classes = 10
    else:
        per_class = d["per_class_train"] + d["per_class_test"]
        classes = d["classes"]
        if d["name"] == "images":
            x, y = data_mod.synth_images(classes, per_class, seed=cfg.seed,
                                         noise=d["noise"])
        else:
            x, y = data_mod.synth_blobs(classes, per_class, d["dim"],
                                        d["separation"], seed=cfg.seed)
        train_rows, test_rows = [], []
        for c in range(classes):
            rows = np.nonzero(y == c)[0]
            train_rows.append(rows[: d["per_class_train"]])
            test_rows.append(rows[d["per_class_train"]:])
        train_rows = np.concatenate(train_rows)
        test_rows = np.concatenate(test_rows)
        x_train, y_train = x[train_rows], y[train_rows]
        x_test, y_test = x[test_rows], y[test_rows]
    n_train = x_train.shape[0]
    train = data_mod.make_vertical_dataset(
        x_train, y_train, classes, k, split="train",
        ids=np.arange(n_train, dtype=np.int64),
    )
    test = data_mod.make_vertical_dataset(
        x_test, y_test, classes, k, split="test",
        ids=np.arange(x_test.shape[0], dtype=np.int64) + n_train,
    )
    return train, test


@dataclass
class PhaseMetrics:
    """One row of the metrics report; seconds stays out of the CSV."""

    trial: int
    phase: str
    method: str
    dr_acc: float | None
    du_acc: float | None
    asr: float | None
    leakage_acc: float | None
    pmc_retained: float | None
    pmc_forgotten: float | None
    seed: int
    config_hash: str
    seconds: float | None = None


@dataclass
class MetricsReport:
    rows: list[PhaseMetrics] = field(default_factory=list)
    config_hash: str = ""
    master_seed: int = 0

    def to_csv(self) -> str:
        def fmt(v):
            if v is None:
                return ""
            if isinstance(v, float):
                return f"{v:.6f}"
            return str(v)

        lines = [",".join(CSV_COLUMNS)]
        for r in self.rows:
            lines.append(",".join(fmt(getattr(r, c)) for c in CSV_COLUMNS))
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        phases: dict[str, dict[str, list[float]]] = {}
        for r in self.rows:
            bucket = phases.setdefault(r.phase, {})
            for name in ("dr_acc", "du_acc", "asr", "leakage_acc",
                         "pmc_retained", "pmc_forgotten", "seconds"):
                value = getattr(r, name)
                if value is not None:
                    bucket.setdefault(name, []).append(float(value))
        agg = {
            phase: {
                name: {
                    "mean": float(np.mean(vals)),
                    "std": float(np.std(vals)),
                    "n": len(vals),
                }
                for name, vals in bucket.items()
            }
            for phase, bucket in phases.items()
        }
        return {
            "schema_version": 1,
            "config_hash": self.config_hash,
            "master_seed": self.master_seed,
            "trials": len({r.trial for r in self.rows}),
            "phases": agg,
        }


def _eval_pairs(test_ds, unlearn_classes):
    forget_rows = test_ds.class_rows(unlearn_classes)
    retain_rows = np.setdiff1d(np.arange(test_ds.n), forget_rows)
    forget = test_ds.restrict(forget_rows)
    retain = test_ds.restrict(retain_rows)
    return (retain.parts, retain.labels), (forget.parts, forget.labels)


def _probe_from(train_ds, unlearn_classes, size, rng):
    rows = train_ds.class_rows(unlearn_classes)
    if rows.size < size:
        raise ContractError(
            f"forget split holds {rows.size} rows, fewer than probe size {size}"
        )
    chosen = rng.choice(rows, size=size, replace=False)
    sub = train_ds.restrict(np.sort(chosen))
    return unlearn_mod.ProbeSet(parts=sub.parts, labels=sub.labels, cap=max(40, size))


def _run_mia(cfg, fed, train_ds, test_ds, unlearn_classes, rng):
    """Threshold MIA: shadow = retained train vs retained test, eval = forget train."""
    shadow_n = cfg.attacks["mia_shadow_per_side"]
    train_keep = unlearn_mod.retained_rows(train_ds, unlearn_classes)
    test_keep = unlearn_mod.retained_rows(test_ds, unlearn_classes)
    member_rows = rng.choice(train_keep, size=min(shadow_n, train_keep.size),
                             replace=False)
    nonmember_rows = rng.choice(test_keep, size=min(shadow_n, test_keep.size),
                                replace=False)
    members = train_ds.restrict(member_rows)
    nonmembers = test_ds.restrict(nonmember_rows)
    model = attacks_mod.mia_fit(
        attacks_mod.prediction_confidence(fed, members.parts),
        attacks_mod.prediction_confidence(fed, nonmembers.parts),
        member_ids=members.ids.tolist(),
        nonmember_ids=nonmembers.ids.tolist(),
    )
    forget_rows = train_ds.class_rows(unlearn_classes)
    forget = train_ds.restrict(forget_rows)
    return attacks_mod.mia_asr(
        model,
        attacks_mod.prediction_confidence(fed, forget.parts),
        eval_ids=forget.ids.tolist(),
    )


def _run_leakage(cfg, fed, train_ds, unlearn_classes, trial_seed, rng):
    """Gradient-clustering attack against a plain-ascent pass on a model copy."""
    per_class = cfg.attacks["leakage_samples_per_class"]
    rows = []
    for c in unlearn_classes:
        c_rows = train_ds.class_rows([c])
        rows.append(rng.choice(c_rows, size=min(per_class, c_rows.size),
                               replace=False))
    sub = train_ds.restrict(np.sort(np.concatenate(rows)))
    victim = fed_mod.clone_federation(fed)
    trace = attacks_mod.collect_unlearn_gradients(
        victim, sub.parts, sub.labels, party_id=fed.concat_order[0],
        scenario="harness-leakage", rng=rng,
    )
    result = attacks_mod.cluster_label_inference(
        trace, m_u=len(unlearn_classes), seed=trial_seed
    )
    return result.accuracy, trace


def _run_pmc(cfg, fed, train_ds, test_ds, unlearn_classes, rng):
    party = fed.party(cfg.attacks["pmc_party"])
    per_class = cfg.attacks["pmc_labeled_per_class"]
    rows = []
    for c in range(train_ds.num_classes):
        c_rows = train_ds.class_rows([c])
        rows.append(rng.choice(c_rows, size=min(per_class, c_rows.size),
                               replace=False))
    labeled = train_ds.restrict(np.sort(np.concatenate(rows)))
    part_index = [p.party_id for p in fed.passives].index(party.party_id)
    result = attacks_mod.model_completion_attack(
        party,
        labeled.parts[part_index],
        labeled.labels,
        test_ds.parts[part_index],
        test_ds.labels,
        num_classes=train_ds.num_classes,
        rng=rng,
        unlearn_classes=unlearn_classes,
    )
    return result.retained_acc, result.forgotten_acc


def _apply_method(cfg, fed, train_ds, test_ds, rng):
    """Run the configured unlearning method; returns (fed, seconds)."""
    method = cfg.scenario["method"]
    unlearn_classes = cfg.scenario["unlearn_classes"]
    retain_eval, forget_eval = _eval_pairs(test_ds, unlearn_classes)
    if method == "ours":
        probe = _probe_from(train_ds, unlearn_classes,
                            cfg.unlearn["probe_size"], rng)
        report = unlearn_mod.unlearn(
            fed, probe, cfg.unlearn_config(), rng,
            retain_eval=retain_eval, forget_eval=forget_eval,
        )
        return fed, report.seconds
    if method == "retrain":
        start = time.perf_counter()
        fresh = unlearn_mod.baseline_retrain(
            train_ds, unlearn_classes, rng,
            train_epochs=cfg.training["epochs"],
            batch_size=cfg.training["batch_size"],
            train_config=cfg.training_config(),
            embedding_dim=cfg.federation["embedding_dim"],
            bottom_hidden=tuple(cfg.federation["bottom_hidden"]),
            top_hidden=tuple(cfg.federation["top_hidden"]),
            privacy=cfg.privacy_cfg,
        )
        return fresh, time.perf_counter() - start
    if method == "finetune":
        start = time.perf_counter()
        unlearn_mod.baseline_finetune(
            fed, train_ds, unlearn_classes, rng,
            epochs=cfg.finetune["epochs"],
            learning_rate=cfg.finetune["learning_rate"],
            batch_size=cfg.training["batch_size"],
        )
        return fed, time.perf_counter() - start
    if method == "amnesiac":
        start = time.perf_counter()
        unlearn_mod.baseline_amnesiac(
            fed, train_ds, unlearn_classes, rng,
            epochs=cfg.amnesiac["epochs"],
            learning_rate=cfg.amnesiac["learning_rate"],
            batch_size=cfg.training["batch_size"],
        )
        return fed, time.perf_counter() - start
    if method == "ga":
        rows = train_ds.class_rows(unlearn_classes)
        n_ga = cfg.unlearn["ga_samples"]
        if n_ga > 0:
            rows = rng.choice(rows, size=min(n_ga, rows.size), replace=False)
        sub = train_ds.restrict(np.sort(rows))
        start = time.perf_counter()
        unlearn_mod.baseline_ga(
            fed, sub.parts, sub.labels, rng,
            unlearning_rate=cfg.unlearn["rate"],
            epochs=cfg.unlearn["epochs"],
            batch_size=cfg.unlearn["batch_size"],
            momentum=cfg.unlearn["momentum"],
            weight_decay=cfg.unlearn["weight_decay"],
        )
        return fed, time.perf_counter() - start
    raise ConfigError(f"unknown method {method!r}")


def run_trial(cfg: ExperimentConfig, trial: int, train_ds, test_ds):
    """Train, snapshot baseline metrics, apply the method, re-measure."""
    trial_seed = cfg.seed + trial
    rng = np.random.default_rng(trial_seed)
    chash = cfg.config_hash()
    unlearn_classes = cfg.scenario["unlearn_classes"]
    method = cfg.scenario["method"]
    retain_eval, forget_eval = _eval_pairs(test_ds, unlearn_classes)

    fed = fed_mod.build_federation(
        train_ds, rng,
        embedding_dim=cfg.federation["embedding_dim"],
        bottom_hidden=tuple(cfg.federation["bottom_hidden"]),
        top_hidden=tuple(cfg.federation["top_hidden"]),
        privacy=cfg.privacy_cfg,
    )
    train_start = time.perf_counter()
    fed_mod.fit(fed, train_ds, cfg.training["epochs"],
                cfg.training["batch_size"], cfg.training_config(), rng)
    train_seconds = time.perf_counter() - train_start

    def measure(phase, current, seconds):
        asr = leakage = pmc_r = pmc_f = None
        if cfg.attacks["mia"]:
            asr = _run_mia(cfg, current, train_ds, test_ds, unlearn_classes, rng)
        if cfg.attacks["leakage"]:
            leakage, _ = _run_leakage(cfg, current, train_ds, unlearn_classes,
                                      trial_seed, rng)
        if cfg.attacks["pmc"]:
            pmc_r, pmc_f = _run_pmc(cfg, current, train_ds, test_ds,
                                    unlearn_classes, rng)
        return PhaseMetrics(
            trial=trial,
            phase=phase,
            method=method,
            dr_acc=fed_mod.accuracy(current, *retain_eval),
            du_acc=fed_mod.accuracy(current, *forget_eval),
            asr=asr,
            leakage_acc=leakage,
            pmc_retained=pmc_r,
            pmc_forgotten=pmc_f,
            seed=trial_seed,
            config_hash=chash,
            seconds=seconds,
        )

    rows = [measure("baseline", fed, train_seconds)]
    final, method_seconds = _apply_method(cfg, fed, train_ds, test_ds, rng)
    rows.append(measure(method, final, method_seconds))
    return rows, final


def run_experiment(cfg: ExperimentConfig) -> MetricsReport:
    """All trials of one config; writes CSV, summary JSON, and artifacts."""
    train_ds, test_ds = load_dataset(cfg)
    report = MetricsReport(config_hash=cfg.config_hash(), master_seed=cfg.seed)
    final_fed = None
    for trial in range(cfg.scenario["trials"]):
        rows, final_fed = run_trial(cfg, trial, train_ds, test_ds)
        report.rows.extend(rows)
    if cfg.output_dir:
        write_outputs(cfg, report, final_fed)
    return report


def write_outputs(cfg: ExperimentConfig, report: MetricsReport, fed=None) -> None:
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "metrics.csv"), "w") as f:
        f.write(report.to_csv())
    with open(os.path.join(out, "summary.json"), "w") as f:
        json.dump(report.summary(), f, indent=2, sort_keys=True)
        f.write("\n")
    with open(os.path.join(out, "config.json"), "w") as f:
        json.dump(cfg.canonical(), f, indent=2, sort_keys=True)
        f.write("\n")
    if fed is not None:
        data_mod.save_checkpoint(
            fed, os.path.join(out, "final.ckpt"),
            seed_provenance=f"master_seed={cfg.seed}",
        )


def compare_runtimes(cfgs: list[ExperimentConfig]) -> list[tuple[str, float]]:
    """Method runtimes on a shared scenario, one trial each.

    All configs must agree on dataset, federation, and training sections.
    When both are present, the mixup method must beat retraining and
    fine-tuning, which is the whole point of running it.
    """
    if not cfgs:
        raise ContractError("need at least one config to compare")
    reference = (cfgs[0].dataset, cfgs[0].federation, cfgs[0].training)
    for cfg in cfgs[1:]:
        if (cfg.dataset, cfg.federation, cfg.training) != reference:
            raise ContractError(
                "compared configs must share dataset, federation, and training"
            )
    train_ds, test_ds = load_dataset(cfgs[0])
    table = []
    for cfg in cfgs:
        rows, _ = run_trial(cfg.with_trials(1), 0, train_ds, test_ds)
        method_row = rows[-1]
        table.append((cfg.scenario["method"], float(method_row.seconds)))
    seconds = dict(table)
    if "ours" in seconds:
        for slow in ("retrain", "finetune"):
            if slow in seconds and not seconds["ours"] < seconds[slow]:
                raise ContractError(
                    f"expected ours to be faster than {slow}: "
                    f"{seconds['ours']:.3f}s vs {seconds[slow]:.3f}s"
                )
    return table
