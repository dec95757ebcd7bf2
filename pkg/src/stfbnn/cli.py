"""Config-driven experiment runner.

Usage: stfbnn <task> --config cfg.json [--seed N] [--out DIR]

Tasks cover the full pipeline: deterministic pretraining, variational phase
2, layer-stability profiles, layer-placement ablation, clean/corruption/
threshold evaluation, the generalization bound, far-input scale sweeps,
attacks, adversarial training, membership inference, a one-shot demo
pipeline, and report merging. Every metric file embeds the config hash and
seed; wall-clock goes to a sidecar so metric JSON is byte-reproducible.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import attacks as atk
from . import bayes, bounds, data, nn, stability, uncertainty
from .errors import ConfigError, InputError, UsageError
from .report import config_hash, jsonable, read_json, write_csv, write_json
from .rng import Prng

SCHEMA_VERSION = 1

TASKS = ("pretrain", "stf-train", "stability", "ablation", "evaluate",
         "corruption-grid", "threshold-curve", "bound", "scale-sweep",
         "attack", "adv-train", "mi", "demo")

_NUM = (int, float)
_OPT_STR = (str, type(None))

# field -> required type(s); unknown fields are rejected (fail closed)
_OPT_SECTIONS = {
    "dataset": {
        "kind": str, "m": int, "noise_std": _NUM, "n_train": int, "n_test": int,
        "data_dir": _OPT_STR, "normalize": bool, "std": _NUM, "centers": list,
    },
    "arch": {"hidden": list},
    "pretrain": {
        "learning_rate": _NUM, "momentum": _NUM, "weight_decay": _NUM,
        "schedule": list, "epochs": int, "batch_size": int,
    },
    "retrain": {
        "learning_rate": _NUM, "momentum": _NUM, "weight_decay": _NUM,
        "schedule": list, "epochs": int, "batch_size": int,
    },
    "elbo": {
        "learning_rate": _NUM, "momentum": _NUM, "weight_decay": _NUM,
        "schedule": list, "epochs": int, "batch_size": int,
        "kl_weight_mode": str, "mc_samples_per_step": int, "bayes_layer_index": int,
    },
    "eval": {
        "mc_samples": int, "ece_bins": int, "thresholds": list,
        "ece_paper_literal": bool,
    },
    "attack": {
        "radius": _NUM, "steps": int, "step_size": (int, float, type(None)),
        "random_start": bool, "radii": list, "mc_samples": int,
    },
    "bound": {"window_epochs": int, "delta_conf": _NUM, "risk_samples": int},
    "sweep": {"num_directions": int, "deltas": list},
    "mi": {"overfit_epochs": int, "overfit_train": int, "mc_samples": int},
}

_TOP_FIELDS = {
    "schema_version": int, "task": _OPT_STR, "seeds": list, "out_dir": _OPT_STR,
    **{k: dict for k in _OPT_SECTIONS},
}

DEFAULT_CONFIG = {
    "schema_version": SCHEMA_VERSION,
    "dataset": {"kind": "moons", "m": 2000, "noise_std": 0.1,
                "n_train": 1400, "n_test": 600, "data_dir": None,
                "normalize": False},
    "arch": {"hidden": [32, 32]},
    "pretrain": {"learning_rate": 0.1, "momentum": 0.9, "weight_decay": 5e-4,
                 "schedule": [[60, 0.2], [120, 0.2], [160, 0.2]],
                 "epochs": 40, "batch_size": 128},
    "retrain": {"learning_rate": 0.1, "momentum": 0.9, "weight_decay": 5e-4,
                "schedule": [], "epochs": 60, "batch_size": 128},
    "elbo": {"learning_rate": 0.1, "momentum": 0.9, "weight_decay": 5e-4,
             "schedule": [[10, 0.2], [20, 0.2], [25, 0.2]],
             "epochs": 30, "batch_size": 128,
             "kl_weight_mode": "per_batch_1_over_B", "mc_samples_per_step": 1,
             "bayes_layer_index": 1},
    "eval": {"mc_samples": 30, "ece_bins": 15,
             "thresholds": [round(0.05 * i, 2) for i in range(20)],
             "ece_paper_literal": False},
    "attack": {"radius": 0.1, "steps": 10, "step_size": None,
               "random_start": True,
               "radii": [0.0, 2 / 255, 4 / 255, 6 / 255, 8 / 255, 10 / 255],
               "mc_samples": 10},
    "bound": {"window_epochs": 5, "delta_conf": 0.05, "risk_samples": 100},
    "sweep": {"num_directions": 20,
              "deltas": [1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6]},
    "mi": {"overfit_epochs": 300, "overfit_train": 400, "mc_samples": 10},
    "seeds": [0],
    "out_dir": None,
}


def validate_config(cfg: dict) -> None:
    if not isinstance(cfg, dict):
        raise ConfigError("", "config must be a JSON object")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError("schema_version",
                          f"expected {SCHEMA_VERSION}, got {cfg.get('schema_version')!r}")
    def type_ok(value, allowed) -> bool:
        kinds = allowed if isinstance(allowed, tuple) else (allowed,)
        if isinstance(value, bool):
            return bool in kinds
        return isinstance(value, kinds)

    for key, value in cfg.items():
        if key not in _TOP_FIELDS:
            raise ConfigError(key, "unknown field")
        if not type_ok(value, _TOP_FIELDS[key]):
            raise ConfigError(key, f"wrong type {type(value).__name__}")
    for section, fields in _OPT_SECTIONS.items():
        for key, value in cfg.get(section, {}).items():
            if key not in fields:
                raise ConfigError(f"{section}.{key}", "unknown field")
            if not type_ok(value, fields[key]):
                raise ConfigError(f"{section}.{key}", f"wrong type {type(value).__name__}")


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_CONFIG))  # deep copy
    if path is not None:
        user = read_json(path)
        validate_config(user)
        for key, value in user.items():
            if isinstance(value, dict):
                cfg[key].update(value)
            else:
                cfg[key] = value
    if overrides:
        cfg.update(overrides)
    return cfg


def resolved_hash(cfg: dict) -> str:
    """Config digest shared by all seeds of one experiment."""
    trimmed = {k: v for k, v in cfg.items() if k not in ("seeds", "out_dir", "task")}
    return config_hash(trimmed)


def _sgd(section: dict) -> nn.SgdConfig:
    return nn.SgdConfig(
        learning_rate=section["learning_rate"],
        momentum=section["momentum"],
        weight_decay=section["weight_decay"],
        schedule=tuple((int(e), float(m)) for e, m in section["schedule"]),
    )


def _train_cfg(section: dict) -> nn.TrainConfig:
    return nn.TrainConfig(_sgd(section), section["epochs"], section["batch_size"])


def _elbo_cfg(section: dict) -> bayes.ElboConfig:
    return bayes.ElboConfig(
        optimizer=_sgd(section),
        epochs=section["epochs"],
        batch_size=section["batch_size"],
        kl_weight_mode=section["kl_weight_mode"],
        mc_samples_per_step=section["mc_samples_per_step"],
    )


def build_dataset(cfg: dict, seed: int):
    ds = cfg["dataset"]
    prng = Prng(seed).spawn(0xDA7A)
    if ds["kind"] == "moons":
        full = data.make_two_moons(ds["m"], ds["noise_std"], prng)
        train, test = data.split_train_test(full, ds["n_train"], prng.spawn(1))
    elif ds["kind"] == "blobs":
        centers = np.asarray(ds.get("centers") or [[0.0, 0.0], [4.0, 4.0]])
        full = data.make_blobs(ds["m"], len(centers), centers, ds.get("std", 0.5), prng)
        train, test = data.split_train_test(full, ds["n_train"], prng.spawn(1))
    elif ds["kind"] == "images":
        train, test = data.desk_corpus(prng, ds["data_dir"], ds["n_train"], ds["n_test"])
    else:
        raise ConfigError("dataset.kind", f"unknown dataset kind {ds['kind']!r}")
    if ds.get("normalize"):
        train, test = data.normalize(train, test)
    return train, test


def build_model(cfg: dict, train, seed: int) -> nn.MlpModel:
    dims = [train.dim] + list(cfg["arch"]["hidden"]) + [train.num_classes]
    return nn.he_init(dims, Prng(seed).spawn(0x1417))


def pretrain_model(cfg: dict, train, seed: int, step_hook=None):
    model = build_model(cfg, train, seed)
    _, losses = nn.train_deterministic(
        model, train, _train_cfg(cfg["pretrain"]), Prng(seed).spawn(0x7124),
        step_hook=step_hook)
    return model, losses


def stf_model(cfg: dict, pretrained, train, seed: int):
    idx = cfg["elbo"]["bayes_layer_index"]
    return bayes.stf_train(pretrained, idx, train, _elbo_cfg(cfg["elbo"]),
                           Prng(seed).spawn(0x57F))


def _out_dir(cfg: dict, args_out: str | None, task: str) -> str:
    root = args_out or cfg.get("out_dir") or os.environ.get("STFBNN_OUT") or "runs"
    path = os.path.join(root, task)
    os.makedirs(path, exist_ok=True)
    return path


def _emit(out_dir: str, task: str, seed: int, payload: dict, started: float) -> str:
    path = os.path.join(out_dir, f"{task}_seed{seed}.json")
    write_json(payload, path)
    write_json({"wall_clock_s": time.time() - started, "written_at": time.time()},
               os.path.join(out_dir, f"{task}_seed{seed}.sidecar.json"))
    return path


def _eval_pair(cfg: dict, model, stf, test, seed: int) -> dict:
    """Clean accuracy and calibration for the baseline and the variational net."""
    ev = cfg["eval"]
    prng = Prng(seed).spawn(0xE7A1)
    base = uncertainty.point_predict(model, test.features)
    post = uncertainty.mc_predict(stf, test.features, ev["mc_samples"], prng)
    literal = ev["ece_paper_literal"]
    return {
        "baseline_accuracy": float(np.mean(base.predicted == test.labels)),
        "stf_accuracy": float(np.mean(post.predicted == test.labels)),
        "baseline_ece": uncertainty.ece(base, test.labels, ev["ece_bins"], literal).ece,
        "stf_ece": uncertainty.ece(post, test.labels, ev["ece_bins"], literal).ece,
    }


def task_pretrain(cfg, seed, out_dir):
    started = time.time()
    train, test = build_dataset(cfg, seed)
    model, losses = pretrain_model(cfg, train, seed)
    ckpt = os.path.join(out_dir, f"model_seed{seed}.json")
    nn.save_model(model, ckpt)
    payload = {
        "task": "pretrain", "seed": seed, "config_hash": resolved_hash(cfg),
        "train_loss_curve": losses,
        "train_accuracy": nn.accuracy(model, train),
        "test_accuracy": nn.accuracy(model, test),
        "checkpoint": os.path.basename(ckpt),
    }
    return _emit(out_dir, "pretrain", seed, payload, started)


def task_stf_train(cfg, seed, out_dir):
    started = time.time()
    train, test = build_dataset(cfg, seed)
    model, _ = pretrain_model(cfg, train, seed)
    stf, curves = stf_model(cfg, model, train, seed)
    ckpt = os.path.join(out_dir, f"stf_seed{seed}.json")
    bayes.save_stf(stf, ckpt)
    payload = {
        "task": "stf-train", "seed": seed, "config_hash": resolved_hash(cfg),
        "curves": curves,
        **_eval_pair(cfg, model, stf, test, seed),
        "checkpoint": os.path.basename(ckpt),
    }
    return _emit(out_dir, "stf-train", seed, payload, started)


def task_stability(cfg, seed, out_dir):
    started = time.time()
    train, _ = build_dataset(cfg, seed)
    dims = [train.dim] + list(cfg["arch"]["hidden"]) + [train.num_classes]
    protocol = stability.StabilityProtocol(
        arch=dims, pretrain=_train_cfg(cfg["pretrain"]),
        retrain=_train_cfg(cfg["retrain"]))
    report = stability.stability_profile(protocol, train, [int(s) for s in cfg["seeds"]])
    report.to_csv(os.path.join(out_dir, f"stability_seed{seed}.csv"))
    payload = {
        "task": "stability", "seed": seed, "config_hash": resolved_hash(cfg),
        "layer_means": report.layer_means, "layer_stds": report.layer_stds,
        "per_seed": {str(k): v for k, v in report.per_seed.items()},
    }
    return _emit(out_dir, "stability", seed, payload, started)


def task_ablation(cfg, seed, out_dir):
    started = time.time()
    train, test = build_dataset(cfg, seed)
    model, _ = pretrain_model(cfg, train, seed)
    rows = []
    for idx in range(1, model.depth + 1):
        local = json.loads(json.dumps(cfg))
        local["elbo"]["bayes_layer_index"] = idx
        stf, _ = stf_model(local, model, train, seed)
        metrics = _eval_pair(cfg, model, stf, test, seed)
        rows.append({"bayes_layer_index": idx,
                     "accuracy": metrics["stf_accuracy"],
                     "ece": metrics["stf_ece"]})
    payload = {
        "task": "ablation", "seed": seed, "config_hash": resolved_hash(cfg),
        "baseline_accuracy": nn.accuracy(model, test),
        "layers": rows,
    }
    return _emit(out_dir, "ablation", seed, payload, started)


def task_evaluate(cfg, seed, out_dir):
    started = time.time()
    train, test = build_dataset(cfg, seed)
    model, _ = pretrain_model(cfg, train, seed)
    stf, _ = stf_model(cfg, model, train, seed)
    payload = {
        "task": "evaluate", "seed": seed, "config_hash": resolved_hash(cfg),
        **_eval_pair(cfg, model, stf, test, seed),
    }
    return _emit(out_dir, "evaluate", seed, payload, started)


def task_corruption_grid(cfg, seed, out_dir):
    started = time.time()
    train, test = build_dataset(cfg, seed)
    model, _ = pretrain_model(cfg, train, seed)
    stf, _ = stf_model(cfg, model, train, seed)
    ev = cfg["eval"]
    prng = Prng(seed).spawn(0xC0)
    cells = []
    for cell_id, spec in enumerate(data.corruption_grid()):
        corrupted = data.corrupt(test, spec, prng.spawn(cell_id))
        base = uncertainty.point_predict(model, corrupted.features)
        post = uncertainty.mc_predict(stf, corrupted.features, ev["mc_samples"],
                                      prng.spawn(100 + cell_id))
        cells.append({
            "kind": spec.kind, "severity": spec.severity,
            "baseline_accuracy": float(np.mean(base.predicted == corrupted.labels)),
            "stf_accuracy": float(np.mean(post.predicted == corrupted.labels)),
            "baseline_ece": uncertainty.ece(base, corrupted.labels, ev["ece_bins"]).ece,
            "stf_ece": uncertainty.ece(post, corrupted.labels, ev["ece_bins"]).ece,
        })
    payload = {
        "task": "corruption-grid", "seed": seed, "config_hash": resolved_hash(cfg),
        "clean": _eval_pair(cfg, model, stf, test, seed),
        "cells": cells,
    }
    return _emit(out_dir, "corruption-grid", seed, payload, started)


def task_threshold_curve(cfg, seed, out_dir):
    started = time.time()
    train, test = build_dataset(cfg, seed)
    model, _ = pretrain_model(cfg, train, seed)
    stf, _ = stf_model(cfg, model, train, seed)
    ev = cfg["eval"]
    prng = Prng(seed).spawn(0x7819)
    base = uncertainty.point_predict(model, test.features)
    post = uncertainty.mc_predict(stf, test.features, ev["mc_samples"], prng)
    curves = {}
    for name, summary in (("baseline", base), ("stf", post)):
        pts = uncertainty.accuracy_at_threshold(summary, test.labels, ev["thresholds"])
        curves[name] = [{"threshold": p.threshold, "coverage": p.coverage,
                         "accuracy": p.accuracy} for p in pts]
    rows = [(p["threshold"], p["coverage"], p["accuracy"], q["coverage"], q["accuracy"])
            for p, q in zip(curves["baseline"], curves["stf"])]
    write_csv(os.path.join(out_dir, f"threshold_curve_seed{seed}.csv"),
              ["threshold", "baseline_coverage", "baseline_accuracy",
               "stf_coverage", "stf_accuracy"],
              [(r[0], r[1], r[2], r[3], r[4]) for r in rows])
    payload = {
        "task": "threshold-curve", "seed": seed, "config_hash": resolved_hash(cfg),
        "curves": curves,
    }
    return _emit(out_dir, "threshold-curve", seed, payload, started)


def task_bound(cfg, seed, out_dir):
    started = time.time()
    train, test = build_dataset(cfg, seed)
    recorder = bounds.IterateRecorder(cfg["bound"]["window_epochs"],
                                      cfg["pretrain"]["epochs"],
                                      exclude_layer=cfg["elbo"]["bayes_layer_index"] - 1)
    model, _ = pretrain_model(cfg, train, seed, step_hook=recorder)
    stf, _ = stf_model(cfg, model, train, seed)
    sigma2 = bounds.estimate_sigma2(recorder)
    comps = bounds.delta_term(stf.bayes, sigma2)
    prng = Prng(seed).spawn(0xB0)
    r_hat = bounds.empirical_risk_mc(stf, train, cfg["bound"]["risk_samples"], prng)
    r_test = bounds.empirical_risk_mc(stf, test, cfg["bound"]["risk_samples"], prng)
    report = bounds.pac_bayes_bound(comps, len(train), cfg["bound"]["delta_conf"],
                                    r_hat, test_risk=r_test)
    payload = {
        "task": "bound", "seed": seed, "config_hash": resolved_hash(cfg),
        **jsonable(report),
    }
    return _emit(out_dir, "bound", seed, payload, started)


def _binary_stf(cfg, seed):
    """Train on a 2-class task and collapse to a scalar-logit variational net."""
    train, test = build_dataset(cfg, seed)
    if train.num_classes != 2:
        raise UsageError("scale-sweep needs a binary dataset")
    model, _ = pretrain_model(cfg, train, seed)
    stf, _ = stf_model(cfg, model, train, seed)
    binary = nn.to_binary_logit(stf.template)
    return train, test, bayes.StfModel(binary, stf.bayes, stf.bayes_index), model


def task_scale_sweep(cfg, seed, out_dir):
    started = time.time()
    _, _, stf_bin, _ = _binary_stf(cfg, seed)
    sw = cfg["sweep"]
    prng = Prng(seed).spawn(0x5CA1E)
    dirs = prng.gaussian((sw["num_directions"], stf_bin.template.input_dim))
    norms = np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = dirs / np.where(norms == 0, 1.0, norms)
    rows = uncertainty.scale_sweep(stf_bin, dirs, sw["deltas"])
    uncertainty.scale_sweep_csv(rows, os.path.join(out_dir, f"scale_sweep_seed{seed}.csv"))
    worst = max(r[2] - r[3] for r in rows)
    payload = {
        "task": "scale-sweep", "seed": seed, "config_hash": resolved_hash(cfg),
        "num_directions": sw["num_directions"], "deltas": sw["deltas"],
        "max_confidence_minus_bound": worst,
        "all_below_bound": bool(worst <= 1e-6),
    }
    return _emit(out_dir, "scale-sweep", seed, payload, started)


def task_attack(cfg, seed, out_dir):
    started = time.time()
    train, test = build_dataset(cfg, seed)
    model, _ = pretrain_model(cfg, train, seed)
    stf, _ = stf_model(cfg, model, train, seed)
    a = cfg["attack"]
    prng = Prng(seed).spawn(0xA77)
    per_radius = []
    for radius in a["radii"]:
        acfg = atk.AttackConfig(radius=float(radius), steps=a["steps"],
                                step_size=a["step_size"], random_start=a["random_start"],
                                clip_range=None if cfg["dataset"]["kind"] != "images" else (0.0, 1.0))
        per_radius.append({
            "radius": float(radius),
            "baseline_accuracy": atk.attack_eval(model, test, acfg, prng.spawn(int(radius * 1e6))),
            "stf_accuracy": atk.attack_eval(stf, test, acfg, prng.spawn(1 + int(radius * 1e6)),
                                            mc_samples=a["mc_samples"]),
        })
    payload = {
        "task": "attack", "seed": seed, "config_hash": resolved_hash(cfg),
        "per_radius": per_radius,
    }
    return _emit(out_dir, "attack", seed, payload, started)


def task_adv_train(cfg, seed, out_dir):
    started = time.time()
    train, test = build_dataset(cfg, seed)
    a = cfg["attack"]
    clip = None if cfg["dataset"]["kind"] != "images" else (0.0, 1.0)
    acfg = atk.AttackConfig(radius=a["radius"], steps=a["steps"],
                            step_size=a["step_size"], random_start=a["random_start"],
                            clip_range=clip)
    plain, _ = pretrain_model(cfg, train, seed)
    defended = build_model(cfg, train, seed)
    atk.adversarial_train(defended, train, _train_cfg(cfg["pretrain"]), acfg,
                          Prng(seed).spawn(0x7124))
    eval_cfg = atk.AttackConfig(radius=a["radius"], steps=a["steps"],
                                step_size=a["step_size"], random_start=a["random_start"],
                                clip_range=clip)
    prng = Prng(seed).spawn(0xE4A)
    payload = {
        "task": "adv-train", "seed": seed, "config_hash": resolved_hash(cfg),
        "radius": a["radius"],
        "plain_clean_accuracy": nn.accuracy(plain, test),
        "defended_clean_accuracy": nn.accuracy(defended, test),
        "plain_adv_accuracy": atk.attack_eval(plain, test, eval_cfg, prng.spawn(1)),
        "defended_adv_accuracy": atk.attack_eval(defended, test, eval_cfg, prng.spawn(2)),
    }
    return _emit(out_dir, "adv-train", seed, payload, started)


def task_mi(cfg, seed, out_dir):
    started = time.time()
    train, test = build_dataset(cfg, seed)
    mi = cfg["mi"]
    prng = Prng(seed).spawn(0x3117)
    small = data.Dataset(train.features[:mi["overfit_train"]],
                         train.labels[:mi["overfit_train"]], train.num_classes,
                         provenance=dict(train.provenance))
    over_cfg = nn.TrainConfig(
        nn.SgdConfig(cfg["pretrain"]["learning_rate"], cfg["pretrain"]["momentum"], 0.0),
        mi["overfit_epochs"], cfg["pretrain"]["batch_size"])
    model = build_model(cfg, small, seed)
    nn.train_deterministic(model, small, over_cfg, Prng(seed).spawn(0x7124))
    report = atk.mi_attack(model, small, test, mi["mc_samples"], prng)
    payload = {
        "task": "mi", "seed": seed, "config_hash": resolved_hash(cfg),
        "threshold_optim": report.threshold_optim,
        "accuracy_optim": report.accuracy_optim,
        "num_thresholds": len(report.thresholds),
    }
    report.to_json(os.path.join(out_dir, f"mi_curve_seed{seed}.json"),
                   extra={"config_hash": resolved_hash(cfg), "seed": seed})
    return _emit(out_dir, "mi", seed, payload, started)


def task_demo(cfg, seed, out_dir):
    """Full desk-scale pipeline on one seed: pretrain, stability (2 seeds),
    phase 2, evaluation, bound, scale sweep."""
    started = time.time()
    train, test = build_dataset(cfg, seed)
    recorder = bounds.IterateRecorder(cfg["bound"]["window_epochs"],
                                      cfg["pretrain"]["epochs"], exclude_layer=0)
    model, losses = pretrain_model(cfg, train, seed, step_hook=recorder)
    stf, curves = stf_model(cfg, model, train, seed)

    dims = [train.dim] + list(cfg["arch"]["hidden"]) + [train.num_classes]
    mini_budget = nn.TrainConfig(_sgd(cfg["retrain"]), min(cfg["retrain"]["epochs"], 25),
                                 cfg["retrain"]["batch_size"])
    protocol = stability.StabilityProtocol(dims, _train_cfg(cfg["pretrain"]), mini_budget)
    prof = stability.stability_profile(protocol, train, [seed, seed + 1])

    sigma2 = bounds.estimate_sigma2(recorder)
    comps = bounds.delta_term(stf.bayes, sigma2)
    prng = Prng(seed).spawn(0xDE30)
    r_hat = bounds.empirical_risk_mc(stf, train, 50, prng)
    r_test = bounds.empirical_risk_mc(stf, test, 50, prng)
    bound = bounds.pac_bayes_bound(comps, len(train), cfg["bound"]["delta_conf"],
                                   r_hat, test_risk=r_test)

    binary = nn.to_binary_logit(stf.template)
    stf_bin = bayes.StfModel(binary, stf.bayes, stf.bayes_index)
    dirs = prng.gaussian((5, train.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    rows = uncertainty.scale_sweep(stf_bin, dirs, cfg["sweep"]["deltas"])

    payload = {
        "task": "demo", "seed": seed, "config_hash": resolved_hash(cfg),
        "pretrain_final_loss": losses[-1],
        "elbo_final_loss": curves["loss"][-1],
        **_eval_pair(cfg, model, stf, test, seed),
        "stability_layer_means": prof.layer_means,
        "bound": jsonable(bound),
        "scale_sweep_max_gap": max(r[2] - r[3] for r in rows),
    }
    return _emit(out_dir, "demo", seed, payload, started)


_HANDLERS = {
    "pretrain": task_pretrain,
    "stf-train": task_stf_train,
    "stability": task_stability,
    "ablation": task_ablation,
    "evaluate": task_evaluate,
    "corruption-grid": task_corruption_grid,
    "threshold-curve": task_threshold_curve,
    "bound": task_bound,
    "scale-sweep": task_scale_sweep,
    "attack": task_attack,
    "adv-train": task_adv_train,
    "mi": task_mi,
    "demo": task_demo,
}


def report_merge(paths: list[str], out_path: str | None = None) -> dict:
    """Aggregate same-config seed reports: mean/std per numeric metric."""
    if not paths:
        raise InputError("no reports given")
    blobs = [read_json(p) for p in paths]
    hashes = {b.get("config_hash") for b in blobs}
    if len(hashes) != 1:
        raise InputError(f"mixed config hashes: {sorted(h or 'none' for h in hashes)}")

    def collect(prefix, value, store):
        if isinstance(value, dict):
            for k, v in value.items():
                collect(f"{prefix}.{k}" if prefix else k, v, store)
        elif isinstance(value, (int, float)) and not isinstance(value, bool):
            store.setdefault(prefix, []).append(float(value))

    store: dict[str, list[float]] = {}
    for blob in blobs:
        collect("", {k: v for k, v in blob.items() if k != "seed"}, store)
    merged = {
        "config_hash": blobs[0].get("config_hash"),
        "num_reports": len(blobs),
        "seeds": sorted(b.get("seed") for b in blobs),
        "metrics": {
            key: {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
            for key, vals in sorted(store.items())
        },
    }
    if out_path:
        write_json(merged, out_path)
    return merged


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="stfbnn",
        description="Two-phase Bayesian-first-layer experiment runner")
    sub = parser.add_subparsers(dest="task", required=True)
    for task in TASKS:
        p = sub.add_parser(task)
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
    merge = sub.add_parser("merge")
    merge.add_argument("reports", nargs="+")
    merge.add_argument("--out", default=None)
    args = parser.parse_args(argv)

    try:
        if args.task == "merge":
            merged = report_merge(args.reports, args.out)
            if not args.out:
                print(json.dumps(merged, indent=2, sort_keys=True))
            return 0
        cfg = load_config(args.config)
        validate_config(cfg)
        seeds = [args.seed] if args.seed is not None else [int(s) for s in cfg["seeds"]]
        out_dir = _out_dir(cfg, args.out, args.task)
        for seed in seeds:
            path = _HANDLERS[args.task](cfg, seed, out_dir)
            print(path)
        return 0
    except (ConfigError, InputError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
