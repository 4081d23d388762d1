"""Experiment pipeline: dataset generation, training the six model variants,
closed-loop evaluation, ablations, and report assembly.
"""

from __future__ import annotations

import csv
import json
import os
import statistics
from multiprocessing import Pool
from pathlib import Path

import numpy as np

from . import data as datamod
from . import heads as headsmod
from . import metrics, sim, track, trainer
from .actions import calibrate_temperature, make_grid
from .backbone import BackboneConfig
from .config import make_rng, stream_seed

VARIANT_NAMES = ("ebm", "ebm_temporal", "ebm_soft",
                 "regression", "classification", "mdn")


# ---------------------------------------------------------------------------
# config adapters


def vehicle_params(cfg: dict) -> sim.VehicleParams:
    v = cfg["vehicle"]
    return sim.VehicleParams(v["wheelbase_m"], v["steering_ratio"],
                             v["wheel_limit_deg"], v["tau_s"],
                             v["rate_limit_deg_s"], v["dt_s"])


def expert_params(cfg: dict) -> sim.ExpertParams:
    e = cfg["expert"]
    return sim.ExpertParams(e["v_max_mps"], e["v_min_mps"], e["a_lat_max"],
                            e["accel_max"], e["lookahead_time_s"],
                            e["lookahead_min_m"])


def obs_spec(cfg: dict, noisy: bool = True) -> sim.ObservationSpec:
    b = cfg["backbone"]
    noise = cfg["data"]["preview_noise_std_m"] if noisy else 0.0
    return sim.ObservationSpec(b["preview_points"], b["preview_horizon_m"], noise)


def action_grid(cfg: dict):
    g = cfg["grid"]
    return make_grid(g["a_min_deg"], g["a_max_deg"], g["n"])


def eval_params(cfg: dict) -> sim.EvalParams:
    e = cfg["eval"]
    return sim.EvalParams(e["speed_factor"], e["crash_distance_m"], e["respawn_time_s"])


def track_kwargs(cfg: dict) -> dict:
    t = cfg["track"]
    return {
        "length_m": t["length_m"],
        "fork_density_per_km": t["fork_density_per_km"],
        "curvature_max": t["curvature_max"],
        "lane_half_width": t["lane_half_width_m"],
    }


def train_config(cfg: dict, seed: int) -> trainer.TrainConfig:
    t = cfg["train"]
    adam = trainer.AdamConfig(t["lr"], t["beta1"], t["beta2"],
                              weight_decay=t["weight_decay"])
    return trainer.TrainConfig(t["batch_size"], t["max_epochs"], t["patience"],
                               seed=seed, adam=adam)


def build_variant(name: str, obs_dim: int, cfg: dict, grid, init_seed: int):
    """Instantiate one of the six model variants with seeded weights."""
    b = cfg["backbone"]
    bcfg = BackboneConfig(tuple(b["hidden"]), b["fusion_width"], b["activation"],
                          seed=init_seed)
    out_scale = b["out_scale"]
    sampler_mode = cfg["heads"]["sampler_mode"]
    if name == "regression":
        return headsmod.RegressionHead(obs_dim, bcfg, out_scale=out_scale)
    if name == "classification":
        return headsmod.ClassificationHead(obs_dim, bcfg, grid)
    if name == "mdn":
        return headsmod.MDNHead(obs_dim, bcfg, cfg["heads"]["mdn_components"],
                                out_scale=out_scale)
    if name == "ebm":
        return headsmod.EBMHead(obs_dim, bcfg, grid, sampler_mode=sampler_mode)
    if name == "ebm_temporal":
        return headsmod.EBMHead(obs_dim, bcfg, grid, sampler_mode=sampler_mode,
                                temporal_alpha=cfg["heads"]["temporal_alpha"])
    if name == "ebm_soft":
        temp = calibrate_temperature(grid, cfg["grid"]["soft_mass"],
                                     cfg["grid"]["soft_window_deg"])
        return headsmod.EBMHead(obs_dim, bcfg, grid, target_mode="soft",
                                soft_temperature=temp, sampler_mode=sampler_mode)
    raise ValueError(f"unknown model variant {name!r}, options: {VARIANT_NAMES}")


def variant_hyper(name: str, cfg: dict, grid) -> dict:
    """Constructor kwargs stored in checkpoints so variants rebuild exactly."""
    if name == "regression":
        return {"out_scale": cfg["backbone"]["out_scale"]}
    if name == "classification":
        return {}
    if name == "mdn":
        return {"components": cfg["heads"]["mdn_components"],
                "out_scale": cfg["backbone"]["out_scale"]}
    if name == "ebm":
        return {"sampler_mode": cfg["heads"]["sampler_mode"]}
    if name == "ebm_temporal":
        return {"sampler_mode": cfg["heads"]["sampler_mode"],
                "temporal_alpha": cfg["heads"]["temporal_alpha"]}
    if name == "ebm_soft":
        return {"target_mode": "soft",
                "sampler_mode": cfg["heads"]["sampler_mode"],
                "soft_temperature": calibrate_temperature(
                    grid, cfg["grid"]["soft_mass"], cfg["grid"]["soft_window_deg"])}
    raise ValueError(f"unknown model variant {name!r}")


def head_kind(name: str) -> str:
    return "ebm" if name.startswith("ebm") else name


# ---------------------------------------------------------------------------
# small IO helpers


def write_csv(path, header, rows) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


# ---------------------------------------------------------------------------
# generate


def generate_dataset(cfg: dict, out_dir) -> dict:
    """Record expert drives on seeded tracks; emit recordings, split manifest,
    a fork-label bimodality report, and the label histogram.
    """
    out = Path(out_dir)
    rec_dir = out / "recordings"
    rec_dir.mkdir(parents=True, exist_ok=True)
    root = cfg["root_seed"]
    vparams = vehicle_params(cfg)
    eparams = expert_params(cfg)
    spec = obs_spec(cfg)
    tracks = track.tracks_from_seeds(stream_seed(root, "track"),
                                     cfg["data"]["train_tracks"], **track_kwargs(cfg))

    rec_paths, recordings, commitments = [], [], []
    aborted = 0
    for tr in tracks:
        for run in range(cfg["data"]["runs_per_track"]):
            commit_rng = make_rng(root, "commit", tr.seed, run)
            branch = sim.choose_commitment(tr, commit_rng, cfg["data"]["p_side"])
            noise_rng = make_rng(root, "recnoise", tr.seed, run)
            try:
                log, obs, fork_flag = sim.record_expert_run(
                    tr, branch, vparams, spec, eparams, noise_rng,
                    fork_window_m=cfg["swerve"]["window_m"])
            except sim.ExpertLost:
                aborted += 1
                continue
            if log.aborted:
                aborted += 1
                continue
            rec = datamod.recording_from_run(log, obs, fork_flag)
            path = rec_dir / f"rec_{tr.seed}_{run:02d}.csv"
            datamod.save_recording(rec, log, path)
            rec_paths.append(str(path))
            recordings.append(rec)
            commitments.append(branch)

    split_seed = stream_seed(root, "split")
    train_recs, val_recs = datamod.split_recordings(rec_paths, cfg["data"]["train_fraction"],
                                                    split_seed)
    datamod.save_manifest(out / "dataset_manifest.json", rec_paths, train_recs, val_recs,
                          extra={"aborted_runs": aborted, "root_seed": root})

    _write_fork_report(out / "fork_bimodality.csv", tracks, recordings, commitments)
    _write_label_histogram(out / "label_histogram.csv", recordings,
                           cfg["ablate"]["histogram_bins"], action_grid(cfg))
    return {"recordings": rec_paths, "train": train_recs, "validation": val_recs,
            "aborted_runs": aborted}


def _write_fork_report(path, tracks, recordings, commitments) -> None:
    rows = []
    by_track = {}
    for rec, branch in zip(recordings, commitments):
        by_track.setdefault(rec.track_seed, []).append((rec, branch))
    for tr in tracks:
        for fi, fork in enumerate(tr.forks):
            branch_labels, main_labels = [], []
            for rec, branch in by_track.get(tr.seed, []):
                near = (rec.s >= fork.attach_s - 25.0) & (rec.s <= fork.attach_s - 5.0)
                if not np.any(near):
                    continue
                (branch_labels if branch == fi else main_labels).extend(
                    rec.labels_deg[near])
            stats = []
            for labels in (main_labels, branch_labels):
                if labels:
                    stats.extend([len(labels), float(np.mean(labels)),
                                  float(np.std(labels))])
                else:
                    stats.extend([0, "", ""])
            separation = ""
            if branch_labels and main_labels:
                pooled = max(float(np.std(main_labels)), float(np.std(branch_labels)), 1e-9)
                separation = abs(np.mean(branch_labels) - np.mean(main_labels)) / pooled
            rows.append([tr.seed, fi, f"{fork.attach_s:.1f}", fork.side] + stats
                        + [separation])
    write_csv(path, ["track_seed", "fork", "attach_s", "side",
                     "n_main", "mean_main", "std_main",
                     "n_branch", "mean_branch", "std_branch", "separation"], rows)


def _write_label_histogram(path, recordings, bins: int, grid) -> None:
    labels = np.concatenate([r.labels_deg for r in recordings])
    counts, edges = np.histogram(labels, bins=bins, range=(grid.a_min, grid.a_max))
    rows = [[repr(float(edges[i])), repr(float(edges[i + 1])), int(counts[i])]
            for i in range(len(counts))]
    write_csv(path, ["bin_left_deg", "bin_right_deg", "count"], rows)


# ---------------------------------------------------------------------------
# train


def load_dataset(cfg: dict, out_dir) -> tuple[list, list]:
    manifest = datamod.load_manifest(Path(out_dir) / "dataset_manifest.json")
    train = [datamod.load_recording(p) for p in manifest["train"]]
    val = [datamod.load_recording(p) for p in manifest["validation"]]
    return train, val


def train_variants(cfg: dict, out_dir, variants=None, train_recs=None,
                   val_recs=None) -> dict[str, dict[int, str]]:
    """Fit each variant for each seed; existing checkpoints are kept (resume)."""
    out = Path(out_dir)
    ckpt_dir = out / "checkpoints"
    curve_dir = out / "curves"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    curve_dir.mkdir(parents=True, exist_ok=True)
    if train_recs is None:
        train_recs, val_recs = load_dataset(cfg, out_dir)
    variants = list(variants or VARIANT_NAMES)
    unknown = set(variants) - set(VARIANT_NAMES)
    if unknown:
        raise ValueError(f"unknown model variants {sorted(unknown)}, "
                         f"options: {VARIANT_NAMES}")
    root = cfg["root_seed"]
    grid = action_grid(cfg)
    obs_dim = train_recs[0].observations.shape[1]

    paths: dict[str, dict[int, str]] = {}
    for name in variants:
        paths[name] = {}
        for seed in cfg["train"]["seeds"]:
            ckpt = ckpt_dir / f"{name}_seed{seed}.ckpt"
            paths[name][seed] = str(ckpt)
            if ckpt.exists():
                continue
            init_seed = stream_seed(root, "init", name, seed) % (2 ** 31)
            head = build_variant(name, obs_dim, cfg, grid, init_seed)
            tcfg = train_config(cfg, stream_seed(root, "sampler", name, seed) % (2 ** 31))
            result = trainer.fit(head, train_recs, val_recs, tcfg)
            needs_grid = name == "classification" or name.startswith("ebm")
            meta = trainer.policy_meta(head_kind(name), obs_dim, head.backbone.config,
                                       grid=grid if needs_grid else None,
                                       hyper=variant_hyper(name, cfg, grid))
            meta.update({"variant": name, "train_seed": seed,
                         "best_val_mae": result.best_val_mae,
                         "best_epoch": result.best_epoch})
            trainer.Policy(head, result.normalizer, meta).save(ckpt)
            write_csv(curve_dir / f"{name}_seed{seed}.csv",
                      ["epoch", "train_loss", "val_mae"],
                      [[e, repr(l), repr(v)] for e, l, v in result.curve])
    return paths


# ---------------------------------------------------------------------------
# evaluate


def _episode_task(payload: dict) -> dict:
    """One closed-loop episode; runs in a worker process when jobs > 1."""
    cfg = payload["cfg"]
    tr = track.generate_track(payload["track_seed"], **track_kwargs(cfg))
    policy = trainer.Policy.load(payload["ckpt"])
    noise_rng = np.random.default_rng(payload["noise_seed"])
    log = sim.run_episode(policy, tr, payload["expert_log"], vehicle_params(cfg),
                          obs_spec(cfg), eval_params(cfg), noise_rng)
    w_cmd = metrics.whiteness_from_log(log, "command")
    w_eff = metrics.whiteness_from_log(log, "effective")
    return {
        "model": payload["model"], "seed": payload["seed"],
        "episode": payload["episode"], "track_seed": payload["track_seed"],
        "crashes": metrics.crash_count(log), "w_cmd": w_cmd.w, "w_eff": w_eff.w,
        "steps": len(log), "aborted": log.aborted, "log": log,
    }


def evaluate(cfg: dict, out_dir, checkpoint_paths=None, jobs: int = 1) -> list[dict]:
    """Closed-loop evaluation of every checkpoint; emits a results table,
    per-model means, and the fork swerve report.
    """
    out = Path(out_dir)
    eval_dir = out / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    root = cfg["root_seed"]
    if checkpoint_paths is None:
        checkpoint_paths = {}
        ckpt_dir = out / "checkpoints"
        for name in VARIANT_NAMES:
            for seed in cfg["train"]["seeds"]:
                p = ckpt_dir / f"{name}_seed{seed}.ckpt"
                if p.exists():
                    checkpoint_paths.setdefault(name, {})[seed] = str(p)
        if not checkpoint_paths:
            raise FileNotFoundError(f"no checkpoints under {ckpt_dir}")

    eval_tracks = track.tracks_from_seeds(stream_seed(root, "evaltrack"),
                                          cfg["eval"]["tracks"], **track_kwargs(cfg))
    vparams = vehicle_params(cfg)
    eparams = expert_params(cfg)
    expert_logs = {}
    for tr in eval_tracks:
        log, _, _ = sim.record_expert_run(tr, None, vparams, obs_spec(cfg, noisy=False),
                                          eparams, noise_rng=None)
        expert_logs[tr.seed] = log

    tasks = []
    for model, by_seed in sorted(checkpoint_paths.items()):
        for seed, ckpt in sorted(by_seed.items()):
            for episode in range(cfg["eval"]["episodes"]):
                tr = eval_tracks[episode % len(eval_tracks)]
                tasks.append({
                    "cfg": cfg, "model": model, "seed": seed, "episode": episode,
                    "ckpt": ckpt, "track_seed": tr.seed,
                    "expert_log": expert_logs[tr.seed],
                    "noise_seed": stream_seed(root, "evalnoise", model, seed, episode),
                })

    if jobs > 1:
        with Pool(jobs) as pool:
            results = pool.map(_episode_task, tasks)
    else:
        results = [_episode_task(t) for t in tasks]

    write_csv(eval_dir / "results.csv",
              ["model", "seed", "episode", "track_seed", "crashes",
               "w_cmd", "w_eff", "steps", "aborted"],
              [[r["model"], r["seed"], r["episode"], r["track_seed"], r["crashes"],
                repr(r["w_cmd"]), repr(r["w_eff"]), r["steps"], int(r["aborted"])]
               for r in results])

    by_model: dict[str, list[dict]] = {}
    for r in results:
        by_model.setdefault(r["model"], []).append(r)
    write_csv(eval_dir / "means.csv",
              ["model", "episodes", "mean_crashes", "mean_w_cmd", "mean_w_eff"],
              [[m, len(rs),
                repr(float(np.mean([r["crashes"] for r in rs]))),
                repr(float(np.mean([r["w_cmd"] for r in rs]))),
                repr(float(np.mean([r["w_eff"] for r in rs])))]
               for m, rs in sorted(by_model.items())])

    swerve_rows = []
    forked = {tr.seed: tr for tr in eval_tracks if tr.forks}
    for model, by_seed in sorted(checkpoint_paths.items()):
        for seed in sorted(by_seed):
            score, sections = 0.0, 0
            for tr_seed, tr in forked.items():
                logs = [r["log"] for r in results
                        if r["model"] == model and r["seed"] == seed
                        and r["track_seed"] == tr_seed]
                if not logs:
                    continue
                rep = metrics.swerve_rate(logs, tr, cfg["swerve"]["window_m"],
                                          cfg["swerve"]["full_m"], cfg["swerve"]["half_m"])
                score += float(rep.scores.sum())
                sections += rep.scores.size
            if sections:
                swerve_rows.append([model, seed, repr(score / sections), sections])
    write_csv(eval_dir / "swerve.csv", ["model", "seed", "swerve_rate", "sections"],
              swerve_rows)
    return results


# ---------------------------------------------------------------------------
# ablate


def ablate(cfg: dict, out_dir, train_recs=None, val_recs=None) -> dict:
    """(a) constant-grid vs uniform negatives, (b) dataset-size scaling with
    closed-loop whiteness, (c) steering label histogram.
    """
    out = Path(out_dir)
    ab_dir = out / "ablate"
    ab_dir.mkdir(parents=True, exist_ok=True)
    root = cfg["root_seed"]
    if train_recs is None:
        train_recs, val_recs = load_dataset(cfg, out_dir)
    grid = action_grid(cfg)
    obs_dim = train_recs[0].observations.shape[1]
    head_name = cfg["ablate"]["head"]
    seeds = cfg["train"]["seeds"]

    # (a) negative-sampling mode, identical splits and seeds across modes
    sampler_rows = []
    for mode in ("constant", "uniform"):
        mode_cfg = json.loads(json.dumps(cfg))
        mode_cfg["heads"]["sampler_mode"] = mode
        for seed in seeds:
            init_seed = stream_seed(root, "ablate-init", head_name, seed) % (2 ** 31)
            head = build_variant(head_name, obs_dim, mode_cfg, grid, init_seed)
            tcfg = train_config(cfg, stream_seed(root, "ablate-sampler", seed) % (2 ** 31))
            result = trainer.fit(head, train_recs, val_recs, tcfg)
            sampler_rows.append([mode, seed, repr(result.best_val_mae),
                                 result.best_epoch])
    write_csv(ab_dir / "sampler_modes.csv",
              ["mode", "seed", "val_mae", "best_epoch"], sampler_rows)

    # (b) dataset-size scaling: fraction of train recordings
    eval_tracks = track.tracks_from_seeds(stream_seed(root, "evaltrack"), 1,
                                          **track_kwargs(cfg))
    tr0 = eval_tracks[0]
    expert_log, _, _ = sim.record_expert_run(tr0, None, vehicle_params(cfg),
                                             obs_spec(cfg, noisy=False), expert_params(cfg))
    scaling_rows = []
    for fraction in cfg["ablate"]["fractions"]:
        n_use = max(1, int(round(fraction * len(train_recs))))
        subset = train_recs[:n_use]
        for seed in seeds:
            init_seed = stream_seed(root, "scale-init", fraction, seed) % (2 ** 31)
            head = build_variant(head_name, obs_dim, cfg, grid, init_seed)
            tcfg = train_config(cfg, stream_seed(root, "scale-sampler", fraction, seed)
                                % (2 ** 31))
            result = trainer.fit(head, subset, val_recs, tcfg)
            policy = trainer.Policy(head, result.normalizer)
            noise_rng = make_rng(root, "scale-noise", fraction, seed)
            log = sim.run_episode(policy, tr0, expert_log, vehicle_params(cfg),
                                  obs_spec(cfg), eval_params(cfg), noise_rng)
            w_cmd = metrics.whiteness_from_log(log, "command").w
            scaling_rows.append([repr(float(fraction)), seed, n_use,
                                 repr(result.best_val_mae), repr(w_cmd)])
    write_csv(ab_dir / "data_scaling.csv",
              ["fraction", "seed", "train_recordings", "val_mae", "w_cmd"],
              scaling_rows)

    # (c) label histogram over the training split
    _write_label_histogram(ab_dir / "label_histogram.csv", train_recs,
                           cfg["ablate"]["histogram_bins"], grid)
    return {"sampler_modes": sampler_rows, "data_scaling": scaling_rows}


# ---------------------------------------------------------------------------
# report


def _median(values) -> float:
    return float(statistics.median(values))


def collect_eval_rows(run_dirs) -> list[dict]:
    rows = []
    for run in run_dirs:
        path = Path(run) / "eval" / "results.csv"
        if not path.exists():
            continue
        header, raw = read_csv(path)
        idx = {h: i for i, h in enumerate(header)}
        for r in raw:
            rows.append({"model": r[idx["model"]], "seed": int(r[idx["seed"]]),
                         "crashes": float(r[idx["crashes"]]),
                         "w_cmd": float(r[idx["w_cmd"]]),
                         "w_eff": float(r[idx["w_eff"]])})
    return rows


def per_seed_metric(rows, model: str, key: str) -> list[float]:
    by_seed: dict[int, list[float]] = {}
    for r in rows:
        if r["model"] == model:
            by_seed.setdefault(r["seed"], []).append(r[key])
    return [float(np.mean(v)) for _, v in sorted(by_seed.items())]


def check_whiteness_ordering(rows) -> tuple[str, str]:
    """Median W_cmd ordering: regression < ebm_soft < ebm, ebm_temporal < ebm."""
    needed = ("regression", "ebm_soft", "ebm", "ebm_temporal")
    med = {}
    for m in needed:
        vals = per_seed_metric(rows, m, "w_cmd")
        if not vals:
            return "absent", f"no evaluation rows for {m}"
        med[m] = _median(vals)
    ok = (med["regression"] < med["ebm_soft"] < med["ebm"]
          and med["ebm_temporal"] < med["ebm"])
    detail = ("median W_cmd deg/s: " +
              ", ".join(f"{m}={med[m]:.1f}" for m in needed))
    return ("pass" if ok else "fail"), detail


def check_actuator_smoothing(rows) -> tuple[str, str]:
    if not rows:
        return "absent", "no evaluation rows"
    bad = [r for r in rows if r["w_eff"] > r["w_cmd"] + 1e-9]
    detail = f"{len(rows) - len(bad)}/{len(rows)} episodes with W_eff <= W_cmd"
    return ("pass" if not bad else "fail"), detail


def collect_swerve_rows(run_dirs) -> list[dict]:
    rows = []
    for run in run_dirs:
        path = Path(run) / "eval" / "swerve.csv"
        if not path.exists():
            continue
        header, raw = read_csv(path)
        idx = {h: i for i, h in enumerate(header)}
        for r in raw:
            rows.append({"model": r[idx["model"]], "seed": int(r[idx["seed"]]),
                         "rate": float(r[idx["swerve_rate"]])})
    return rows


def check_swerve_ordering(swerve_rows) -> tuple[str, str]:
    """Median swerve rate: regression above both ebm and mdn."""
    med = {}
    for m in ("regression", "ebm", "mdn"):
        vals = [r["rate"] for r in swerve_rows if r["model"] == m]
        if not vals:
            return "absent", f"no swerve rows for {m}"
        med[m] = _median(vals)
    ok = med["regression"] > med["ebm"] and med["regression"] > med["mdn"]
    detail = ("median swerve rate: " +
              ", ".join(f"{m}={med[m]:.2f}" for m in ("regression", "ebm", "mdn")))
    return ("pass" if ok else "fail"), detail


def check_sampler_ablation(run_dirs) -> tuple[str, str]:
    rows = []
    for run in run_dirs:
        path = Path(run) / "ablate" / "sampler_modes.csv"
        if path.exists():
            header, raw = read_csv(path)
            idx = {h: i for i, h in enumerate(header)}
            rows.extend({"mode": r[idx["mode"]], "val_mae": float(r[idx["val_mae"]])}
                        for r in raw)
    if not rows:
        return "absent", "no sampler-mode ablation results"
    med = {mode: _median([r["val_mae"] for r in rows if r["mode"] == mode])
           for mode in ("constant", "uniform")}
    if any(not np.isfinite(v) for v in med.values()):
        return "fail", "non-finite medians"
    ok = med["constant"] <= 1.05 * med["uniform"]
    return ("pass" if ok else "fail"), (
        f"median val MAE: constant={med['constant']:.3f}, uniform={med['uniform']:.3f}")


def check_data_scaling(run_dirs) -> tuple[str, str]:
    rows = []
    for run in run_dirs:
        path = Path(run) / "ablate" / "data_scaling.csv"
        if path.exists():
            header, raw = read_csv(path)
            idx = {h: i for i, h in enumerate(header)}
            rows.extend({"fraction": float(r[idx["fraction"]]),
                         "val_mae": float(r[idx["val_mae"]])} for r in raw)
    if not rows:
        return "absent", "no data-scaling ablation results"
    fracs = sorted({r["fraction"] for r in rows})
    low, high = fracs[0], fracs[-1]
    med_low = _median([r["val_mae"] for r in rows if r["fraction"] == low])
    med_high = _median([r["val_mae"] for r in rows if r["fraction"] == high])
    ok = med_high < med_low
    return ("pass" if ok else "fail"), (
        f"median val MAE at {high:.0%} data {med_high:.3f} vs {low:.0%} data {med_low:.3f}")


TEST_SUITE_CRITERIA = {
    "AC1": "head-loss gradients vs central finite differences",
    "AC2": "loss identities and soft-target calibration",
    "AC3": "bimodal microbenchmark (mode capture vs averaging)",
    "AC7": "expert soundness and replay determinism",
    "AC10": "metric unit examples",
}


def build_report(run_dirs, out_dir) -> int:
    """Aggregate runs into markdown + CSV; nonzero exit iff a criterion fails."""
    run_dirs = [os.fspath(r) for r in run_dirs]
    if not run_dirs:
        raise ValueError("report needs at least one run directory")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    eval_rows = collect_eval_rows(run_dirs)
    swerve_rows = collect_swerve_rows(run_dirs)

    criteria = {
        "AC4": check_whiteness_ordering(eval_rows),
        "AC5": check_actuator_smoothing(eval_rows),
        "AC6": check_swerve_ordering(swerve_rows),
        "AC8": check_sampler_ablation(run_dirs),
        "AC9": check_data_scaling(run_dirs),
    }
    for ac, label in TEST_SUITE_CRITERIA.items():
        criteria[ac] = ("absent", f"covered by the test suite: {label}")

    models = sorted({r["model"] for r in eval_rows})
    model_rows = []
    for m in models:
        w_cmd = per_seed_metric(eval_rows, m, "w_cmd")
        w_eff = per_seed_metric(eval_rows, m, "w_eff")
        crashes = per_seed_metric(eval_rows, m, "crashes")
        swerves = [r["rate"] for r in swerve_rows if r["model"] == m]
        model_rows.append([m, len(w_cmd), repr(_median(crashes)), repr(_median(w_cmd)),
                           repr(_median(w_eff)),
                           repr(_median(swerves)) if swerves else ""])

    write_csv(out / "summary.csv",
              ["model", "seeds", "median_crashes", "median_w_cmd", "median_w_eff",
               "median_swerve_rate"], model_rows)
    write_csv(out / "criteria.csv", ["criterion", "status", "detail"],
              [[ac, status, detail]
               for ac, (status, detail) in sorted(criteria.items(),
                                                  key=lambda kv: int(kv[0][2:]))])

    lines = ["# steerlab report", "",
             f"Aggregated from {len(run_dirs)} run directory(ies).", "",
             "## Per-model medians (per-seed episode means)", "",
             "| model | seeds | crashes | W_cmd deg/s | W_eff deg/s | swerve rate |",
             "|---|---|---|---|---|---|"]
    for m, n, cr, wc, we, sw in model_rows:
        swerve_cell = f"{float(sw):.2f}" if sw else "-"
        lines.append(f"| {m} | {n} | {float(cr):.2f} | {float(wc):.1f} "
                     f"| {float(we):.1f} | {swerve_cell} |")
    lines += ["", "## Acceptance criteria", ""]
    for ac in sorted(criteria, key=lambda k: int(k[2:])):
        status, detail = criteria[ac]
        lines.append(f"- {ac}: {status.upper()} ({detail})")
    (out / "report.md").write_text("\n".join(lines) + "\n")

    return 1 if any(status == "fail" for status, _ in criteria.values()) else 0
