"""End-to-end experiment driver.

Perturbations are crafted once per (method, image) against the attack-time
models, then reused by every scenario evaluation; the holdout model is never
part of the attack ensemble, so white/gray/black-box rows all describe the
same perturbation. Evaluation-phase rows and aggregates are pure functions of
the config, which is what makes rerun outputs byte-identical.
"""

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .attacks import build_gradient_provider, run_attack
from .autodiff import Tensor
from .config import ExperimentConfig
from .dataset import SyntheticDataset, generate_dataset, load_dataset_from_directory
from .errors import ConfigError
from .metrics import (
    SurrogateEmbedder,
    aggregate_dsr,
    classify_success,
    id_distance,
    l2_image,
    pca_project_latents,
    perceptual_distance,
    separation_statistic,
)
from .objectives import ImageAttackObjective, LatentAttackObjective
from .zoo import build_model, sample_attribute_set


@dataclass(frozen=True)
class EvaluationRow:
    """One (scenario, method, model, image) measurement."""

    scenario: str
    method: str
    model: str
    image_index: int
    l2: float
    id: float
    lpips: float
    success: bool


@dataclass(frozen=True)
class LatentRow:
    """One projected latent for the PCA export; group is 'clean' or a method."""

    model: str
    group: str
    image_index: int
    pc1: float
    pc2: float


@dataclass(frozen=True)
class EvaluationReport:
    config: ExperimentConfig
    rows: tuple[EvaluationRow, ...]
    latent_rows: tuple[LatentRow, ...]
    runtime_seconds: dict
    separation: dict
    attack_phase_counters: dict
    parameter_ratio: dict
    etas: dict

    def flags_by_model(self, scenario: str, method: str) -> dict:
        out: dict[str, list[bool]] = {}
        for row in self.rows:
            if row.scenario == scenario and row.method == method:
                out.setdefault(row.model, []).append(row.success)
        return out


def _load_images(config: ExperimentConfig) -> SyntheticDataset:
    spec = config.dataset
    if spec.kind == "directory":
        data = load_dataset_from_directory(spec.path)
        if data.image_shape != spec.image_shape:
            raise ConfigError(
                f"directory images have shape {data.image_shape};"
                f" models expect {spec.image_shape}")
        return data
    return generate_dataset(seed=spec.seed, count=spec.count, shape=spec.image_shape)


def _build_objective(method: str, known_attrs: dict):
    if method == "leat":
        return LatentAttackObjective()
    return ImageAttackObjective(attributes_by_model=known_attrs)


def _scenario_plan(config: ExperimentConfig, scenario: str, models: dict, pools: dict):
    """Which models to evaluate, and each one's conditioning list."""
    if scenario == "black_box":
        holdout = models[config.holdout_model]
        return [(holdout, pools[holdout.name].known)]
    attack_names = config.attack_model_names()
    if scenario == "white_box":
        return [(models[n], pools[n].known) for n in attack_names]
    return [(models[n], pools[n].unknown) for n in attack_names]


def run_experiment(config: ExperimentConfig) -> EvaluationReport:
    """Craft every perturbation, then evaluate all configured scenarios."""
    models = {
        spec.name: build_model(spec.archetype, spec.seed, spec.dims, name=spec.name)
        for spec in config.models
    }
    pools = {
        spec.name: sample_attribute_set(
            models[spec.name], config.n_known, config.n_unknown,
            [config.attribute_seed, index])
        for index, spec in enumerate(config.models)
    }
    dataset = _load_images(config)
    attack_models = [models[n] for n in config.attack_model_names()]
    known_attrs = {m.name: pools[m.name].known for m in attack_models}

    for model in models.values():
        model.counters.reset()

    # -- attack phase: one eta per (method, image), holdout never touched ----
    def attack_image(index: int) -> dict:
        X = dataset[index]
        per_image = replace(config.attack, seed=(config.attack.seed, index))
        results = {}
        for method in config.objectives:
            objective = _build_objective(method, known_attrs)
            start = time.perf_counter()
            provider = build_gradient_provider(attack_models, objective,
                                               config.ensemble, X)
            eta = run_attack(provider, X, per_image)
            results[method] = (eta, time.perf_counter() - start)
        return results

    n_images = len(dataset)
    if config.parallel_workers > 1:
        with ThreadPoolExecutor(max_workers=config.parallel_workers) as pool:
            attacked = list(pool.map(attack_image, range(n_images)))
    else:
        attacked = [attack_image(i) for i in range(n_images)]

    etas = {method: tuple(attacked[i][method][0] for i in range(n_images))
            for method in config.objectives}
    runtime = {method: float(sum(attacked[i][method][1] for i in range(n_images)))
               for method in config.objectives}
    attack_counters = {
        name: {"encode_calls": m.counters.encode_calls,
               "generate_calls": m.counters.generate_calls}
        for name, m in models.items()
    }
    if config.holdout_model is not None:
        held = attack_counters[config.holdout_model]
        assert held["encode_calls"] == 0 and held["generate_calls"] == 0

    # -- evaluation phase ----------------------------------------------------
    pixels = int(np.prod(config.dataset.image_shape))
    id_embedder = SurrogateEmbedder([config.metrics_seed, 0], pixels)
    lp_embedder = SurrogateEmbedder([config.metrics_seed, 1], pixels)

    rows = []
    for scenario in config.scenarios:
        for method in config.objectives:
            for model, attrs in _scenario_plan(config, scenario, models, pools):
                for index in range(n_images):
                    X = dataset[index]
                    x_t = Tensor._wrap(X.data + etas[method][index].data)
                    l2s, ids, lps = [], [], []
                    for c in attrs:
                        y_clean = model.full_forward(X, c)
                        y_pert = model.full_forward(x_t, c)
                        l2s.append(l2_image(y_clean, y_pert))
                        ids.append(id_distance(y_clean, y_pert, id_embedder))
                        lps.append(perceptual_distance(y_clean, y_pert, lp_embedder))
                    l2 = float(np.mean(l2s))
                    idv = float(np.mean(ids))
                    lp = float(np.mean(lps))
                    rows.append(EvaluationRow(
                        scenario=scenario, method=method, model=model.name,
                        image_index=index, l2=l2, id=idv, lpips=lp,
                        success=classify_success(l2, idv, lp, config.thresholds)))
    rows.sort(key=lambda r: (r.scenario, r.method, r.model, r.image_index))

    # -- latent projection ----------------------------------------------------
    latent_rows = []
    separation: dict[str, dict[str, float]] = {}
    for name in sorted(models):
        model = models[name]
        clean = [model.encode(dataset[i]) for i in range(n_images)]
        by_method = {
            method: [model.encode(Tensor._wrap(dataset[i].data + etas[method][i].data))
                     for i in range(n_images)]
            for method in config.objectives
        }
        stacked = list(clean)
        for method in config.objectives:
            stacked.extend(by_method[method])
        points = pca_project_latents(stacked)
        groups = ["clean"] + list(config.objectives)
        for g, group in enumerate(groups):
            for index in range(n_images):
                p = points[g * n_images + index]
                latent_rows.append(LatentRow(model=name, group=group, image_index=index,
                                             pc1=float(p[0]), pc2=float(p[1])))
        clean_pts = points[:n_images]
        separation[name] = {
            method: separation_statistic(
                clean_pts, points[(k + 1) * n_images:(k + 2) * n_images])
            for k, method in enumerate(config.objectives)
        }

    return EvaluationReport(
        config=config,
        rows=tuple(rows),
        latent_rows=tuple(latent_rows),
        runtime_seconds=runtime,
        separation=separation,
        attack_phase_counters=attack_counters,
        parameter_ratio={name: models[name].parameter_ratio for name in sorted(models)},
        etas=etas,
    )


def run_scenario(config: ExperimentConfig, scenario: str) -> EvaluationReport:
    """Run the pipeline for a single scenario from the config's list."""
    if scenario not in ("white_box", "gray_box", "black_box"):
        raise ConfigError(f"unknown scenario {scenario!r}")
    narrowed = replace(config, scenarios=(scenario,))
    if scenario == "black_box" and config.holdout_model is None:
        raise ConfigError("black_box scenario requires holdout_model")
    return run_experiment(narrowed)


def _aggregates(report: EvaluationReport) -> dict:
    out: dict[str, dict] = {}
    for scenario in report.config.scenarios:
        out[scenario] = {}
        for method in report.config.objectives:
            flags = report.flags_by_model(scenario, method)
            summary = aggregate_dsr(flags)
            picked = [r for r in report.rows
                      if r.scenario == scenario and r.method == method]
            out[scenario][method] = {
                "per_model_dsr": summary.per_model,
                "avg_dsr": summary.avg_dsr,
                "e_dsr": summary.e_dsr,
                "mean_l2": float(np.mean([r.l2 for r in picked])),
                "mean_id": float(np.mean([r.id for r in picked])),
                "mean_lpips": float(np.mean([r.lpips for r in picked])),
            }
    return out


def emit_reports(report: EvaluationReport, out_dir) -> list[Path]:
    """Write results.csv, summary.json, latents_pca.csv, config_echo.json."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc

    written = []

    def emit(name: str, write_fn) -> None:
        path = out / name
        try:
            with open(path, "w", newline="") as fh:
                write_fn(fh)
        except OSError as exc:
            raise ConfigError(f"cannot write {path}: {exc}") from exc
        written.append(path)

    def write_results(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["scenario", "method", "model", "image_index",
                         "l2", "id", "lpips", "success"])
        for r in report.rows:
            writer.writerow([r.scenario, r.method, r.model, r.image_index,
                             repr(r.l2), repr(r.id), repr(r.lpips), int(r.success)])

    def write_summary(fh):
        payload = {
            "schema_version": 1,
            "aggregates": _aggregates(report),
            "runtime_seconds": report.runtime_seconds,
            "separation": report.separation,
            "attack_phase_counters": report.attack_phase_counters,
            "parameter_ratio": report.parameter_ratio,
            "protocol": {
                "attribute_aggregation": "mean over the scenario's conditioning list"
                                         " before thresholding",
                "success_rule": "any distance strictly above its threshold",
            },
        }
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    def write_latents(fh):
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "group", "image_index", "pc1", "pc2"])
        for r in report.latent_rows:
            writer.writerow([r.model, r.group, r.image_index, repr(r.pc1), repr(r.pc2)])

    def write_echo(fh):
        json.dump(report.config.normalized(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    emit("results.csv", write_results)
    emit("summary.json", write_summary)
    emit("latents_pca.csv", write_latents)
    emit("config_echo.json", write_echo)
    return written
