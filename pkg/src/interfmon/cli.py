"""Command-line entry point: ``interfmon <command> [options]``.

Every command writes a ``manifest.json`` into its run directory before any
other output. The run directory is ``--out`` or ``$OUTPUT_DIR/<command>``
(``runs/<command>`` when the variable is unset).

Exit codes: 0 success, 2 usage or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import subprocess
import sys
import time
from dataclasses import asdict, dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, checks
from .baselines import CpiBaseline
from .boost import DEFAULT_GRID, GbtConfig
from .boost.search import PASSES
from .bundle import ModelBundle
from .config import ConfigError, RunConfig, dump_config, load_config
from .dataprep import build_features, clean_group_means, fit_preprocess
from .evalkit import (PROTOCOLS, THRESHOLDS, evaluate_attribution, run_protocol, single_soi_truth,
                      threshold_sweep, violations)
from .evalkit.reports import format_table, write_csv, write_report
from .explain import (TreeExplainer, attribute, attribution_frame, fit_weight_models, shap_frame)
from .neural import TrainingDiverged, train_dadae, train_dae
from .pipeline import (DegradationEstimator, PracticalMethod, augmented_names,
                       select_features_by_shap)
from .simcloud import (SOI_COLUMNS, export_dataset, generate_dataset, import_dataset,
                       make_default_scenario, metric_columns)

log = logging.getLogger("interfmon")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


# --- run directory and manifest ------------------------------------------------------

def _version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True,
                             timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}-{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    command: list
    config: str | None
    seed: int
    output_dir: str
    version: str
    started: str
    finished: str | None = None

    def write(self, out: Path) -> Path:
        path = out / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2) + "\n")
        return path


def _run_dir(args) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get("OUTPUT_DIR", "runs")) / args.command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _read_dataset(path) -> pd.DataFrame:
    if path is None:
        raise UsageError("--dataset is required")
    if not Path(path).exists():
        raise UsageError(f"no such dataset: {path}")
    return import_dataset(path)


def _scenario(cfg: RunConfig):
    s = cfg.scenario
    return make_default_scenario(seed=cfg.seed, scale=s.scale, episode_len=s.episode_len,
                                 qos_kind=s.qos_kind, g_mode=s.g_mode, cpi_mode=s.cpi_mode)


def _features(frame, cfg: RunConfig, seed, names=None):
    """Preprocessing fitted on ``frame``, windowed table, and the selected feature subset."""
    pp = fit_preprocess(frame[metric_columns(frame.columns)])
    table = build_features(frame, pp, cfg.windows, cfg.scenario.qos_kind)
    if names is None:
        names = select_features_by_shap(table, cfg.selection, seed=seed).names
    return pp, table.select(names)


def _read_feature_list(path):
    if path is None:
        return None
    frame = pd.read_csv(path)
    if "feature" not in frame.columns:
        raise UsageError(f"{path} has no 'feature' column")
    return list(dict.fromkeys(frame["feature"]))


def _parse_grid(text):
    """``"max_depth=3,4;eta=0.05,0.1"`` -> 3-pass grid; unlisted passes keep the base value."""
    if text is None:
        return None
    owner = {name: p for p, params in DEFAULT_GRID.items() for name in params}
    chosen = {}
    for item in filter(None, (s.strip() for s in text.split(";"))):
        if "=" not in item:
            raise UsageError(f"bad grid entry {item!r}")
        name, values = (s.strip() for s in item.split("=", 1))
        if name not in owner:
            raise UsageError(f"{name!r} is not a tunable parameter ({sorted(owner)})")
        kind = int if name == "max_depth" else float
        try:
            chosen[name] = [kind(v) for v in values.split(",") if v.strip()]
        except ValueError:
            raise UsageError(f"bad grid values for {name}: {values!r}") from None
    return {p: {n: v for n, v in chosen.items() if owner[n] == p} for p in PASSES}


def _complete_grid(grid, base: GbtConfig):
    if grid is None:
        return None
    return {p: params or {next(iter(DEFAULT_GRID[p])): [getattr(base, next(iter(DEFAULT_GRID[p])))]}
            for p, params in grid.items()}


# --- commands ----------------------------------------------------------------------

def cmd_gen(args, cfg: RunConfig, out: Path):
    frame = generate_dataset(_scenario(cfg))
    if args.apps:
        keep = args.apps.split(",")
        unknown = sorted(set(keep) - set(frame["app"]))
        if unknown:
            raise UsageError(f"unknown apps {unknown}")
        frame = frame[frame["app"].isin(keep)].reset_index(drop=True)
    path = export_dataset(frame, out / "dataset.csv")
    print(f"wrote {len(frame)} rows x {len(metric_columns(frame.columns))} metrics to {path}")


def cmd_prep(args, cfg: RunConfig, out: Path):
    frame = _read_dataset(args.dataset)
    pp, table = _features(frame, cfg, cfg.seed, _read_feature_list(args.features))
    (out / "preprocess.json").write_text(json.dumps(pp.to_dict()))
    write_csv(pd.DataFrame({"feature": table.names}), out / "features.csv")
    data = pd.concat([table.meta, pd.DataFrame(table.X, columns=table.names)], axis=1)
    write_csv(data, out / "table.csv")
    print(f"{len(table)} windowed rows, {len(table.names)} selected features")


def _train_log(stage, model) -> pd.DataFrame:
    if stage == "dadae":
        return pd.DataFrame(model.history, columns=["reconstruction", "domain", "lambda"]) \
            .rename_axis("epoch").reset_index()
    return pd.DataFrame({"epoch": range(len(model.history)), "loss": model.history})


def _staged_mae(ensemble, X, y) -> pd.DataFrame:
    pred = np.full(X.shape[0], ensemble.base_score)
    rows = [(0, float(np.mean(np.abs(y - pred))))]
    for i, tree in enumerate(ensemble.trees, 1):
        pred = pred + ensemble.eta * tree.predict(X)
        rows.append((i, float(np.mean(np.abs(y - pred)))))
    return pd.DataFrame(rows, columns=["n_trees", "train_mae"])


def cmd_train(args, cfg: RunConfig, out: Path):
    stage = args.stage
    seed = cfg.seed
    dae_cfg = replace(cfg.dae, seed=seed)
    if args.epochs is not None:
        dae_cfg = replace(dae_cfg, epochs=args.epochs)
    if stage == "dadae":
        if not args.source or not args.target:
            raise UsageError("the dadae stage needs both --source and --target datasets")
        source, target = _read_dataset(args.source), _read_dataset(args.target)
        prefit = ModelBundle.load(args.dae) if args.dae else None
        names = prefit.features if prefit else _read_feature_list(args.features)
        pp, table = _features(source, cfg, seed, names)
        tgt = build_features(target, pp, cfg.windows, cfg.scenario.qos_kind).select(table.names)
        clean = clean_group_means(table)
        dadae_cfg = replace(cfg.dadae, seed=seed)
        if args.epochs is not None:
            dadae_cfg = replace(dadae_cfg, epochs=args.epochs)
        init = prefit.model if prefit else train_dae(table.X, clean, cfg.dae_spec, dae_cfg)
        model = train_dadae(table.X, clean, tgt.X, cfg.dae_spec, dadae_cfg, init=init)
        bundle = ModelBundle("dadae", pp, cfg.windows, cfg.scenario.qos_kind, table.names, model)
        write_csv(_train_log(stage, model), out / "train_log.csv")
    else:
        frame = _read_dataset(args.dataset)
        prefit = ModelBundle.load(args.dae) if args.dae else None
        if prefit is not None and prefit.stage not in ("dae", "dadae"):
            raise UsageError("--dae must point to a dae or dadae bundle")
        names = prefit.features if prefit else _read_feature_list(args.features)
        pp, table = _features(frame, cfg, seed, names)
        if stage == "dae":
            model = train_dae(table.X, clean_group_means(table), cfg.dae_spec, dae_cfg)
            bundle = ModelBundle("dae", pp, cfg.windows, cfg.scenario.qos_kind, table.names, model)
            write_csv(_train_log(stage, model), out / "train_log.csv")
        elif stage == "gbt":
            denoiser = prefit.stage if prefit else args.denoiser
            if denoiser == "dadae" and prefit is None:
                raise UsageError("train a dadae bundle first and pass it with --dae")
            grid = _complete_grid(_parse_grid(args.grid), cfg.gbt)
            est = DegradationEstimator(
                denoiser, gbt=cfg.gbt.replace(seed=seed), dae_spec=cfg.dae_spec, dae_train=dae_cfg,
                tune=grid is not None or args.tune, grid=grid, cv_rows=cfg.eval.cv_rows or None,
                init=prefit.model if prefit else None, seed=seed)
            clean = clean_group_means(table) if denoiser != "none" else None
            est.fit(table.X, table.y, X_clean=clean)
            inputs = est.transform(table.X)
            weights = fit_weight_models(inputs, table.soi, cfg.eval.attribution_k)
            bundle = ModelBundle("gbt", pp, cfg.windows, cfg.scenario.qos_kind, table.names, est,
                                 weights)
            write_csv(_staged_mae(est.ensemble_, inputs, table.y), out / "train_log.csv")
            if est.cv_table_ is not None:
                write_csv(est.cv_table_, out / "cv.csv")
            print("gbt config:", asdict(est.gbt_))
        else:
            est = PracticalMethod(cfg.eval.practical_k, cfg.eval.practical_trees, seed=seed)
            est.fit(table.X, table.y)
            weights = fit_weight_models(table.X[:, est.support_], table.soi, cfg.eval.attribution_k)
            bundle = ModelBundle("bagged", pp, cfg.windows, cfg.scenario.qos_kind, table.names, est,
                                 weights)
            pred = est.predict(table.X)
            write_csv(pd.DataFrame({"n_trees": [len(est.ensemble_.trees)],
                                    "train_mae": [float(np.mean(np.abs(pred - table.y)))]}),
                      out / "train_log.csv")
    path = bundle.save(out / "model.json")
    print(f"wrote {stage} model over {len(bundle.features)} features to {path}")


def _model_predictions(bundle: ModelBundle, frame) -> pd.DataFrame:
    table = bundle.features_for(frame)
    return pd.DataFrame({"sample_id": np.arange(len(table)), "app": table.apps,
                         "intensity": table.meta["intensity"].to_numpy(), "t": table.meta["t"].to_numpy(),
                         "D": table.y, "D_hat": bundle.predict(table)})


def _per_app_mae(pred: pd.DataFrame, label: str) -> pd.DataFrame:
    err = (pred["D"] - pred["D_hat"]).abs().groupby(pred["app"]).mean()
    row = err.to_frame().T
    row["mean"] = err.mean()
    row.index = [label]
    row.index.name = "method"
    return row


def cmd_eval(args, cfg: RunConfig, out: Path):
    frame = _read_dataset(args.dataset)
    if args.model:
        tables, preds = [], []
        for path in args.model:
            bundle = ModelBundle.load(path)
            if not bundle.is_tree_model:
                raise UsageError(f"{path}: a {bundle.stage} bundle does not predict degradation")
            p = _model_predictions(bundle, frame).assign(model=Path(path).stem)
            preds.append(p)
            tables.append(_per_app_mae(p, str(path)))
        table = pd.concat(tables)
        write_csv(table, out / "model_mae.csv", index=True)
        write_csv(pd.concat(preds, ignore_index=True), out / "model_predictions.csv")
        print(format_table(table))
        return
    methods = args.methods.split(",") if args.methods else None
    apps = args.apps.split(",") if args.apps else None
    report = run_protocol(frame, args.protocol, methods, cfg.protocol_config(protocol=args.protocol), apps=apps,
                          jobs=args.jobs)
    write_report(report, out)
    print(format_table(report.mae_table()))


def _tree_bundle(path) -> ModelBundle:
    if path is None:
        raise UsageError("--model is required")
    bundle = ModelBundle.load(path)
    if not bundle.is_tree_model:
        raise UsageError(f"{path}: {bundle.stage} models cannot be explained; use a gbt or bagged model")
    return bundle


def _rows(n, limit, seed):
    if limit is None or limit >= n:
        return np.arange(n)
    return np.sort(np.random.default_rng(seed).choice(n, limit, replace=False))


def _input_names(bundle: ModelBundle) -> list:
    if bundle.stage == "bagged":
        return [bundle.features[j] for j in bundle.model.support_]
    if bundle.model.denoiser == "none":
        return list(bundle.features)
    return augmented_names(bundle.features)


def cmd_explain(args, cfg: RunConfig, out: Path):
    bundle = _tree_bundle(args.model)
    table = bundle.features_for(_read_dataset(args.dataset))
    inputs = bundle.inputs(table)
    rows = _rows(len(table), args.rows, cfg.seed)
    bg = inputs[_rows(len(table), args.background, cfg.seed + 1)]
    explainer = TreeExplainer(bundle.ensemble, bg, method=args.method)
    phi = explainer.shap_values(inputs[rows])
    pred = bundle.ensemble.predict(inputs[rows])
    gap = np.abs(explainer.base_value + phi.sum(axis=1) - pred)
    if gap.max(initial=0.0) > 1e-6:
        raise FloatingPointError(f"local accuracy violated by {gap.max():.3g}")
    write_csv(shap_frame(rows, phi, _input_names(bundle)), out / "shap.csv")
    write_csv(pd.DataFrame({"sample_id": rows, "base_value": explainer.base_value,
                            "prediction": pred}), out / "shap_base.csv")
    print(f"explained {rows.size} samples; max local accuracy gap {gap.max(initial=0.0):.2e}")


def cmd_attribute(args, cfg: RunConfig, out: Path):
    bundle = _tree_bundle(args.model)
    if not bundle.weight_models:
        raise UsageError(f"{args.model} carries no interference-level models")
    table = bundle.features_for(_read_dataset(args.dataset))
    inputs = bundle.inputs(table)
    d_hat = bundle.ensemble.predict(inputs)
    flagged = np.flatnonzero(violations(d_hat, args.threshold))
    flagged = flagged[_rows(flagged.size, args.rows, cfg.seed)]
    bg = inputs[_rows(len(table), args.background, cfg.seed + 1)]
    explainer = TreeExplainer(bundle.ensemble, bg)
    results = [attribute(e, bundle.weight_models) for e in explainer.explain(inputs[flagged])]
    has_truth = all(c in table.meta.columns for c in SOI_COLUMNS)
    truth = single_soi_truth(table.soi[flagged]) if has_truth else None
    frame = attribution_frame(flagged, results, truth)
    write_csv(frame, out / "attribution.csv")
    print(f"{flagged.size} samples flagged at threshold {args.threshold}, {len(frame)} attributed")
    if has_truth:
        single = frame[frame["truth"] != ""]
        if len(single):
            print(f"top-1 accuracy on single-SoI samples: {(single['top1'] == single['truth']).mean():.4f} "
                  f"({len(single)} samples)")


def cmd_baseline(args, cfg: RunConfig, out: Path):
    frame = _read_dataset(args.dataset)
    pp = fit_preprocess(frame[metric_columns(frame.columns)])
    table = build_features(frame, pp, cfg.windows, cfg.scenario.qos_kind)
    est = CpiBaseline(args.mode, K_max=cfg.eval.K_max, seed=cfg.seed).fit(table.meta)
    pred = pd.DataFrame({"sample_id": np.arange(len(table)), "app": table.apps,
                         "intensity": table.meta["intensity"].to_numpy(),
                         "t": table.meta["t"].to_numpy(), "D": table.y,
                         "D_hat": est.predict(table.meta)})
    write_csv(pred, out / f"{args.mode}_predictions.csv")
    mae_table = _per_app_mae(pred, args.mode)
    write_csv(mae_table, out / f"{args.mode}_mae.csv", index=True)
    print(format_table(mae_table))


def cmd_sweep(args, cfg: RunConfig, out: Path):
    if not args.predictions or not Path(args.predictions).exists():
        raise UsageError("--predictions must name an existing CSV with D and D_hat columns")
    pred = pd.read_csv(args.predictions)
    if not {"D", "D_hat"} <= set(pred.columns):
        raise UsageError(f"{args.predictions} lacks D / D_hat columns")
    groups = pred.groupby("method", sort=False) if "method" in pred.columns else [("all", pred)]
    tables, vols = [], []
    for method, p in groups:
        table, vol = threshold_sweep(p["D"].to_numpy(), p["D_hat"].to_numpy(), THRESHOLDS)
        tables.append(table.assign(method=method))
        vols.append({"method": method, **vol})
    sweep = pd.concat(tables, ignore_index=True)
    write_csv(sweep[["method", *sweep.columns[:-1]]], out / "sweep.csv")
    vol = pd.DataFrame(vols)
    write_csv(vol, out / "volatility.csv")
    print(format_table(vol.set_index("method")))


# --- repro-all -----------------------------------------------------------------------

def _checksums(out: Path) -> dict:
    return {p.relative_to(out).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(out.rglob("*.csv"))}


def cmd_repro_all(args, cfg: RunConfig, out: Path):
    t_start = time.perf_counter()
    timings = {}
    previous = None
    sums_path = out / "checksums.txt"
    if sums_path.exists():
        previous = dict(line.split("  ", 1)[::-1] for line in sums_path.read_text().splitlines() if line)

    def lap(name, t0):
        timings[name] = time.perf_counter() - t0
        log.info("%s done in %.1fs", name, timings[name])

    t0 = time.perf_counter()
    frame = generate_dataset(_scenario(cfg))
    export_dataset(frame, out / "dataset.csv")
    lap("generate", t0)

    pcfg = cfg.protocol_config()
    t0 = time.perf_counter()
    offline = run_protocol(frame, "offline_8_2", None, pcfg, jobs=args.jobs, keep_models=True)
    write_report(offline, out)
    lap("offline", t0)

    t0 = time.perf_counter()
    loao = run_protocol(frame, "leave_one_app_out", None,
                        cfg.protocol_config(protocol="leave_one_app_out"), jobs=args.jobs)
    write_report(loao, out, prefix="loao")
    lap("leave_one_app_out", t0)

    # denoising effect and attribution on the offline fold
    t0 = time.perf_counter()
    fold = offline.configs["all"]["fold"]
    est = offline.configs["all"]["models"]["dae_gbt"]
    test = fold.test
    clean = clean_group_means(test)
    noisy = ~test.clean
    den = est.denoise(test.X)
    rows = []
    for name, mask in (("all", np.ones(len(test), bool)), ("interfered", noisy)):
        before = float(np.mean(np.abs(test.X[mask] - clean[mask])))
        after = float(np.mean(np.abs(den[mask] - clean[mask])))
        rows.append({"rows": name, "n": int(mask.sum()), "mae_input": before, "mae_denoised": after,
                     "ratio": after / before})
    denoise = pd.DataFrame(rows)
    write_csv(denoise, out / "denoise.csv")
    attr = evaluate_attribution(est, fold.train, test, cfg.eval.threshold, cfg.eval.attribution_k,
                                cfg.eval.attribution_background, cfg.eval.attribution_samples,
                                cfg.seed)
    write_csv(attr.frame, out / "attribution.csv")
    write_csv(pd.DataFrame([attr.summary()]), out / "attribution_summary.csv")
    lap("denoise_attribution", t0)

    t0 = time.perf_counter()
    grad = checks.gradient_check(seed=cfg.seed)
    shap = checks.shapley_check(seed=cfg.seed)
    gmm = checks.gmm_check(seed=cfg.seed)
    be_monotone = _best_effort_monotone(offline, cfg)
    lap("checks", t0)

    x_one = test.X[:1]
    latency = checks.inference_latency(est.predict, x_one)

    mae = offline.mae_table()["mean"]
    loao_mae = loao.mae_table()["mean"]
    sweep_table, vol = offline.sweep("dae_gbt")
    c_sum = attr.frame[[c for c in attr.frame.columns if c.startswith("c_")]].sum(axis=1)
    gap = lambda a, b: (b - a) / b
    ratio = float(denoise.loc[denoise["rows"] == "interfered", "ratio"].iloc[0])
    crit = [
        (1, "gradients match finite differences", f"max rel err {grad['max_rel_error']:.2e}",
         grad["ok"]),
        (2, "Shapley equals enumeration, local accuracy",
         f"bf {shap['max_brute_force_error']:.1e}, local {shap['max_local_accuracy_error']:.1e}",
         shap["ok"]),
        (3, "denoising halves the error to clean features", f"ratio {ratio:.3f}", ratio <= 0.5),
        (4, "offline DAE+GBT < GBT < best-effort CPI (5% gaps)",
         f"{mae['dae_gbt']:.4f} / {mae['gbt']:.4f} / {mae['best_effort_cpi']:.4f}",
         bool(gap(mae["dae_gbt"], mae["gbt"]) >= 0.05
              and gap(mae["gbt"], mae["best_effort_cpi"]) >= 0.05)),
        (5, "unseen apps: DADAE+GBT < DAE+GBT, within 2x oracle",
         f"{loao_mae['dadae_gbt']:.4f} / {loao_mae['dae_gbt']:.4f} / oracle {loao_mae['oracle_gbt']:.4f}",
         bool(loao_mae["dadae_gbt"] < loao_mae["dae_gbt"]
              and loao_mae["dadae_gbt"] <= 2 * loao_mae["oracle_gbt"])),
        (6, "F1 and accuracy volatility over thresholds <= 0.15",
         f"F1 {vol['f1']:.3f}, accuracy {vol['accuracy']:.3f}",
         bool(vol["f1"] <= 0.15 and vol["accuracy"] <= 0.15)),
        (7, "attribution top-1 >= 0.6, contributions sum to 1",
         f"top-1 {attr.accuracy:.3f} on {attr.n_single} samples",
         bool(attr.accuracy >= 0.6 and np.allclose(c_sum, 1.0))),
        (8, "EM monotone, two-component recovery",
         f"mean err {gmm['mean_error']:.4f}, best-effort fits monotone {be_monotone}",
         bool(gmm["ok"] and be_monotone)),
    ]
    acceptance = pd.DataFrame(crit, columns=["criterion", "description", "value", "pass"])
    write_csv(acceptance, out / "acceptance.csv")

    sums = _checksums(out)
    if previous is None:
        det = (9, "outputs byte-identical to the previous run", "no previous run in this directory",
               None)
    else:
        diff = sorted(k for k in set(sums) | set(previous) if sums.get(k) != previous.get(k))
        det = (9, "outputs byte-identical to the previous run",
               "identical" if not diff else f"{len(diff)} files differ: {diff[:3]}", not diff)
    sums_path.write_text("".join(f"{h}  {name}\n" for name, h in sums.items()))
    total = time.perf_counter() - t_start
    run = (10, "repro-all < 15 min, single-sample inference < 10 ms",
           f"{total / 60:.1f} min, {latency:.2f} ms", bool(total < 900 and latency < 10))
    lines = [f"[{'PASS' if ok else 'FAIL'}] {c}. {d}: {v}" for c, d, v, ok in crit]
    for c, d, v, ok in (det, run):
        tag = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        lines.append(f"[{tag}] {c}. {d}: {v}")
    text = "\n".join(lines) + "\n"
    (out / "acceptance.txt").write_text(text)
    (out / "timings.json").write_text(json.dumps({**timings, "total": total,
                                                  "inference_ms": latency}, indent=2) + "\n")
    print(format_table(offline.mae_table()))
    print(format_table(loao.mae_table()))
    print(text, end="")


def _best_effort_monotone(report, cfg) -> bool:
    """Refit the best-effort mixtures of the offline fold and check every EM trace."""
    from .baselines import _bic_search
    fold = report.configs["all"]["fold"]
    meta = pd.concat([fold.train.meta, fold.test.meta])
    ok = True
    for _, grp in meta.groupby("app", sort=True):
        g = _bic_search(grp["raw_rv_mem_used"].to_numpy(float), cfg.eval.K_max, cfg.seed)
        h = np.asarray(g.loglik_history)
        ok &= bool(np.all(np.diff(h) >= -1e-9 * np.abs(h[1:])))
    return ok


# --- argument parsing ---------------------------------------------------------------

COMMANDS = {"gen": cmd_gen, "prep": cmd_prep, "train": cmd_train, "eval": cmd_eval,
            "explain": cmd_explain, "attribute": cmd_attribute, "baseline": cmd_baseline,
            "sweep": cmd_sweep, "repro-all": cmd_repro_all}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI-style configuration file")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--out", help="run directory (default $OUTPUT_DIR/<command>)")
    common.add_argument("--jobs", type=int, default=1, help="parallel protocol folds")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="interfmon",
                                     description="QoS degradation estimation under co-location interference")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", parents=[common], help="simulate a dataset")
    p.add_argument("--apps", help="comma-separated subset of applications")

    p = sub.add_parser("prep", parents=[common], help="window features and select a subset")
    p.add_argument("--dataset")
    p.add_argument("--features", help="CSV with a 'feature' column; skips selection")

    p = sub.add_parser("train", parents=[common], help="train one model stage")
    p.add_argument("--stage", choices=["dae", "dadae", "gbt", "bagged"], required=True)
    p.add_argument("--dataset")
    p.add_argument("--source", help="labelled source dataset (dadae)")
    p.add_argument("--target", help="unlabelled target dataset (dadae)")
    p.add_argument("--dae", help="trained dae/dadae bundle to reuse")
    p.add_argument("--denoiser", choices=["dae", "none"], default="dae", help="gbt input features")
    p.add_argument("--features", help="CSV with a 'feature' column; skips selection")
    p.add_argument("--epochs", type=int, help="overrides the denoiser epochs")
    p.add_argument("--tune", action="store_true", help="3-pass grid search over the default grid")
    p.add_argument("--grid", help='custom grid, e.g. "max_depth=3,4;eta=0.05,0.1"')

    p = sub.add_parser("eval", parents=[common], help="run an evaluation protocol")
    p.add_argument("--dataset")
    p.add_argument("--protocol", choices=PROTOCOLS, default="offline_8_2")
    p.add_argument("--methods", help="comma-separated methods")
    p.add_argument("--apps", help="held-out apps (leave-one-app-out protocols)")
    p.add_argument("--model", nargs="+", help="evaluate trained gbt/bagged bundles instead")

    for name, help_text in (("explain", "Shapley values of a tree model"),
                            ("attribute", "attribute flagged violations to SoIs")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--model")
        p.add_argument("--dataset")
        p.add_argument("--rows", type=int, help="explain at most this many rows")
        p.add_argument("--background", type=int, default=200)
        if name == "explain":
            p.add_argument("--method", choices=["path", "interventional"], default="path")
        else:
            p.add_argument("--threshold", type=float, default=0.05)

    p = sub.add_parser("baseline", parents=[common], help="CPI-based degradation estimates")
    p.add_argument("--dataset")
    p.add_argument("--mode", choices=["best_effort", "best_possible"], default="best_effort")

    p = sub.add_parser("sweep", parents=[common], help="violation metrics over thresholds")
    p.add_argument("--predictions", help="CSV with D, D_hat and optional method columns")

    sub.add_parser("repro-all", parents=[common], help="full pipeline with acceptance summary")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        cfg = _load_cfg(args)
        out = _run_dir(args)
        manifest = RunManifest(list(sys.argv[:1]) + list(argv if argv is not None else sys.argv[1:]),
                               args.config, cfg.seed, str(out), _version(), _now())
        manifest.write(out)
        dump_config(cfg, out / "config.ini")
        COMMANDS[args.command](args, cfg, out)
        manifest.finished = _now()
        manifest.write(out)
    except (UsageError, ConfigError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingDiverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
