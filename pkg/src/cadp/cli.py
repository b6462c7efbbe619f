"""Command line harness for the full privatization protocol.

Subcommands: train-flow, privatize, train-classifier, eval, sweep,
diagnose, and a plot convenience. Exit codes are stable API:

    0 ok, 2 config, 3 data, 4 divergence, 5 mechanism, 6 schema,
    7 diagnostic failure.

Every command is deterministic given its config and seed; report CSVs
reproduce bitwise on re-runs when wallclock measurement is disabled
with --no-wallclock.
"""

import argparse
import csv
import json
import os
import sys
import time

import numpy as np

from . import checkpoint
from . import classifier as clf_mod
from . import data as data_mod
from . import dpsgd as dpsgd_mod
from .config import load_config
from .exceptions import (CadpError, ConfigError, DataError, DiagnosticError)
from .flow import ConditionalFlow, latent_diagnostics
from .privacy import (PrivacyParams, ScalarLaplaceMechanism,
                      empirical_dp_ratio, flow_checkpoint_hash,
                      privatize_dataset, resolve_sensitivity)

REPORT_COLUMNS = ["epsilon", "sensitivity", "method", "seed", "train_acc",
                  "test_acc_on_original", "flow_nll", "wallclock_s"]

DP_RATIO_SLACK = 0.1      # statistical slack on top of epsilon at 1e6 trials
INVERTIBILITY_TOL = 1e-6


# ---------------------------------------------------------------------------
# report plumbing

def append_report_row(path, row):
    """Append one RunReport row, creating the file with a header first."""
    fresh = not os.path.exists(path)
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(REPORT_COLUMNS)
        writer.writerow([row.get(col, "") for col in REPORT_COLUMNS])


def _report_row(method, seed, train_acc, test_acc, epsilon=None,
                sensitivity=None, flow_nll=None, wallclock=0.0):
    return {
        "epsilon": "" if epsilon is None else f"{epsilon:g}",
        "sensitivity": "" if sensitivity is None else f"{sensitivity:g}",
        "method": method,
        "seed": str(int(seed)),
        "train_acc": f"{train_acc:.6f}",
        "test_acc_on_original": f"{test_acc:.6f}",
        "flow_nll": "" if flow_nll is None else f"{flow_nll:.6f}",
        "wallclock_s": f"{wallclock:.3f}",
    }


class _Clock:
    def __init__(self, enabled):
        self.enabled = enabled
        self._t0 = None

    def start(self):
        self._t0 = time.perf_counter() if self.enabled else None

    def stop(self):
        if not self.enabled:
            return 0.0
        return time.perf_counter() - self._t0


# ---------------------------------------------------------------------------
# data pipeline shared by the commands

def _require(cfg, section, key):
    value = cfg.get(section, key)
    if value in ("", None):
        raise ConfigError(f"config key {section}.{key} is required here")
    return value


def _load_raw_split(cfg, split, seed):
    kind = cfg.get("data", "kind")
    if kind == "synthetic":
        base = 1000 if split == "train" else 2000
        return data_mod.make_synthetic(cfg.get("data", "synthetic_kind"),
                                       cfg.get("data", "n"),
                                       seed=base + int(seed))
    try:
        if kind == "idx":
            return data_mod.load_idx(_require(cfg, "data", f"{split}_images"),
                                     _require(cfg, "data", f"{split}_labels"))
        if kind == "csv":
            return data_mod.load_csv(
                _require(cfg, "data", f"{split}_csv"),
                label_column=cfg.get("data", "label_column"),
                binary_columns=tuple(cfg.get("data", "binary_columns")),
                standardize=False,
            )
    except FileNotFoundError as e:
        raise DataError(str(e)) from e
    raise ConfigError(f"unknown data.kind {kind!r}")


def _prepare(cfg, train_raw, seed, test_raw=None):
    """Preprocessing used everywhere downstream.

    The flow trains on dequantized (noised) standardized data; the set
    being privatized and both classifier splits use the same
    standardization record without the dequantization noise.
    """
    noise = cfg.get("data", "input_noise")
    train_fit = data_mod.dequantize(train_raw, noise, seed=seed)
    record = None
    if cfg.get("data", "standardize"):
        train_fit = data_mod.standardize_features(train_fit)
        record = train_fit.normalization[-1]
        train_clean = data_mod.apply_standardization(train_raw, record)
        test = (data_mod.apply_standardization(test_raw, record)
                if test_raw is not None else None)
    else:
        train_clean = train_raw.with_features(train_raw.features)
        test = test_raw
    return train_fit, train_clean, test, record


def _apply_preprocess(dataset, record):
    if record:
        return data_mod.apply_standardization(dataset, record)
    return dataset


def _flow_from_config(cfg, seed):
    return ConditionalFlow(
        n_blocks=cfg.get("flow", "blocks"),
        coupling=cfg.get("flow", "coupling"),
        width=cfg.get("flow", "width"),
        clamp=cfg.get("flow", "clamp"),
        lr=cfg.get("flow", "lr"),
        batch_size=cfg.get("flow", "batch_size"),
        steps=cfg.get("flow", "steps"),
        val_fraction=cfg.get("flow", "val_fraction"),
        eval_every=cfg.get("flow", "eval_every"),
        random_state=int(seed),
    )


def _classifier_from_config(cfg, seed):
    return clf_mod.MlpClassifier(
        hidden_layers=cfg.get("classifier", "hidden_layers"),
        width=cfg.get("classifier", "width"),
        activation=cfg.get("classifier", "activation"),
        optimizer=cfg.get("classifier", "optimizer"),
        lr=cfg.get("classifier", "lr"),
        batch_size=cfg.get("classifier", "batch_size"),
        steps=cfg.get("classifier", "steps"),
        eval_every=cfg.get("classifier", "eval_every"),
        random_state=int(seed),
    )


def _dpsgd_from_config(cfg, sigma, seed):
    return dpsgd_mod.DpSgdClassifier(
        hidden_layers=cfg.get("classifier", "hidden_layers"),
        width=cfg.get("classifier", "width"),
        activation=cfg.get("classifier", "activation"),
        lr=cfg.get("dpsgd", "lr"),
        batch_size=cfg.get("dpsgd", "lot_size"),
        steps=cfg.get("dpsgd", "steps"),
        eval_every=cfg.get("classifier", "eval_every"),
        random_state=int(seed),
        clip_norm=cfg.get("dpsgd", "clip_norm"),
        noise_multiplier=sigma,
        delta=cfg.get("dpsgd", "delta"),
    )


def _train_flow_on(cfg, train_fit, cond_spec, seed):
    X_flow, cond, _ = cond_spec.split(train_fit)
    flow = _flow_from_config(cfg, seed)
    flow.fit(X_flow, cond)
    return flow


def _write_curve(path, curve):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "nll"])
        for step, nll in curve:
            writer.writerow([step, f"{nll:.6f}"])


def _save_flow_artifacts(out_dir, flow, cfg, record, seed):
    os.makedirs(out_dir, exist_ok=True)
    model_path = os.path.join(out_dir, "flow.json")
    checkpoint.save_flow(model_path, flow, metadata={
        "seed": int(seed),
        "steps_run": len(flow.loss_curve_),
        "condition": cfg.get("data", "condition"),
        "input_noise": cfg.get("data", "input_noise"),
        "preprocess": record,
    })
    _write_curve(os.path.join(out_dir, "nll_curve.csv"), flow.loss_curve_)
    return model_path


# ---------------------------------------------------------------------------
# commands

def cmd_train_flow(args):
    cfg = load_config(args.config, args.set or ())
    train_raw = _load_raw_split(cfg, "train", args.seed)
    train_fit, _, _, record = _prepare(cfg, train_raw, args.seed)
    cond_spec = data_mod.ConditionSpec.parse(cfg.get("data", "condition"))
    flow = _train_flow_on(cfg, train_fit, cond_spec, args.seed)
    model_path = _save_flow_artifacts(args.out, flow, cfg, record, args.seed)
    diag = "pass" if flow.diagnostics_pass_ else "FAIL (warn-and-proceed)"
    print(f"flow checkpoint: {model_path}")
    print(f"validation nll: {flow.val_nll_:.6f}")
    print(f"latent diagnostics: {diag}")
    return 0


def _load_private(stem):
    manifest_path = stem + ".manifest.json"
    if not os.path.exists(manifest_path):
        raise DataError(f"privatization manifest {manifest_path} not found")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest["format"] == "csv":
        dataset = data_mod.load_csv(stem + ".csv", standardize=False)
    else:
        dataset = data_mod.load_idx(stem + "-images.idx", stem + "-labels.idx")
    return dataset, manifest


def cmd_privatize(args):
    cfg = load_config(args.config, args.set or ())
    flow, meta = checkpoint.load_flow(args.model)
    params = PrivacyParams(
        epsilon=args.epsilon,
        sensitivity=resolve_sensitivity(
            args.sensitivity or cfg.get("privacy", "sensitivity"), args.epsilon),
        clip_mode=args.clip_mode or cfg.get("privacy", "clip_mode"),
        strict_accounting=bool(args.strict_accounting
                               or cfg.get("privacy", "strict_accounting")),
    )
    if not meta.get("diagnostics_passed", True):
        if args.require_diagnostics:
            raise DiagnosticError(
                "flow checkpoint failed latent normality diagnostics; "
                "re-train or drop --require-diagnostics"
            )
        print("warning: flow latents failed normality diagnostics; "
              "proceeding (recorded in manifest)", file=sys.stderr)

    train_raw = _load_raw_split(cfg, "train", args.seed)
    dataset = _apply_preprocess(train_raw, meta.get("preprocess"))
    cond_spec = data_mod.ConditionSpec.parse(
        meta.get("condition", cfg.get("data", "condition")))

    private = privatize_dataset(flow, dataset, params, seed=args.seed,
                                condition=cond_spec,
                                debug_disable_noise=args.noise_free)

    out_format = args.format
    if out_format == "input":
        out_format = "idx-pair" if cfg.get("data", "kind") == "idx" else "csv"
    result = data_mod.export_dataset(private, args.out, format=out_format)
    manifest = {
        "epsilon": params.epsilon,
        "sensitivity": params.sensitivity,
        "clip_mode": params.clip_mode,
        "strict_accounting": params.strict_accounting,
        "effective_epsilon": params.effective_epsilon,
        "seed": int(args.seed),
        "model_path": args.model,
        "model_hash": flow_checkpoint_hash(args.model),
        "flow_val_nll": meta.get("val_nll"),
        "diagnostics_passed": meta.get("diagnostics_passed", True),
        "condition": cond_spec.source if cond_spec.feature is None
                     else f"feature:{cond_spec.feature}",
        "preprocess": meta.get("preprocess"),
        "noise_free": bool(args.noise_free),
    }
    manifest.update(result)
    with open(args.out + ".manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    print(f"private dataset: {', '.join(result['files'])}")
    if result["clamped_values"]:
        print(f"clamped values during re-quantization: {result['clamped_values']}")
    return 0


def cmd_train_classifier(args):
    cfg = load_config(args.config, args.set or ())
    meta = {"seed": int(args.seed)}
    if args.private:
        dataset, manifest = _load_private(args.private)
        meta.update({
            "method": "cadp",
            "epsilon": manifest["epsilon"],
            "sensitivity": manifest["sensitivity"],
            "flow_nll": manifest.get("flow_val_nll"),
            "preprocess": manifest.get("preprocess"),
            "delta": None,
        })
        clf = _classifier_from_config(cfg, args.seed)
    else:
        train_raw = _load_raw_split(cfg, "train", args.seed)
        _, dataset, _, record = _prepare(cfg, train_raw, args.seed)
        meta["preprocess"] = record
        if args.dpsgd:
            sigma = args.noise_multiplier or cfg.get("dpsgd", "noise_multiplier")
            if sigma <= 0:
                if not args.target_epsilon:
                    raise ConfigError(
                        "dp-sgd needs --noise-multiplier or --target-epsilon"
                    )
                sigma = dpsgd_mod.calibrate_noise_multiplier(
                    args.target_epsilon,
                    min(cfg.get("dpsgd", "lot_size"), dataset.n_samples),
                    dataset.n_samples,
                    cfg.get("dpsgd", "steps"),
                    cfg.get("dpsgd", "delta"),
                )
            meta.update({"method": "dpsgd", "noise_multiplier": sigma,
                         "epsilon": args.target_epsilon or None,
                         "delta": cfg.get("dpsgd", "delta")})
            clf = _dpsgd_from_config(cfg, sigma, args.seed)
        else:
            meta.update({"method": "original", "epsilon": None})
            clf = _classifier_from_config(cfg, args.seed)

    clf.fit(dataset.features, dataset.labels)
    train_acc = clf.score(dataset.features, dataset.labels)
    meta["train_acc"] = train_acc
    if hasattr(clf, "accountant_"):
        meta["accounted_epsilon"] = clf.accountant_.epsilon
        meta["accounted_vacuous"] = clf.accountant_.vacuous
    checkpoint.save_classifier(args.out, clf, metadata=meta)
    print(f"classifier checkpoint: {args.out}")
    print(f"train accuracy: {train_acc:.4f}")
    return 0


def cmd_eval(args):
    clock = _Clock(not args.no_wallclock)
    clock.start()
    clf, meta = checkpoint.load_classifier(args.model)
    cfg = load_config(args.config, args.set or ())
    test_raw = _load_raw_split(cfg, "test", meta.get("seed", 0))
    test = _apply_preprocess(test_raw, meta.get("preprocess"))
    accuracy = clf_mod.evaluate(clf, test)
    elapsed = clock.stop()
    print(f"{accuracy:.4f}")
    if args.report:
        row = _report_row(
            method=meta.get("method", "original"),
            seed=meta.get("seed", 0),
            train_acc=meta.get("train_acc", float("nan")),
            test_acc=accuracy,
            epsilon=meta.get("epsilon"),
            sensitivity=meta.get("sensitivity"),
            flow_nll=meta.get("flow_nll"),
            wallclock=elapsed,
        )
        append_report_row(args.report, row)
    return 0


def cmd_sweep(args):
    cfg = load_config(args.config, args.set or ())
    os.makedirs(args.out, exist_ok=True)
    report_path = os.path.join(args.out, "report.csv")
    if os.path.exists(report_path):
        os.remove(report_path)

    epsilons = sorted(cfg.get("privacy", "epsilons"))
    if not epsilons or any(e <= 0 for e in epsilons):
        raise ConfigError(f"privacy.epsilons must be positive, got {epsilons}")
    methods = cfg.get("sweep", "methods")
    seeds = cfg.get("sweep", "seeds")
    rule = cfg.get("privacy", "sensitivity")
    clock_on = not args.no_wallclock
    failures = []
    summary = []

    sigma_cache = {}

    for seed in seeds:
        seed_dir = os.path.join(args.out, f"seed{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        train_raw = _load_raw_split(cfg, "train", seed)
        test_raw = _load_raw_split(cfg, "test", seed)
        train_fit, train_clean, test, record = _prepare(cfg, train_raw, seed,
                                                        test_raw)
        cond_spec = data_mod.ConditionSpec.parse(cfg.get("data", "condition"))

        flow = None
        if "cadp" in methods:
            try:
                flow = _train_flow_on(cfg, train_fit, cond_spec, seed)
                _save_flow_artifacts(seed_dir, flow, cfg, record, seed)
            except CadpError as e:
                failures.append(("flow", None, seed, e))
                summary.append(f"seed {seed}: flow training failed: {e}")

        if "original" in methods:
            clock = _Clock(clock_on)
            clock.start()
            try:
                clf = _classifier_from_config(cfg, seed)
                clf.fit(train_clean.features, train_clean.labels)
                train_acc = clf.score(train_clean.features, train_clean.labels)
                test_acc = clf_mod.evaluate(clf, test)
                append_report_row(report_path, _report_row(
                    "original", seed, train_acc, test_acc,
                    wallclock=clock.stop()))
                summary.append(f"seed {seed} original: test acc {test_acc:.4f}")
            except CadpError as e:
                failures.append(("original", None, seed, e))
                summary.append(f"seed {seed} original FAILED: {e}")

        if "cadp" in methods and flow is not None:
            for eps in epsilons:
                clock = _Clock(clock_on)
                clock.start()
                try:
                    params = PrivacyParams(
                        epsilon=eps,
                        sensitivity=resolve_sensitivity(rule, eps),
                        clip_mode=cfg.get("privacy", "clip_mode"),
                        strict_accounting=cfg.get("privacy", "strict_accounting"),
                    )
                    private = privatize_dataset(
                        flow, train_clean, params, seed=7000 + seed,
                        condition=cond_spec)
                    data_mod.export_csv(
                        private, os.path.join(seed_dir, f"private-eps{eps:g}.csv"))
                    clf = _classifier_from_config(cfg, seed)
                    clf.fit(private.features, private.labels)
                    train_acc = clf.score(private.features, private.labels)
                    test_acc = clf_mod.evaluate(clf, test)
                    append_report_row(report_path, _report_row(
                        "cadp", seed, train_acc, test_acc, epsilon=eps,
                        sensitivity=params.sensitivity,
                        flow_nll=flow.val_nll_, wallclock=clock.stop()))
                    summary.append(
                        f"seed {seed} cadp eps={eps:g}: test acc {test_acc:.4f}")
                except CadpError as e:
                    failures.append(("cadp", eps, seed, e))
                    summary.append(f"seed {seed} cadp eps={eps:g} FAILED: {e}")

        if "dpsgd" in methods:
            for eps in epsilons:
                clock = _Clock(clock_on)
                clock.start()
                try:
                    lot = min(cfg.get("dpsgd", "lot_size"),
                              train_clean.n_samples)
                    key = (eps, lot, train_clean.n_samples)
                    if key not in sigma_cache:
                        sigma_cache[key] = dpsgd_mod.calibrate_noise_multiplier(
                            eps, lot, train_clean.n_samples,
                            cfg.get("dpsgd", "steps"),
                            cfg.get("dpsgd", "delta"))
                    clf = _dpsgd_from_config(cfg, sigma_cache[key], seed)
                    clf.fit(train_clean.features, train_clean.labels)
                    train_acc = clf.score(train_clean.features,
                                          train_clean.labels)
                    test_acc = clf_mod.evaluate(clf, test)
                    append_report_row(report_path, _report_row(
                        "dpsgd", seed, train_acc, test_acc, epsilon=eps,
                        wallclock=clock.stop()))
                    summary.append(
                        f"seed {seed} dpsgd eps={eps:g}: test acc {test_acc:.4f} "
                        f"(sigma {sigma_cache[key]:.2f})")
                except CadpError as e:
                    failures.append(("dpsgd", eps, seed, e))
                    summary.append(f"seed {seed} dpsgd eps={eps:g} FAILED: {e}")

    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(summary) + "\n")
        if failures:
            fh.write(f"\n{len(failures)} failed cells\n")
    for line in summary:
        print(line)
    if failures:
        print(f"{len(failures)} cells failed", file=sys.stderr)
        return failures[0][3].exit_code
    print(f"report: {report_path}")
    return 0


def cmd_diagnose(args):
    if args.mode == "dp-ratio":
        mech = ScalarLaplaceMechanism(args.epsilon, args.sensitivity)
        ratio = empirical_dp_ratio(mech, 0.0, args.sensitivity, args.epsilon,
                                   trials=args.trials, bins=args.bins,
                                   seed=args.seed)
        bound = args.epsilon + DP_RATIO_SLACK
        print(f"max observed log-ratio: {ratio:.4f} "
              f"(bound {args.epsilon:g} + slack {DP_RATIO_SLACK})")
        if ratio > bound:
            raise DiagnosticError(f"log-ratio {ratio:.4f} exceeds {bound:.4f}")
        print("PASS")
        return 0

    cfg = load_config(args.config, args.set or ())
    flow, meta = checkpoint.load_flow(args.model)
    raw = _load_raw_split(cfg, "train", meta.get("seed", 0))
    dataset = _apply_preprocess(raw, meta.get("preprocess"))
    cond_spec = data_mod.ConditionSpec.parse(
        meta.get("condition", cfg.get("data", "condition")))
    X, cond, _ = cond_spec.split(dataset)
    n = min(args.n, len(X))
    X, cond = X[:n], cond[:n]

    if args.mode == "invertibility":
        Z = flow.transform(X, cond)
        back = flow.inverse_transform(Z, cond)
        err = float(np.max(np.abs(back - X)))
        print(f"max round-trip error over {n} samples: {err:.3e} "
              f"(threshold {INVERTIBILITY_TOL:g})")
        if err >= INVERTIBILITY_TOL:
            raise DiagnosticError(f"round-trip error {err:.3e} too large")
        print("PASS")
        return 0

    if args.mode == "latent-normality":
        report = latent_diagnostics(flow.transform(X, cond))
        print(f"dims: {X.shape[1]}, failing: {report['n_failing_dims']}")
        print(f"variance range: [{report['variance'].min():.3f}, "
              f"{report['variance'].max():.3f}]")
        print(f"|skewness| max: {np.max(np.abs(report['skewness'])):.3f}")
        print(f"|excess kurtosis| max: "
              f"{np.max(np.abs(report['excess_kurtosis'])):.3f}")
        print(f"max off-diagonal correlation: "
              f"{report['max_offdiag_correlation']:.3f}")
        if not report["passed"]:
            raise DiagnosticError(
                f"{report['n_failing_dims']} of {X.shape[1]} latent dims "
                "fail the normality thresholds"
            )
        print("PASS")
        return 0

    raise ConfigError(f"unknown diagnose mode {args.mode!r}")


def cmd_plot(args):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = []
    with open(args.report, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rows.append(row)
    if not rows:
        raise DataError(f"report {args.report} has no rows")

    fig, ax = plt.subplots(figsize=(6, 4))
    for method, style in (("cadp", "o-"), ("dpsgd", "s--")):
        pts = {}
        for row in rows:
            if row["method"] == method and row["epsilon"]:
                pts.setdefault(float(row["epsilon"]), []).append(
                    float(row["test_acc_on_original"]))
        if pts:
            eps = sorted(pts)
            ax.plot(eps, [np.mean(pts[e]) for e in eps], style, label=method)
    originals = [float(r["test_acc_on_original"]) for r in rows
                 if r["method"] == "original"]
    if originals:
        ax.axhline(np.mean(originals), color="gray", linestyle=":",
                   label="original")
    ax.set_xscale("log")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("test accuracy on original data")
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)
    print(f"plot: {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_common(parser):
    parser.add_argument("--config", default=None,
                        help="preset name (mnist, diabetes) or path to a .cfg file")
    parser.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config value")
    parser.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cadp",
        description="Latent-space Laplace privatization with invertible "
                    "conditional networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-flow", help="fit the invertible density model")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_train_flow)

    p = sub.add_parser("privatize", help="clip + noise + invert a dataset")
    _add_common(p)
    p.add_argument("--model", required=True, help="flow checkpoint path")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--sensitivity", default=None,
                   help="rule: half-epsilon-capped-4, fixed:<v>, or a number")
    p.add_argument("--clip-mode", choices=["rescale-always", "clip-only"],
                   default=None)
    p.add_argument("--strict-accounting", action="store_true")
    p.add_argument("--noise-free", action="store_true",
                   help="debug only: skip the noise, output is NOT private")
    p.add_argument("--require-diagnostics", action="store_true",
                   help="fail (exit 7) instead of warning when the flow "
                        "failed latent diagnostics")
    p.add_argument("--format", choices=["csv", "idx-pair", "input"],
                   default="input")
    p.add_argument("--out", required=True, help="output path stem")
    p.set_defaults(func=cmd_privatize)

    p = sub.add_parser("train-classifier", help="fit the downstream classifier")
    _add_common(p)
    p.add_argument("--private", default=None, metavar="STEM",
                   help="train on a privatized dataset (stem from privatize)")
    p.add_argument("--dpsgd", action="store_true",
                   help="train with per-sample clipping + Gaussian noise")
    p.add_argument("--noise-multiplier", type=float, default=0.0)
    p.add_argument("--target-epsilon", type=float, default=0.0,
                   help="calibrate the noise multiplier to this budget")
    p.add_argument("--out", required=True, help="classifier checkpoint path")
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("eval", help="accuracy on the original test split")
    _add_common(p)
    p.add_argument("--model", required=True, help="classifier checkpoint path")
    p.add_argument("--report", default=None,
                   help="append a row to this report CSV")
    p.add_argument("--no-wallclock", action="store_true",
                   help="write 0.0 wallclock for bitwise-reproducible reports")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="full grid: original, cadp, dpsgd")
    _add_common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-wallclock", action="store_true",
                   help="write 0.0 wallclock for bitwise-reproducible reports")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("diagnose", help="invertibility, normality, dp-ratio")
    p.add_argument("mode", choices=["invertibility", "latent-normality",
                                    "dp-ratio"])
    _add_common(p)
    p.add_argument("--model", default=None, help="flow checkpoint path")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--sensitivity", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=10**6)
    p.add_argument("--bins", type=int, default=50)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("plot", help="accuracy-vs-epsilon chart from a report")
    p.add_argument("--report", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CadpError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        # library-level validation of a bad knob value
        print(f"error: {e}", file=sys.stderr)
        return ConfigError.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return DataError.exit_code


def console_main():
    sys.exit(main())


if __name__ == "__main__":
    console_main()
