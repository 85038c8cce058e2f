"""Command-line experiment runner.

Subcommands ``gen``, ``expansion``, ``verify-theorems``, ``selftrain`` and
``margins`` read a JSON config (``--config``) overridden by flags, validate it
completely, then write JSON / JSON-lines / CSV outputs into ``--out``.  Every
report embeds the resolved config.  Exit codes: 0 success, 2 config error,
3 refused precondition, 4 internal failure.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import math
import multiprocessing
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_CONFIG, EXIT_REFUSED, EXIT_INTERNAL = 0, 2, 3, 4
LADDER_RUNGS = ("pl", "vat", "amo", "minent")


class ConfigError(ValueError):
    pass


class Refused(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# config


DEFAULTS = {
    "gen": {
        "kind": "two-moons", "k": 2, "d": 2, "n": 100, "seed": 0, "noise": 0.1, "separation": 3.0,
        "sizes": None, "spread": 0.9, "gap": 2.5, "radius": 0.3, "overlap": "geometric",
    },
    "expansion": {
        "population": None, "gen": None, "property": "mult", "a": 0.5, "c": 1.5, "q": 0.0, "alpha": 0.0,
        "xi": 0.1, "set": None, "radius": 0.3, "overlap": "witnessed", "mode": "exhaustive", "budget": 100_000, "seed": 0,
    },
    "verify-theorems": {
        "count": 200, "seed": 0, "n_min": 6, "n_max": 12, "k_choices": [2, 3], "alphas": [0.0], "jobs": 1,
        "population": None, "pseudolabels": None, "radius": 1.0, "minimizer_mode": "auto",
    },
    "selftrain": {
        "scenario": "shift", "seed": 0, "num_seeds": 5, "rungs": list(LADDER_RUNGS), "n": 400, "noise": 0.05,
        "rotation": 0.4, "shift": [0.1, 0.1], "hidden": [32, 32], "source_steps": 600, "noise_rate": 0.2,
        "clusters": 3, "vat_weight": 30.0, "vat_radius": 0.2, "tau": 0.1, "bins": 5, "jobs": 1, "train": {},
    },
    "margins": {
        "seed": 0, "n": 50, "noise": 0.1, "hidden": [8], "activation": "softplus", "steps": 300, "radius": 0.0,
        "t_grid": [0.05, 0.1, 0.2, 0.5, 1.0, 2.0], "delta": 0.05, "restarts": 3, "margin_steps": 200,
    },
}

CHOICES = {
    ("gen", "kind"): ("two-moons", "gaussian", "clustered"),
    ("gen", "overlap"): ("geometric", "witnessed"),
    ("expansion", "property"): ("mult", "additive", "constant"),
    ("expansion", "overlap"): ("geometric", "witnessed"),
    ("expansion", "mode"): ("exhaustive", "sampled"),
    ("verify-theorems", "minimizer_mode"): ("auto", "exact", "local"),
    ("selftrain", "scenario"): ("shift", "denoise"),
    ("margins", "activation"): ("softplus", "tanh"),
}


def resolve_config(command: str, file_doc: dict | None, overrides: dict) -> dict:
    """Defaults, then the config file, then flag overrides; unknown keys are errors."""
    cfg = copy.deepcopy(DEFAULTS[command])
    for source in (file_doc or {}, overrides):
        if not isinstance(source, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(source) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown {command} config keys: {sorted(unknown)}")
        cfg.update({k: v for k, v in source.items() if v is not None})
    _validate(command, cfg)
    return cfg


def _validate(command, cfg):
    for (cmd, key), allowed in CHOICES.items():
        if cmd == command and cfg[key] not in allowed:
            raise ConfigError(f"{key} must be one of {allowed}, got {cfg[key]!r}")
    ints = {"k", "d", "n", "seed", "count", "n_min", "n_max", "num_seeds", "budget", "jobs", "source_steps",
            "clusters", "bins", "steps", "restarts", "margin_steps"}
    for key, v in cfg.items():
        if key in ints and (isinstance(v, bool) or not isinstance(v, int) or v < 0):
            raise ConfigError(f"{key} must be a nonnegative integer, got {v!r}")
    for key in ("radius", "noise", "spread", "gap", "separation", "a", "c", "xi", "vat_weight", "vat_radius", "tau", "delta", "noise_rate"):
        if key in cfg and cfg[key] is not None:
            v = cfg[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
                raise ConfigError(f"{key} must be a nonnegative number, got {v!r}")
    if command == "verify-theorems":
        if not 2 <= cfg["n_min"] <= cfg["n_max"] <= 12:
            raise ConfigError("need 2 <= n_min <= n_max <= 12")
        if not cfg["k_choices"] or any(k not in (2, 3) for k in cfg["k_choices"]):
            raise ConfigError("k_choices must be a nonempty subset of {2, 3}")
        if (cfg["population"] is None) != (cfg["pseudolabels"] is None):
            raise ConfigError("population and pseudolabels must be given together")
    if command == "selftrain":
        bad = [r for r in cfg["rungs"] if r not in LADDER_RUNGS]
        if bad or not cfg["rungs"]:
            raise ConfigError(f"rungs must be drawn from {LADDER_RUNGS}")
        if cfg["num_seeds"] < 1:
            raise ConfigError("num_seeds must be positive")
        from .selftrain import TrainConfig

        try:
            TrainConfig.from_dict(dict(cfg["train"]))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"train: {exc}") from exc
    if command == "margins" and (not cfg["t_grid"] or any(not (isinstance(t, (int, float)) and t > 0) for t in cfg["t_grid"])):
        raise ConfigError("t_grid must hold positive numbers")
    if command == "expansion" and cfg["property"] == "additive" and cfg["set"] is None:
        raise ConfigError("additive expansion needs a 'set' of point indices")


# ---------------------------------------------------------------------------
# output helpers


def _json_text(doc) -> str:
    return json.dumps(_plain(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return "nan" if not math.isfinite(v) else repr(float(v))
    return v


def write_atomic(path: Path, text: str):
    """Write via a temp file in the same directory, then rename over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pmap(fn, items, jobs):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs, mp_context=multiprocessing.get_context("spawn"), initializer=_worker_init) as ex:
        return list(ex.map(fn, items))


def _worker_init():
    import torch

    torch.set_num_threads(1)


# ---------------------------------------------------------------------------
# gen


def build_population(cfg: dict):
    from .dataspace import gen_clustered_instance, gen_gaussian_mixture, gen_two_moons

    kind, k, seed = cfg["kind"], cfg["k"], cfg["seed"]
    if kind == "two-moons":
        if k != 2 or cfg["d"] != 2:
            raise ConfigError("two-moons needs k = 2 and d = 2")
        return gen_two_moons(cfg["n"], noise=cfg["noise"], seed=seed)
    if kind == "gaussian":
        if k < 1 or cfg["d"] < 1:
            raise ConfigError("gaussian needs k >= 1 and d >= 1")
        rng = np.random.default_rng(seed)
        means = cfg["separation"] * (np.eye(k, cfg["d"]) if k <= cfg["d"] else rng.standard_normal((k, cfg["d"])))
        return gen_gaussian_mixture(k, cfg["d"], means, n=cfg["n"], seed=seed)
    sizes = cfg["sizes"] or [cfg["n"]] * k
    if len(sizes) != k:
        raise ConfigError("sizes needs one entry per class")
    return gen_clustered_instance(k, sizes, spread=cfg["spread"], gap=cfg["gap"], seed=seed)


def cmd_gen(cfg: dict, out: Path) -> int:
    from .dataspace import TransformSpec, build_neighborhood_graph, measure_separation

    pop = build_population(cfg)
    graph = build_neighborhood_graph(pop, TransformSpec(cfg["radius"], overlap=cfg["overlap"]))
    summary = {"n": pop.n, "k": pop.num_classes, "d": pop.dim, "radius": cfg["radius"], "mu": measure_separation(graph)}
    write_atomic(out / "population.json", _json_text({"config": cfg, "summary": summary, "population": pop.to_dict()}))
    print(f"n={summary['n']} K={summary['k']} d={summary['d']} mu(r={cfg['radius']})={summary['mu']:.6g}")
    return EXIT_OK


def load_population(path):
    from .dataspace import FinitePopulation

    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read population file {path}: {exc}") from exc
    try:
        return FinitePopulation.from_dict(doc.get("population", doc))
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"invalid population file {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# expansion


def cmd_expansion(cfg: dict, out: Path) -> int:
    from .dataspace import TransformSpec, build_neighborhood_graph
    from .expansion import EXHAUSTIVE_CAP, check_additive_expansion, check_constant_expansion, check_mult_expansion

    if cfg["population"] is not None:
        pop = load_population(cfg["population"])
    else:
        pop = build_population(resolve_config("gen", cfg["gen"], {}))
    graph = build_neighborhood_graph(pop, TransformSpec(cfg["radius"], overlap=cfg["overlap"]))
    mode = cfg["mode"]
    if mode == "exhaustive":
        if cfg["property"] == "mult":
            size = int(np.bincount(pop.labels).max())
        elif cfg["property"] == "additive":
            size = len(set(cfg["set"]))
        else:
            size = pop.n
        if size > EXHAUSTIVE_CAP:
            raise Refused(f"exhaustive mode is capped at {EXHAUSTIVE_CAP} points, the request needs {size}")
    kw = {"mode": mode, "budget": cfg["budget"], "seed": cfg["seed"]}
    try:
        if cfg["property"] == "mult":
            cert = check_mult_expansion(graph, cfg["a"], cfg["c"], **kw)
        elif cfg["property"] == "additive":
            cert = check_additive_expansion(graph, cfg["set"], cfg["q"], cfg["alpha"], **kw)
        else:
            cert = check_constant_expansion(graph, cfg["q"], cfg["xi"], **kw)
    except (ValueError, IndexError) as exc:
        raise ConfigError(str(exc)) from exc
    write_atomic(out / "certificate.json", _json_text({"config": cfg, "certificate": cert.to_dict()}))
    print(f"{cert.kind} expansion {cert.params}: holds={cert.holds} worst={cert.worst:.6g} examined={cert.examined}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# verify-theorems


def _verify_one(args):
    from .bounds import check_conversions, verify_instance

    index, graph, pl, ds, us, alphas = args
    reports = verify_instance(graph, pl, ds, us, alphas=tuple(alphas))
    return index, [r.to_dict() for r in reports], check_conversions(graph, pl, ds, us)


def cmd_verify_theorems(cfg: dict, out: Path, jobs: int = 1) -> int:
    from .bounds import denoise_setting, qualifying_instances, unsup_setting
    from .dataspace import TransformSpec, build_neighborhood_graph
    from .objectives import Pseudolabeler

    if cfg["population"] is not None:
        pop = load_population(cfg["population"])
        try:
            pl = Pseudolabeler(np.asarray(cfg["pseudolabels"]), pop)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        graph = build_neighborhood_graph(pop, TransformSpec(cfg["radius"], overlap="witnessed"))
        ds, us = denoise_setting(graph, pl), unsup_setting(graph)
        tasks = [(0, graph, pl, ds, us, cfg["alphas"])]
    else:
        gen = qualifying_instances(cfg["seed"], cfg["count"], (cfg["n_min"], cfg["n_max"]), tuple(cfg["k_choices"]))
        tasks = [(draw, g, p, ds, us, cfg["alphas"]) for draw, g, p, ds, us in gen]
    results = _pmap(_verify_one, tasks, jobs)
    lines, conv_lines = [], []
    counts = {"checked": 0, "refused": 0, "skipped": 0, "violations": 0, "conversion_failures": 0}
    for index, reports, conversions in results:
        for r in reports:
            counts[r["status"]] += 1
            counts["violations"] += r["holds"] is False
            lines.append(json.dumps(_plain({**r, "instance_index": index}), sort_keys=True, allow_nan=False))
        for c in conversions:
            counts["conversion_failures"] += not c["holds"]
            conv_lines.append(json.dumps(_plain({**c, "instance_index": index}), sort_keys=True, allow_nan=False))
    write_atomic(out / "theorems.jsonl", "".join(x + "\n" for x in lines))
    write_atomic(out / "conversions.jsonl", "".join(x + "\n" for x in conv_lines))
    summary = {"config": cfg, "instances": len(results), **counts}
    write_atomic(out / "summary.json", _json_text(summary))
    print(f"instances={len(results)} checked={counts['checked']} refused={counts['refused']} skipped={counts['skipped']} "
          f"violations={counts['violations']} conversion_failures={counts['conversion_failures']}")
    if len(tasks) == 1:
        for r in results[0][1]:
            slack = "-" if r["slack"] is None else f"{r['slack']:.6g}"
            print(f"  {r['theorem']}: {r['status']} slack={slack} {r['reason']}")
    if counts["violations"] or counts["conversion_failures"]:
        return EXIT_INTERNAL
    if counts["checked"] == 0:
        raise Refused("no check passed its preconditions")
    return EXIT_OK


# ---------------------------------------------------------------------------
# self-training experiments


def denoise_run(seed: int, n: int = 400, noise: float = 0.05, noise_rate: float = 0.2, clusters: int = 3,
                hidden=(32, 32), train: dict | None = None, bins: int = 5) -> dict:
    """Clustered pseudolabel noise on two moons; consistency training on the noisy labels."""
    from scipy.stats import spearmanr

    from .dataspace import gen_two_moons
    from .nets import predict, random_net
    from .objectives import err
    from .selftrain import TrainConfig, distance_vs_correction, make_pseudolabeler, train_pseudolabel

    pop = gen_two_moons(n, noise=noise, seed=seed)
    pl = make_pseudolabeler(pop, noise_rate, seed=seed, mode="clustered", num_clusters=clusters)
    tc = {"vat_weight": 3.0, "vat_radius": 0.1, "seed": seed, **(train or {})}
    res = train_pseudolabel(random_net([2, *hidden, 2], seed=seed), pop, pl, TrainConfig(**tc))
    acc = 1.0 - err(predict(res.net, pop.points), pop)
    dv = distance_vs_correction(pop, pl, res.net, bins)
    ok = np.isfinite(dv["rates"])
    rho = spearmanr(dv["centers"][ok], dv["rates"][ok]).statistic if ok.sum() > 1 else float("nan")
    return {"seed": seed, "pl_accuracy": 1.0 - pl.err, "accuracy": acc, "spearman": float(rho), "bins": dv,
            "history": res.history, "train": TrainConfig(**tc).to_dict()}


def shift_pair(seed: int, n: int = 400, noise: float = 0.05, rotation: float = 0.4, shift=(0.1, 0.1)):
    """Source and rotated, shifted target two-moons populations."""
    from .dataspace import gen_two_moons

    src = gen_two_moons(n, noise=noise, seed=100 + seed)
    tgt = gen_two_moons(n, noise=noise, seed=200 + seed, rotation=rotation, shift=tuple(shift))
    return src, tgt


def rung_config(rung: str, seed: int, vat_weight=30.0, vat_radius=0.2, tau=0.1, train=None) -> dict:
    """Training config for one ablation rung; each rung adds one component."""
    base = {"seed": seed, **(train or {})}
    if rung == "pl":
        return {**base, "vat_weight": 0.0}
    vat = {**base, "vat_weight": vat_weight, "vat_radius": vat_radius}
    if rung == "vat":
        return vat
    if rung == "amo":
        return {**vat, "amo_enabled": True}
    if rung == "minent":
        return {**vat, "amo_enabled": True, "tau_final": tau}
    raise ValueError(f"unknown rung {rung!r}")


def ladder_run(seed: int, rungs=LADDER_RUNGS, n: int = 400, noise: float = 0.05, rotation: float = 0.4, shift=(0.1, 0.1),
               hidden=(32, 32), source_steps: int = 600, vat_weight=30.0, vat_radius=0.2, tau=0.1, train=None) -> dict:
    """Source-trained pseudolabeler on the shifted target, then each rung trained on its labels."""
    from .nets import predict, random_net
    from .objectives import err
    from .selftrain import TrainConfig, train_pseudolabel

    src, tgt = shift_pair(seed, n, noise, rotation, shift)
    dims = [2, *hidden, 2]
    src_cfg = {"vat_weight": 0.0, "seed": seed, "steps": source_steps}
    src_net = train_pseudolabel(random_net(dims, seed=seed), src, src.labels, TrainConfig(**src_cfg)).net
    g = predict(src_net, tgt.points)
    out = {"seed": seed, "pl_accuracy": 1.0 - err(g, tgt), "rungs": {}}
    for rung in rungs:
        tc = TrainConfig(**rung_config(rung, seed, vat_weight, vat_radius, tau, train))
        res = train_pseudolabel(random_net(dims, seed=seed), tgt, g, tc)
        out["rungs"][rung] = {"accuracy": 1.0 - err(predict(res.net, tgt.points), tgt), "history": res.history, "train": tc.to_dict()}
    return out


def _selftrain_task(args):
    cfg, seed = args
    if cfg["scenario"] == "denoise":
        return denoise_run(seed, cfg["n"], cfg["noise"], cfg["noise_rate"], cfg["clusters"], cfg["hidden"], cfg["train"], cfg["bins"])
    return ladder_run(seed, cfg["rungs"], cfg["n"], cfg["noise"], cfg["rotation"], cfg["shift"], cfg["hidden"],
                      cfg["source_steps"], cfg["vat_weight"], cfg["vat_radius"], cfg["tau"], cfg["train"])


def cmd_selftrain(cfg: dict, out: Path, jobs: int = 1) -> int:
    from .selftrain import history_to_csv

    seeds = [cfg["seed"] + i for i in range(cfg["num_seeds"])]
    runs = _pmap(_selftrain_task, [(cfg, s) for s in seeds], jobs)
    report = {"config": cfg, "seeds": seeds}
    if cfg["scenario"] == "denoise":
        rows, bin_rows = [], []
        for r in runs:
            write_atomic(out / "histories" / f"denoise_seed{r['seed']}.csv", history_to_csv(r["history"]))
            rows.append([r["seed"], r["pl_accuracy"], r["accuracy"], r["accuracy"] - r["pl_accuracy"], r["spearman"]])
            b = r["bins"]
            for j in range(len(b["counts"])):
                bin_rows.append([r["seed"], j, b["edges"][j], b["edges"][j + 1], b["centers"][j], int(b["counts"][j]), b["rates"][j]])
        write_atomic(out / "denoise.csv", _csv_text(["seed", "pl_accuracy", "accuracy", "gain", "spearman"], rows))
        write_atomic(out / "bins.csv", _csv_text(["seed", "bin", "lo", "hi", "center", "count", "rate"], bin_rows))
        gains = [row[3] for row in rows]
        report.update(mean_gain=float(np.mean(gains)), negative_spearman=int(sum(row[4] < 0 for row in rows)),
                      runs=[{k: r[k] for k in ("seed", "pl_accuracy", "accuracy", "spearman")} for r in runs])
        print(f"mean gain {100 * report['mean_gain']:.2f} pp, negative Spearman in {report['negative_spearman']}/{len(runs)} seeds")
    else:
        rows = []
        for r in runs:
            rows.append([r["seed"], "pseudolabeler", r["pl_accuracy"]])
            for rung, v in r["rungs"].items():
                rows.append([r["seed"], rung, v["accuracy"]])
                write_atomic(out / "histories" / f"{rung}_seed{r['seed']}.csv", history_to_csv(v["history"]))
        write_atomic(out / "ladder_runs.csv", _csv_text(["seed", "rung", "accuracy"], rows))
        means = {"pseudolabeler": float(np.mean([r["pl_accuracy"] for r in runs]))}
        for rung in cfg["rungs"]:
            means[rung] = float(np.mean([r["rungs"][rung]["accuracy"] for r in runs]))
        write_atomic(out / "ladder.csv", _csv_text(["rung", "mean_accuracy"], list(means.items())))
        report["mean_accuracy"] = means
        print("  ".join(f"{k}={100 * v:.2f}" for k, v in means.items()))
    write_atomic(out / "report.json", _json_text(report))
    return EXIT_OK


# ---------------------------------------------------------------------------
# margins


def cmd_margins(cfg: dict, out: Path) -> int:
    from .bounds import generalization_rhs
    from .dataspace import gen_two_moons
    from .nets import MarginOptions, all_layer_margins, margin_lower_bound, predict, random_net, robust_all_layer_margin
    from .selftrain import TrainConfig, train_pseudolabel

    seed = cfg["seed"]
    pop = gen_two_moons(cfg["n"], noise=cfg["noise"], seed=seed)
    net = random_net([2, *cfg["hidden"], 2], activation=cfg["activation"], seed=seed)
    net = train_pseudolabel(net, pop, pop.labels, TrainConfig(vat_weight=0.0, steps=cfg["steps"], seed=seed, log_every=cfg["steps"])).net
    opt = MarginOptions(restarts=cfg["restarts"], steps=cfg["margin_steps"], seed=seed)
    x, y = pop.points, pop.labels
    pred = predict(net, x)
    reps = all_layer_margins(net, x, y, opt)
    rows, violations, converged = [], 0, 0
    for i, rep in enumerate(reps):
        lb = margin_lower_bound(net, x[i], y[i]).value if pred[i] == y[i] else 0.0
        viol = bool(rep.converged and lb > rep.value + 1e-6)
        violations += viol
        converged += rep.converged
        rows.append([i, int(y[i]), int(pred[i]), rep.value, rep.converged, lb, viol])
    write_atomic(out / "margins.csv", _csv_text(["index", "label", "prediction", "margin", "converged", "lower_bound", "violation"], rows))
    if cfg["radius"] > 0:
        robust = np.array([robust_all_layer_margin(net, x[i], cfg["radius"], opt).value for i in range(pop.n)])
    else:
        robust = np.array([r.value if pred[i] == y[i] else all_layer_margins(net, x[i : i + 1], pred[i : i + 1], opt)[0].value
                           for i, r in enumerate(reps)])
    terms = [generalization_rhs(net, robust, t, cfg["delta"]) for t in cfg["t_grid"]]
    write_atomic(out / "rhs.csv", _csv_text(["t", "empirical", "complexity", "zeta", "total"],
                                           [[d["t"], d["empirical"], d["complexity"], d["zeta"], d["total"]] for d in terms]))
    report = {"config": cfg, "points": pop.n, "converged": converged, "violations": violations,
              "misclassified": int((pred != y).sum()), "note": terms[0]["note"]}
    write_atomic(out / "report.json", _json_text(report))
    print(f"points={pop.n} converged={converged} lower-bound violations={violations}")
    return EXIT_INTERNAL if violations else EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="expansionlab", description="Expansion-based self-training experiments.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--mode", choices=("exhaustive", "sampled"))
        return sp

    g = common(sub.add_parser("gen", help="generate a population"))
    g.add_argument("--kind", choices=CHOICES[("gen", "kind")])
    g.add_argument("--k", type=int)
    g.add_argument("--d", type=int)
    g.add_argument("--n", type=int)
    g.add_argument("--noise", type=float)
    g.add_argument("--radius", type=float)
    e = common(sub.add_parser("expansion", help="certify an expansion property"))
    e.add_argument("--population")
    e.add_argument("--property", choices=CHOICES[("expansion", "property")])
    e.add_argument("--a", type=float)
    e.add_argument("--c", type=float)
    e.add_argument("--radius", type=float)
    e.add_argument("--budget", type=int)
    v = common(sub.add_parser("verify-theorems", help="check the guarantees on small instances"))
    v.add_argument("--count", type=int)
    s = common(sub.add_parser("selftrain", help="ablation ladder or denoising run"))
    s.add_argument("--scenario", choices=CHOICES[("selftrain", "scenario")])
    s.add_argument("--num-seeds", dest="num_seeds", type=int)
    s.add_argument("--steps", type=int, help="training steps per run")
    m = common(sub.add_parser("margins", help="all-layer margins and bound terms of a trained net"))
    m.add_argument("--n", type=int)
    return p


_NON_CONFIG = {"command", "config", "out", "jobs", "mode", "steps"}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    command = args.command
    try:
        doc = None
        if args.config:
            try:
                doc = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG and v is not None}
        if args.mode is not None:
            if command != "expansion":
                raise ConfigError("--mode applies to the expansion command")
            overrides["mode"] = args.mode
        if args.jobs < 1:
            raise ConfigError("--jobs must be positive")
        cfg = resolve_config(command, doc, overrides)
        if command == "selftrain" and args.steps is not None:
            cfg["train"] = {**cfg["train"], "steps": args.steps}
            _validate(command, cfg)
        out = Path(args.out)
        import torch

        torch.set_num_threads(1)
        if command == "gen":
            return cmd_gen(cfg, out)
        if command == "expansion":
            return cmd_expansion(cfg, out)
        if command == "verify-theorems":
            return cmd_verify_theorems(cfg, out, max(args.jobs, cfg["jobs"]))
        if command == "selftrain":
            return cmd_selftrain(cfg, out, max(args.jobs, cfg["jobs"]))
        return cmd_margins(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Refused as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except Exception as exc:  # noqa: BLE001
        print(f"internal failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
