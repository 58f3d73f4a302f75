"""Command-line entry point binding the library into reproducible experiments.

Commands: ``synth``, ``pretrain``, ``tune``, ``eval``, ``gradcheck``. Every
command reads an optional flat ``key = value`` config file (``#`` comments),
applies flag overrides on top, and can print its effective configuration
with ``--print-config`` (the output round-trips as a config file). Exit
codes: 0 ok, 2 config error, 3 IO error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, ParamSet, Tensor
from .checkpoint import save_tensors
from .data import SynthConfig, TagFormatError, load_tag, save_tag, synth_tag, validate
from .harness import TaskConfig, format_report, run_trials, sample_episode
from .losses import (contrastive_loss, margin_loss, node_perturbation_loss,
                     semantics_opposite_loss, text_matching_loss)
from .pretrain import (PretrainConfig, config_from_flat, config_to_flat,
                       load_model, pretrain, save_model, subseed)
from .prompting import few_shot_tune, format_predictions, make_class_prompts
from .textproc import Vocab


class ConfigError(Exception):
    """Bad key, bad value, or inconsistent settings; exits with code 2."""


# ---------------------------------------------------------------------------
# flat config handling
# ---------------------------------------------------------------------------


def _parse_config_file(path: str) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"missing config file {p}")
    out: dict[str, str] = {}
    with open(p, encoding="utf-8") as f:
        for lineno, line in enumerate(f):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, value = line.partition("=")
            if not eq:
                raise ConfigError(f"{p} line {lineno}: expected 'key = value'")
            out[key.strip()] = value.strip()
    return out


def _coerce(spec: dict[str, tuple[type, object]], flat: dict[str, str]) -> dict[str, object]:
    unknown = set(flat) - set(spec)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    values: dict[str, object] = {k: default for k, (_, default) in spec.items()}
    for key, raw in flat.items():
        kind, _ = spec[key]
        try:
            if kind is bool:
                if raw not in ("true", "false"):
                    raise ValueError(raw)
                values[key] = raw == "true"
            elif kind is str:
                values[key] = raw
            else:
                values[key] = kind(raw)
        except ValueError:
            raise ConfigError(f"config key {key}: cannot parse {raw!r} as "
                              f"{kind.__name__}") from None
    return values


def _format_config(spec: dict[str, tuple[type, object]],
                   values: dict[str, object]) -> str:
    lines = []
    for key in spec:
        v = values[key]
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"


def _merge(spec, args, flag_keys: dict[str, str]) -> dict[str, object]:
    flat = _parse_config_file(args.config) if args.config else {}
    values = _coerce(spec, flat)
    for flag, key in flag_keys.items():
        v = getattr(args, flag, None)
        if v is not None and v is not False:
            values[key] = v
    return values


_PRETRAIN_SPEC: dict[str, tuple[type, object]] = {
    "mode": (str, "zeroshot"),
    "steps": (int, 500),
    "batch_size": (int, 16),
    "learning_rate": (float, 2e-4),
    "alpha": (float, 1.0),
    "beta": (float, 1.0),
    "gamma": (str, "auto"),
    "margin": (float, 0.5),
    "tau_init": (float, 0.07),
    "drop_prob": (float, 0.2),
    "add_prob": (float, 0.1),
    "num_views": (int, 1),
    "matched_texts": (int, 1),
    "bank_capacity": (int, 4096),
    "vocab_max": (int, 512),
    "seed": (int, 0),
    "embed_dim": (int, 32),
    "graph_layers": (int, 2),
    "graph_input_dim": (int, 32),
    "text_layers": (int, 2),
    "num_heads": (int, 2),
    "model_dim": (int, 32),
    "ff_dim": (int, 64),
    "max_len": (int, 32),
    "neg_prompt_len": (int, 8),
    "data": (str, ""),
    "out": (str, ""),
}

_SYNTH_SPEC: dict[str, tuple[type, object]] = {
    "num_nodes": (int, 300),
    "num_classes": (int, 5),
    "intra_edge_prob": (float, 0.2),
    "inter_edge_prob": (float, 0.01),
    "keywords_per_class": (int, 8),
    "text_length": (int, 12),
    "noise_word_prob": (float, 0.15),
    "seed": (int, 0),
    "out": (str, ""),
}

_EVAL_SPEC: dict[str, tuple[type, object]] = {
    "num_ways": (int, 5),
    "num_shots": (int, 5),
    "num_runs": (int, 5),
    "tune_epochs": (int, 50),
    "tune_learning_rate": (float, 0.01),
    "template": (str, "a node of {}"),
    "prob_average": (bool, False),
    "seed": (int, 0),
    "model": (str, ""),
    "data": (str, ""),
    "out": (str, ""),
}

_TUNE_SPEC: dict[str, tuple[type, object]] = {
    "num_ways": (int, 5),
    "num_shots": (int, 5),
    "tune_epochs": (int, 50),
    "tune_learning_rate": (float, 0.01),
    "template": (str, "a node of {}"),
    "seed": (int, 0),
    "model": (str, ""),
    "data": (str, ""),
    "out": (str, ""),
}

_GRADCHECK_SPEC: dict[str, tuple[type, object]] = {
    "seed": (int, 0),
    "num_seeds": (int, 3),
    "eps": (float, 1e-5),
    "threshold": (float, 1e-4),
    "batch_size": (int, 4),
    "dim": (int, 8),
}


def _require(values: dict[str, object], key: str) -> str:
    v = str(values[key])
    if not v:
        raise ConfigError(f"config key {key} is required (or pass the flag)")
    return v


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    values = _merge(_SYNTH_SPEC, args, {"seed": "seed", "out": "out"})
    if args.print_config:
        sys.stdout.write(_format_config(_SYNTH_SPEC, values))
        return 0
    out = _require(values, "out")
    config = SynthConfig(**{k: values[k] for k in _SYNTH_SPEC if k not in ("seed", "out")})
    try:
        config.check()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    graph = synth_tag(config, subseed(int(values["seed"]), "data"))
    save_tag(graph, out)
    print(f"wrote {graph.num_nodes} nodes, {len(graph.edges)} edges, "
          f"{graph.num_classes} classes to {out}")
    return 0


def _pretrain_config(values: dict[str, object]) -> PretrainConfig:
    flat = {k: str(values[k]) for k in _PRETRAIN_SPEC if k not in ("data", "out")}
    try:
        config = config_from_flat(flat)
        config.check()
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from None
    return config


def cmd_pretrain(args) -> int:
    values = _merge(_PRETRAIN_SPEC, args,
                    {"seed": "seed", "out": "out", "data": "data", "mode": "mode"})
    if args.print_config:
        sys.stdout.write(_format_config(_PRETRAIN_SPEC, values))
        return 0
    data_dir = _require(values, "data")
    out = _require(values, "out")
    config = _pretrain_config(values)
    graph = load_tag(data_dir)
    model = pretrain(graph, config)
    save_model(model, out)
    print(f"trained {config.steps} steps (mode={config.mode}); "
          f"final total loss {model.trace[-1, -1]:.9g}; wrote {out}")
    return 0


def cmd_tune(args) -> int:
    values = _merge(_TUNE_SPEC, args,
                    {"seed": "seed", "out": "out", "data": "data", "model": "model"})
    if args.print_config:
        sys.stdout.write(_format_config(_TUNE_SPEC, values))
        return 0
    model = load_model(_require(values, "model"))
    graph = load_tag(_require(values, "data"))
    out = Path(_require(values, "out"))
    seed = subseed(int(values["seed"]), "episode")
    episode = sample_episode(graph, int(values["num_ways"]),
                             int(values["num_shots"]), seed)
    if not episode.support:
        raise ConfigError("tune needs num_shots >= 1")
    prompts = make_class_prompts(episode.classes, graph.class_names,
                                 str(values["template"]))
    result = few_shot_tune(model, graph, list(episode.support), prompts,
                           epochs=int(values["tune_epochs"]),
                           learning_rate=float(values["tune_learning_rate"]),
                           seed=seed)
    out.mkdir(parents=True, exist_ok=True)
    save_tensors({"prompt.vectors": result.prompt_vectors,
                  "prompt.classes": np.asarray(episode.classes, dtype=np.float64)},
                 out / "prompt.ckpt")
    print(f"support size {len(episode.support)}; "
          f"support accuracy {result.support_accuracy[-1]:.4f} "
          f"(best {max(result.support_accuracy):.4f}); wrote {out / 'prompt.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    values = _merge(_EVAL_SPEC, args,
                    {"seed": "seed", "out": "out", "data": "data", "model": "model",
                     "prob_average": "prob_average"})
    if args.print_config:
        sys.stdout.write(_format_config(_EVAL_SPEC, values))
        return 0
    model = load_model(_require(values, "model"))
    graph = load_tag(_require(values, "data"))
    out = Path(_require(values, "out"))
    k = int(values["num_shots"])
    task = TaskConfig(num_ways=int(values["num_ways"]), num_shots=k,
                      base_seed=subseed(int(values["seed"]), "episode"),
                      template=str(values["template"]),
                      prob_average=bool(values["prob_average"]),
                      tune_epochs=int(values["tune_epochs"]),
                      tune_learning_rate=float(values["tune_learning_rate"]))
    if task.prob_average and k > 0:
        raise ConfigError("prob_average applies to zero-shot only (num_shots = 0)")
    report = run_trials(model, graph, task, num_runs=int(values["num_runs"]))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "report.txt", "w", encoding="utf-8", newline="\n") as f:
        f.write(format_report(report))
    for run, result in enumerate(report.runs):
        node_ids = [n for n, _ in result.episode.query]
        truths = [lab for _, lab in result.episode.query]
        with open(out / f"predictions_run{run}.tsv", "w", encoding="utf-8",
                  newline="\n") as f:
            f.write(format_predictions(node_ids, truths, result.predictions))
    if k > 0:
        print(f"support size {task.num_ways * k} per run")
    acc_mean, acc_std = report.accuracy_mean_std
    print(f"accuracy {acc_mean:.4f}±{acc_std:.4f} over {len(report.runs)} runs; "
          f"wrote {out / 'report.txt'}")
    return 0


def _gradcheck_cases(rng: np.random.Generator, b: int, d: int, margin: float):
    """Loss closures over a fresh random ParamSet, re-sampled until every
    hinge argument sits clear of the kink."""

    def sample() -> ParamSet:
        ps = ParamSet()
        for name in ("nodes", "texts", "neg_texts", "view0", "view1"):
            ps.add(name, Tensor(rng.standard_normal((b, d)), requires_grad=True))
        ps.add("log_tau", Tensor(np.log(0.07) + 0.1 * rng.standard_normal(()),
                                 requires_grad=True))
        return ps

    def hinge_gap(ps: ParamSet) -> float:
        n = ps["nodes"].data
        t = ps["neg_texts"].data
        nn = n / np.linalg.norm(n, axis=1, keepdims=True)
        tn = t / np.linalg.norm(t, axis=1, keepdims=True)
        sims = nn @ tn.T
        args = margin + np.diag(sims)[:, None] - sims
        off = ~np.eye(b, dtype=bool)
        return float(np.abs(args[off]).min())

    params = sample()
    while hinge_gap(params) < 1e-3:
        params = sample()

    matched = [rng.standard_normal((2, d)) for _ in range(b)]

    def tau_of(ps):
        return ad.exp(ps["log_tau"])

    cases = {
        "contrastive": lambda ps: contrastive_loss(ps["nodes"], ps["texts"], tau_of(ps)),
        "node_perturbation": lambda ps: node_perturbation_loss(
            [ps["view0"], ps["view1"]], ps["texts"], tau_of(ps)),
        "text_matching": lambda ps: text_matching_loss(
            ps["nodes"], matched, ps["texts"], tau_of(ps)),
        "margin": lambda ps: margin_loss(ps["nodes"], ps["neg_texts"], margin),
        "semantics_opposite": lambda ps: semantics_opposite_loss(
            ps["texts"], ps["neg_texts"]),
    }
    cases["composite"] = lambda ps: (
        cases["contrastive"](ps) + cases["node_perturbation"](ps) * 0.5
        + cases["text_matching"](ps) * 0.25
        + (cases["margin"](ps) + cases["semantics_opposite"](ps)))
    return params, cases


def cmd_gradcheck(args) -> int:
    values = _merge(_GRADCHECK_SPEC, args, {"seed": "seed"})
    if args.print_config:
        sys.stdout.write(_format_config(_GRADCHECK_SPEC, values))
        return 0
    eps = float(values["eps"])
    threshold = float(values["threshold"])
    b, d = int(values["batch_size"]), int(values["dim"])
    worst: dict[str, float] = {}
    for i in range(int(values["num_seeds"])):
        rng = np.random.default_rng(subseed(int(values["seed"]), "gradcheck", i))
        params, cases = _gradcheck_cases(rng, b, d, margin=0.5)
        for name, loss_fn in cases.items():
            fn = loss_fn
            if args.break_gradients:
                fn = lambda ps, base=loss_fn: ad.negate_grad(base(ps))
            err = ad.grad_check(fn, params, eps=eps)
            worst[name] = max(worst.get(name, 0.0), err)
    failed = False
    for name, err in worst.items():
        status = "ok" if err < threshold else "FAIL"
        failed |= err >= threshold
        print(f"{name}\t{err:.3e}\t{status}")
    if failed:
        raise NumericError(f"gradient check exceeded threshold {threshold}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tagclass",
        description="Few- and zero-shot node classification on text-attributed graphs.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, *, model=False, data=False):
        p.add_argument("--config", metavar="PATH", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="master random seed")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--print-config", action="store_true",
                       help="print the effective config and exit")
        if data:
            p.add_argument("--data", metavar="DIR", help="dataset directory")
        if model:
            p.add_argument("--model", metavar="DIR", help="trained model directory")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("pretrain", help="pre-train the encoders")
    common(p, data=True)
    p.add_argument("--mode", choices=("fewshot", "zeroshot"))
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("tune", help="tune a continuous prompt on one episode")
    common(p, data=True, model=True)
    p.set_defaults(fn=cmd_tune)

    p = sub.add_parser("eval", help="run episodic evaluation")
    common(p, data=True, model=True)
    p.add_argument("--prob-average", action="store_true", dest="prob_average",
                   default=None,
                   help="zero-shot only: average positive and negative probabilities")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    common(p)
    p.add_argument("--break-gradients", action="store_true",
                   help=argparse.SUPPRESS)  # self-test: force a failure
    p.set_defaults(fn=cmd_gradcheck)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, TagFormatError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
