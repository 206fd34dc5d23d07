"""Command-line interface.

Subcommands: gen-weights, prefill, flops-table, ablate, correlate.

Every run writes ``report.csv``, ``report.json`` and ``manifest.json`` into
the output directory (``--out-dir``, else ``$DASH_OUT_DIR``, else
``./dash_out``). Reports are deterministic; wall-clock timings live only in
the manifest.

Exit codes: 0 success, 1 usage error, 2 input/contract error, 3 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from . import flops, weightfile
from .analysis import (
    depth_fidelity,
    layer_histograms,
    run_direction_ablation,
    run_schedule_ablation,
    run_signal_ablation,
    set_iou,
)
from .errors import CapacityError, ConfigError, ContractError, InputError
from .model import ModelConfig, decode_greedy, init_weights, prefill_full
from .policy import HaltingConfig, dash_prefill, kept_length

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class InvariantError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- config


MODEL_KEYS = {"num_layers", "hidden_dim", "num_heads", "head_dim", "ffn_dim", "vocab_size", "max_seq_len", "norm_eps", "rope_base"}
HALTING_KEYS = {
    "start_layer": int,
    "pruning_ratio": float,
    "signal": str,
    "direction": str,
    "mode": str,
    "shots": int,
    "keep_first_n": int,
    "keep_last_n": int,
    "rng_seed": int,
}
RUN_KEYS = {"steps": int, "seed": int}
KEY_ALIASES = {"rho": "pruning_ratio", "c": "pruning_ratio", "compression_ratio": "pruning_ratio"}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key or not value:
            raise UsageError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key = KEY_ALIASES.get(key, key)
        if key not in MODEL_KEYS and key not in HALTING_KEYS and key not in RUN_KEYS:
            raise UsageError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def load_config(path: Optional[str]) -> dict[str, str]:
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config_text(text, path)


def model_config_from(values: dict[str, str]) -> ModelConfig:
    model = {k: v for k, v in values.items() if k in MODEL_KEYS}
    try:
        return ModelConfig.from_dict(model)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad model config: {exc}") from exc


def halting_config_from(values: dict[str, str], args: argparse.Namespace, num_layers: int) -> HaltingConfig:
    merged: dict[str, Any] = {}
    for key, conv in HALTING_KEYS.items():
        if key in values:
            try:
                merged[key] = conv(values[key])
            except ValueError as exc:
                raise UsageError(f"bad value for {key}: {values[key]!r}") from exc
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    merged.setdefault("start_layer", int(0.4 * num_layers))
    return HaltingConfig(**merged)


# ---------------------------------------------------------------- I/O


def parse_tokens(text: str, source: str) -> list[int]:
    try:
        return [int(tok) for tok in text.split()]
    except ValueError as exc:
        raise InputError(f"{source}: token ids must be integers ({exc})") from exc


def read_prompt(args) -> list[int]:
    if args.prompt is not None:
        tokens = parse_tokens(args.prompt, "--prompt")
    elif args.prompt_file == "-":
        tokens = parse_tokens(sys.stdin.read(), "<stdin>")
    elif args.prompt_file is not None:
        tokens = parse_tokens(_read_text(args.prompt_file), args.prompt_file)
    else:
        raise UsageError("give --prompt or --prompt-file")
    if not tokens:
        raise InputError("prompt is empty")
    return tokens


def read_prompts(path: str) -> list[list[int]]:
    text = sys.stdin.read() if path == "-" else _read_text(path)
    prompts = [parse_tokens(line, f"{path}:{i}") for i, line in enumerate(text.splitlines(), 1) if line.strip()]
    if not prompts:
        raise InputError(f"{path}: no prompts")
    return prompts


def _read_text(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc


def load_weights(path: str):
    try:
        return weightfile.load(path)
    except OSError as exc:
        raise InputError(f"cannot read weights {path}: {exc.strerror}") from exc
    except InputError as exc:
        raise InputError(f"{path}: {exc}") from exc


def out_dir(args) -> Path:
    path = Path(args.out_dir or os.environ.get("DASH_OUT_DIR") or "dash_out")
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {path}: {exc.strerror}") from exc
    return path


def csv_text(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def json_text(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_file(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise InputError(f"cannot write {path}: {exc.strerror}") from exc


def git_hash(text: str) -> str:
    data = text.encode()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def logits_digest(logits: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(logits, dtype="<f4").tobytes()).hexdigest()


class Run:
    """Collects timings and writes the report/manifest trio."""

    def __init__(self, command: str, args, effective_config: dict):
        self.command = command
        self.args = args
        self.config = effective_config
        self.timing: dict[str, float] = {}
        self._start = time.perf_counter()

    def timed(self, phase: str, fn: Callable, *a, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*a, **kw)
        finally:
            self.timing[phase] = self.timing.get(phase, 0.0) + (time.perf_counter() - t0) * 1e3

    def finish(self, header, rows, report: dict, text: str) -> Path:
        directory = out_dir(self.args)
        csv_body = csv_text(header, rows)
        json_body = json_text(report)
        write_file(directory / "report.csv", csv_body)
        write_file(directory / "report.json", json_body)
        self.timing["total"] = (time.perf_counter() - self._start) * 1e3
        manifest = {
            "command": self.command,
            "config_path": getattr(self.args, "config", None),
            "seed": getattr(self.args, "seed", None),
            "output_dir": str(directory),
            "timing_ms": {k: round(v, 3) for k, v in self.timing.items()},
            "config_hash": git_hash(json.dumps(self.config, sort_keys=True)),
            "config": self.config,
        }
        write_file(directory / "manifest.json", json_text(manifest))
        fmt = getattr(self.args, "format", "text")
        sys.stdout.write(csv_body if fmt == "csv" else json_body if fmt == "json" else text)
        return directory


# ---------------------------------------------------------------- commands


def cmd_gen_weights(args) -> int:
    values = load_config(args.config)
    config = model_config_from(values)
    seed = args.seed if args.seed is not None else int(values.get("seed", 0))
    weights = init_weights(config, seed)
    run = Run("gen-weights", args, {"model": asdict(config), "seed": seed})
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        checksum = weightfile.save(weights, out)
    except OSError as exc:
        raise InputError(f"cannot write weights {out}: {exc.strerror}") from exc
    report = {"path": str(out), "sha256": checksum, "bytes": out.stat().st_size, "model": asdict(config), "seed": seed}
    run.finish(["path", "sha256", "bytes"], [[str(out), checksum, report["bytes"]]], report, f"{checksum}  {out}\n")
    return EXIT_OK


def _flops_cost_model(args, config: Optional[ModelConfig]) -> flops.CostModel:
    if config is not None:
        return flops.CostModel(config.num_layers, config.hidden_dim, config.ffn_dim)
    return flops.CostModel(
        args.layers or flops.PAPER_MODEL.num_layers,
        args.hidden or flops.PAPER_MODEL.hidden_dim,
        args.ffn or flops.PAPER_MODEL.ffn_dim,
    )


def cmd_prefill(args) -> int:
    values = load_config(args.config)
    if args.synthetic_T is not None:
        return _prefill_dry_run(args, values)
    if args.weights is None:
        raise UsageError("prefill needs --weights (or --synthetic-T for a FLOPs-only run)")
    weights = load_weights(args.weights)
    config = weights.config
    cfg = halting_config_from(values, args, config.num_layers)
    steps = args.steps if args.steps is not None else int(values.get("steps", 0))
    tokens = read_prompt(args)
    effective = {"halting": asdict(cfg), "model": asdict(config), "steps": steps, "weights_sha256": weights.checksum()}
    run = Run("prefill", args, effective)

    vanilla = run.timed("prefill", prefill_full, tokens, weights, config)
    result = run.timed("prefill", dash_prefill, tokens, weights, config, cfg)
    vanilla_gen = run.timed("decode", decode_greedy, vanilla.kv, vanilla.logits, steps, weights, config)
    decode_lengths: list[list[int]] = []

    def record(step, layer, n):
        if layer == 0:
            decode_lengths.append([])
        decode_lengths[-1].append(n)

    prompt_kv = result.kv_lengths()
    dash_gen = run.timed("decode", decode_greedy, result.kv, result.logits, steps, weights, config, record)
    for step, lengths in enumerate(decode_lengths):
        expected = [n + step + 1 for n in prompt_kv]
        if lengths != expected:
            raise InvariantError(f"decode step {step}: attended {lengths}, cache lengths {expected}")

    T = len(tokens)
    model = _flops_cost_model(args, config)
    formula = flops.speedup_report(T, model, cfg.start_layer, cfg.pruning_ratio, n_kept=len(result.active_set))
    executed_full = sum(flops.per_layer_flops(T, model.hidden_dim, model.ffn_dim) for _ in range(model.num_layers))
    executed_dash = sum(flops.per_layer_flops(n, model.hidden_dim, model.ffn_dim) for n in prompt_kv)
    delta = float(np.max(np.abs(result.logits.astype(np.float64) - vanilla.logits.astype(np.float64))))

    report = {
        "T": T,
        "halting": asdict(cfg),
        "vanilla": {"logits_sha256": logits_digest(vanilla.logits), "generated": vanilla_gen},
        "dash": {
            "logits_sha256": logits_digest(result.logits),
            "logit_delta_vs_vanilla": delta,
            "per_layer_lengths": result.per_layer_lengths,
            "kv_lengths": prompt_kv,
            "kept_indices": list(result.active_set.kept_indices),
            "halted_indices": list(result.active_set.halted_indices),
            "stages": [{"layer": s.decision_layer, "kept": len(s)} for s in result.stages],
            "generated": dash_gen,
            "decode_kv_lengths": decode_lengths,
        },
        "flops": {
            "n": formula.n,
            "n_kept": formula.n_kept,
            "C_full": formula.C_full,
            "C_ours": formula.C_ours,
            "r_flops": formula.r_flops,
            "s_flops": formula.s_flops,
            "executed_full": executed_full,
            "executed_dash": executed_dash,
        },
    }
    header = ["variant", "T", "kept_count", "logits_sha256", "logit_delta_vs_vanilla", "per_layer_lengths", "kv_lengths", "generated"]
    join = lambda xs: ";".join(str(x) for x in xs)
    rows = [
        ["vanilla", T, T, report["vanilla"]["logits_sha256"], 0.0, join([T] * config.num_layers), join([T] * config.num_layers), join(vanilla_gen)],
        ["dash", T, len(result.active_set), report["dash"]["logits_sha256"], delta, join(result.per_layer_lengths), join(prompt_kv), join(dash_gen)],
    ]
    if args.histogram_bins:
        _write_histograms(args, tokens, weights, config, args.histogram_bins)
    text = (
        f"T={T} kept={len(result.active_set)} start_layer={cfg.start_layer} ratio={cfg.pruning_ratio}\n"
        f"per_layer_lengths={result.per_layer_lengths}\n"
        f"kv_lengths={prompt_kv}\n"
        f"logit_delta_vs_vanilla={delta:.6g}\n"
        f"s_flops={formula.s_flops:.2f}x\n"
    )
    run.finish(header, rows, report, text)
    return EXIT_OK


def _write_histograms(args, tokens, weights, config, bins: int) -> None:
    rows = []
    for kind, relative in (("raw", False), ("relative", True)):
        for hist in layer_histograms(tokens, weights, config, bins, relative=relative):
            for lo, hi, count in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.counts):
                rows.append([kind, hist.layer, repr(lo), repr(hi), count])
    write_file(out_dir(args) / "histogram.csv", csv_text(["kind", "layer", "bin_lo", "bin_hi", "count"], rows))


def _prefill_dry_run(args, values) -> int:
    config = load_weights(args.weights).config if args.weights else None
    model = _flops_cost_model(args, config)
    cfg = halting_config_from(values, args, model.num_layers)
    T = args.synthetic_T
    if cfg.mode == "protected" and cfg.keep_first_n + cfg.keep_last_n > T:
        raise ContractError("keep_first_n + keep_last_n exceeds --synthetic-T")
    n_kept = kept_length(T, cfg.pruning_ratio, cfg.keep_first_n, cfg.keep_last_n, cfg.mode)
    rep = flops.speedup_report(T, model, cfg.start_layer, cfg.pruning_ratio, n_kept=n_kept)
    report = {"T": T, "dry_run": True, "halting": asdict(cfg), "model": asdict(model), "flops": asdict(rep)}
    run = Run("prefill", args, {"halting": asdict(cfg), "model": asdict(model), "synthetic_T": T})
    header = ["n", "n_kept", "C_full", "C_ours", "r_flops_pct", "s_flops"]
    rows = [[rep.n, rep.n_kept, rep.C_full, rep.C_ours, f"{rep.r_flops_pct:.2f}", f"{rep.s_flops_rounded:.2f}"]]
    run.finish(header, rows, report, f"n={T} n_kept={n_kept} r_flops={rep.r_flops_pct:.2f}% s_flops={rep.s_flops_rounded:.2f}x\n")
    return EXIT_OK


def cmd_flops_table(args) -> int:
    values = load_config(args.config)
    if args.paper_defaults:
        model = flops.PAPER_MODEL
        start, ratio = flops.PAPER_START_LAYER, flops.PAPER_RATIO
        first, last = flops.PAPER_KEEP_FIRST, flops.PAPER_KEEP_LAST
        lengths = list(flops.PAPER_LENGTHS)
    else:
        model = _flops_cost_model(args, None)
        start = _pick(args.start_layer, values, "start_layer", int, int(0.4 * model.num_layers))
        ratio = _pick(args.pruning_ratio, values, "pruning_ratio", float, flops.PAPER_RATIO)
        first = _pick(args.keep_first_n, values, "keep_first_n", int, flops.PAPER_KEEP_FIRST)
        last = _pick(args.keep_last_n, values, "keep_last_n", int, flops.PAPER_KEEP_LAST)
        lengths = args.lengths if args.lengths is not None else list(flops.PAPER_LENGTHS)
    if not 0 <= ratio < 1:
        raise ConfigError(f"ratio must lie in [0, 1), got {ratio}")
    effective = {"model": asdict(model), "start_layer": start, "ratio": ratio, "keep_first_n": first, "keep_last_n": last, "lengths": lengths}
    run = Run("flops-table", args, effective)
    reports = run.timed("flops", flops.emit_table7, lengths, model, start, ratio, first, last)
    report = {**effective, "rows": [asdict(r) | {"r_flops_pct": r.r_flops_pct, "s_flops_rounded": r.s_flops_rounded} for r in reports]}
    run.finish(list(flops.CSV_HEADER), flops.table_rows(reports), report, flops.to_text(reports))
    return EXIT_OK


def _pick(flag, values, key, conv, default):
    if flag is not None:
        return flag
    if key in values:
        try:
            return conv(values[key])
        except ValueError as exc:
            raise UsageError(f"bad value for {key}: {values[key]!r}") from exc
    return default


def _parallel_map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))  # map keeps input order


def cmd_ablate(args) -> int:
    values = load_config(args.config)
    weights = load_weights(args.weights)
    config = weights.config
    cfg = halting_config_from(values, args, config.num_layers)
    prompts = read_prompts(args.prompts)
    shots = args.shots_list or [1, 2, 3, 4]
    run = Run("ablate", args, {"which": args.which, "halting": asdict(cfg), "shots": shots, "weights_sha256": weights.checksum()})

    def one(tokens):
        if args.which == "direction":
            _, rows, pairwise = run_direction_ablation(tokens, weights, config, cfg)
            return rows, {f"{a}|{b}": v for (a, b), v in pairwise.items()}
        if args.which == "signal":
            res, rows = run_signal_ablation(tokens, weights, config, cfg)
            return rows, {"delta_attn|delta_block": _iou(res["delta_attn"], res["delta_block"])}
        _, rows = run_schedule_ablation(tokens, weights, config, cfg, shots)
        return rows, {}

    per_prompt = run.timed("prefill", _parallel_map, one, prompts, args.jobs)
    variants: dict[str, list] = {}
    pair_stats: dict[str, list[float]] = {}
    prompt_rows = []
    for i, (rows, pairs) in enumerate(per_prompt):
        for row in rows:
            variants.setdefault(row.variant, []).append(row)
            prompt_rows.append({"prompt": i, "variant": row.variant, "kept_count": row.kept_count,
                                "kept_indices": list(row.kept_indices), "logit_l2_delta_vs_vanilla": row.logit_l2_delta_vs_vanilla})
        for key, v in pairs.items():
            pair_stats.setdefault(key, []).append(v)
    if args.jobs > 1:
        directory = out_dir(args)
        header = ["variant", "kept_count", "logit_l2_delta_vs_vanilla"]
        for i, (rows, _) in enumerate(per_prompt):
            body = csv_text(header, [[r.variant, r.kept_count, repr(r.logit_l2_delta_vs_vanilla)] for r in rows])
            write_file(directory / f"prompt_{i:03d}.csv", body)

    header = ["variant", "prompts", "kept_count", "logit_l2_delta_vs_vanilla"]
    rows = []
    for name, rs in variants.items():
        kept = float(np.mean([r.kept_count for r in rs]))
        rows.append([name, len(rs), f"{kept:g}", repr(float(np.mean([r.logit_l2_delta_vs_vanilla for r in rs])))])
    report = {
        "which": args.which,
        "halting": asdict(cfg),
        "rows": [dict(zip(header, r)) for r in rows],
        "pairwise_kept_iou": {k: float(np.mean(v)) for k, v in pair_stats.items()},
        "per_prompt": prompt_rows,
    }
    text = "\n".join(f"{r[0]:<12} kept={r[2]:<8} logit_l2_delta={float(r[3]):.6g}" for r in rows) + "\n"
    run.finish(header, rows, report, text)
    return EXIT_OK


def _iou(a, b) -> float:
    return set_iou(a.active_set.kept_indices, b.active_set.kept_indices)


def cmd_correlate(args) -> int:
    values = load_config(args.config)
    weights = load_weights(args.weights)
    config = weights.config
    layers = args.layers if args.layers is not None else list(range(config.num_layers))
    bad = [l for l in layers if not 0 <= l < config.num_layers]
    if bad:
        raise UsageError(f"layer indices {bad} out of range for a {config.num_layers}-layer model")
    if not 0 < args.fraction <= 1:
        raise UsageError("--fraction must lie in (0, 1]")
    prompts = read_prompts(args.prompts)
    run = Run("correlate", args, {"layers": layers, "fraction": args.fraction, "self_correlation": args.self_correlation,
                                  "weights_sha256": weights.checksum()})
    per_prompt = run.timed(
        "prefill", _parallel_map,
        lambda toks: depth_fidelity(toks, weights, config, layers, args.fraction, args.self_correlation),
        prompts, args.jobs,
    )
    header = ["layer", "spearman", "iou"]
    rows = []
    for j, layer in enumerate(layers):
        rho = float(np.mean([p[j].spearman_rho for p in per_prompt]))
        iou = float(np.mean([p[j].topk_iou for p in per_prompt]))
        rows.append([layer, repr(rho), repr(iou)])
    report = {"fraction": args.fraction, "prompts": len(prompts), "self_correlation": args.self_correlation,
              "rows": [{"layer": r[0], "spearman": float(r[1]), "iou": float(r[2])} for r in rows]}
    text = "\n".join(f"layer {r[0]:>3}  rho={float(r[1]):+.4f}  iou={float(r[2]):.4f}" for r in rows) + "\n"
    run.finish(header, rows, report, text)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated integer list, got {text!r}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", help="report directory (default $DASH_OUT_DIR or ./dash_out)")
    fmt = p.add_mutually_exclusive_group()
    fmt.add_argument("--json", dest="format", action="store_const", const="json", help="print the JSON report")
    fmt.add_argument("--csv", dest="format", action="store_const", const="csv", help="print the CSV report")
    p.set_defaults(format="text")


def _add_halting(p: argparse.ArgumentParser) -> None:
    p.add_argument("--start-layer", dest="start_layer", type=int)
    p.add_argument("--rho", "--c", dest="pruning_ratio", type=float, help="pruning ratio (compression ratio in protected mode)")
    p.add_argument("--signal", choices=["delta_attn", "delta_block"])
    p.add_argument("--direction", choices=["keep_high", "keep_low", "random"])
    p.add_argument("--mode", choices=["pure_topk", "protected"])
    p.add_argument("--shots", type=int)
    p.add_argument("--keep-first", dest="keep_first_n", type=int)
    p.add_argument("--keep-last", dest="keep_last_n", type=int)
    p.add_argument("--rng-seed", dest="rng_seed", type=int)


def _add_cost_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--layers", type=int, help="number of layers L")
    p.add_argument("--hidden", type=int, help="hidden size d")
    p.add_argument("--ffn", type=int, help="FFN intermediate size m")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dashprefill", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-weights", help="write a seeded DASHW1 weight file")
    _add_common(p)
    p.add_argument("--out", required=True, help="weight file path")
    p.set_defaults(func=cmd_gen_weights)

    p = sub.add_parser("prefill", help="vanilla and halting prefill (+ greedy decode)")
    _add_common(p)
    _add_halting(p)
    _add_cost_model(p)
    p.add_argument("--weights")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--prompt", help="whitespace-separated token ids")
    src.add_argument("--prompt-file", help="file of token ids, '-' for stdin")
    p.add_argument("--steps", type=int, help="greedy decode steps")
    p.add_argument("--synthetic-T", dest="synthetic_T", type=int, help="FLOPs-only dry run for this prompt length")
    p.add_argument("--histogram-bins", type=int, default=0, help="also write histogram.csv with this many bins")
    p.set_defaults(func=cmd_prefill)

    p = sub.add_parser("flops-table", help="theoretical FLOPs reduction/speedup sweep")
    _add_common(p)
    _add_cost_model(p)
    p.add_argument("--paper-defaults", action="store_true", help="L=28 d=3584 m=18944 l_s=11 c=0.667 64/32")
    p.add_argument("--start-layer", dest="start_layer", type=int)
    p.add_argument("--c", "--rho", dest="pruning_ratio", type=float)
    p.add_argument("--keep-first", dest="keep_first_n", type=int)
    p.add_argument("--keep-last", dest="keep_last_n", type=int)
    p.add_argument("--lengths", type=_int_list, help="comma-separated prompt lengths")
    p.set_defaults(func=cmd_flops_table)

    p = sub.add_parser("ablate", help="direction / signal / schedule ablations")
    _add_common(p)
    _add_halting(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--prompts", required=True, help="one prompt of token ids per line")
    p.add_argument("--which", required=True, choices=["direction", "signal", "schedule"])
    p.add_argument("--shots-list", type=_int_list, help="schedules to compare (default 1,2,3,4)")
    p.add_argument("--jobs", type=int, default=1, help="prompts processed concurrently")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("correlate", help="delta-attn vs full-attention ranking fidelity")
    _add_common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--prompts", required=True)
    p.add_argument("--layers", type=_int_list)
    p.add_argument("--fraction", type=float, default=0.3)
    p.add_argument("--self-correlation", action="store_true", help="compare delta-attn with itself")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_correlate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InputError, ContractError, CapacityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InvariantError, AssertionError) as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
