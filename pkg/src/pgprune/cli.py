"""Command-line entry point: prune, eval, init-score, compact, oracle-check, make-toy.

Every command takes an optional ``--config`` JSON document; individual flags
override its keys. Exit codes: 0 success, 1 usage or configuration error,
2 data or format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import oracle
from .arch import ArchConfig
from .data import SegmentStore, batches, epochs, load_segments, write_segments
from .errors import ConfigError, DataError, PruneError
from .evaluation import MODES, compact, extract_mask, perplexity, report
from .initialization import builtin_metric, random_init, score_const, sigmoid_norm
from .masking import GranularityMap, read_scores, write_scores
from .model import load_checkpoint, masked_loss_evaluator, save_checkpoint, teacher_sample, toy_checkpoint
from .optimizer import OptimizerConfig, Stage, progressive_schedule, run, steps_per_epoch
from .projection import project

INIT_STRATEGIES = ("sigmoid_norm", "score_const", "random")
SCHEDULES = ("fixed", "progressive")


@dataclass
class RunConfig:
    checkpoint: str | None = None
    corpus: str | None = None
    eval_corpus: str | None = None
    out_dir: str | None = None
    kinds: list[str] = field(default_factory=lambda: ["head", "mlp_channel"])
    retained_fraction: float | None = None
    pruning_rate: float | None = None
    learning_rate: float = 2e-3
    batch_size: int = 8
    n_samples: int = 2
    baseline_window: int = 5
    total_steps: int | None = None
    epochs: float = 1.0
    estimator: str = "baseline"
    seed: int = 0
    warm_start_baseline: bool = False
    carry_baseline: bool = False
    init: str = "sigmoid_norm"
    metric_file: str | None = None
    metric_batches: int = 4
    score_const_c: float = 0.8
    schedule: str = "fixed"
    progressive_start: float = 0.95
    progressive_step: float = 0.05
    budget_mode: str = "unit_count"
    mode: str = "global"
    seq_len: int = 128

    @property
    def rho(self) -> float:
        if self.retained_fraction is not None:
            return self.retained_fraction
        return 1.0 - self.pruning_rate

    def validate(self, needs=()) -> "RunConfig":
        if (self.retained_fraction is None) == (self.pruning_rate is None):
            raise ConfigError("give exactly one of retained_fraction or pruning_rate")
        if not 0 < self.rho <= 1:
            raise ConfigError(f"retained fraction must be in (0, 1], got {self.rho}")
        if self.init not in INIT_STRATEGIES:
            raise ConfigError(f"init must be one of {INIT_STRATEGIES}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.seq_len < 2:
            raise ConfigError("seq_len must be >= 2")
        for key in needs:
            if getattr(self, key) is None:
                raise ConfigError(f"missing required setting {key!r}")
        for key in ("checkpoint", "corpus", "eval_corpus", "metric_file"):
            path = getattr(self, key)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{key}: no such file {path}")
        return self

    def optimizer_config(self) -> OptimizerConfig:
        return OptimizerConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            n_samples=self.n_samples,
            baseline_window=self.baseline_window,
            retained_fraction=self.rho,
            budget_mode=self.budget_mode,
            total_steps=self.total_steps,
            epochs=self.epochs,
            seed=self.seed,
            estimator=self.estimator,
            warm_start_baseline=self.warm_start_baseline,
            carry_baseline=self.carry_baseline,
        )


_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Config file values, then any flag given explicitly on the command line."""
    values: dict = {}
    if getattr(args, "config", None):
        try:
            values = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(values, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(values) - _CONFIG_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in _CONFIG_KEYS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = v
    if "retained_fraction" in values and "pruning_rate" in values:
        # a flag overrides whichever of the pair the file set
        flag = "retained_fraction" if getattr(args, "retained_fraction", None) is not None else None
        flag = flag or ("pruning_rate" if getattr(args, "pruning_rate", None) is not None else None)
        if flag is not None:
            values.pop("pruning_rate" if flag == "retained_fraction" else "retained_fraction")
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _load_corpus(path, arch, seq_len: int) -> SegmentStore:
    store = load_segments(path)
    if store.seq_len < seq_len:
        raise DataError(f"{path}: segments hold {store.seq_len} tokens, seq_len {seq_len} requested")
    store = SegmentStore(store.vocab_size, store.ids[:, :seq_len])
    store.validate_for(arch)
    return store


def _initial_scores(cfg: RunConfig, ckpt, corpus, gmap) -> np.ndarray:
    if cfg.init == "random":
        return random_init(gmap.unit_count, cfg.rho, cfg.seed)
    if cfg.metric_file:
        metric = read_scores(cfg.metric_file, gmap)
    else:
        sample = list(batches(corpus, cfg.batch_size, shuffle=False))[: cfg.metric_batches]
        metric = builtin_metric(ckpt, sample, gmap).x
    if cfg.init == "sigmoid_norm":
        return sigmoid_norm(metric)
    return score_const(extract_mask(metric, cfg.rho, cfg.mode, gmap), cfg.score_const_c)


def _schedule(cfg: RunConfig, n_segments: int) -> list[Stage]:
    total = cfg.total_steps
    if total is None:
        total = int(round(cfg.epochs * steps_per_epoch(n_segments, cfg.batch_size)))
    if cfg.schedule == "fixed" or cfg.rho >= cfg.progressive_start:
        return [Stage(cfg.rho, total)]
    stages = progressive_schedule(cfg.progressive_start, cfg.rho, cfg.progressive_step, 0)
    # split the step budget evenly; earlier stages absorb the remainder
    per_stage, extra = divmod(total, len(stages))
    return [Stage(st.retained_fraction, per_stage + (k < extra)) for k, st in enumerate(stages)]


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _ppl_pair(ckpt, corpus, mask, gmap):
    if corpus is None:
        return None, None
    return perplexity(ckpt, corpus, None, gmap), perplexity(ckpt, corpus, mask, gmap)


def cmd_prune(cfg: RunConfig) -> int:
    cfg.validate(needs=("checkpoint", "corpus", "out_dir"))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", asdict(cfg))
    ckpt = load_checkpoint(cfg.checkpoint)
    gmap = GranularityMap.from_arch(ckpt.arch, cfg.kinds)
    corpus = _load_corpus(cfg.corpus, ckpt.arch, cfg.seq_len)
    eval_corpus = _load_corpus(cfg.eval_corpus, ckpt.arch, cfg.seq_len) if cfg.eval_corpus else None
    opt = cfg.optimizer_config()
    init_s = _initial_scores(cfg, ckpt, corpus, gmap)
    stream = epochs(corpus, cfg.batch_size, cfg.seed)
    with open(out / "train_log.ndjson", "w") as log:
        result = run(
            masked_loss_evaluator(ckpt, gmap),
            stream,
            init_s,
            opt,
            _schedule(cfg, corpus.count),
            weights=gmap.param_counts.astype(np.float64),
            callback=lambda rec: log.write(json.dumps(rec, sort_keys=True) + "\n"),
        )
    write_scores(out / "scores.bin", result.s, gmap, source="policy_gradient")
    weights = gmap.param_counts if cfg.budget_mode == "param_weighted" else None
    mask = extract_mask(result.s, cfg.rho, cfg.mode, gmap, weights)
    before, after = _ppl_pair(ckpt, eval_corpus, mask, gmap)
    rep = report(mask, gmap, cfg.rho, cfg.mode, before, after)
    _write_json(out / "report.json", rep.to_dict())
    rep.write_csv(out / "sparsity.csv")
    print(f"retained {rep.retained_units}/{rep.total_units} units, {rep.param_fraction:.4f} of parameters")
    if after is not None:
        print(f"perplexity {before:.4f} -> {after:.4f}")
    return 0


def _mask_from_scores(cfg: RunConfig, scores_path, gmap) -> np.ndarray:
    if scores_path is None:
        if cfg.rho < 1:
            raise ConfigError("pruning without a score file is undefined; pass --scores")
        return np.ones(gmap.unit_count, dtype=np.int8)
    s = read_scores(scores_path, gmap)
    weights = gmap.param_counts if cfg.budget_mode == "param_weighted" else None
    return extract_mask(s, cfg.rho, cfg.mode, gmap, weights)


def cmd_eval(cfg: RunConfig, scores_path=None, report_path=None) -> int:
    cfg.validate(needs=("checkpoint", "corpus"))
    ckpt = load_checkpoint(cfg.checkpoint)
    gmap = GranularityMap.from_arch(ckpt.arch, cfg.kinds)
    corpus = _load_corpus(cfg.corpus, ckpt.arch, cfg.seq_len)
    mask = _mask_from_scores(cfg, scores_path, gmap)
    before, after = _ppl_pair(ckpt, corpus, mask, gmap)
    rep = report(mask, gmap, cfg.rho, cfg.mode, before, after)
    if report_path:
        _write_json(Path(report_path), rep.to_dict())
    print(json.dumps({"ppl_dense": before, "ppl_pruned": after, "param_fraction": rep.param_fraction}))
    return 0


def cmd_compact(cfg: RunConfig, scores_path, output) -> int:
    cfg.validate(needs=("checkpoint",))
    ckpt = load_checkpoint(cfg.checkpoint)
    gmap = GranularityMap.from_arch(ckpt.arch, cfg.kinds)
    small = compact(ckpt, _mask_from_scores(cfg, scores_path, gmap), gmap)
    save_checkpoint(output, small)
    print(f"wrote {output}: {small.param_count()} of {ckpt.param_count()} parameters")
    return 0


def cmd_init_score(cfg: RunConfig, output, raw: bool = False) -> int:
    cfg.validate(needs=("checkpoint",) if cfg.init == "random" else ("checkpoint", "corpus"))
    ckpt = load_checkpoint(cfg.checkpoint)
    gmap = GranularityMap.from_arch(ckpt.arch, cfg.kinds)
    if raw:
        corpus = _load_corpus(cfg.corpus, ckpt.arch, cfg.seq_len)
        sample = list(batches(corpus, cfg.batch_size, shuffle=False))[: cfg.metric_batches]
        write_scores(output, builtin_metric(ckpt, sample, gmap).x, gmap, source="builtin_metric")
        return 0
    corpus = _load_corpus(cfg.corpus, ckpt.arch, cfg.seq_len) if cfg.corpus else None
    s = project(_initial_scores(cfg, ckpt, corpus, gmap), cfg.rho * gmap.unit_count)
    write_scores(output, s, gmap, source=cfg.init)
    return 0


def cmd_oracle_check(quick: bool = False, projector=None) -> int:
    results = oracle.run_property_checks(projector or project, quick=quick)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_make_toy(out_dir, seed: int, n_train: int, n_heldout: int, seq_len: int, arch: ArchConfig) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = toy_checkpoint(arch, seed)
    save_checkpoint(out / "model.ckpt", ckpt)
    write_segments(out / "train.seg", teacher_sample(ckpt, seed, n_train, seq_len))
    write_segments(out / "heldout.seg", teacher_sample(ckpt, seed + 10_000, n_heldout, seq_len))
    print(f"wrote {out}/model.ckpt, train.seg, heldout.seg")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags override its keys")
    p.add_argument("--checkpoint")
    p.add_argument("--corpus")
    p.add_argument("--kinds", nargs="+", choices=("head", "mlp_channel", "layer"))
    rho = p.add_mutually_exclusive_group()
    rho.add_argument("--retained-fraction", dest="retained_fraction", type=float)
    rho.add_argument("--pruning-rate", dest="pruning_rate", type=float)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--budget-mode", dest="budget_mode", choices=("unit_count", "param_weighted"))
    p.add_argument("--seq-len", dest="seq_len", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pgprune", description="Structured pruning by policy-gradient mask search.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prune", help="optimize retention scores and extract a mask")
    _add_run_flags(p)
    p.add_argument("--eval-corpus", dest="eval_corpus")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--baseline-window", dest="baseline_window", type=int)
    p.add_argument("--total-steps", dest="total_steps", type=int)
    p.add_argument("--epochs", type=float)
    p.add_argument("--estimator", choices=("baseline", "plain"))
    p.add_argument("--warm-start-baseline", dest="warm_start_baseline", action="store_true", default=None)
    p.add_argument("--carry-baseline", dest="carry_baseline", action="store_true", default=None)
    p.add_argument("--init", choices=INIT_STRATEGIES)
    p.add_argument("--metric-file", dest="metric_file")
    p.add_argument("--schedule", choices=SCHEDULES)

    p = sub.add_parser("eval", help="perplexity of the dense and pruned model")
    _add_run_flags(p)
    p.add_argument("--scores")
    p.add_argument("--report")

    p = sub.add_parser("compact", help="slice pruned units out of the checkpoint")
    _add_run_flags(p)
    p.add_argument("--scores")
    p.add_argument("--output", required=True)

    p = sub.add_parser("init-score", help="write initial scores (or the raw builtin metric)")
    _add_run_flags(p)
    p.add_argument("--init", choices=INIT_STRATEGIES)
    p.add_argument("--metric-file", dest="metric_file")
    p.add_argument("--raw-metric", action="store_true", help="write the unnormalized builtin metric")
    p.add_argument("--output", required=True)

    p = sub.add_parser("oracle-check", help="run the enumeration oracle property suite")
    p.add_argument("--quick", action="store_true")

    p = sub.add_parser("make-toy", help="write a random toy checkpoint and teacher-sampled corpora")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--segments", type=int, default=4096)
    p.add_argument("--heldout", type=int, default=64)
    p.add_argument("--seq-len", type=int, default=128)
    p.add_argument("--vocab-size", type=int, default=512)
    p.add_argument("--d-model", type=int, default=128)
    p.add_argument("--n-layers", type=int, default=4)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--d-ff", type=int, default=512)
    return parser


def _dispatch(args) -> int:
    if args.command == "oracle-check":
        return cmd_oracle_check(args.quick)
    if args.command == "make-toy":
        arch = ArchConfig(args.vocab_size, args.d_model, args.n_layers, args.n_heads, args.d_ff, args.seq_len)
        return cmd_make_toy(args.out_dir, args.seed, args.segments, args.heldout, args.seq_len, arch)
    cfg = resolve_config(args)
    if args.command == "prune":
        return cmd_prune(cfg)
    if args.command == "eval":
        return cmd_eval(cfg, args.scores, args.report)
    if args.command == "compact":
        return cmd_compact(cfg, args.scores, args.output)
    if args.command == "init-score":
        if args.raw_metric:
            # the raw metric ignores the budget; any valid fraction will do
            if cfg.retained_fraction is None and cfg.pruning_rate is None:
                cfg.retained_fraction = 1.0
        return cmd_init_score(cfg, args.output, raw=args.raw_metric)
    raise ConfigError(f"unknown command {args.command}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except PruneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
