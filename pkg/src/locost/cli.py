"""``locost`` command line: gsg, pretrain, finetune, generate, bench, gradcheck, kernel-viz."""

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import bench, gsg
from .checkpoint import CheckpointError
from .graph import grad_check
from .model import EOS, UNK, Model, ModelConfig, forward_loss, greedy_generate
from .nn import ConfigError
from .train import (
    AdamWState,
    Schedule,
    load_training_checkpoint,
    read_loss_csv,
    save_training_checkpoint,
    train_loop,
    write_loss_csv,
)

log = logging.getLogger("locost")

DEFAULT_SEED = 42


class DataError(ValueError):
    """Malformed input file."""


@dataclasses.dataclass
class RunConfig:
    """Training run settings; ``model`` mirrors ModelConfig."""

    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    schedule: str = "constant"
    lr: float = None  # None: 5e-4 for "constant", 1.0 for "inverse-sqrt"
    warmup: int = 10_000
    batch_size: int = 8
    ckpt_every: int = 0
    clip: float = 0.0
    alpha: float = 0.2
    max_src_len: int = 512
    max_tgt_len: int = 128


DEFAULT_BASE_LR = {"constant": 5e-4, "inverse-sqrt": 1.0}
RUN_KEYS = {f.name for f in dataclasses.fields(RunConfig)} - {"model"}
MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)}


def load_run_config(path=None, overrides=None):
    """Defaults < JSON file < explicit flag overrides (``None`` values ignored)."""
    data = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(data) - RUN_KEYS - MODEL_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    model = ModelConfig(**{k: v for k, v in data.items() if k in MODEL_KEYS})
    run = RunConfig(model=model, **{k: v for k, v in data.items() if k in RUN_KEYS})
    run.model_keys = sorted(set(data) & MODEL_KEYS)
    if run.lr is None:
        run.lr = DEFAULT_BASE_LR.get(run.schedule, 5e-4)
    if run.batch_size < 1 or run.ckpt_every < 0 or run.max_src_len < 1 or run.max_tgt_len < 1:
        raise ConfigError("batch_size, max_src_len, max_tgt_len must be >= 1 and ckpt_every >= 0")
    return run


def read_jsonl(path):
    """Yield ``(line_number, object)``; blank lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _field(path, lineno, obj, key):
    value = obj.get(key)
    if not isinstance(value, str):
        raise DataError(f"{path}:{lineno}: missing string field {key!r}")
    return value


class _Output:
    """Context manager over a file path or stdout ("-")."""

    def __init__(self, path):
        self.path = path

    def __enter__(self):
        if self.path in (None, "-"):
            self.fh = sys.stdout
        else:
            self.fh = open(self.path, "w", encoding="utf-8")
        return self.fh

    def __exit__(self, *exc):
        if self.fh is not sys.stdout:
            self.fh.close()
        return False


def cmd_gsg(args):
    written = skipped = 0
    with _Output(args.output) as out:
        for lineno, obj in read_jsonl(args.input):
            text = _field(args.input, lineno, obj, "text")
            try:
                pair = gsg.gsg_select(gsg.split_sentences(text), args.alpha)
            except gsg.SkipDocument:
                skipped += 1
                continue
            except ValueError as exc:  # empty text
                log.warning("%s:%d: %s", args.input, lineno, exc)
                skipped += 1
                continue
            record = {"source": pair.pseudo_source, "summary": pair.pseudo_summary, "selected_indices": list(pair.selected)}
            out.write(json.dumps(record, ensure_ascii=False) + "\n")
            written += 1
    print(f"gsg: wrote {written} pairs, skipped {skipped} documents", file=sys.stderr)
    return 0


def _text_pairs(path, pretrain, alpha):
    """(source, summary) strings; pretraining accepts raw "text" documents and applies GSG."""
    pairs = []
    for lineno, obj in read_jsonl(path):
        if pretrain and "text" in obj and "source" not in obj:
            try:
                pair = gsg.gsg_select(gsg.split_sentences(_field(path, lineno, obj, "text")), alpha)
            except gsg.SkipDocument:
                continue
            pairs.append((pair.pseudo_source, pair.pseudo_summary))
        else:
            pairs.append((_field(path, lineno, obj, "source"), _field(path, lineno, obj, "summary")))
    return pairs


def _encode_pairs(vocab, pairs, run):
    data = []
    for src, tgt in pairs:
        s = vocab.encode(src)[: run.max_src_len]
        t = vocab.encode(tgt)[: run.max_tgt_len - 1] + [EOS]
        if s:
            data.append((s, t))
    return data


def _train_command(args, pretrain):
    overrides = {"lr": args.lr, "batch_size": args.batch_size, "ckpt_every": args.ckpt_every, "schedule": args.schedule}
    run = load_run_config(args.config, overrides)
    texts = _text_pairs(args.data, pretrain, run.alpha)
    start, state, meta = 0, None, {}
    init = args.resume or args.init
    if init:
        model, state, meta = load_training_checkpoint(init)
        if "vocab" not in meta:
            raise ConfigError(f"{init}: checkpoint carries no vocabulary")
        diff = {k: (getattr(run.model, k), getattr(model.config, k)) for k in run.model_keys if getattr(run.model, k) != getattr(model.config, k)}
        if diff:
            raise ConfigError(f"config disagrees with checkpoint {init}: {diff}")
        vocab = gsg.Vocab(meta["vocab"])
        if len(vocab) > model.config.vocab:
            raise ConfigError(f"checkpoint vocabulary has {len(vocab)} tokens but the model embeds {model.config.vocab}")
        if args.resume:
            start = int(meta.get("step", 0))
        else:
            state = None
    else:
        vocab = gsg.build_vocab((t for pair in texts for t in pair), run.model.vocab)
        model = Model(run.model, seed=args.seed)
    data = _encode_pairs(vocab, texts, run)
    if not data:
        raise DataError(f"{args.data}: no usable training pairs")
    os.makedirs(args.out, exist_ok=True)
    meta = {"vocab": vocab.tokens, "phase": "pretrain" if pretrain else "finetune"}
    if args.steps < 0:
        raise ValueError("--steps must be >= 0")
    if args.steps == 0:
        path = os.path.join(args.out, f"ckpt_{start:07d}.lcst")
        save_training_checkpoint(path, model, state or AdamWState(), start, args.seed, meta)
        log.info("wrote %s", path)
        return 0
    schedule = Schedule(run.schedule, run.lr, run.warmup)
    report = train_loop(
        model,
        data,
        schedule,
        args.steps,
        seed=args.seed,
        batch_size=run.batch_size,
        state=state,
        start_step=start,
        clip=run.clip or None,
        ckpt_every=run.ckpt_every or None,
        out_dir=args.out,
        meta=meta,
    )
    final = os.path.join(args.out, f"ckpt_{start + args.steps:07d}.lcst")
    if final not in report.checkpoints:
        save_training_checkpoint(final, model, report.state, start + args.steps, args.seed, meta)
    csv_path = os.path.join(args.out, "loss.csv")
    rows = report.rows
    if start and os.path.exists(csv_path):
        rows = [r for r in read_loss_csv(csv_path) if r[0] <= start] + rows
    write_loss_csv(csv_path, rows)
    print(f"final loss {rows[-1][2]:.6f} after step {rows[-1][0]}; checkpoint {final}", file=sys.stderr)
    return 0


def cmd_pretrain(args):
    return _train_command(args, pretrain=True)


def cmd_finetune(args):
    return _train_command(args, pretrain=False)


def cmd_generate(args):
    model, meta, _ = Model.load(args.ckpt)
    if "vocab" not in meta:
        raise ConfigError(f"{args.ckpt}: checkpoint carries no vocabulary")
    vocab = gsg.Vocab(meta["vocab"])
    with _Output(args.output) as out:
        for lineno, obj in read_jsonl(args.input):
            key = "source" if "source" in obj else "text"
            source = _field(args.input, lineno, obj, key)
            ids = vocab.encode(source) or [UNK]
            generated = vocab.decode(greedy_generate(model, ids, max_len=args.max_len))
            out.write(json.dumps({"source": source, "generated": generated}, ensure_ascii=False) + "\n")
    return 0


def cmd_bench(args):
    if args.synthetic:
        rows = bench.synthetic_rows(args.synthetic, args.lengths)
    else:
        budget = None if args.memory_budget <= 0 else args.memory_budget
        rows = bench.scaling_sweep(args.kind, args.lengths, args.H, args.N, args.repeats, args.seed, budget, args.peak)
    if args.output:
        bench.write_sweep_csv(args.output, rows)
    ok = [r for r in rows if r.ok]
    result = {
        "kind": args.synthetic or args.kind,
        "rows": [dataclasses.asdict(r) for r in rows],
        "bytes_est_r2": bench.affine_r2([r.L for r in rows], [r.bytes_est for r in rows]),
    }
    if len(ok) >= 4:
        fit = bench.fit_complexity(rows)
        result.update(best=fit.best, residuals=fit.residuals)
    else:
        log.warning("only %d successful rows; skipping the complexity fit", len(ok))
    print(json.dumps(result, indent=2, default=lambda v: None))
    return 0


def cmd_gradcheck(args):
    base = ModelConfig.tiny() if args.preset == "tiny" else ModelConfig()
    config = load_run_config(args.config, base.to_dict() | {"vocab": args.vocab}).model if args.config or args.vocab else base
    model = Model(config, seed=args.seed)
    rng = np.random.default_rng([args.seed, 1])
    V = config.vocab
    src = rng.integers(4, V, size=(1, args.length))
    tgt = np.concatenate([rng.integers(4, V, size=(1, args.length - 1)), np.full((1, 1), EOS)], axis=1)
    report = grad_check(lambda: forward_loss(model, src, tgt), model.params, eps=args.eps, tol=args.tol, max_components=args.max_components, seed=args.seed, stencil=args.stencil)
    print(json.dumps({"max_rel_error": report.max_rel_error, "tol": report.tol, "checked": report.checked, "passed": report.passed}, indent=2))
    if not report.passed:
        print(f"gradient check failed: {report.max_rel_error:.3e} >= {report.tol:.1e}", file=sys.stderr)
        return 1
    return 0


def cmd_kernel_viz(args):
    if not os.path.exists(args.ckpt):
        raise FileNotFoundError(f"checkpoint not found: {args.ckpt}")
    rows = bench.export_kernel_decay(args.ckpt, args.layer, args.channel, args.L)
    if args.output in (None, "-"):
        print("j,fwd_mag,bwd_mag,fwd_env,bwd_env")
        for j, *vals in rows:
            print(",".join([str(j)] + [repr(v) for v in vals]))
    else:
        bench.write_decay_csv(args.output, rows)
    return 0


def _lengths(text):
    try:
        values = [int(v) for v in text.split(",") if v]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad length list {text!r}") from exc
    if not values:
        raise argparse.ArgumentTypeError("empty length list")
    return values


def build_parser():
    parser = argparse.ArgumentParser(prog="locost", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        return p

    p = common(sub.add_parser("gsg", help="build pseudo-summary pairs from raw documents"))
    p.add_argument("--input", required=True)
    p.add_argument("--output", default="-")
    p.add_argument("--alpha", type=float, default=0.2)
    p.set_defaults(func=cmd_gsg)

    for name, func in (("pretrain", cmd_pretrain), ("finetune", cmd_finetune)):
        p = common(sub.add_parser(name, help=f"{name} a model"))
        p.add_argument("--config")
        p.add_argument("--data", required=True)
        p.add_argument("--steps", type=int, required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--init", help="start from this checkpoint's weights and vocabulary")
        p.add_argument("--resume", help="continue this checkpoint's run, optimizer state included")
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--ckpt-every", type=int)
        p.add_argument("--schedule", choices=("constant", "inverse-sqrt"))
        p.set_defaults(func=func)

    p = common(sub.add_parser("generate", help="greedy decoding"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", default="-")
    p.add_argument("--max-len", type=int, default=64)
    p.set_defaults(func=cmd_generate)

    p = common(sub.add_parser("bench", help="wall-clock scaling sweep and complexity fit"))
    p.add_argument("--kind", choices=bench.KINDS, default="ssm-encoder")
    p.add_argument("--lengths", type=_lengths, default=list(bench.DEFAULT_LENGTHS))
    p.add_argument("--H", type=int, default=64)
    p.add_argument("--N", type=int, default=16)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--memory-budget", type=int, default=bench.DEFAULT_MEMORY_BUDGET, help="bytes; <= 0 disables")
    p.add_argument("--peak", action="store_true", help="also record tracemalloc peak bytes")
    p.add_argument("--synthetic", choices=("linearithmic", "quadratic"))
    p.add_argument("--output")
    p.set_defaults(func=cmd_bench)

    p = common(sub.add_parser("gradcheck", help="finite-difference check of the full model gradient"))
    p.add_argument("--preset", choices=("tiny", "desk"), default="tiny")
    p.add_argument("--config")
    p.add_argument("--vocab", type=int)
    p.add_argument("--length", type=int, default=8)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-components", type=int, default=50)
    p.add_argument("--stencil", type=int, choices=(2, 4), default=4, help="finite-difference points")
    p.set_defaults(func=cmd_gradcheck)

    p = common(sub.add_parser("kernel-viz", help="export kernel magnitudes and decay envelopes"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--layer", type=int, default=0)
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--L", type=int, default=256)
    p.add_argument("--output", default="-")
    p.set_defaults(func=cmd_kernel_viz)
    return parser


def main(argv=None):
    level = os.environ.get("LOCOST_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(stream=sys.stderr, level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
