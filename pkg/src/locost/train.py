"""AdamW, learning-rate schedules, the training loop and the overfit harness."""

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .graph import no_grad
from .model import EOS, PAD, Model, forward_loss, greedy_generate
from .ssm import DELTA_MIN, LAMBDA_RE_MAX

log = logging.getLogger(__name__)


@dataclass
class Schedule:
    kind: str = "constant"  # "constant" | "inverse-sqrt"
    base: float = 5e-4
    warmup: int = 10_000

    def __post_init__(self):
        if self.kind not in ("constant", "inverse-sqrt"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not self.base > 0:
            raise ValueError("schedule base must be positive")
        if self.kind == "inverse-sqrt" and self.warmup < 1:
            raise ValueError("inverse-sqrt schedule needs warmup >= 1")


def lr_at(schedule, step):
    """Learning rate at optimizer step ``step`` (>= 0)."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if schedule.kind == "constant":
        return schedule.base
    return schedule.base / math.sqrt(max(schedule.warmup, step))


@dataclass
class AdamWState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def to_tensors(self):
        out = {}
        for name in self.m:
            out[f"optim.m.{name}"] = self.m[name]
            out[f"optim.v.{name}"] = self.v[name]
        return out

    def hyper(self):
        return {"beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "weight_decay": self.weight_decay, "t": self.t}

    @classmethod
    def from_checkpoint(cls, hyper, tensors):
        state = cls(**hyper)
        for key, value in tensors.items():
            if key.startswith("optim.m."):
                state.m[key[len("optim.m.") :]] = np.array(value)
            elif key.startswith("optim.v."):
                state.v[key[len("optim.v.") :]] = np.array(value)
        return state


def clip_grad_norm(grads, max_norm):
    """Scale ``grads`` (dict of arrays) in place so the global L2 norm is <= ``max_norm``."""
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm > 0:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


def project_stable(params):
    """Clamp every SSM ``lambda_re`` to <= -1e-4 and ``delta`` to >= 1e-4."""
    for name, t in params.items():
        if name.endswith(".lambda_re"):
            np.minimum(t.data, LAMBDA_RE_MAX, out=t.data)
        elif name.endswith(".delta"):
            np.maximum(t.data, DELTA_MIN, out=t.data)


def adamw_step(params, state, lr, grads=None):
    """Bias-corrected AdamW with decoupled weight decay, then the SSM stability clamp.

    ``params`` is a ParameterStore (or name -> Tensor mapping); gradients come from
    ``grads`` when given, else from each tensor's ``.grad``.
    """
    items = list(params.items())
    if grads is None:
        grads = {name: t.grad for name, t in items}
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for name, t in items:
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(t.data)
        if g.shape != t.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {t.shape} for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * t.data
        t.data -= lr * update
    project_stable(params)
    return state


def make_batches(dataset, batch_size, seed, epoch):
    """One epoch of batches: seeded shuffle, then length-bucketing inside windows.

    Returns a list of index lists.
    """
    order = np.random.default_rng([seed, epoch]).permutation(len(dataset))
    window = batch_size * 8
    batches = []
    for start in range(0, len(order), window):
        chunk = sorted(order[start : start + window], key=lambda i: (len(dataset[i][0]), i))
        batches.extend(chunk[k : k + batch_size] for k in range(0, len(chunk), batch_size))
    perm = np.random.default_rng([seed, epoch, 1]).permutation(len(batches))
    return [list(map(int, batches[i])) for i in perm]


def pad_batch(seqs):
    width = max(len(s) for s in seqs)
    out = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def collate(dataset, indices):
    return pad_batch([dataset[i][0] for i in indices]), pad_batch([dataset[i][1] for i in indices])


@dataclass
class TrainReport:
    rows: list  # (step, lr, loss)
    state: AdamWState
    checkpoints: list = field(default_factory=list)

    @property
    def losses(self):
        return [r[2] for r in self.rows]


def write_loss_csv(path, rows):
    with open(path, "w", newline="") as fh:
        fh.write("step,lr,loss\n")
        for step, lr, loss in rows:
            fh.write(f"{step},{lr!r},{loss!r}\n")


def read_loss_csv(path):
    with open(path, newline="") as fh:
        return [(int(r["step"]), float(r["lr"]), float(r["loss"])) for r in csv.DictReader(fh)]


def save_training_checkpoint(path, model, state, step, seed, meta=None):
    info = dict(meta or {})
    info.update({"step": step, "seed": seed, "optimizer": state.hyper()})
    model.save(path, meta=info, extra=state.to_tensors())


def load_training_checkpoint(path):
    """Return ``(model, state, meta)``; ``meta['step']`` is the number of completed steps."""
    model, meta, extra = Model.load(path)
    hyper = meta.get("optimizer")
    state = AdamWState.from_checkpoint(hyper, extra) if hyper else AdamWState()
    return model, state, meta


def train_loop(
    model,
    dataset,
    schedule,
    steps,
    seed=42,
    batch_size=8,
    state=None,
    start_step=0,
    clip=None,
    ckpt_every=None,
    out_dir=None,
    meta=None,
):
    """Run ``steps`` optimizer steps starting after ``start_step`` completed ones.

    ``dataset`` is a list of ``(src_ids, tgt_ids)``; targets should end in EOS.
    Batch order and dropout masks are functions of ``(seed, step)`` only, so a
    resumed run replays exactly the batches an uninterrupted run would see.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    state = state or AdamWState()
    rows, ckpts = [], []
    n_batches = -(-len(dataset) // batch_size)
    cached_epoch, batches = None, None
    for k in range(start_step, start_step + steps):
        epoch, pos = divmod(k, n_batches)
        if epoch != cached_epoch:
            batches, cached_epoch = make_batches(dataset, batch_size, seed, epoch), epoch
        src, tgt = collate(dataset, batches[pos])
        rng = np.random.default_rng([seed, k, 2])
        model.params.zero_grad()
        loss = forward_loss(model, src, tgt, training=True, rng=rng)
        loss.backward()
        if clip:
            grads = {n: t.grad for n, t in model.params.items() if t.grad is not None}
            clip_grad_norm(grads, clip)
        lr = lr_at(schedule, k + 1)
        adamw_step(model.params, state, lr)
        rows.append((k + 1, lr, loss.item()))
        if ckpt_every and out_dir and (k + 1) % ckpt_every == 0:
            path = os.path.join(out_dir, f"ckpt_{k + 1:07d}.lcst")
            save_training_checkpoint(path, model, state, k + 1, seed, meta)
            ckpts.append(path)
        if (k + 1) % 100 == 0:
            log.info("step %d lr %.3g loss %.4f", k + 1, lr, rows[-1][2])
    return TrainReport(rows=rows, state=state, checkpoints=ckpts)


def copy_pairs(n, vocab, seed, min_len=4, max_len=8):
    """Copy-task examples: target = source followed by EOS."""
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n):
        length = int(rng.integers(min_len, max_len + 1))
        src = [int(t) for t in rng.integers(4, vocab, size=length)]
        pairs.append((src, src + [EOS]))
    return pairs


@dataclass
class OverfitReport:
    steps: int
    initial_loss: float
    final_loss: float
    exact_match: int
    total: int
    losses: list
    model: Model = field(default=None, repr=False)

    @property
    def exact_match_rate(self):
        return self.exact_match / self.total


def overfit_harness(config, pairs, budget, seed=0, lr=3e-3, target_loss=0.1):
    """Full-batch training on a few pairs until loss < ``target_loss`` or the budget runs out."""
    if len(pairs) > 64:
        raise ValueError("overfit harness takes at most 64 pairs")
    model = Model(config, seed=seed)
    src, tgt = pad_batch([p[0] for p in pairs]), pad_batch([p[1] for p in pairs])
    schedule = Schedule("constant", lr)
    state = AdamWState()

    def eval_loss():
        with no_grad():
            return forward_loss(model, src, tgt).item()

    initial = eval_loss()
    losses, steps = [], 0
    current = initial
    while steps < budget and current >= target_loss:
        model.params.zero_grad()
        loss = forward_loss(model, src, tgt)
        loss.backward()
        adamw_step(model.params, state, lr_at(schedule, steps + 1))
        steps += 1
        losses.append(loss.item())
        current = eval_loss() if steps % 10 == 0 or losses[-1] < target_loss else losses[-1]
    final = eval_loss()
    hits = 0
    for s, t in pairs:
        expected = [x for x in t if x != EOS]
        hits += greedy_generate(model, s, max_len=len(t) + 1) == expected
    return OverfitReport(steps, initial, final, hits, len(pairs), losses, model)
