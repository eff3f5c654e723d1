"""Maximum-likelihood training: loss against the ideal reverse state, AdamW,
cosine learning-rate decay, and the binary checkpoint format."""
from __future__ import annotations

import csv
import io
import logging
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path

import torch

from . import sde
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

MAGIC = b"EDSR"
FORMAT_VERSION = 1
DTYPE_CODES = {torch.float32: 0, torch.float64: 1}
CODE_DTYPES = {v: k for k, v in DTYPE_CODES.items()}


@dataclass
class TrainConfig:
    iterations: int = 2000
    batch_size: int = 4
    lr_init: float = 4e-5
    lr_min: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-4
    adam_eps: float = 1e-8
    gamma: list | None = None  # per-step loss weights, index t-1; None means all ones
    grad_clip: float = 1.0
    loss_norm: str = "l1"
    augment: bool = True
    checkpoint_every: int = 500
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.lr_min <= self.lr_init:
            raise ValueError("need 0 < lr_min <= lr_init")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.loss_norm not in ("l1", "l2"):
            raise ValueError("loss_norm must be 'l1' or 'l2'")


class CheckpointError(Exception):
    pass


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class Checkpoint:
    config_echo: str
    params: "OrderedDict[str, torch.Tensor]"
    opt_m: "OrderedDict[str, torch.Tensor]" = field(default_factory=OrderedDict)
    opt_v: "OrderedDict[str, torch.Tensor]" = field(default_factory=OrderedDict)
    iteration: int = 0
    rng_state: bytes = b""
    version: int = FORMAT_VERSION


# --- loss -------------------------------------------------------------------

def reversed_state(s: NoiseSchedule, x_t, mu, eps_pred, t):
    """x_t - dx_t with the score replaced by -eps_pred / sqrt(n_t); drift only."""
    lam = sde._per_sample([s.lam[int(k)] for k in t], x_t)
    phi_sq = sde._per_sample([s.phi_sq[int(k)] for k in t], x_t)
    std = sde._per_sample([math.sqrt(s.variance(int(k))) for k in t], x_t)
    dx = lam * (mu - x_t) + phi_sq * eps_pred / std
    return x_t - dx


def compute_ml_loss(s: NoiseSchedule, model, batch, t, rng=None, loss_norm="l1", gamma=None,
                    eps=None):
    x0, v, mu = batch
    t = [int(k) for k in t]
    if min(t) < 1 or max(t) > s.T:
        raise ValueError(f"loss steps must lie in [1, {s.T}], got {t}")
    x_t, _ = sde.forward_marginal_sample(s, x0, mu, t, rng=rng, eps=eps)
    eps_pred = model(x_t, mu, v, torch.tensor(t))
    target = sde.ideal_reverse_state(s, x_t, x0, mu, t)
    diff = reversed_state(s, x_t, mu, eps_pred, t) - target
    per_sample = (diff.abs() if loss_norm == "l1" else diff.pow(2)).flatten(1).mean(dim=1)
    if gamma is not None:
        per_sample = per_sample * torch.as_tensor([gamma[k - 1] for k in t], dtype=diff.dtype)
    return per_sample.mean()


# --- optimizer ----------------------------------------------------------------

def cosine_lr(iteration: int, total: int, lr_init: float, lr_min: float) -> float:
    if total <= 0:
        return lr_init
    return lr_min + 0.5 * (lr_init - lr_min) * (1 + math.cos(math.pi * iteration / total))


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros(cls, params: dict):
        return cls({k: torch.zeros_like(p) for k, p in params.items()},
                   {k: torch.zeros_like(p) for k, p in params.items()})


@torch.no_grad()
def adamw_step(params: dict, grads: dict, state: AdamState, lr: float, config: TrainConfig):
    """Decoupled-weight-decay Adam update, in place."""
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise TrainingDiverged(f"non-finite gradient in {name} at step {state.step + 1}")
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    c1, c2 = 1 - b1**state.step, 1 - b2**state.step
    for name, p in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        update = (m / c1) / ((v / c2).sqrt() + config.adam_eps) + config.weight_decay * p
        p.sub_(lr * update)


# --- checkpoint I/O -------------------------------------------------------------

def _write_tensor(buf, name: str, t: torch.Tensor):
    t = t.detach().contiguous().cpu()
    if t.dtype not in DTYPE_CODES:
        raise CheckpointError(f"unsupported dtype {t.dtype} for {name}")
    raw = name.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)) + raw)
    buf.write(struct.pack("<BB", DTYPE_CODES[t.dtype], t.dim()))
    buf.write(struct.pack(f"<{t.dim()}Q", *t.shape))
    buf.write(t.numpy().astype(t.numpy().dtype.newbyteorder("<"), copy=False).tobytes())


def save_checkpoint(path, ckpt: Checkpoint):
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<I", ckpt.version))
    echo = ckpt.config_echo.encode("utf-8")
    buf.write(struct.pack("<I", len(echo)) + echo)
    tensors = list(ckpt.params.items())
    tensors += [(f"opt.m.{k}", t) for k, t in ckpt.opt_m.items()]
    tensors += [(f"opt.v.{k}", t) for k, t in ckpt.opt_v.items()]
    buf.write(struct.pack("<I", len(tensors)))
    for name, t in tensors:
        _write_tensor(buf, name, t)
    buf.write(struct.pack("<Q", ckpt.iteration))
    buf.write(struct.pack("<I", len(ckpt.rng_state)) + ckpt.rng_state)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"{self.path}: truncated file while reading {what}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def parse_echo(text: str) -> dict:
    return dict(ln.split(" = ", 1) for ln in text.splitlines() if " = " in ln)


def _check_echo(stored: str, live: str, where):
    """Every field of ``live`` must appear unchanged in ``stored``; extra stored fields are fine."""
    a, b = parse_echo(stored), parse_echo(live)
    bad = sorted(k for k in b if a.get(k) != b[k])
    if not bad:
        return
    raise CheckpointError(f"{where}: config echo mismatch in field(s) {', '.join(bad)}")


def load_checkpoint(path, expected_echo: str | None = None) -> Checkpoint:
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    (version,) = r.unpack("<I", "version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (n,) = r.unpack("<I", "config echo length")
    echo = r.take(n, "config echo").decode("utf-8")
    if expected_echo is not None:
        _check_echo(echo, expected_echo, path)
    (count,) = r.unpack("<I", "tensor count")
    params, opt_m, opt_v = OrderedDict(), OrderedDict(), OrderedDict()
    for _ in range(count):
        (ln,) = r.unpack("<I", "tensor name length")
        name = r.take(ln, "tensor name").decode("utf-8")
        code, rank = r.unpack("<BB", f"header of {name}")
        if code not in CODE_DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name}")
        dims = r.unpack(f"<{rank}Q", f"dims of {name}")
        dtype = CODE_DTYPES[code]
        nbytes = math.prod(dims) * torch.empty(0, dtype=dtype).element_size()
        raw = bytearray(r.take(nbytes, f"data of {name}"))
        t = torch.frombuffer(raw, dtype=dtype).reshape(dims) if nbytes else torch.zeros(dims, dtype=dtype)
        if name.startswith("opt.m."):
            opt_m[name[6:]] = t
        elif name.startswith("opt.v."):
            opt_v[name[6:]] = t
        else:
            params[name] = t
    (iteration,) = r.unpack("<Q", "iteration counter")
    (ln,) = r.unpack("<I", "rng state length")
    rng_state = r.take(ln, "rng state")
    if r.pos != len(r.data):
        raise CheckpointError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return Checkpoint(echo, params, opt_m, opt_v, iteration, rng_state, version)


def snapshot(model, adam: AdamState, iteration: int, rng: torch.Generator,
             s: NoiseSchedule | None = None) -> Checkpoint:
    echo = model.config_echo() + ("\n" + s.echo() if s is not None else "")
    params = OrderedDict((k, p.detach().clone()) for k, p in model.named_parameters())
    return Checkpoint(
        config_echo=echo,
        params=params,
        opt_m=OrderedDict((k, adam.m[k].clone()) for k in params),
        opt_v=OrderedDict((k, adam.v[k].clone()) for k in params),
        iteration=iteration,
        rng_state=bytes(rng.get_state().numpy().tobytes()),
    )


def restore(model, ckpt: Checkpoint, rng: torch.Generator | None = None) -> AdamState:
    """Load parameters (and optimizer/RNG state) from ``ckpt`` into live objects."""
    _check_echo(ckpt.config_echo, model.config_echo(), "checkpoint")
    named = dict(model.named_parameters())
    missing = named.keys() - ckpt.params.keys()
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
    with torch.no_grad():
        for k, p in named.items():
            p.copy_(ckpt.params[k])
    adam = AdamState.zeros(named)
    if ckpt.opt_m:
        for k in named:
            adam.m[k].copy_(ckpt.opt_m[k])
            adam.v[k].copy_(ckpt.opt_v[k])
    adam.step = ckpt.iteration
    if rng is not None and ckpt.rng_state:
        rng.set_state(torch.frombuffer(bytearray(ckpt.rng_state), dtype=torch.uint8).clone())
    return adam


# --- loop -------------------------------------------------------------------------

def sample_batch(dataset, batch_size: int, rng: torch.Generator, augment: bool):
    idx = torch.randint(len(dataset), (batch_size,), generator=rng)
    x0, v, mu = dataset.hr[idx], dataset.lr[idx], dataset.mu[idx]
    if augment:
        flips = torch.randint(2, (3,), generator=rng).tolist()
        if flips[0]:
            x0, v, mu = (z.flip(-1) for z in (x0, v, mu))
        if flips[1]:
            x0, v, mu = (z.flip(-2) for z in (x0, v, mu))
        if flips[2]:
            x0, v, mu = (z.transpose(-1, -2) for z in (x0, v, mu))
    return x0, v, mu


def train_loop(config: TrainConfig, dataset, model, s: NoiseSchedule, out_dir=None,
               resume: Checkpoint | None = None, stop_at: int | None = None):
    """Run ``config.iterations`` optimizer steps (or until ``stop_at``).

    Returns the final checkpoint and the loss trace as ``(iteration, loss, lr)``
    rows. With ``out_dir`` the trace is appended to ``trace.csv`` and
    checkpoints are written to ``last.ckpt``.
    """
    rng = torch.Generator().manual_seed(config.seed)
    named = dict(model.named_parameters())
    if resume is not None:
        adam = restore(model, resume, rng)
        start = resume.iteration
    else:
        adam = AdamState.zeros(named)
        start = 0
    end = config.iterations if stop_at is None else min(stop_at, config.iterations)
    out_dir = Path(out_dir) if out_dir is not None else None
    trace_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        trace_path = out_dir / "trace.csv"
        fresh = start == 0 or not trace_path.exists()
        trace_file = open(trace_path, "w" if start == 0 else "a", newline="")
        writer = csv.writer(trace_file)
        if fresh:
            writer.writerow(["iteration", "loss", "lr"])
    trace = []
    ckpt = snapshot(model, adam, start, rng, s)
    if out_dir is not None and start == 0:
        save_checkpoint(out_dir / "last.ckpt", ckpt)
    model.train()
    try:
        for it in range(start, end):
            lr = cosine_lr(it, config.iterations, config.lr_init, config.lr_min)
            x0, v, mu = sample_batch(dataset, config.batch_size, rng, config.augment)
            t = torch.randint(1, s.T + 1, (config.batch_size,), generator=rng).tolist()
            model.zero_grad(set_to_none=True)
            loss = compute_ml_loss(s, model, (x0, v, mu), t, rng=rng, loss_norm=config.loss_norm,
                                   gamma=config.gamma)
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at iteration {it + 1}")
            loss.backward()
            grads = {k: (p.grad if p.grad is not None else torch.zeros_like(p)) for k, p in named.items()}
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(list(grads.values()), config.grad_clip)
            adamw_step(named, grads, adam, lr, config)
            row = (it + 1, loss.item(), lr)
            trace.append(row)
            if trace_file is not None:
                writer.writerow([row[0], repr(row[1]), repr(row[2])])
            if out_dir is not None and config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
                save_checkpoint(out_dir / "last.ckpt", snapshot(model, adam, it + 1, rng, s))
            if (it + 1) % 100 == 0:
                log.info("iter %d loss %.5f lr %.3g", it + 1, row[1], lr)
        ckpt = snapshot(model, adam, end, rng, s)
        if out_dir is not None:
            save_checkpoint(out_dir / "last.ckpt", ckpt)
    finally:
        if trace_file is not None:
            trace_file.close()
    return ckpt, trace
