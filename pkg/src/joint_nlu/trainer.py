"""AdamW training, best-checkpoint selection, epoch sweeps and ablation runs."""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import math
import struct
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .dataset import LabelCatalog, LabeledUtterance, batch_iter, build_catalog, load_split
from .encoder import EncoderConfig
from .metrics import EvalReport, evaluate
from .model import AblationConfig, ABLATIONS, JointModel, ModelConfig, predict_batches
from .tensor import NumericError, Tensor
from .wordpiece import WordpieceVocab

log = logging.getLogger(__name__)

REFERENCE_BATCH_SIZE = 256
REFERENCE_EPOCHS = (10, 30, 40, 60, 80, 100)


class ConfigFileError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 16
    epochs: int = 30
    beta: float = 0.7
    seed: int = 0
    dropout: float = 0.1
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float = 1.0
    lr_decay: str = "none"
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    max_seq_len: int = 128
    activation: str = "tanh"
    iaa_sum: str = "word_reps"
    use_saa: bool = True
    use_iaa: bool = True
    feed_intent_to_slot: bool = True
    slot_only: bool = False

    def __post_init__(self):
        if not self.lr >= 0:
            raise ConfigFileError(f"lr must be non-negative, got {self.lr}")
        if self.epochs < 1:
            raise ConfigFileError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigFileError(f"beta must lie in [0, 1], got {self.beta}")
        if self.lr_decay not in ("none", "linear"):
            raise ConfigFileError(f"lr_decay must be 'none' or 'linear', got {self.lr_decay!r}")

    @property
    def ablation(self) -> AblationConfig:
        return AblationConfig(self.use_saa, self.use_iaa, self.feed_intent_to_slot,
                              self.slot_only, self.beta)

    def with_ablation(self, abl: AblationConfig) -> "TrainConfig":
        return dataclasses.replace(self, use_saa=abl.use_saa, use_iaa=abl.use_iaa,
                                   feed_intent_to_slot=abl.feed_intent_to_slot,
                                   slot_only=abl.slot_only)

    def model_config(self, vocab_size: int, catalog: LabelCatalog) -> ModelConfig:
        enc = EncoderConfig(vocab_size=vocab_size, d_model=self.d_model, n_layers=self.n_layers,
                            n_heads=self.n_heads, d_ff=self.d_ff, dropout_p=self.dropout,
                            max_seq_len=self.max_seq_len)
        return ModelConfig(enc, catalog.n_intents, catalog.n_slots, self.activation,
                           self.iaa_sum, self.ablation)

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in dataclasses.fields(self))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def _coerce(key: str, raw: str, kind):
    if kind is bool or kind == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigFileError(f"{key}: expected a boolean, got {raw!r}")
    try:
        if kind in (int, "int"):
            return int(raw)
        if kind in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigFileError(f"{key}: cannot parse {raw!r} as {kind}") from None
    return raw


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines (``#`` starts a comment); unknown keys are errors."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigFileError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, raw, types[key])
        except ConfigFileError as exc:
            raise ConfigFileError(f"line {lineno}: {exc}") from None
    return dataclasses.replace(base or TrainConfig(), **values)


def load_config(path) -> TrainConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigFileError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class AdamW:
    """Adam with decoupled weight decay applied directly to the parameters."""

    def __init__(self, params: dict[str, Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=0.01):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, p in self.params.items():
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p.data -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        return out


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad ** 2).sum()) for p in params.values() if p.grad is not None))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return total


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class Corpus:
    train: list[LabeledUtterance]
    valid: list[LabeledUtterance]
    test: list[LabeledUtterance]
    vocab: WordpieceVocab
    catalog: LabelCatalog

    @classmethod
    def from_dir(cls, root, vocab: WordpieceVocab) -> "Corpus":
        root = Path(root)
        train = load_split(root, "train")
        splits = {s: load_split(root, s) if (root / s).is_dir() else [] for s in ("valid", "dev", "test")}
        valid = splits["valid"] or splits["dev"]
        return cls(train, valid, splits["test"], vocab, build_catalog(train))


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    valid: EvalReport | None
    train_report: EvalReport | None = None


@dataclass
class TrainResult:
    model: JointModel
    final_model: JointModel
    history: list[EpochRecord]
    best_epoch: int
    steps: int
    rng: np.random.Generator


def evaluate_model(model: JointModel, data: Sequence[LabeledUtterance], vocab: WordpieceVocab,
                   catalog: LabelCatalog, batch_size: int = 64) -> EvalReport:
    batches, _ = batch_iter(data, vocab, catalog, batch_size,
                            max_seq_len=model.cfg.encoder.max_seq_len)
    gold, pred = predict_batches(model, batches, catalog)
    return evaluate(gold, pred)


def _selection_score(report: EvalReport, cfg: TrainConfig) -> float:
    return report.slot_f1 if cfg.slot_only else report.overall_acc


def train(
    corpus: Corpus,
    cfg: TrainConfig,
    eval_train: bool = False,
    on_epoch: Callable[[EpochRecord], bool] | None = None,
    model: JointModel | None = None,
) -> TrainResult:
    """Train from ``cfg.seed``; keep the parameters with the best validation score.

    ``on_epoch`` may return True to stop early.
    """
    vocab, catalog = corpus.vocab, corpus.catalog
    mcfg = cfg.model_config(len(vocab), catalog)
    model = model or JointModel(mcfg, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(model.params, cfg.lr, (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps,
                cfg.weight_decay)
    n_batches = -(-len(corpus.train) // cfg.batch_size)
    total_steps = cfg.epochs * n_batches
    history: list[EpochRecord] = []
    best_params, best_score, best_epoch = None, -math.inf, 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        batches, _ = batch_iter(corpus.train, vocab, catalog, cfg.batch_size,
                                shuffle_seed=cfg.seed * 100_003 + epoch, max_seq_len=cfg.max_seq_len)
        losses = []
        for bi, batch in enumerate(batches):
            if cfg.lr_decay == "linear":
                opt.lr = cfg.lr * (1.0 - step / max(total_steps, 1))
            with T.fresh_tape() as tape:
                out = model.forward(batch, train=True, rng=rng)
                loss = out.loss
                if not math.isfinite(loss.joint):
                    raise NumericError(f"non-finite loss {loss.joint} at step {step}, "
                                       f"epoch {epoch}, batch {bi}")
                opt.zero_grad()
                tape.backward(loss.tensor)
            clip_grad_norm(model.params, cfg.clip_norm)
            opt.step()
            step += 1
            losses.append(loss.joint)
        valid = evaluate_model(model, corpus.valid, vocab, catalog) if corpus.valid else None
        rec = EpochRecord(epoch, float(np.mean(losses)), valid,
                          evaluate_model(model, corpus.train, vocab, catalog) if eval_train else None)
        history.append(rec)
        score = _selection_score(valid, cfg) if valid is not None else epoch
        if score > best_score:
            best_score, best_epoch = score, epoch
            best_params = {k: p.data.copy() for k, p in model.params.items()}
        log.info("epoch %d loss %.5f %s", epoch, rec.train_loss,
                 valid.machine_line() if valid else "")
        if on_epoch is not None and on_epoch(rec):
            break
    opt.zero_grad()
    best = JointModel(model.cfg, {k: T.parameter(v, name=k) for k, v in best_params.items()})
    return TrainResult(best, model, history, best_epoch, step, rng)


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------


def _run(args):
    corpus, cfg, split = args
    result = train(corpus, cfg)
    data = corpus.test if split == "test" and corpus.test else corpus.valid
    return evaluate_model(result.model, data, corpus.vocab, corpus.catalog)


def _map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def epoch_sweep(corpus: Corpus, cfg: TrainConfig, epochs_list: Sequence[int], jobs: int = 1,
                split: str = "test") -> list[tuple[int, EvalReport]]:
    """One independent run per epoch budget, all from the same seed."""
    if not epochs_list:
        raise ValueError("epochs_list is empty")
    reports = _map(_run, [(corpus, dataclasses.replace(cfg, epochs=e), split) for e in epochs_list], jobs)
    return list(zip(epochs_list, reports))


def run_ablations(corpus: Corpus, cfg: TrainConfig, variants: Sequence[str] | None = None,
                  jobs: int = 1, split: str = "test") -> list[tuple[str, EvalReport]]:
    """Train each ablation variant from the same seed and score it on ``split``."""
    names = list(variants) if variants is not None else ["full", "w/o IAA", "w/o SAA", "w/o intent feature"]
    for n in names:
        if n not in ABLATIONS:
            raise ValueError(f"unknown ablation {n!r}; choose from {list(ABLATIONS)}")
    cfgs = [cfg.with_ablation(ABLATIONS[n]) for n in names]
    reports = _map(_run, [(corpus, c, split) for c in cfgs], jobs)
    return list(zip(names, reports))


def format_table(rows, key_name: str) -> str:
    """Tab-separated report table; slot-only rows leave intent columns as '-'."""
    lines = [f"{key_name}\tintent_acc\tslot_p\tslot_r\tslot_f1\toverall_acc"]
    for key, r in rows:
        intent = overall = "-"
        if key != "slot only":
            intent, overall = f"{r.intent_acc:.6f}", f"{r.overall_acc:.6f}"
        lines.append(f"{key}\t{intent}\t{r.slot_precision:.6f}\t{r.slot_recall:.6f}"
                     f"\t{r.slot_f1:.6f}\t{overall}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"JNLUCKPT"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    params: dict[str, np.ndarray]
    train_config: TrainConfig
    model_config: ModelConfig
    vocab_tokens: list[str]
    catalog: dict
    step: int = 0
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)

    def build_model(self) -> JointModel:
        return JointModel(self.model_config,
                          {k: T.parameter(v.copy(), name=k) for k, v in self.params.items()})

    def vocab(self) -> WordpieceVocab:
        return WordpieceVocab(self.vocab_tokens)

    def label_catalog(self) -> LabelCatalog:
        return LabelCatalog.from_dict(self.catalog)


def checkpoint_from(result: TrainResult, cfg: TrainConfig, corpus: Corpus, which: str = "best") -> Checkpoint:
    model = result.model if which == "best" else result.final_model
    return Checkpoint(
        params={k: p.data for k, p in model.params.items()},
        train_config=cfg,
        model_config=model.cfg,
        vocab_tokens=list(corpus.vocab.tokens),
        catalog=corpus.catalog.to_dict(),
        step=result.steps,
        rng_state=result.rng.bit_generator.state,
        extra={"best_epoch": result.best_epoch},
    )


def _model_config_to_dict(cfg: ModelConfig) -> dict:
    return dataclasses.asdict(cfg)


def _model_config_from_dict(d: dict) -> ModelConfig:
    d = dict(d)
    enc = EncoderConfig(**d.pop("encoder"))
    abl = AblationConfig(**d.pop("ablation"))
    return ModelConfig(encoder=enc, ablation=abl, **d)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Little-endian: magic, version, JSON header, then (name, shape, f64 data) records, CRC32."""
    header = json.dumps({
        "train_config": dataclasses.asdict(ckpt.train_config),
        "model_config": _model_config_to_dict(ckpt.model_config),
        "vocab": ckpt.vocab_tokens,
        "catalog": ckpt.catalog,
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "extra": ckpt.extra,
    }).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(header)), header,
             struct.pack("<I", len(ckpt.params))]
    for name, arr in ckpt.params.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb)
        parts.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError(f"checkpoint truncated at byte {self.pos} (needed {n} more)")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> Checkpoint:
    buf = Path(path).read_bytes()
    if len(buf) < len(MAGIC) + 16 or not buf.startswith(MAGIC):
        raise CheckpointError(f"{path} is not a checkpoint (bad magic or too short)")
    r = _Reader(buf[:-4])
    r.take(len(MAGIC))
    version, header_len = r.unpack("<IQ")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"checkpoint format version {version}, this build reads {FORMAT_VERSION}")
    (crc,) = struct.unpack("<I", buf[-4:])
    if zlib.crc32(buf[:-4]) != crc:
        raise CheckpointError(f"{path}: checksum mismatch (file truncated or corrupt)")
    header = json.loads(r.take(header_len).decode("utf-8"))
    (n,) = r.unpack("<I")
    params = {}
    for _ in range(n):
        (nl,) = r.unpack("<I")
        name = r.take(nl).decode("utf-8")
        (ndim,) = r.unpack("<I")
        shape = r.unpack(f"<{ndim}Q")
        count = int(np.prod(shape)) if ndim else 1
        params[name] = np.frombuffer(r.take(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(r.buf):
        raise CheckpointError(f"{path}: {len(r.buf) - r.pos} trailing bytes after the last record")
    return Checkpoint(
        params=params,
        train_config=TrainConfig(**header["train_config"]),
        model_config=_model_config_from_dict(header["model_config"]),
        vocab_tokens=header["vocab"],
        catalog=header["catalog"],
        step=header["step"],
        rng_state=header["rng_state"],
        extra=header.get("extra", {}),
    )


def restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = copy.deepcopy(state)
    return rng
