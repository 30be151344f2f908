"""Optimization loop: warmup/inverse-sqrt schedule, Adam updates, per-epoch
checkpoints, the dev-BLEU selection rule, and the top-k selection metric.

Per-epoch randomness (batch order, corruption, dropout) is derived from
(seed, epoch) alone, so resuming from the checkpoint written at any epoch
boundary reproduces the remaining loss log bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .bpe import BpeModel
from .checkpoint import model_from_checkpoint, save_model
from .data import Batch, ParallelCorpus, make_batches
from .errors import DataError, DivergenceError
from .evaluation import corpus_bleu, translate_corpus
from .model import ARCH_THM, ModelConfig, Seq2SeqModel, build_model
from .rng import Rng
from .tensor import no_grad


def lr_at(step: int, d_model: int, warmup: int) -> float:
    """d^-0.5 * min(step^-0.5, step * warmup^-1.5); linear warmup then inverse sqrt."""
    if step < 1:
        raise ValueError(f"schedule step must be >= 1, got {step}")
    return d_model**-0.5 * min(step**-0.5, step * warmup**-1.5)


@dataclass
class TrainParams:
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    warmup: int = 4000
    batch_tokens: int = 6528
    accum_steps: int = 1
    lr_scale: float = 1.0


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    best_dev_bleu: float = -1.0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_model(cls, model: Seq2SeqModel) -> "TrainState":
        return cls(
            m={n: np.zeros_like(p.data) for n, p in model.params.items()},
            v={n: np.zeros_like(p.data) for n, p in model.params.items()},
        )

    def save(self, path):
        arrays = {f"m/{n}": a for n, a in self.m.items()}
        arrays |= {f"v/{n}": a for n, a in self.v.items()}
        arrays["meta"] = np.array([self.step, self.epoch, self.best_dev_bleu], dtype=np.float64)
        np.savez(path, **arrays)

    @classmethod
    def load(cls, path) -> "TrainState":
        with np.load(path) as zf:
            meta = zf["meta"]
            m = {k[2:]: zf[k] for k in zf.files if k.startswith("m/")}
            v = {k[2:]: zf[k] for k in zf.files if k.startswith("v/")}
        return cls(
            step=int(meta[0]), epoch=int(meta[1]), best_dev_bleu=float(meta[2]), m=m, v=v
        )


def train_step(
    model: Seq2SeqModel,
    batches: Batch | list[Batch],
    state: TrainState,
    hp: TrainParams,
    rng: Rng,
) -> float:
    """One optimizer update over a batch (or accumulated micro-batches)."""
    micro = [batches] if isinstance(batches, Batch) else list(batches)
    model.zero_grads()
    total_loss, total_tokens = 0.0, 0
    for b in micro:
        loss = model.loss_on_batch(b, training=True, rng=rng)
        value = float(loss.data)
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite loss at step {state.step + 1}", step=state.step + 1)
        loss.backward()
        total_loss += value * b.n_tokens
        total_tokens += b.n_tokens
    state.step += 1
    lr = hp.lr_scale * lr_at(state.step, model.config.d_model, hp.warmup)
    inv = 1.0 / len(micro)
    for name, p in model.params.items():
        g = p.grad if len(micro) == 1 else p.grad * inv
        kernels.adam_update(
            p.data, g, state.m[name], state.v[name], lr, hp.beta1, hp.beta2, hp.eps, state.step
        )
    return total_loss / total_tokens


# ---------------------------------------------------------------------------
# run records and model selection
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    """Per-epoch (train_loss, valid_loss, dev_bleu, test_bleu) rows, epochs from 1."""

    rows: list[tuple[int, float, float, float, float]] = field(default_factory=list)

    def add(self, epoch, train_loss, valid_loss, dev_bleu, test_bleu):
        if epoch != len(self.rows) + 1:
            raise DataError(f"epochs must be contiguous from 1, got {epoch} after {len(self.rows)}")
        self.rows.append((epoch, train_loss, valid_loss, dev_bleu, test_bleu))

    def dev_bleus(self):
        return [r[3] for r in self.rows]

    def test_bleus(self):
        return [r[4] for r in self.rows]

    def to_log(self) -> str:
        return "".join(
            f"{e} {t:.6g} {v:.6g} {d:.6g} {b:.6g}\n" for e, t, v, d, b in self.rows
        )

    @classmethod
    def from_log(cls, text: str) -> "RunRecord":
        rec = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            e, t, v, d, b = line.split()
            rec.add(int(e), float(t), float(v), float(d), float(b))
        return rec


def select_best(records: RunRecord) -> int:
    """Epoch with the highest dev BLEU; ties go to the earliest epoch."""
    if not records.rows:
        raise DataError("cannot select from an empty run record")
    dev = records.dev_bleus()
    return int(np.argmax(dev)) + 1


def topk_selection(records: RunRecord, k: int) -> bool:
    """Whether the dev-selected epoch ranks in the top k by test BLEU.

    Competition ranking: tied test scores share the better rank.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    test = records.test_bleus()
    chosen = test[select_best(records) - 1]
    rank = 1 + sum(1 for t in test if t > chosen)
    return rank <= k


# ---------------------------------------------------------------------------
# full experiment driver
# ---------------------------------------------------------------------------


@dataclass
class DataBundle:
    train: ParallelCorpus
    dev: ParallelCorpus
    test: ParallelCorpus
    bpe: BpeModel


def _ckpt_path(out_dir: Path, epoch: int) -> Path:
    return out_dir / f"epoch{epoch:03d}.ckpt"


def _state_path(out_dir: Path, epoch: int) -> Path:
    return out_dir / f"epoch{epoch:03d}.state.npz"


def valid_loss(model: Seq2SeqModel, batches: list[Batch]) -> float:
    total, tokens = 0.0, 0
    with no_grad():
        for b in batches:
            total += float(model.loss_on_batch(b).data) * b.n_tokens
            tokens += b.n_tokens
    return total / tokens


def evaluate_bleu(model: Seq2SeqModel, corpus: ParallelCorpus, bpe: BpeModel, max_len: int) -> float:
    hyps = translate_corpus(model, bpe, corpus.sources(), max_len=max_len)
    return corpus_bleu(hyps, corpus.targets())


def run_experiment(
    config: ModelConfig,
    data: DataBundle,
    epochs: int,
    out_dir,
    seed: int,
    hp: TrainParams | None = None,
    resume: bool = False,
    log_name: str = "loss.log",
    quiet: bool = True,
) -> RunRecord:
    """Train, checkpoint, and score one model; append one loss-log line per epoch.

    With ``resume=True`` the run continues after the last epoch whose
    checkpoint and state are present in ``out_dir``.
    """
    hp = hp or TrainParams()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / log_name
    base_rng = Rng(seed)

    start_epoch = 0
    if resume:
        done = sorted(
            int(p.stem[5:8]) for p in out_dir.glob("epoch*.ckpt") if _state_path(out_dir, int(p.stem[5:8])).exists()
        )
        if done:
            start_epoch = done[-1]
    if start_epoch:
        model, _ = model_from_checkpoint(_ckpt_path(out_dir, start_epoch))
        state = TrainState.load(_state_path(out_dir, start_epoch))
        records = RunRecord.from_log(log_path.read_text(encoding="utf-8"))
        records.rows = records.rows[:start_epoch]
        log_path.write_text(records.to_log(), encoding="utf-8")
    else:
        model = build_model(config, base_rng)
        state = TrainState.for_model(model)
        records = RunRecord()
        log_path.write_text("", encoding="utf-8")

    swap = config.swap_prob if config.arch == ARCH_THM else 0.0
    eval_batches = make_batches(
        data.dev, data.bpe, hp.batch_tokens, Rng(seed).fork("dev"), swap_prob=0.0, shuffle=False
    )
    decode_len = min(config.max_len - 1, 2 * max(len(t.split()) for t in data.dev.targets()) + 8)

    for epoch in range(start_epoch + 1, epochs + 1):
        epoch_rng = base_rng.fork(("epoch", epoch))
        batches = make_batches(
            data.train, data.bpe, hp.batch_tokens, epoch_rng.fork("batches"), swap_prob=swap
        )
        dropout_rng = epoch_rng.fork("dropout")
        losses, weights = [], []
        for i in range(0, len(batches), hp.accum_steps):
            group = batches[i : i + hp.accum_steps]
            loss = train_step(model, group if len(group) > 1 else group[0], state, hp, dropout_rng)
            losses.append(loss)
            weights.append(sum(b.n_tokens for b in group))
        train_loss = float(np.average(losses, weights=weights))
        vloss = valid_loss(model, eval_batches)
        dev_bleu = evaluate_bleu(model, data.dev, data.bpe, decode_len)
        test_bleu = evaluate_bleu(model, data.test, data.bpe, decode_len)
        state.epoch = epoch
        state.best_dev_bleu = max(state.best_dev_bleu, dev_bleu)
        records.add(epoch, train_loss, vloss, dev_bleu, test_bleu)
        save_model(_ckpt_path(out_dir, epoch), model, step=state.step)
        state.save(_state_path(out_dir, epoch))
        with open(log_path, "a", encoding="utf-8") as fh:
            fh.write(f"{epoch} {train_loss:.6g} {vloss:.6g} {dev_bleu:.6g} {test_bleu:.6g}\n")
        if not quiet:
            print(
                f"epoch {epoch}: train {train_loss:.4f} valid {vloss:.4f} "
                f"dev BLEU {dev_bleu:.2f} test BLEU {test_bleu:.2f}"
            )
    return records
