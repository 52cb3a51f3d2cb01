"""Training loop: ELBO with KL annealing, validation early stopping."""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn

from .model import EquationVae, VaeConfig, kl_divergence, kl_free_bits
from .primary import canonicalize_lines


class CorpusError(ValueError):
    pass


@dataclass
class TrainResult:
    model: EquationVae
    history: list[dict]
    epochs_run: int
    best_val_loss: float
    corpus: list[str]        # canonicalized corpus text
    train_lines: list[str]   # items actually trained on
    val_lines: list[str]     # early-stopping holdout


def _encode_corpus(model: EquationVae, lines: list[str]) -> torch.Tensor:
    # pad to the longest sequence present (bounded by cfg.max_len)
    encoded = [model.vocab.encode(l, max_len=model.cfg.max_len) for l in lines]
    width = max(sum(1 for t in row if t != model.vocab.pad_id) for row in encoded)
    return torch.tensor([row[:width] for row in encoded], dtype=torch.long)


def _make_optimizer(cfg: VaeConfig, params):
    if cfg.optimizer == "rmsprop":
        return torch.optim.RMSprop(params, lr=cfg.learning_rate)
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.learning_rate)
    return torch.optim.Adadelta(params, lr=cfg.learning_rate)


def _word_dropout(ids: torch.Tensor, p: float, pad_id: int, sos_id: int,
                  generator: torch.Generator) -> torch.Tensor:
    if p <= 0:
        return ids
    corrupt = ids.clone()
    mask = torch.rand(ids.shape, generator=generator) < p
    mask &= (ids != pad_id) & (ids != sos_id)
    corrupt[mask] = pad_id
    return corrupt


def _batch_loss(model: EquationVae, ids: torch.Tensor, kl_weight: float,
                ce: nn.Module, generator: torch.Generator | None,
                word_dropout: float, noise_scale: float = 1.0):
    mean, logvar = model.encode(ids)
    z = model.reparameterize(mean, logvar, generator, noise_scale)
    dec_in = ids
    if word_dropout > 0 and generator is not None:
        dec_in = _word_dropout(ids, word_dropout, model.vocab.pad_id,
                               model.vocab.sos_id, generator)
    logits = model.decode_teacher_forced(z, dec_in)
    targets = ids[:, 1:]
    n_tokens = int((targets != model.vocab.pad_id).sum())
    # per-token reconstruction keeps gradient scale independent of length,
    # which the fairly hot RMSprop learning rate needs to stay stable
    recon = ce(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1))
    recon = recon / max(n_tokens, 1)
    kl_raw = kl_divergence(mean, logvar).mean()
    kl_pen = kl_free_bits(mean, logvar, model.cfg.kl_free_bits)
    return recon + kl_weight * kl_pen, recon, kl_raw


def train(corpus_lines, cfg: VaeConfig | None = None, seed: int = 0,
          val_fraction: float = 0.1, verbose: bool = False) -> TrainResult:
    """Train a VAE on equation strings (validated by the primary parser).

    Raises CorpusError if the corpus is empty or any line fails to parse.
    Stops early once the validation loss has not improved for cfg.patience
    epochs; never exceeds cfg.epochs.
    """
    cfg = cfg or VaeConfig()
    raw = [l.strip() for l in corpus_lines if str(l).strip()]
    if not raw:
        raise CorpusError("empty corpus")
    canon = canonicalize_lines(raw)
    bad = [raw[i] for i, c in enumerate(canon) if c is None]
    if bad:
        raise CorpusError(f"{len(bad)} corpus lines fail to parse, e.g. {bad[0]!r}")
    lines = [c for c in canon if c is not None]

    torch.manual_seed(seed)
    model = EquationVae(cfg)
    data = _encode_corpus(model, lines)
    gen = torch.Generator().manual_seed(seed)
    perm = torch.randperm(len(lines), generator=gen)
    n_val = max(1, round(val_fraction * len(lines))) if len(lines) > 1 else 0
    val_ids = data[perm[:n_val]]
    train_ids = data[perm[n_val:]]
    val_lines = [lines[int(i)] for i in perm[:n_val]]
    train_lines = [lines[int(i)] for i in perm[n_val:]]

    optimizer = _make_optimizer(cfg, model.parameters())
    ce = nn.CrossEntropyLoss(ignore_index=model.vocab.pad_id, reduction="sum")
    history: list[dict] = []
    best_val = float("inf")
    stale = 0
    epochs_run = 0

    for epoch in range(1, cfg.epochs + 1):
        epochs_run = epoch
        kl_weight = cfg.kl_weight * min(1.0, epoch / max(cfg.kl_anneal_epochs, 1))
        # high early word dropout forces the decoder onto the latent; the late
        # decay matches training to the dropout-free evaluation condition
        if epoch <= cfg.word_dropout_hold:
            ramp = 1.0
        else:
            span = max(cfg.word_dropout_decay, 1)
            ramp = max(0.0, 1.0 - (epoch - cfg.word_dropout_hold) / span)
        word_dropout = cfg.word_dropout * ramp
        noise_scale = cfg.z_noise_min + (1.0 - cfg.z_noise_min) * ramp
        model.train()
        order = torch.randperm(len(train_ids), generator=gen)
        tot = tot_recon = tot_kl = 0.0
        n_batches = 0
        for start in range(0, len(train_ids), cfg.batch_size):
            batch = train_ids[order[start:start + cfg.batch_size]]
            loss, recon, kl = _batch_loss(model, batch, kl_weight, ce, gen,
                                          word_dropout, noise_scale)
            optimizer.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), 1.0)
            optimizer.step()
            tot += float(loss.detach())
            tot_recon += float(recon.detach())
            tot_kl += float(kl.detach())
            n_batches += 1

        model.eval()
        with torch.no_grad():
            if len(val_ids):
                # full KL weight so the early-stopping target is stationary
                val_loss, val_recon, val_kl = _batch_loss(
                    model, val_ids, cfg.kl_weight, ce, None, 0.0
                )
            else:
                val_loss = torch.tensor(tot / max(n_batches, 1))
                val_recon = val_kl = torch.tensor(0.0)
        history.append({
            "epoch": epoch,
            "kl_weight": kl_weight,
            "train_loss": tot / max(n_batches, 1),
            "train_recon": tot_recon / max(n_batches, 1),
            "train_kl": tot_kl / max(n_batches, 1),
            "val_loss": float(val_loss),
            "val_recon": float(val_recon),
            "val_kl": float(val_kl),
        })
        if verbose:
            h = history[-1]
            print(f"epoch {epoch:3d}  train {h['train_loss']:8.3f}  "
                  f"val {h['val_loss']:8.3f}  kl {h['train_kl']:7.3f}")
        # the monitored loss is only stationary once both schedules (KL anneal,
        # word-dropout decay) have settled, so the stopping window starts there
        schedules_done = max(cfg.kl_anneal_epochs,
                             cfg.word_dropout_hold + cfg.word_dropout_decay)
        if epoch >= schedules_done:
            if float(val_loss) < best_val - 1e-4:
                best_val = float(val_loss)
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break

    if best_val == float("inf"):  # run ended inside the schedule window
        best_val = history[-1]["val_loss"] if history else float("nan")
    model.eval()
    return TrainResult(model=model, history=history, epochs_run=epochs_run,
                       best_val_loss=best_val, corpus=lines,
                       train_lines=train_lines, val_lines=val_lines)


@torch.no_grad()
def reconstruct_teacher_forced(model: EquationVae, lines) -> list[str]:
    """Deterministic reconstructions (z = posterior mean, teacher forcing)."""
    model.eval()
    ids = _encode_corpus(model, list(lines))
    mean, _ = model.encode(ids)
    logits = model.decode_teacher_forced(mean, ids)
    pred = logits.argmax(dim=-1)
    return [model.vocab.decode(row) for row in pred]
