"""Recurrent VAE over equation token sequences.

A bidirectional GRU encoder maps an equation to a Gaussian posterior in
latent space (reparameterized as z = mu + sigma * eps); a single GRU decoder
reconstructs the token sequence from z.  The training loss is token
cross-entropy plus the KL divergence of the posterior from the unit Gaussian
prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import torch
from torch import nn

from .vocab import TokenVocabulary


@dataclass(frozen=True)
class VaeConfig:
    enc_hidden: int = 125
    dec_hidden: int = 512
    enc_layers: int = 6
    dec_layers: int = 1
    enc_dropout: float = 0.1
    dec_dropout: float = 0.01
    batch_size: int = 32
    learning_rate: float = 0.005
    optimizer: str = "rmsprop"
    latent_dim: int = 56
    epochs: int = 150
    max_len: int = 64
    embedding_dim: int = 64
    kl_weight: float = 0.05
    kl_anneal_epochs: int = 50
    kl_free_bits: float = 1.5
    word_dropout: float = 0.4
    word_dropout_hold: int = 50    # epochs at full word dropout
    word_dropout_decay: int = 25   # then linear decay to 0 over this many
    z_noise_min: float = 0.3       # posterior noise scale after the same decay
    patience: int = 25

    def __post_init__(self):
        for name in ("enc_hidden", "dec_hidden", "enc_layers", "dec_layers",
                     "batch_size", "latent_dim", "max_len", "embedding_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("enc_dropout", "dec_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.optimizer not in ("rmsprop", "adam", "adadelta"):
            raise ValueError("optimizer must be rmsprop, adam, or adadelta")

    @property
    def enc_bidirectional(self) -> bool:
        # more than one recurrent layer switches the GRU to bidirectional
        return self.enc_layers > 1

    @property
    def dec_bidirectional(self) -> bool:
        return self.dec_layers > 1


class EquationVae(nn.Module):
    def __init__(self, cfg: VaeConfig, vocab: TokenVocabulary | None = None):
        super().__init__()
        self.cfg = cfg
        self.vocab = vocab or TokenVocabulary()
        v = len(self.vocab)
        self.embedding = nn.Embedding(v, cfg.embedding_dim, padding_idx=self.vocab.pad_id)
        self.encoder = nn.GRU(
            cfg.embedding_dim, cfg.enc_hidden, num_layers=cfg.enc_layers,
            dropout=cfg.enc_dropout if cfg.enc_layers > 1 else 0.0,
            bidirectional=cfg.enc_bidirectional, batch_first=True,
        )
        enc_out = cfg.enc_hidden * (2 if cfg.enc_bidirectional else 1)
        # pooled embeddings join the summary: a deep recurrent stack contracts
        # input differences so much on a tiny corpus that the latent would
        # otherwise start (and stay) uninformative
        summary_dim = enc_out + cfg.embedding_dim
        self.to_mean = nn.Linear(summary_dim, cfg.latent_dim)
        self.to_logvar = nn.Linear(summary_dim, cfg.latent_dim)
        self.latent_to_hidden = nn.Linear(cfg.latent_dim, cfg.dec_hidden * cfg.dec_layers)
        self.decoder = nn.GRU(
            cfg.embedding_dim + cfg.latent_dim, cfg.dec_hidden,
            num_layers=cfg.dec_layers,
            dropout=cfg.dec_dropout if cfg.dec_layers > 1 else 0.0,
            batch_first=True,
        )
        self.dec_input_dropout = nn.Dropout(cfg.dec_dropout)
        self.to_logits = nn.Linear(cfg.dec_hidden, v)

    def encode(self, ids: torch.Tensor):
        """Posterior parameters (mu, logvar) for padded id batches (B, T).

        The sequence summary is a masked mean over the top-layer outputs; the
        final hidden state of a deep GRU collapses to a near-constant on small
        corpora, which would starve the latent of input information.
        """
        emb = self.embedding(ids)
        out, _ = self.encoder(emb)
        mask = (ids != self.vocab.pad_id).float()[:, :, None]
        denom = mask.sum(dim=1).clamp(min=1.0)
        pooled_out = (out * mask).sum(dim=1) / denom
        pooled_emb = (emb * mask).sum(dim=1) / denom
        summary = torch.cat([pooled_out, pooled_emb], dim=-1)
        # clamped so a stray batch cannot blow up exp(logvar) early in training
        return self.to_mean(summary), self.to_logvar(summary).clamp(-8.0, 8.0)

    @staticmethod
    def reparameterize(mean: torch.Tensor, logvar: torch.Tensor,
                       generator: torch.Generator | None = None,
                       noise_scale: float = 1.0) -> torch.Tensor:
        eps = torch.randn(mean.shape, generator=generator, device=mean.device)
        return mean + noise_scale * torch.exp(0.5 * logvar) * eps

    def _init_hidden(self, z: torch.Tensor) -> torch.Tensor:
        h = self.latent_to_hidden(z)
        return h.view(z.shape[0], self.cfg.dec_layers, self.cfg.dec_hidden).transpose(0, 1).contiguous()

    def decode_teacher_forced(self, z: torch.Tensor, ids: torch.Tensor) -> torch.Tensor:
        """Logits (B, T-1, V) for predicting ids[:, 1:] from ids[:, :-1] and z."""
        emb = self.dec_input_dropout(self.embedding(ids[:, :-1]))
        zrep = z[:, None, :].expand(-1, emb.shape[1], -1)
        out, _ = self.decoder(torch.cat([emb, zrep], dim=-1), self._init_hidden(z))
        return self.to_logits(out)

    def forward(self, ids: torch.Tensor, generator: torch.Generator | None = None):
        mean, logvar = self.encode(ids)
        z = self.reparameterize(mean, logvar, generator)
        logits = self.decode_teacher_forced(z, ids)
        return logits, mean, logvar

    @torch.no_grad()
    def generate(self, z: torch.Tensor, temperature: float = 1.1,
                 generator: torch.Generator | None = None) -> list[str]:
        """Autoregressive decoding of one string per latent vector."""
        self.eval()
        B = z.shape[0]
        hidden = self._init_hidden(z)
        tok = torch.full((B, 1), self.vocab.sos_id, dtype=torch.long, device=z.device)
        done = torch.zeros(B, dtype=torch.bool, device=z.device)
        rows = [[] for _ in range(B)]
        for _ in range(self.cfg.max_len - 1):
            emb = self.embedding(tok)
            out, hidden = self.decoder(
                torch.cat([emb, z[:, None, :]], dim=-1), hidden
            )
            logits = self.to_logits(out[:, 0])
            logits[:, self.vocab.pad_id] = float("-inf")
            logits[:, self.vocab.sos_id] = float("-inf")
            if temperature <= 0:
                nxt = logits.argmax(dim=-1)
            else:
                probs = torch.softmax(logits / temperature, dim=-1)
                nxt = torch.multinomial(probs, 1, generator=generator)[:, 0]
            for b in range(B):
                if not done[b]:
                    if int(nxt[b]) == self.vocab.eos_id:
                        done[b] = True
                    else:
                        rows[b].append(int(nxt[b]))
            if bool(done.all()):
                break
            tok = nxt[:, None]
        return [self.vocab.decode(row) for row in rows]

    def save(self, path: str):
        torch.save({"config": asdict(self.cfg), "state": self.state_dict()}, path)

    @classmethod
    def load(cls, path: str) -> "EquationVae":
        blob = torch.load(path, map_location="cpu", weights_only=False)
        model = cls(VaeConfig(**blob["config"]))
        model.load_state_dict(blob["state"])
        model.eval()
        return model


def kl_divergence(mean: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(q(z|x) || N(0, I)) per batch item, summed over latent dims."""
    return -0.5 * torch.sum(1.0 + logvar - mean.pow(2) - logvar.exp(), dim=-1)


def kl_free_bits(mean: torch.Tensor, logvar: torch.Tensor,
                 free_bits: float) -> torch.Tensor:
    """KL with a per-dimension floor: dims already below ``free_bits`` nats are
    not penalized further, which keeps the latent informative on tiny corpora."""
    per_dim = -0.5 * (1.0 + logvar - mean.pow(2) - logvar.exp()).mean(dim=0)
    return per_dim.clamp(min=free_bits).sum()
