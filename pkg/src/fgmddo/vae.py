"""Gaussian-prior VAE used to Gaussianise design data before discovery."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .numkit import Adam, Mlp, make_rng


class VaeDivergedError(RuntimeError):
    pass


def kl_diag_gaussian(mu, logvar) -> np.ndarray:
    """Per-row KL(N(mu, diag(exp(logvar))) || N(0, I))."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    return 0.5 * np.sum(mu ** 2 + np.expm1(logvar) - logvar, axis=-1)


@dataclass
class VaeHyper:
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 1e-3
    epochs: int = 100
    batch: int = 128
    seed: int = 0
    noise: float = 0.3  # decoder std in standardised data units


@dataclass
class VaeModel:
    """Encoder -> (latent mean, latent log-variance); decoder -> reconstruction mean.

    Observables are standardised with ``in_mean``/``in_scale`` inside the model.
    """

    encoder: Mlp
    decoder: Mlp
    in_mean: np.ndarray
    in_scale: np.ndarray
    noise: float = 0.3
    history: dict = field(default_factory=dict)

    @classmethod
    def init(cls, d_obs: int, d_z: int, hidden=(64, 64), rng=None, zero: bool = False, noise: float = 0.3) -> "VaeModel":
        rng = rng or make_rng(0)
        enc = Mlp.init([d_obs, *hidden, 2 * d_z], rng, zero=zero)
        dec = Mlp.init([d_z, *hidden, d_obs], rng, zero=zero)
        return cls(enc, dec, np.zeros(d_obs), np.ones(d_obs), noise)

    @property
    def d_obs(self) -> int:
        return self.encoder.widths[0]

    @property
    def d_z(self) -> int:
        return self.decoder.widths[0]

    def _enc(self, x_obs):
        x = np.atleast_2d(np.asarray(x_obs, dtype=np.float64))
        if x.shape[1] != self.d_obs:
            raise ValueError(f"expected observables of width {self.d_obs}, got {x.shape[1]}")
        return (x - self.in_mean) / self.in_scale

    def posterior(self, x_obs):
        out = self.encoder.forward(self._enc(x_obs))
        return out[:, :self.d_z], out[:, self.d_z:]

    def encode(self, x_obs) -> np.ndarray:
        return self.posterior(x_obs)[0]

    def decode(self, z) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        if z.shape[1] != self.d_z:
            raise ValueError(f"expected latents of width {self.d_z}, got {z.shape[1]}")
        return self.decoder.forward(z) * self.in_scale + self.in_mean

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.decoder.params()

    def loss_and_grads(self, x_std, eps):
        """Negative ELBO per datum on standardised inputs with fixed noise ``eps``.

        Returns (loss, reconstruction term, KL term, grads in ``params()`` order).
        """
        n = x_std.shape[0]
        dz = self.d_z
        enc_out, enc_acts = self.encoder.forward(x_std, keep=True)
        mu, logvar = enc_out[:, :dz], enc_out[:, dz:]
        half_std = np.exp(0.5 * logvar)
        z = mu + half_std * eps
        rec, dec_acts = self.decoder.forward(z, keep=True)
        s2 = self.noise ** 2
        rec_term = np.sum((rec - x_std) ** 2, axis=1) / (2.0 * s2)
        kl_term = kl_diag_gaussian(mu, logvar)
        loss = float(np.mean(rec_term + kl_term))
        dec_grads, g_z = self.decoder.backward(dec_acts, (rec - x_std) / (s2 * n))
        g_mu = g_z + mu / n
        g_lv = g_z * eps * 0.5 * half_std + 0.5 * np.expm1(logvar) / n
        enc_grads, _ = self.encoder.backward(enc_acts, np.hstack([g_mu, g_lv]))
        return loss, float(np.mean(rec_term)), float(np.mean(kl_term)), enc_grads + dec_grads

    def to_arrays(self):
        meta = {"type": "vae", "enc_widths": self.encoder.widths, "dec_widths": self.decoder.widths,
                "noise": self.noise}
        arrays = {"in_mean": self.in_mean, "in_scale": self.in_scale}
        for q, p in enumerate(self.params()):
            arrays[f"p{q}"] = p
        return meta, arrays

    @classmethod
    def from_arrays(cls, meta, arrays) -> "VaeModel":
        ne = len(meta["enc_widths"]) - 1
        nd = len(meta["dec_widths"]) - 1
        params = [arrays[f"p{q}"] for q in range(2 * (ne + nd))]
        enc = Mlp(list(meta["enc_widths"]), params[0:2 * ne:2], params[1:2 * ne:2])
        dec = Mlp(list(meta["dec_widths"]), params[2 * ne::2], params[2 * ne + 1::2])
        return cls(enc, dec, arrays["in_mean"], arrays["in_scale"], float(meta["noise"]))


def encode(model: VaeModel, x_obs) -> np.ndarray:
    return model.encode(x_obs)


def decode(model: VaeModel, z) -> np.ndarray:
    return model.decode(z)


def train_vae(data, d_z: int, hyper: Optional[VaeHyper] = None, on_batch=None) -> VaeModel:
    """Fit a VAE by Adam on the negative ELBO, one latent sample per datum.

    ``on_batch(model, batch_indices)`` is called after every update, which is
    how latent statistics can be tracked during training. The history records
    every batch loss, per-epoch means, and the Frobenius distance between the
    covariance of encoded training means and the identity.
    """
    hyper = hyper or VaeHyper()
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 100:
        raise ValueError("train_vae needs at least 100 rows")
    if d_z < 1:
        raise ValueError("d_z must be >= 1")
    rng = make_rng(hyper.seed, 31)
    model = VaeModel.init(X.shape[1], d_z, hyper.hidden, rng, noise=hyper.noise)
    model.in_mean = X.mean(axis=0)
    scale = X.std(axis=0)
    model.in_scale = np.where(scale > 1e-12, scale, 1.0)
    Xs = model._enc(X)
    opt = Adam(model.params(), lr=hyper.lr)
    hist = {"batch_loss": [], "epoch_loss": [], "cov_dist": []}
    n = X.shape[0]
    step = 0
    for epoch in range(hyper.epochs):
        perm = rng.permutation(n)
        losses = []
        for start in range(0, n, hyper.batch):
            b = perm[start:start + hyper.batch]
            eps = rng.standard_normal((len(b), d_z))
            loss, _, _, grads = model.loss_and_grads(Xs[b], eps)
            if not math.isfinite(loss):
                raise VaeDivergedError(f"non-finite loss at batch {step}")
            opt.step(grads)
            losses.append(loss)
            step += 1
            if on_batch is not None:
                on_batch(model, b)
        hist["batch_loss"] += losses
        hist["epoch_loss"].append(float(np.mean(losses)))
        mu = model.encode(X)
        hist["cov_dist"].append(float(np.linalg.norm(np.cov(mu, rowvar=False).reshape(d_z, d_z) - np.eye(d_z))))
    model.history = hist
    return model
