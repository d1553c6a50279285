"""Conditional VAE mapping per-node embeddings into an environment-free space.

Nodes from different environments carry environment-specific signal in their
embeddings. The encoder sees a node embedding next to a learned environment
embedding and produces a latent whose KL prior pulls environment information
out of the latent; the decoder gets the environment embedding back, so
reconstruction does not need the latent to carry it.
"""

from __future__ import annotations

import numpy as np

from .tensor import (
    ParamStore,
    Tape,
    Value,
    add,
    clamp,
    concat,
    kl_std_normal,
    mlp2_forward,
    mlp2_init,
    mul,
    reparameterize,
    rows,
    slice_cols,
    sub,
    tile_rows,
    vmean,
)

__all__ = ["NodeVAE", "env_tables_init", "env_embedding"]

LOGVAR_RANGE = 10.0


def env_tables_init(store: ParamStore, num_envs: int, env_dim: int) -> None:
    """Register the two trainable environment embedding tables."""
    store.add("env.structure", (num_envs, env_dim))
    store.add("env.feature", (num_envs, env_dim))


def env_embedding(store: ParamStore, tape: Tape, table: str, label: int) -> Value:
    """One row of an environment table as a (1, env_dim) value."""
    return rows(store.use(tape, "env.%s" % table), [int(label)])


class NodeVAE:
    """Encoder/decoder pair over rows of a node-embedding matrix.

    Parameters are registered in the shared store under ``prefix``; the
    class itself is stateless beyond the dimensions.
    """

    def __init__(self, store: ParamStore, h_dim: int, latent_dim: int = 16,
                 env_dim: int = 16, hidden_dim: int = 64, prefix: str = "nodevae"):
        self.store = store
        self.h_dim = h_dim
        self.latent_dim = latent_dim
        self.env_dim = env_dim
        self.prefix = prefix
        mlp2_init(store, prefix + ".enc", h_dim + env_dim, hidden_dim, 2 * latent_dim)
        mlp2_init(store, prefix + ".dec", latent_dim + env_dim, hidden_dim, h_dim)

    def encode(self, tape: Tape, h: Value, e: Value) -> tuple[Value, Value]:
        """(mu, logvar) for each row of h, conditioned on matching rows of e."""
        out = mlp2_forward(self.store, tape, self.prefix + ".enc", concat([h, e]))
        mu = slice_cols(out, 0, self.latent_dim)
        logvar = clamp(slice_cols(out, self.latent_dim, 2 * self.latent_dim),
                       -LOGVAR_RANGE, LOGVAR_RANGE)
        return mu, logvar

    def decode(self, tape: Tape, z: Value, e: Value) -> Value:
        """Reconstructed node embeddings from latents and environment rows."""
        return mlp2_forward(self.store, tape, self.prefix + ".dec", concat([z, e]))

    def loss(self, tape: Tape, h: np.ndarray, env_row: Value, noise: np.ndarray,
             w_mse: float = 1.0, w_kl: float = 0.1) -> tuple[Value, Value]:
        """Reconstruction-plus-KL loss for one graph's nodes.

        Returns (loss, z) so the caller can reuse the latents. ``noise`` is an
        externally drawn standard-normal array, kept fixed so the loss is a
        deterministic function of the parameters.
        """
        n = h.shape[0]
        if noise.shape != (n, self.latent_dim):
            raise ValueError("noise must be shaped (num_nodes, latent_dim)")
        h_val = Value(np.asarray(h, dtype=np.float64))
        e = tile_rows(env_row, n)
        mu, logvar = self.encode(tape, h_val, e)
        z = reparameterize(mu, logvar, noise)
        recon = self.decode(tape, z, e)
        err = sub(recon, h_val)
        mse = vmean(mul(err, err))
        kl = mul(kl_std_normal(mu, logvar), Value(1.0 / n))
        loss = add(mul(mse, Value(float(w_mse))), mul(kl, Value(float(w_kl))))
        return loss, z
