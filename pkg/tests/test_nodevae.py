"""Node-level variational autoencoder and environment embedding tables."""

import numpy as np
import pytest

from envexplain.nodevae import LOGVAR_RANGE, NodeVAE, env_embedding, env_tables_init
from envexplain.tensor import ParamStore, Tape, Value, grad_check, vsum


def small_vae(seed=0, h_dim=5, latent=3, env=4, hidden=8):
    store = ParamStore(seed=seed)
    env_tables_init(store, num_envs=3, env_dim=env)
    vae = NodeVAE(store, h_dim=h_dim, latent_dim=latent, env_dim=env, hidden_dim=hidden)
    return store, vae


def zero_all(store):
    for name in store.names():
        store.array(name)[...] = 0.0


class TestEnvTables:
    def test_shapes(self):
        store = ParamStore(seed=0)
        env_tables_init(store, num_envs=3, env_dim=4)
        assert store.manifest() == {"env.structure": [3, 4], "env.feature": [3, 4]}

    def test_embedding_is_the_table_row(self):
        store = ParamStore(seed=0)
        env_tables_init(store, num_envs=3, env_dim=4)
        tape = Tape()
        row = env_embedding(store, tape, "structure", 2)
        assert row.shape == (1, 4)
        np.testing.assert_array_equal(row.data[0], store.array("env.structure")[2])

    def test_tables_are_distinct(self):
        store = ParamStore(seed=0)
        env_tables_init(store, num_envs=3, env_dim=4)
        tape = Tape()
        a = env_embedding(store, tape, "structure", 1)
        b = env_embedding(store, tape, "feature", 1)
        assert not np.array_equal(a.data, b.data)

    def test_unknown_table_rejected(self):
        store = ParamStore(seed=0)
        env_tables_init(store, num_envs=3, env_dim=4)
        with pytest.raises(KeyError):
            env_embedding(store, Tape(), "weather", 0)

    def test_gradient_hits_only_the_used_row(self):
        store = ParamStore(seed=0)
        env_tables_init(store, num_envs=3, env_dim=4)
        tape = Tape()
        row = env_embedding(store, tape, "structure", 1)
        tape.backward(vsum(row))
        grads = store.gradients(tape)
        np.testing.assert_array_equal(grads["env.structure"][1], np.ones(4))
        assert np.all(grads["env.structure"][[0, 2]] == 0.0)
        assert np.all(grads["env.feature"] == 0.0)


class TestNodeVAE:
    def test_encode_shapes_and_logvar_clamp(self):
        store, vae = small_vae()
        store.array("nodevae.enc.w2")[...] = 50.0
        tape = Tape()
        h = Value(np.ones((6, 5)))
        e = Value(np.ones((6, 4)))
        mu, logvar = vae.encode(tape, h, e)
        assert mu.shape == (6, 3) and logvar.shape == (6, 3)
        assert logvar.data.max() <= LOGVAR_RANGE
        assert logvar.data.min() >= -LOGVAR_RANGE

    def test_zero_network_loss_is_feature_power(self):
        # All-zero parameters give mu = logvar = 0, z = noise, recon = 0,
        # so the loss reduces to w_mse * mean(h^2) with zero divergence term.
        store, vae = small_vae()
        zero_all(store)
        rng = np.random.default_rng(0)
        h = rng.normal(size=(4, 5))
        noise = rng.normal(size=(4, 3))
        tape = Tape()
        env_row = env_embedding(store, tape, "structure", 0)
        loss, z = vae.loss(tape, h, env_row, noise, w_mse=0.7, w_kl=0.3)
        assert abs(float(loss.data) - 0.7 * np.mean(h * h)) < 1e-12
        np.testing.assert_allclose(z.data, noise, atol=1e-15)

    def test_constant_mean_gives_closed_form_divergence(self):
        # Encoder biased so mu = c and logvar = 0 on zero inputs: the
        # divergence term is 0.5 * latent * c^2 per node.
        store, vae = small_vae()
        zero_all(store)
        c = 0.8
        store.array("nodevae.enc.b2")[:3] = c
        h = np.zeros((6, 5))
        noise = np.zeros((6, 3))
        tape = Tape()
        env_row = env_embedding(store, tape, "structure", 0)
        loss, z = vae.loss(tape, h, env_row, noise, w_mse=1.0, w_kl=0.5)
        np.testing.assert_allclose(z.data, np.full((6, 3), c), atol=1e-15)
        assert abs(float(loss.data) - 0.5 * (0.5 * 3 * c * c)) < 1e-12

    def test_noise_shape_validated(self):
        store, vae = small_vae()
        tape = Tape()
        env_row = env_embedding(store, tape, "structure", 0)
        with pytest.raises(ValueError, match="noise"):
            vae.loss(tape, np.zeros((4, 5)), env_row, np.zeros((4, 2)))

    def test_loss_deterministic(self):
        vals = []
        for _ in range(2):
            store, vae = small_vae(seed=7)
            rng = np.random.default_rng(3)
            h = rng.normal(size=(5, 5))
            noise = rng.normal(size=(5, 3))
            tape = Tape()
            env_row = env_embedding(store, tape, "feature", 1)
            loss, _ = vae.loss(tape, h, env_row, noise)
            vals.append(float(loss.data))
        assert vals[0] == vals[1]

    def test_gradients_match_finite_differences(self):
        store, vae = small_vae(seed=2)
        rng = np.random.default_rng(5)
        h = rng.normal(size=(4, 5))
        noise = rng.normal(size=(4, 3))

        def loss_fn(s, tape):
            env_row = env_embedding(s, tape, "structure", 1)
            loss, _ = vae.loss(tape, h, env_row, noise)
            return loss

        assert grad_check(loss_fn, store, max_entries=8) < 1e-4

    def test_environment_conditioning_changes_output(self):
        store, vae = small_vae(seed=4)
        rng = np.random.default_rng(1)
        h = rng.normal(size=(3, 5))
        noise = rng.normal(size=(3, 3))
        outs = []
        for label in (0, 1):
            tape = Tape()
            env_row = env_embedding(store, tape, "structure", label)
            loss, _ = vae.loss(tape, h, env_row, noise)
            outs.append(float(loss.data))
        assert outs[0] != outs[1]
