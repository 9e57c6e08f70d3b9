import numpy as np
import pytest

from policysteer.env import canonical_state, generate_demos, observe
from policysteer.exceptions import CheckpointError, ConfigurationError
from policysteer.worldmodel import (
    RSSMWorldModel,
    WorldModelConfig,
    WorldModelParams,
    decode,
    decode_many,
    encode_init,
    encode_step,
    imagination_kl,
    imagine,
    load_checkpoint,
    one_step_mse,
    reconstruction_mse,
    save_checkpoint,
    train_world_model,
)
from policysteer.worldmodel import rssm

from .oracles import central_difference, relative_error

TINY = dict(d_obs=10, d_act=3, d_h=4, d_z=2, d_hidden=6)


def tiny_problem(seed=0, T=5, B=2):
    rng = np.random.default_rng(seed)
    p = rssm.init_params(rssm.param_shapes(**TINY), rng)
    for k in p:
        p[k] += 0.1 * rng.normal(size=p[k].shape)
    obs = rng.normal(size=(T + 1, B, 10))
    act = rng.normal(size=(T, B, 3))
    eps = rng.normal(size=(T + 1, B, 2))
    return p, obs, act, eps


@pytest.mark.parametrize("free_nats,skip", [(0.0, False), (0.4, False), (0.0, True)])
def test_bptt_matches_central_differences(free_nats, skip):
    p, obs, act, eps = tiny_problem()
    weights = (0.5, 0.1, 1.0)
    sg = rssm.stopgrad_from(rssm.forward(p, obs, act, eps))
    _, grads, _ = rssm.loss_and_grads(p, obs, act, eps, weights, sg, free_nats, skip)

    def total():
        return rssm.losses(rssm.forward(p, obs, act, eps), weights, sg, free_nats, skip)["total"]

    numeric = central_difference(total, p, eps=1e-4)
    for name in p:
        assert relative_error(grads[name], numeric[name]) <= 1e-3, name


def test_stopgrad_operands_split_the_kl_gradient():
    p, obs, act, eps = tiny_problem(1)
    sg = rssm.stopgrad_from(rssm.forward(p, obs, act, eps))
    g_dyn = rssm.backward(p, rssm.forward(p, obs, act, eps), (1.0, 0.0, 0.0), sg)
    # the dyn term trains only the prior head and what feeds h
    assert all(np.all(g_dyn[k] == 0) for k in ("dec_W1", "dec_W2", "dec_b1", "dec_b2"))
    assert np.any(g_dyn["pri_W2"] != 0)
    g_rep = rssm.backward(p, rssm.forward(p, obs, act, eps), (0.0, 1.0, 0.0), sg)
    assert all(np.all(g_rep[k] == 0) for k in ("pri_W1", "pri_W2", "pri_b1", "pri_b2"))


def test_kl_is_nonnegative_every_step(rng):
    for seed in range(10):
        p, obs, act, eps = tiny_problem(seed, T=8, B=3)
        c = rssm.forward(p, obs, act, eps)
        assert np.all(rssm.kl_diag(c["mq"], c["lq"], c["mp"], c["lp"]) >= -1e-12)
    loss = rssm.losses(c, (0.5, 0.1, 1.0))
    assert loss["dyn"] >= 0 and loss["rep"] >= 0


def test_zero_weights_give_bias_vectors():
    params = WorldModelParams.initialize(d_h=4, d_z=2, d_hidden=6)
    params.weights = {k: np.zeros_like(v) for k, v in params.weights.items()}
    params.weights["enc_b2"] = np.array([0.3, -0.7, 0.1, 0.2])
    params.weights["dec_b2"] = np.arange(10.0)
    s = encode_init(params, np.zeros(10), mode="mean")
    np.testing.assert_array_equal(s.z_mean, [0.3, -0.7])
    np.testing.assert_array_equal(s.h, np.zeros(4))
    np.testing.assert_array_equal(decode(params, s), np.arange(10.0))


def test_encoding_is_deterministic_and_shape_checked():
    params = WorldModelParams.initialize(d_h=4, d_z=2, d_hidden=6, seed=3)
    obs = observe(canonical_state())
    a, b = encode_init(params, obs, rng_seed=5), encode_init(params, obs, rng_seed=5)
    np.testing.assert_array_equal(a.z, b.z)
    nxt = encode_step(params, obs, a, np.zeros(3), mode="mean")
    np.testing.assert_array_equal(nxt.z, nxt.z_mean)
    with pytest.raises(ConfigurationError):
        encode_step(params, obs, a, np.zeros(4))
    with pytest.raises(ConfigurationError):
        encode_init(params, np.zeros(9))


def test_encode_step_chain_matches_training_pass():
    params = WorldModelParams.initialize(d_h=4, d_z=2, d_hidden=6, seed=2)
    ep = generate_demos("cup", 1, ["rim"], 0)[0]
    o, a = ep.observations[:9], ep.actions[:8]
    state = encode_init(params, o[0], mode="mean")
    zs = [state.z]
    for t in range(1, 9):
        state = encode_step(params, o[t], state, a[t - 1], mode="mean")
        zs.append(state.z)
    cache = rssm.forward(params.weights, params.norm_obs(o)[:, None], params.norm_act(a)[:, None], np.zeros((9, 1, 2)))
    np.testing.assert_allclose(np.array(zs), cache["mq"][:, 0], atol=1e-12)


def test_imagine_downsamples_and_is_deterministic():
    params = WorldModelParams.initialize(seed=1)
    init = encode_init(params, observe(canonical_state()), mode="mean")
    plan = np.random.default_rng(0).uniform(-0.02, 0.02, size=(64, 3))
    r1, r2 = imagine(params, init, plan), imagine(params, init, plan)
    assert len(r1.states) == 64 and len(r1.downsampled) == 16
    for i, s in enumerate(r1.downsampled):
        assert s is r1.states[4 * (i + 1) - 1]
    for s, t in zip(r1.states, r2.states):
        np.testing.assert_array_equal(s.z, t.z)
    sampled = imagine(params, init, plan, mode="sample", rng_seed=3)
    assert not np.array_equal(sampled.states[-1].z, r1.states[-1].z)


def test_training_is_bit_reproducible():
    eps = generate_demos("cup", 6, ["handle", "rim"], 4)
    cfg = WorldModelConfig(d_h=8, d_z=4, d_hidden=16, max_epochs=3, batch_size=4)
    a, b = train_world_model(eps, cfg), train_world_model(eps, cfg)
    for k in a.weights:
        assert a.weights[k].tobytes() == b.weights[k].tobytes()


def test_zero_prediction_weight_leaves_decoder_untouched(rng):
    eps = generate_demos("cup", 4, ["handle", "rim"], 9)
    for ep in eps:
        ep.observations[:] = rng.normal(size=ep.observations.shape)
    cfg = WorldModelConfig(d_h=8, d_z=4, d_hidden=16, max_epochs=3, batch_size=4, alpha_pred=0.0, patience=10)
    init = WorldModelParams.initialize(8, 4, 16, cfg.seed)
    trained = train_world_model(eps, cfg)
    for k in ("dec_W1", "dec_b1", "dec_W2", "dec_b2"):
        np.testing.assert_array_equal(trained.weights[k], init.weights[k])


def test_training_input_validation():
    with pytest.raises(ConfigurationError):
        train_world_model([])
    with pytest.raises(ConfigurationError):
        WorldModelConfig(lr=0).validate()
    with pytest.raises(ConfigurationError):
        WorldModelConfig(lr_decay=1.5).validate()


def test_trained_model_quality(trained_params, cup_dataset):
    _, train, test = cup_dataset
    init = WorldModelParams.initialize(seed=0)
    init.obs_mean, init.obs_std = trained_params.obs_mean, trained_params.obs_std
    init.act_mean, init.act_std = trained_params.act_mean, trained_params.act_std
    assert one_step_mse(trained_params, test) <= 0.5 * one_step_mse(init, test)
    # normalized units: observation variance is 1 per channel with nonzero spread
    assert reconstruction_mse(trained_params, test) <= 0.1
    assert imagination_kl(trained_params, test) < imagination_kl(init, test)
    obs = observe(canonical_state("cup"))
    recon = decode(trained_params, encode_init(trained_params, obs, mode="mean"))
    assert np.max(np.abs(recon - obs)) < 0.1


def test_checkpoint_round_trip(trained_params, tmp_path):
    path = str(tmp_path / "wm.json")
    manifest = save_checkpoint(trained_params, path)
    assert manifest["dims"]["d_h"] == 32
    back = load_checkpoint(path)
    for k in trained_params.weights:
        np.testing.assert_array_equal(back.weights[k], trained_params.weights[k].astype(np.float32))
    assert back.data_hash == trained_params.data_hash


def test_corrupted_checkpoint_is_rejected(trained_params, tmp_path):
    path = str(tmp_path / "wm.json")
    save_checkpoint(trained_params, path)
    blob = tmp_path / "wm.bin"
    data = bytearray(blob.read_bytes())
    data[100] ^= 0xFF
    blob.write_bytes(bytes(data))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    (tmp_path / "wm.json").write_text("{not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_estimator_wrapper():
    eps = generate_demos("cup", 4, ["handle", "rim"], 1)
    est = RSSMWorldModel(d_h=8, d_z=4, d_hidden=16, max_epochs=2, batch_size=4)
    assert est.get_params()["d_h"] == 8
    est.fit(eps)
    rollouts = est.imagine(eps[0].observations[0], [eps[0].actions[:64]])
    assert decode_many(est.params_, rollouts[0].downsampled).shape == (16, 10)
    assert est.decode(rollouts[0]).shape == (16, 10)
    assert np.isfinite(est.score(eps))
