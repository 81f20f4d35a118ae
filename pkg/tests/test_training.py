
import numpy as np
import pytest

from sasnet.training import (
    ABLATION_ROWS,
    CheckpointError,
    ConfigError,
    NumericalFailure,
    TrainConfig,
    ablation_configs,
    build_model,
    dump_config_toml,
    load_checkpoint,
    load_config,
    loss,
    make_optimizer,
    model_from_checkpoint,
    restore,
    save_checkpoint,
    toy_config,
    train,
)


def tiny(**kw):
    base = dict(resolution=16, steps=6, eval_every=3, embed_width=16, hidden_widths=[8, 8], hidden_groups=4,
                band_low=2, band_limit=6, n_band=2, grid_levels=3, grid_base_res=2, grid_finest_res=8,
                grid_table_size=16, decoder_width=6, image="toy")
    base.update(kw)
    return TrainConfig(**base).validate()


def img16():
    rng = np.random.default_rng(0)
    return rng.uniform(size=(16, 16, 1))


# -- config ----------------------------------------------------------------------


def test_validation_lists_every_offending_field():
    with pytest.raises(ConfigError) as exc:
        TrainConfig(band_low=60, band_limit=60, lr_snn=0.0, lambda_l1=-1.0).validate()
    text = str(exc.value)
    for name in ("band_low", "lr_snn", "lambda_l1"):
        assert name in text
    assert len(exc.value.problems) == 3


def test_toml_roundtrip_and_unknown_keys(tmp_path):
    cfg = toy_config(seed=5, hidden_widths=[32])
    p = tmp_path / "c.toml"
    p.write_text(dump_config_toml(cfg))
    assert load_config(p) == cfg
    p.write_text('steps = 3\nbogus = 1\nlr_snn = "fast"\n')
    with pytest.raises(ConfigError) as exc:
        load_config(p)
    assert any("bogus" in q for q in exc.value.problems) and any("lr_snn" in q for q in exc.value.problems)


def test_toy_budget_is_about_eleven_thousand():
    cfg = toy_config()
    sas = build_model(cfg, 1).parameter_counts()["trainable"]
    sir = sum(p.data.size for p in build_model(cfg.replace(model="siren"), 1).parameters().values())
    for n in (sas, sir):
        assert 10_000 <= n <= 12_000


def test_ablation_rows():
    cfgs = ablation_configs(tiny(name="abl"))
    assert len(cfgs) == 9 == len(ABLATION_ROWS)
    assert len({c.name for c in cfgs}) == 9
    assert [(c.use_embedding, c.mask_freq, c.mask_h1, c.mask_h2) for c in cfgs] == ABLATION_ROWS


# -- losses ----------------------------------------------------------------------


def test_all_ones_masks_give_l1_equal_channel_count():
    model = build_model(tiny(), 1)
    dec = model.mask_field.decoder
    dec.W2.data[...] = 0.0
    dec.b2.data[...] = 800.0  # sigmoid saturates to exactly 1.0
    xy = np.random.default_rng(0).uniform(-1, 1, size=(50, 2))
    res = model.forward(model.prepare(xy))
    chans = [model.learned_channels_of_layer(i) for i in range(3)]
    terms = loss(res.output, np.zeros((50, 1)), res.learned_masks, chans, tiny())
    assert terms.l1 == len(dec.learned)
    assert terms.sparse == 50 * sum(max(len(c) - 4, 0) for c in chans)


def test_zero_lambdas_reduce_to_mse():
    cfg = tiny(lambda_l1=0.0, lambda_sparse=0.0)
    model = build_model(cfg, 1)
    xy = np.random.default_rng(0).uniform(-1, 1, size=(20, 2))
    res = model.forward(model.prepare(xy))
    chans = [model.learned_channels_of_layer(i) for i in range(3)]
    gt = np.full((20, 1), 0.3)
    terms = loss(res.output, gt, res.learned_masks, chans, cfg)
    assert float(terms.total.data) == terms.mse == float(np.mean((res.output.data - gt) ** 2))


def test_total_loss_gradient_matches_fd_on_miniature():
    cfg = tiny(embed_width=8, hidden_widths=[4], hidden_groups=2, mask_h2=False, lambda_l1=0.3, lambda_sparse=0.7,
               n_mask=1, grid_table_size=8)
    model = build_model(cfg, 1)
    for t in model.mask_field.grid.tables:
        t.data[...] = np.random.default_rng(1).normal(scale=0.3, size=t.shape)
    xy = np.random.default_rng(2).uniform(-0.9, 0.9, size=(12, 2))
    gt = np.random.default_rng(3).uniform(size=(12, 1))
    prep = model.prepare(xy)
    chans = [model.learned_channels_of_layer(i) for i in range(2)]
    opt = make_optimizer(model, cfg)

    def total():
        res = model.forward(prep)
        return loss(res.output, gt, res.learned_masks, chans, cfg).total

    opt.zero_grad()
    total().backward()
    worst = 0.0
    for name, p in opt.params.items():
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            h = 1e-3 * max(1.0, abs(old))
            flat[i] = old + h
            lp = float(total().data)
            flat[i] = old - h
            lm = float(total().data)
            flat[i] = old
            num = (lp - lm) / (2 * h)
            an = p.grad.reshape(-1)[i]
            worst = max(worst, abs(an - num) / max(abs(an), abs(num), 1e-7))
    assert worst < 1e-4


# -- training loop ------------------------------------------------------------------


def test_zero_steps_returns_initial_model():
    cfg = tiny(steps=0)
    res = train(cfg, img16())
    assert len(res.history) == 1 and res.history[0].step == 0
    fresh = build_model(cfg, 1)
    xy = np.zeros((3, 2))
    np.testing.assert_array_equal(res.model.evaluate(xy), fresh.evaluate(xy))


def test_embedding_frozen_and_fixed_channel_one():
    cfg = tiny(steps=5)
    seen = []

    def cb(step, model, terms):
        seen.append(np.all(model.masks(np.random.default_rng(step).uniform(-1, 1, size=(30, 2)))[:, 0] == 1.0))

    res = train(cfg, img16(), callback=cb, evaluate=False)
    fresh = build_model(cfg, 1)
    np.testing.assert_array_equal(res.model.first.multipliers, fresh.first.multipliers)
    np.testing.assert_array_equal(res.model.first.phases, fresh.first.phases)
    assert all(seen) and len(seen) == 5


def test_loss_decreases_on_tiny_problem():
    res = train(tiny(steps=40, lr_snn=1e-3, lr_mask=1e-2), img16(), evaluate=False)
    assert res.losses[-1, 1] < res.losses[0, 1]


def test_mask_lr_does_not_touch_hidden_update():
    def hidden_after(lr_mask):
        return train(tiny(steps=1, lr_mask=lr_mask), img16(), evaluate=False).model.hidden[0].W.data.copy()

    np.testing.assert_array_equal(hidden_after(1e-4), hidden_after(1e-1))


def test_nan_loss_raises_with_last_good_state():
    img = img16()
    img[0, 0, 0] = np.nan
    with pytest.raises(NumericalFailure) as exc:
        train(tiny(steps=3), img, evaluate=False)
    assert exc.value.step == 0 and exc.value.state.step == 0


def test_sampled_batches_are_seeded():
    a = train(tiny(steps=3, batch=50), img16(), evaluate=False).losses
    b = train(tiny(steps=3, batch=50), img16(), evaluate=False).losses
    np.testing.assert_array_equal(a, b)


# -- checkpoints ---------------------------------------------------------------------


def test_checkpoint_roundtrip_is_byte_identical(tmp_path):
    res = train(tiny(steps=2), img16(), evaluate=False)
    save_checkpoint(tmp_path / "a.sasn", res.checkpoint())
    ck = load_checkpoint(tmp_path / "a.sasn")
    save_checkpoint(tmp_path / "b.sasn", ck)
    assert (tmp_path / "a.sasn").read_bytes() == (tmp_path / "b.sasn").read_bytes()
    model, cfg = model_from_checkpoint(ck)
    xy = np.random.default_rng(0).uniform(-1, 1, size=(5, 2))
    np.testing.assert_array_equal(model.evaluate(xy), res.model.evaluate(xy))


@pytest.mark.parametrize("model_kind", ["sasnet", "siren"])
def test_resume_matches_uninterrupted_run(model_kind):
    cfg = tiny(steps=6, model=model_kind, batch=100, siren_widths=[12, 8])
    full = train(cfg, img16(), evaluate=False)
    part = train(cfg.replace(steps=3), img16(), evaluate=False)
    resumed = train(cfg, img16(), resume=part.checkpoint(), evaluate=False)
    np.testing.assert_array_equal(np.concatenate([part.losses, resumed.losses]), full.losses)
    for name, p in full.optimizer.params.items():
        np.testing.assert_array_equal(p.data, resumed.optimizer.params[name].data)


def test_siren_checkpoint_into_sasnet_model_is_rejected():
    ck = train(tiny(steps=1, model="siren"), img16(), evaluate=False).checkpoint()
    model = build_model(tiny(), 1)
    with pytest.raises(CheckpointError, match="missing"):
        restore(model, make_optimizer(model, tiny()), None, ck)


def test_corrupt_checkpoints(tmp_path):
    p = tmp_path / "x.sasn"
    p.write_bytes(b"NOPE")
    with pytest.raises(CheckpointError, match="not a SASN"):
        load_checkpoint(p)
    res = train(tiny(steps=1), img16(), evaluate=False)
    save_checkpoint(p, res.checkpoint())
    data = p.read_bytes()
    p.write_bytes(data[:-5])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(p)
