import json
import math

import numpy as np
import pytest

from legalmt.corpus import make_batches
from legalmt.model import TransformerModel, is_decayed
from legalmt.tensor import Tensor
from legalmt.toy import reduced_config
from legalmt.train import (
    MAGIC,
    Checkpoint,
    CheckpointError,
    NonFiniteGradientError,
    OptimState,
    TrainConfig,
    TrainingDiverged,
    adam_step,
    adamw_step,
    clip_grad_norm,
    continue_training,
    evaluate_loss,
    train,
    train_step,
)

from conftest import toy_train_config


def arr(x):
    return np.array(x, dtype=np.float64)


# --------------------------------------------------------------- optimizers


def test_adam_single_scalar_step():
    params = {"w": arr([0.0])}
    adam_step(params, {"w": arr([1.0])}, OptimState(), 0.1)
    assert params["w"][0] == pytest.approx(-0.1 / (1 + 1e-8), abs=1e-15)
    assert params["w"][0] == pytest.approx(-0.09999999, abs=1e-8)


def test_adam_zero_gradient_leaves_params():
    params = {"a": arr([[1.5, -2.0]]), "b": arr([3.0])}
    before = {k: v.copy() for k, v in params.items()}
    adam_step(params, {k: np.zeros_like(v) for k, v in params.items()}, OptimState(), 0.1)
    for k in params:
        np.testing.assert_array_equal(params[k], before[k])


def test_adamw_decay_isolated():
    params = {"enc.0.ff.w1": arr([[1.0]])}
    adamw_step(params, {"enc.0.ff.w1": arr([[0.0]])}, OptimState(), 2e-5, 0.01)
    assert params["enc.0.ff.w1"][0, 0] == pytest.approx(0.9999998, abs=1e-15)


def test_adamw_two_parameter_hand_computation():
    # weight matrix (decayed) and bias (not decayed), two steps
    w, b = "enc.0.ff.w1", "enc.0.ff.b1"
    params = {w: arr([[0.5]]), b: arr([-0.3])}
    state = OptimState()
    lr, wd = 0.01, 0.1
    adamw_step(params, {w: arr([[0.2]]), b: arr([-0.4])}, state, lr, wd)
    assert params[w][0, 0] == pytest.approx(0.5 - 0.0005 - 0.01 * 0.2 / (0.2 + 1e-8), abs=1e-15)
    assert params[b][0] == pytest.approx(-0.3 + 0.01 * 0.4 / (0.4 + 1e-8), abs=1e-15)
    assert state.m[w][0, 0] == pytest.approx(0.02) and state.v[w][0, 0] == pytest.approx(4e-5)
    assert state.m[b][0] == pytest.approx(-0.04) and state.v[b][0] == pytest.approx(1.6e-4)

    theta = params[w][0, 0]
    adamw_step(params, {w: arr([[0.1]]), b: arr([0.0])}, state, lr, wd)
    m = 0.9 * 0.02 + 0.1 * 0.1
    v = 0.999 * 4e-5 + 0.001 * 0.01
    m_hat, v_hat = m / (1 - 0.9 ** 2), v / (1 - 0.999 ** 2)
    assert m == pytest.approx(0.028) and v == pytest.approx(4.996e-5)
    expected = theta - lr * wd * theta - lr * m_hat / (math.sqrt(v_hat) + 1e-8)
    assert params[w][0, 0] == pytest.approx(expected, abs=1e-14)
    assert state.step == 2


def test_adamw_without_decay_is_bitwise_adam():
    rs = np.random.default_rng(0)
    names = ["enc.0.self.wq", "enc.0.self.bq", "embed"]
    p1 = {n: rs.normal(size=(3, 4)) for n in names}
    p2 = {n: v.copy() for n, v in p1.items()}
    s1, s2 = OptimState(), OptimState()
    for _ in range(5):
        g = {n: rs.normal(size=(3, 4)) for n in names}
        adam_step(p1, g, s1, 1e-3)
        adamw_step(p2, {k: v.copy() for k, v in g.items()}, s2, 1e-3, 0.0)
    for n in names:
        assert p1[n].tobytes() == p2[n].tobytes()


def test_decay_exclusion_set():
    assert is_decayed("enc.1.self.wq") and is_decayed("dec.0.ff.w2") and is_decayed("out_proj")
    for name in ("embed", "src_embed", "enc.0.self.bq", "dec.2.ln1.gain", "dec.2.ln1.bias", "enc.ln_final.gain"):
        assert not is_decayed(name)
    params = {"embed": arr([2.0]), "enc.0.ln1.gain": arr([2.0])}
    adamw_step(params, {k: arr([0.0]) for k in params}, OptimState(), 0.1, 0.5)
    assert params["embed"][0] == 2.0 and params["enc.0.ln1.gain"][0] == 2.0


def test_non_finite_gradient_names_parameter():
    params = {"good": arr([1.0]), "dec.0.ff.w1": arr([1.0, 2.0])}
    with pytest.raises(NonFiniteGradientError, match="dec.0.ff.w1"):
        adam_step(params, {"good": arr([0.1]), "dec.0.ff.w1": arr([np.nan, 1.0])}, OptimState(), 0.1)
    assert params["good"][0] == 1.0


def test_tensor_params_updated_in_place():
    t = Tensor(arr([1.0, 2.0]), requires_grad=True)
    adam_step({"x": t}, {"x": arr([1.0, -1.0])}, OptimState(), 0.5)
    np.testing.assert_allclose(t.data, [0.5, 2.5], atol=1e-7)


def test_clip_grad_norm():
    grads = {"a": arr([3.0]), "b": arr([4.0])}
    assert clip_grad_norm(grads, 1.0) == pytest.approx(5.0)
    total = math.sqrt(sum(float((g ** 2).sum()) for g in grads.values()))
    assert total == pytest.approx(1.0, abs=1e-6)
    small = {"a": arr([0.3])}
    clip_grad_norm(small, 1.0)
    assert small["a"][0] == 0.3


def test_steps_stay_finite_with_huge_gradients():
    params = {"enc.0.ff.w1": arr(np.ones((4, 4)))}
    state = OptimState()
    for k in range(20):
        g = {"enc.0.ff.w1": arr(np.full((4, 4), 1e30 * (-1) ** k))}
        clip_grad_norm(g, 1.0)
        adamw_step(params, g, state, 1e-3, 0.01)
    assert np.isfinite(params["enc.0.ff.w1"]).all()


# ------------------------------------------------------------------ presets


def test_scratch_preset():
    cfg = TrainConfig.from_preset("scratch")
    assert (cfg.batch_size, cfg.max_len, cfg.optimizer, cfg.weight_decay) == (32, 256, "adam", 0.0)
    assert (cfg.learning_rate, cfg.warmup_steps, cfg.schedule) == (5e-4, 4000, "inverse_sqrt")
    assert cfg.grad_clip_norm == 1.0


def test_continued_preset():
    cfg = TrainConfig.from_preset("continued")
    assert (cfg.learning_rate, cfg.weight_decay, cfg.batch_size, cfg.max_len) == (2e-5, 0.01, 32, 128)
    assert cfg.optimizer == "adamw"


def test_preset_overrides_and_validation():
    assert TrainConfig.from_preset("continued", batch_size=8).batch_size == 8
    with pytest.raises(ValueError):
        TrainConfig.from_preset("finetune")
    with pytest.raises(ValueError):
        TrainConfig(optimizer="sgd")


def test_inverse_sqrt_schedule():
    cfg = TrainConfig.from_preset("scratch")
    assert cfg.lr_at(1) == pytest.approx(5e-4 / 4000)
    assert cfg.lr_at(4000) == pytest.approx(5e-4)
    assert cfg.lr_at(16000) == pytest.approx(2.5e-4)
    rates = [cfg.lr_at(s) for s in range(1, 10000, 97)]
    peak = rates.index(max(rates))
    assert rates[:peak + 1] == sorted(rates[:peak + 1])
    assert rates[peak:] == sorted(rates[peak:], reverse=True)
    assert TrainConfig.from_preset("scratch", schedule="constant").lr_at(7) == 5e-4


# --------------------------------------------------------------- checkpoints


def small_model(toy_subword, seed=0):
    # dropout on, so resuming must also restore the dropout stream
    return TransformerModel(reduced_config(toy_subword.vocab_size, num_layers=1, d_model=32, num_heads=4,
                                           d_ff=64, dropout=0.1), seed=seed)


def test_checkpoint_round_trip(tmp_path, toy_corpus, toy_subword):
    model = small_model(toy_subword)
    cfg = toy_train_config(max_epochs=1)
    res = train(model, toy_corpus, toy_subword, cfg, checkpoint_dir=tmp_path)
    ck = Checkpoint.load(tmp_path / "last.mtfg")
    raw = (tmp_path / "last.mtfg").read_bytes()
    assert raw[:4] == MAGIC and int.from_bytes(raw[4:8], "little") == 1
    assert ck.model_config == model.config and ck.epoch == 1 and ck.step == res.optim.step
    assert ck.subword_hash == toy_subword.content_hash
    assert ck.train_config == cfg.to_dict()
    for k, v in model.state_dict().items():
        assert ck.params[k].tobytes() == v.tobytes()
        assert ck.optim.m[k].tobytes() == res.optim.m[k].tobytes()
    assert Checkpoint.from_bytes(ck.to_bytes()).to_bytes() == raw


def test_checkpoint_rejects_garbage(tmp_path):
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(b"NOPE" + bytes(20))
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(MAGIC + (7).to_bytes(4, "little") + bytes(8))


def test_save_load_one_step_is_bitwise(tmp_path, toy_corpus, toy_subword):
    cfg = toy_train_config()
    batch = make_batches(toy_corpus, toy_subword, 16, 64, shuffle_seed=1)[0]
    a = small_model(toy_subword, seed=5)
    optim = OptimState.for_params(a.params)
    train_step(a, batch, optim, cfg)
    Checkpoint(a.config, a.state_dict(), optim, optim.step, 0, toy_subword.content_hash, cfg.to_dict(),
               a.rng.state()).save(tmp_path / "c.mtfg")

    ck = Checkpoint.load(tmp_path / "c.mtfg")
    b = ck.build_model()
    loss_a = train_step(a, batch, optim, cfg)
    loss_b = train_step(b, batch, ck.optim, cfg)
    assert loss_a == loss_b
    for k in a.params:
        assert a.params[k].data.tobytes() == b.params[k].data.tobytes()


def test_resume_matches_uninterrupted(tmp_path, toy_corpus, toy_subword):
    cfg = toy_train_config(max_epochs=4)
    full = train(small_model(toy_subword), toy_corpus, toy_subword, cfg, checkpoint_dir=tmp_path / "a",
                 log_path=tmp_path / "a.jsonl")
    ck = Checkpoint.load(tmp_path / "a" / "epoch0002.mtfg")
    resumed = train(small_model(toy_subword, seed=99), toy_corpus, toy_subword, cfg, resume=ck)
    assert [r.train_loss for r in resumed.history] == [r.train_loss for r in full.history[2:]]
    for k in full.model.params:
        assert full.model.params[k].data.tobytes() == resumed.model.params[k].data.tobytes()
    log = [json.loads(line) for line in (tmp_path / "a.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [1, 2, 3, 4]
    assert set(log[0]) == {"epoch", "train_loss", "valid_loss", "lr", "step"}


def test_identical_runs_identical_trajectories(toy_corpus, toy_subword):
    cfg = toy_train_config(max_epochs=2)
    a = train(small_model(toy_subword), toy_corpus, toy_subword, cfg)
    b = train(small_model(toy_subword), toy_corpus, toy_subword, cfg)
    assert [r.train_loss for r in a.history] == [r.train_loss for r in b.history]


def test_validation_loss_recorded(toy_corpus, toy_subword):
    res = train(small_model(toy_subword), toy_corpus, toy_subword, toy_train_config(max_epochs=1), valid=toy_corpus)
    assert res.history[0].valid_loss is not None and math.isfinite(res.history[0].valid_loss)


@pytest.mark.parametrize("target, error", [
    ("dec.ln_final.gain", TrainingDiverged),  # NaN logits, so NaN loss
    ("dec.0.ff.w1", NonFiniteGradientError),  # relu hides the NaN from the loss, not from the gradient
])
def test_divergence_aborts_and_keeps_last_good_checkpoint(tmp_path, toy_corpus, toy_subword, target, error):
    model = small_model(toy_subword)

    def poison(rec):
        model.params[target].data[...] = np.nan

    with pytest.raises(error):
        train(model, toy_corpus, toy_subword, toy_train_config(max_epochs=3), checkpoint_dir=tmp_path,
              epoch_callback=poison)
    ck = Checkpoint.load(tmp_path / "last.mtfg")
    assert ck.epoch == 1
    assert all(np.isfinite(v).all() for v in ck.params.values())


def test_vocab_mismatch_rejected(toy_corpus, toy_subword):
    model = TransformerModel(reduced_config(300))
    with pytest.raises(ValueError):
        train(model, toy_corpus, toy_subword, toy_train_config(max_epochs=1))


# ---------------------------------------------------------- continued runs


def test_continue_requires_matching_subword(tmp_path, toy_corpus, toy_subword):
    from legalmt.subword import train_subword

    train(small_model(toy_subword), toy_corpus, toy_subword, toy_train_config(max_epochs=1), checkpoint_dir=tmp_path)
    ck = Checkpoint.load(tmp_path / "last.mtfg")
    other = train_subword(toy_corpus.sources[:10], 60)
    with pytest.raises(CheckpointError):
        continue_training(ck, toy_corpus, other)
    with pytest.raises(ValueError):
        continue_training(ck, toy_corpus, toy_subword, toy_train_config())


def test_continued_training_does_not_raise_loss(tmp_path, trained_toy, toy_corpus, toy_subword):
    result, _ = trained_toy
    model = result.model
    ck = Checkpoint(model.config, model.state_dict(), result.optim, result.optim.step, len(result.history),
                    toy_subword.content_hash, None, model.rng.state())
    batches = make_batches(toy_corpus, toy_subword, 32, 64)
    before = evaluate_loss(model, batches)
    smoothed = float(np.mean([r.train_loss for r in result.history[-10:]]))
    cont = continue_training(ck, toy_corpus, toy_subword, TrainConfig.from_preset("continued", max_epochs=1))
    assert cont.optim.step == 2  # 64 pairs, batch 32
    assert cont.history[0].train_loss <= 1.05 * smoothed
    assert evaluate_loss(cont.model, batches) <= 1.05 * before


# ------------------------------------------------------------------ toy run


def test_toy_initial_loss_is_log_vocab(trained_toy, toy_subword):
    _, initial = trained_toy
    assert abs(initial - math.log(toy_subword.vocab_size)) < 0.2


def test_toy_copy_task_learned(trained_toy):
    result, _ = trained_toy
    losses = [r.train_loss for r in result.history]
    assert len(losses) == 300
    assert min(losses) < 0.5 and losses[-1] < 0.5


def test_toy_loss_moving_average_non_increasing(trained_toy):
    losses = np.array([r.train_loss for r in trained_toy[0].history])
    avg = np.convolve(losses, np.ones(10) / 10, mode="valid")
    assert np.all(np.diff(avg) <= 0), np.flatnonzero(np.diff(avg) > 0)
