import numpy as np
import pytest

from resnls.autodiff import Tape, Tensor
from resnls.data import DateRange, split
from resnls.errors import ConfigError, ContractError, DivergenceError, EmptyDatasetError
from resnls.models import ModelSpec, build
from resnls.training import AdamState, LossCurve, TrainConfig, adam_step, eval_mse, mse_loss, train
from resnls.synthetic import sine_series


def test_mse_examples():
    assert mse_loss(Tensor([[1.0], [2.0]]), Tensor([[1.0], [2.0]])).item() == 0.0
    assert mse_loss(Tensor([[1.0], [2.0]]), Tensor([[0.0], [0.0]])).item() == 2.5


def test_adam_zero_gradient_leaves_parameter():
    p = Tensor([1.0, -2.0], requires_grad=True)
    p.grad = np.zeros(2)
    adam_step(AdamState(), {"w": p}, TrainConfig(learning_rate=0.1))
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_by_hand():
    p = Tensor([1.0], requires_grad=True)
    p.grad = np.array([1.0])
    adam_step(AdamState(), {"w": p}, TrainConfig(learning_rate=0.1))
    # m_hat = v_hat = 1, so the step is lr / (1 + eps)
    assert abs(p.item() - 0.9) < 1e-9


def test_adam_two_steps_against_reference():
    cfg = TrainConfig(learning_rate=0.05, adam_beta1=0.8, adam_beta2=0.9)
    p = Tensor([0.5, -0.25], requires_grad=True)
    state = AdamState()
    m = v = np.zeros(2)
    ref = p.data.copy()
    for t, g in enumerate([np.array([0.3, -1.0]), np.array([-0.2, 0.4])], start=1):
        p.grad = g.copy()
        adam_step(state, {"w": p}, cfg)
        m = 0.8 * m + 0.2 * g
        v = 0.9 * v + 0.1 * g * g
        ref = ref - 0.05 * (m / (1 - 0.8**t)) / (np.sqrt(v / (1 - 0.9**t)) + 1e-8)
    np.testing.assert_allclose(p.data, ref, rtol=1e-14)


def test_decoupled_decay_on_named_parameters_only():
    cfg = TrainConfig(learning_rate=0.01, weight_decay=1e-5)
    kernel = Tensor([2.0, -4.0], requires_grad=True)
    other = Tensor([2.0, -4.0], requires_grad=True)
    kernel.grad, other.grad = np.zeros(2), np.zeros(2)
    adam_step(AdamState(), {"conv1.weight": kernel, "head.weight": other}, cfg, decayed=("conv1.weight",))
    np.testing.assert_array_equal(kernel.data, np.array([2.0, -4.0]) * (1 - 0.01 * 1e-5))
    np.testing.assert_array_equal(other.data, [2.0, -4.0])


def test_decay_targets_are_conv_kernels():
    assert build(ModelSpec()).decayed_parameters == ("conv1.weight", "conv2.weight")
    assert build(ModelSpec(architecture="lstm")).decayed_parameters == ()


def test_missing_gradient_names_parameter():
    a, b = Tensor([1.0], requires_grad=True), Tensor([1.0], requires_grad=True)
    a.grad = np.zeros(1)
    with pytest.raises(ContractError, match="'lstm.b_f'"):
        adam_step(AdamState(), {"head.bias": a, "lstm.b_f": b}, TrainConfig())


def test_config_validation():
    for bad in (dict(epochs=0), dict(batch_size=0), dict(learning_rate=-1.0), dict(adam_beta1=1.0),
                dict(adam_eps=0.0), dict(weight_decay=-1e-5)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()


@pytest.fixture(scope="module")
def small_split():
    series = sine_series(length=140, period=40, noise=5.0)
    tr = DateRange(series.dates[0], series.dates[109])
    te = DateRange(series.dates[110], series.dates[-1])
    return split(series, tr, te, 5)


def small_model(arch="resnls", seed=0):
    return build(ModelSpec(architecture=arch, conv_filters=8, lstm_hidden=6, init_seed=seed))


def test_zero_learning_rate_changes_nothing(small_split):
    model = small_model()
    before = {k: v.data.copy() for k, v in model.parameters.items()}
    # weight decay scales by (1 - lr*wd) = 1 when lr is 0
    _, curve = train(model, (small_split.train, small_split.test), TrainConfig(epochs=1, learning_rate=0.0))
    assert len(curve) == 1
    for k, v in model.parameters.items():
        np.testing.assert_array_equal(v.data, before[k])


def test_training_is_deterministic(small_split):
    cfg = TrainConfig(epochs=2, batch_size=16, shuffle_seed=5)
    runs = [train(small_model(seed=2), (small_split.train, small_split.test), cfg) for _ in range(2)]
    assert runs[0][1] == runs[1][1]
    for k, v in runs[0][0].parameters.items():
        assert v.data.tobytes() == runs[1][0].parameters[k].data.tobytes()
    other = train(small_model(seed=2), (small_split.train, small_split.test), TrainConfig(epochs=2, batch_size=16,
                                                                                          shuffle_seed=6))
    assert other[1] != runs[0][1]


def test_partial_last_batch_is_used(small_split, monkeypatch):
    seen = []
    import resnls.training as training

    real = training.adam_step

    def spy(state, params, config, decayed=()):
        seen.append(next(iter(params.values())).grad is not None)
        real(state, params, config, decayed)

    monkeypatch.setattr(training, "adam_step", spy)
    count = len(small_split.train)
    train(small_model(), (small_split.train, small_split.test), TrainConfig(epochs=1, batch_size=32))
    assert len(seen) == -(-count // 32) and count % 32


def test_loss_curve_records_eval_mse(small_split):
    model, curve = train(small_model(), (small_split.train, small_split.test), TrainConfig(epochs=3))
    assert len(curve.train_mse) == len(curve.test_mse) == 3
    assert curve.test_mse[-1] == eval_mse(model, small_split.test)
    assert model.fingerprint["final_test_mse"] == curve.test_mse[-1]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported_with_location(small_split):
    model = small_model("lstm")
    model.head.weight.data[:] = np.inf
    with pytest.raises(DivergenceError) as err:
        train(model, (small_split.train, small_split.test), TrainConfig(epochs=1))
    assert (err.value.epoch, err.value.batch) == (0, 0)


def test_empty_data_rejected(small_split):
    empty = type(small_split.test)(Tensor([[0.0] * 5]), Tensor([[0.0]]), 5, (), ())
    with pytest.raises(EmptyDatasetError):
        train(small_model(), (small_split.train, empty), TrainConfig(epochs=1))


def test_loss_curve_csv(tmp_path):
    LossCurve([0.5, 0.25], [0.75, 0.125]).to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text() == "epoch,train_mse,test_mse\n0,0.5,0.75\n1,0.25,0.125\n"


def test_gradients_flow_to_every_parameter(rng):
    model = small_model()
    model.zero_grad()
    with Tape() as tape:
        loss = mse_loss(model.forward(Tensor(rng.uniform(size=(4, 5))), "train"), Tensor(rng.uniform(size=(4, 1))))
    tape.backward(loss)
    assert all(np.any(p.grad != 0) for p in model.parameters.values())
