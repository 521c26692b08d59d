import numpy as np
import pytest

from ltcl import datasets, models, training
from ltcl.errors import DivergenceError, ScheduleExhaustedError
from ltcl.models import ParamLayout


class QuadraticSurrogate:
    """1-D objective (x - target)^2; ignores the dataset."""

    def __init__(self, x0=0.0, target=3.0):
        self.x = np.array([x0])
        self.target = target
        self.layout = ParamLayout([("x", (1,))])

    def copy(self):
        return QuadraticSurrogate(self.x[0], self.target)

    def get_params(self):
        return self.x.copy()

    def set_params(self, flat):
        self.x = np.asarray(flat, dtype=np.float64).copy()

    def loss_and_gradient(self, features, labels, spec):
        diff = self.x[0] - self.target
        return diff * diff, np.array([2.0 * diff])


def _dummy_dataset(n=1):
    return datasets.LabeledDataset.from_arrays(
        np.zeros((n, 1)), np.zeros(n, dtype=int), n_classes=1
    )


def _lt_dataset(seed=0):
    src = datasets.synthetic_gaussian(5, 4, 60, 2.0, seed=seed)
    return datasets.make_longtail(src, 5.0, seed=seed)


def test_quadratic_surrogate_convergence():
    cfg = training.TrainConfig(learning_rate=0.1, epochs=200)
    trained, trace = training.train(QuadraticSurrogate(), _dummy_dataset(), models.LossSpec(), cfg)
    assert abs(trained.get_params()[0] - 3.0) <= 1e-6
    assert trace.epochs_run == 200


def test_train_to_stationarity_sets_converged():
    ds = _lt_dataset()
    spec = models.LossSpec(mu=0.1)
    smooth = models.softmax_smoothness_bound(ds, 0.1)
    lr, beta = training.heavy_ball_settings(smooth, 0.1)
    cfg = training.TrainConfig(learning_rate=lr, momentum=beta, epochs=100_000, grad_tolerance=1e-8)
    _, trace = training.train(models.LinearModel.zeros(4, 5), ds, spec, cfg)
    assert trace.converged
    assert trace.final_grad_norm <= 1e-8
    assert trace.epochs_run < 100_000


def test_same_seed_bitwise_identical():
    ds = _lt_dataset()
    spec = models.LossSpec(mu=0.01)
    cfg = training.TrainConfig(learning_rate=0.05, momentum=0.9, epochs=12, batch_size=16, seed=33)
    model = models.MlpModel.initialize([4, 6, 5], seed=1)
    a, _ = training.train(model, ds, spec, cfg)
    b, _ = training.train(model, ds, spec, cfg)
    assert np.array_equal(a.get_params(), b.get_params())


def test_different_seed_differs():
    ds = _lt_dataset()
    spec = models.LossSpec(mu=0.01)
    model = models.MlpModel.initialize([4, 6, 5], seed=1)
    a, _ = training.train(
        model, ds, spec, training.TrainConfig(learning_rate=0.05, epochs=5, batch_size=16, seed=1)
    )
    b, _ = training.train(
        model, ds, spec, training.TrainConfig(learning_rate=0.05, epochs=5, batch_size=16, seed=2)
    )
    assert not np.array_equal(a.get_params(), b.get_params())


def test_train_does_not_mutate_input_model():
    ds = _lt_dataset()
    model = models.LinearModel.zeros(4, 5)
    before = model.get_params()
    training.train(model, ds, models.LossSpec(mu=0.01), training.TrainConfig(learning_rate=0.1, epochs=3))
    assert np.array_equal(model.get_params(), before)


@pytest.mark.filterwarnings("ignore:overflow")
@pytest.mark.filterwarnings("ignore:invalid value")
def test_divergence_error_carries_epoch():
    ds = _lt_dataset()
    cfg = training.TrainConfig(learning_rate=1e6, epochs=500)
    with pytest.raises(DivergenceError) as excinfo:
        training.train(models.LinearModel.zeros(4, 5), ds, models.LossSpec(mu=0.01), cfg)
    assert excinfo.value.epoch > 0


def test_monotone_loss_full_batch():
    ds = _lt_dataset()
    mu = 0.05
    spec = models.LossSpec(mu=mu)
    smooth = models.softmax_smoothness_bound(ds, mu)
    cfg = training.TrainConfig(learning_rate=0.5 / smooth, epochs=300)
    _, trace = training.train(models.LinearModel.zeros(4, 5), ds, spec, cfg)
    diffs = np.diff(trace.epoch_losses)
    assert np.all(diffs <= 1e-12)


def test_minimizer_unique_across_inits():
    ds = _lt_dataset(seed=4)
    mu = 0.1
    spec = models.LossSpec(mu=mu)
    smooth = models.softmax_smoothness_bound(ds, mu)
    lr, beta = training.heavy_ball_settings(smooth, mu)
    cfg = training.TrainConfig(learning_rate=lr, momentum=beta, epochs=100_000, grad_tolerance=1e-8)
    finals = []
    for seed in range(5):
        model = models.LinearModel.initialize(4, 5, seed=seed)
        trained, trace = training.train(model, ds, spec, cfg)
        assert trace.converged
        finals.append(trained.get_params())
    for other in finals[1:]:
        assert np.linalg.norm(finals[0] - other) <= 1e-5


def test_cosine_anneal_endpoints():
    assert training.cosine_anneal(0.1, 0.0, 0, 10) == pytest.approx(0.1)
    assert training.cosine_anneal(0.1, 0.01, 10, 10) == pytest.approx(0.01)
    assert training.cosine_anneal(0.001, 0.0, 5, 10) == pytest.approx(0.0005)


def test_cosine_anneal_exhausted():
    with pytest.raises(ScheduleExhaustedError):
        training.cosine_anneal(0.1, 0.0, 11, 10)


def test_cosine_schedule_in_train():
    # lr at the last epoch reaches lr_min; loss stays finite
    ds = _lt_dataset()
    cfg = training.TrainConfig(
        learning_rate=0.1, epochs=10, schedule="cosine", lr_min=0.001
    )
    _, trace = training.train(models.LinearModel.zeros(4, 5), ds, models.LossSpec(mu=0.01), cfg)
    assert trace.epochs_run == 10
    assert np.all(np.isfinite(trace.epoch_losses))


def test_config_validation():
    with pytest.raises(ValueError):
        training.TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        training.TrainConfig(learning_rate=0.1, momentum=1.0)
    with pytest.raises(ValueError):
        training.TrainConfig(learning_rate=0.1, epochs=0)
    with pytest.raises(ValueError):
        training.TrainConfig(learning_rate=0.1, schedule="linear")
