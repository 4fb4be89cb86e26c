import pytest
import numpy as np
from dataclasses import replace

from src.cells import TRLSTMParams
from src.core.models import ToyTrainConfig
from src.sequence_task import make_task, softmax, SequenceClassifier, run_toytrain
from src.training import grad_check

SMALL = ToyTrainConfig(input_dims=(2, 4), hidden_dims=(2, 2), n_classes=3, steps=3)


def test_make_task_shapes_and_shared_prototypes():
    X, y, protos = make_task(SMALL, 10, seed=0)
    assert X.shape == (10, 3, 8)
    assert y.shape == (10,) and set(y) <= {0, 1, 2}
    X2, _, protos2 = make_task(SMALL, 5, seed=1, prototypes=protos)
    assert protos2 is protos
    assert X2.shape == (5, 3, 8)


def test_softmax_rows_sum_to_one(rng):
    p = softmax(rng.standard_normal((4, 3)) * 100)
    assert np.allclose(p.sum(axis=1), 1.0)
    assert np.all(p >= 0.0)


def test_classifier_gradients():
    X, y, _ = make_task(SMALL, 4, seed=2)
    cell = TRLSTMParams.init(SMALL.input_dims, SMALL.hidden_dims, 2, seed=0)
    model = SequenceClassifier(cell, SMALL.n_classes, seed=0)
    _, analytic = model.loss_and_grads(X, y)

    def loss(params):
        probe = SequenceClassifier(cell, SMALL.n_classes)
        probe.set_parameters(params)
        return probe.loss_and_grads(X, y)[0]

    rep = grad_check(loss, model.parameters(), analytic, 1e-5, 1e-4)
    assert rep.passed, rep.summary()


def test_toy_task_ring_cell_matches_dense_accuracy():
    results = run_toytrain(replace(ToyTrainConfig(), epochs=15))
    tr, dense = results["tr"], results["dense"]
    assert tr.test_accuracy > 0.8
    assert dense.test_accuracy > 0.8
    assert tr.input_params == 4 * 288
    assert tr.input_params < 0.05 * dense.input_params
    assert tr.losses[-1] < tr.losses[0]
