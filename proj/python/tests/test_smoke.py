import math

import numpy as np
import pytest

import gencond

TINY = [
    "condense.N=2",
    "condense.M=2",
    "condense.repeats=1",
    "condense.extractor_epochs=1",
    "condense.assoc_size=6",
    "condense.inner_batch=16",
    "networks.feature_width=6",
    "networks.generator_width=4",
    "networks.disc_hidden=[8]",
    "codebook.latent_dim=4",
    "codebook.ipc=3",
]


@pytest.fixture(scope="module")
def toy():
    return gencond.toy_dataset(3, 20, 8, 7), gencond.toy_dataset(3, 10, 8, 7, split="test")


@pytest.fixture(scope="module")
def model(toy):
    return gencond.condense(toy[0], TINY)


def test_toy_dataset(toy):
    train, test = toy
    assert len(train) == 60 and train.num_classes == 3
    assert train.images.shape == (60, 3, 8, 8)
    assert np.all(np.abs(train.images) <= 1.0)
    assert sorted(set(train.labels)) == [0, 1, 2]
    assert test.split == "test"


def test_losses_hand_values():
    d, g = gencond.losses.adversarial(np.full(4, 0.5), np.full(4, 0.5))
    assert math.isclose(d, 2 * math.log(2), abs_tol=1e-12)
    assert math.isclose(g, math.log(2), abs_tol=1e-12)
    assert math.isclose(gencond.losses.inter(np.full((3, 4), 0.7), 1.0), 6.0, abs_tol=1e-12)
    ce = gencond.losses.classification(np.array([[0.0, 0.0]]), [1])
    assert math.isclose(ce, math.log(2), abs_tol=1e-12)


def test_param_count():
    assert gencond.param_count("pixel", 1000, 10, (3, 128, 128)) == 491_520_000
    with pytest.raises(gencond.ArgumentError):
        gencond.param_count("voxel", 10, 1, (3, 8, 8))


def test_condense_synthesize_and_checkpoint(model, tmp_path):
    images, labels = model.synthesize(2)
    assert images.shape == (6, 3, 8, 8)
    assert labels == [0, 0, 1, 1, 2, 2]
    path = tmp_path / "m.gcnd"
    model.save(path)
    again = gencond.load_checkpoint(path)
    assert np.array_equal(again.synthesize(2)[0], images)
    path.write_bytes(path.read_bytes()[:100])
    with pytest.raises(gencond.LoadError):
        gencond.load_checkpoint(path)


def test_condense_reports_steps(toy):
    seen = []
    gencond.condense(toy[0], TINY, on_step=seen.append)
    assert seen and {"L_adv_d", "L_c", "L_f", "L_con"} <= set(seen[0])


def test_evaluate_and_coreset(toy, model):
    train, test = toy
    images, labels, source = gencond.coreset(train, "herding", 2, model)
    assert len(source) == 6
    report = gencond.evaluate(images, labels, 3, test, ["eval.runs=2", "eval.epochs=2", "eval.width=4"])
    assert len(report["per_run"]) == 2
    assert 0.0 <= report["mean"] <= 1.0


def test_selection():
    feats = np.array([[0.0], [1.0], [10.0]])
    assert sorted(gencond.kcenter_select(feats, [0, 1, 2], 2)) == [1, 2]
    assert len(gencond.herding_select(feats, [0, 1, 2], 3)) == 3


def test_config_errors():
    with pytest.raises(gencond.ConfigError):
        gencond.resolve_config(["condense.nope=1"])
    tree = gencond.resolve_config(["condense.N=3"])
    assert tree["condense"]["N"] == 3
