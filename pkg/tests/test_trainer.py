import numpy as np
import numpy.testing as npt
import pytest

from siamnet import dataio, network, pairwise, synth, trainer
from siamnet.errors import (
    DegenerateBatchError,
    NumericalError,
    UnusableDatasetError,
    UsageError,
)
from siamnet.gradcheck import toy_net_config
from siamnet.pairwise import PairMasks
from siamnet.trainer import EpochRecord, TrainConfig, make_batches, sgd_step, train

TOY = toy_net_config()


def tiny_dataset(n_subjects=6, images_per_cam=1, h=48, w=16, seed=0):
    rng = np.random.default_rng(seed)
    images = []
    for s in range(n_subjects):
        base = rng.uniform(40, 215, size=(3, 1, 1))
        for cam in ("a", "b"):
            for idx in range(images_per_cam):
                pixels = np.clip(base + rng.normal(0, 10, size=(3, h, w)), 0, 255)
                images.append(dataio.PersonImage(f"s{s}", cam, idx, pixels))
    return images


# ------------------------------------------------------------- TrainConfig

def test_config_defaults_match_protocol():
    cfg = TrainConfig()
    assert cfg.alpha == 2.0 and cfg.beta == 0.5
    assert cfg.negative_cost == 2.0
    assert cfg.batch_size == 128 and cfg.epochs == 180
    assert cfg.cost_kind == "deviance" and cfg.mode == "general"


def test_config_validation():
    with pytest.raises(UsageError):
        TrainConfig(batch_size=1)
    with pytest.raises(UsageError):
        TrainConfig(epochs=0)
    with pytest.raises(UsageError):
        TrainConfig(cost_kind="hinge")


# ------------------------------------------------------------ make_batches

def test_make_batches_deterministic():
    samples = [(i // 4, 0) for i in range(64)]
    a = make_batches(samples, 16, seed=3, epoch=5)
    b = make_batches(samples, 16, seed=3, epoch=5)
    assert a == b
    c = make_batches(samples, 16, seed=3, epoch=6)
    assert a != c


def test_two_batches_of_128_give_8128_pairs_each():
    samples = [(i // 2, 0) for i in range(256)]
    batches = make_batches(samples, 128, seed=0, epoch=0)
    assert len(batches) == 2
    for batch in batches:
        labels = [samples[i][0] for i in batch]
        masks = pairwise.build_masks(labels, 2.0)
        assert masks.n1 + masks.n2 == 8128


def test_single_subject_dataset_unusable():
    with pytest.raises(UnusableDatasetError):
        make_batches([(7, 0)] * 10, 4, seed=0, epoch=0)


def test_batches_repaired_to_validity():
    # 4 subjects x 2 images in batches of 4: some shuffles isolate subjects
    samples = [(i // 2, 0) for i in range(8)]
    for epoch in range(40):
        batches = make_batches(samples, 4, seed=11, epoch=epoch)
        assert sorted(i for b in batches for i in b) == list(range(8))
        for batch in batches:
            labels = [samples[i][0] for i in batch]
            uniq = len(set(labels))
            assert 2 <= uniq < len(labels)  # a positive and a negative pair


def test_batches_remainder_folds_into_last():
    samples = [(i // 3, 0) for i in range(9)]
    batches = make_batches(samples, 4, seed=0, epoch=0)
    assert [len(b) for b in batches] == [4, 5]


def test_pair_accounting_per_epoch():
    samples = [(i // 2, 0) for i in range(20)]
    batches = make_batches(samples, 6, seed=1, epoch=0)
    total = 0
    for batch in batches:
        labels = [samples[i][0] for i in batch]
        masks = pairwise.build_masks(labels, 2.0)
        total += masks.n1 + masks.n2
    assert total == sum(len(b) * (len(b) - 1) // 2 for b in batches)


def test_view_specific_batches_pair_across_cameras():
    samples = [(i // 2, i % 2) for i in range(16)]
    batches = make_batches(samples, 4, seed=2, epoch=0, mode="view_specific")
    for batch in batches:
        la = [samples[i][0] for i in batch if samples[i][1] == 0]
        lb = [samples[i][0] for i in batch if samples[i][1] == 1]
        assert la and lb
        assert any(x in lb for x in la)
        assert any(x != y for x in la for y in lb)


# --------------------------------------------------------------- sgd_step

def test_sgd_plain_step():
    p = [np.array([1.0, 2.0])]
    g = [np.array([0.5, -1.0])]
    v = [np.zeros(2)]
    sgd_step(p, g, learning_rate=0.1, momentum=0.0, weight_decay=0.0, velocity=v)
    npt.assert_allclose(p[0], [1.0 - 0.05, 2.0 + 0.1])


def test_sgd_weight_decay_shrinks_geometrically():
    p = [np.array([1.0])]
    v = [np.zeros(1)]
    for _ in range(3):
        sgd_step(p, [np.zeros(1)], 0.1, 0.0, 0.5, v)
    npt.assert_allclose(p[0], [(1 - 0.05) ** 3])


def test_sgd_two_steps_hand_computed():
    # p0=1, constant g=0.5, lr=0.1, mu=0.9:
    # v1 = -0.05,  p1 = 0.95;  v2 = 0.9*(-0.05) - 0.05 = -0.095, p2 = 0.855
    p = [np.array([1.0])]
    v = [np.zeros(1)]
    sgd_step(p, [np.array([0.5])], 0.1, 0.9, 0.0, v)
    npt.assert_allclose(p[0], [0.95])
    sgd_step(p, [np.array([0.5])], 0.1, 0.9, 0.0, v)
    npt.assert_allclose(p[0], [0.855])


def test_sgd_rejects_non_finite_gradient():
    with pytest.raises(NumericalError):
        sgd_step([np.ones(1)], [np.array([np.inf])], 0.1, 0.9, 0.0, [np.zeros(1)])


# ------------------------------------------------------------------ train

def test_zero_learning_rate_keeps_parameters():
    images = tiny_dataset(4)
    cfg = TrainConfig(batch_size=8, epochs=3, learning_rate=0.0, seed=5)
    params, records = train(cfg, images, net_config=TOY)
    fresh = network.init_network("general", 5, TOY)
    for a, b in zip(params.tensors(), fresh.tensors()):
        npt.assert_array_equal(a, b)
    costs = [r.train_cost for r in records]
    assert max(costs) - min(costs) < 1e-12


def test_training_reduces_cost_on_tiny_set():
    images = dataio.augment_with_mirrors(tiny_dataset(6, seed=3))
    cfg = TrainConfig(batch_size=12, epochs=5, learning_rate=0.05, seed=1)
    params, records = train(cfg, images, net_config=TOY)
    costs = [r.train_cost for r in records]
    assert costs[-1] < costs[0]
    assert len(records) == 5
    assert all(isinstance(r, EpochRecord) for r in records)


def test_training_deterministic():
    images = tiny_dataset(4, seed=2)
    cfg = TrainConfig(batch_size=8, epochs=2, learning_rate=0.05, seed=7)
    p1, _ = train(cfg, images, net_config=TOY)
    p2, _ = train(cfg, images, net_config=TOY)
    for a, b in zip(p1.tensors(), p2.tensors()):
        npt.assert_array_equal(a, b)


def test_train_records_dev_cost():
    images = tiny_dataset(6, seed=4)
    dev = tiny_dataset(4, seed=9)
    cfg = TrainConfig(batch_size=12, epochs=2, learning_rate=0.02, seed=0)
    _, records = train(cfg, images, dev_set=dev, net_config=TOY)
    assert all(r.dev_cost is not None and np.isfinite(r.dev_cost) for r in records)


def test_view_specific_training_runs():
    images = tiny_dataset(6, seed=5)
    cfg = TrainConfig(batch_size=12, epochs=2, learning_rate=0.02, seed=1,
                      mode="view_specific")
    params, records = train(cfg, images, net_config=TOY)
    assert len(params.sets) == 2
    assert all(np.isfinite(r.train_cost) for r in records)


def test_fisher_training_runs():
    images = tiny_dataset(6, seed=6)
    cfg = TrainConfig(batch_size=12, epochs=2, learning_rate=0.02, seed=1,
                      cost_kind="fisher")
    _, records = train(cfg, images, net_config=TOY)
    assert all(np.isfinite(r.train_cost) for r in records)


def test_train_aborts_on_non_finite_cost_with_diagnostics():
    images = tiny_dataset(4, seed=7)
    poisoned = images[0].pixels.copy()
    poisoned[0, 0, 0] = np.nan
    images[0] = dataio.PersonImage(images[0].subject_id, images[0].camera_id,
                                   images[0].index, poisoned)
    cfg = TrainConfig(batch_size=8, epochs=2, learning_rate=0.01, seed=1)
    with np.errstate(invalid="ignore"):
        with pytest.raises(NumericalError, match="epoch 0 batch 0"):
            train(cfg, images, net_config=TOY)


def test_single_pair_similarities_driven_apart():
    """With only F5 trainable, one positive pair is driven to +1 and one
    negative pair to -1.

    The shared F5 weights couple the two pairs, so per-step monotonicity
    cannot hold exactly; transient backslides stay small and the
    endpoints saturate.
    """
    rng = np.random.default_rng(8)
    params = network.init_network("general", 3, TOY)
    parts = rng.normal(size=(4, 3, 3, TOY.part_h, TOY.image_w))
    M = np.zeros((4, 4))
    M[0, 1], M[2, 3] = 1.0, -1.0
    W = np.abs(M)
    masks = PairMasks(M, W, np.sign(M) * W, 1, 1, 1.0)
    f5 = []
    for p in range(3):
        f5 += [params.sets[0].f5_w[p], params.sets[0].f5_b[p]]
    velocity = [np.zeros_like(t) for t in f5]
    pos_hist, neg_hist = [], []
    for _ in range(60):
        feats, cache = network.forward_batch(params, parts)
        X = feats.T
        S = pairwise.cosine_similarity(X)
        pos_hist.append(S[0, 1])
        neg_hist.append(S[2, 3])
        gX = pairwise.deviance_grad_general(X, S, masks)
        grads = network.backward_batch(params, cache, gX.T)
        gf5 = []
        for p in range(3):
            gf5 += [grads.f5_w[p], grads.f5_b[p]]
        sgd_step(f5, gf5, 0.05, 0.0, 0.0, velocity)
    assert pos_hist[-1] > 0.999 and neg_hist[-1] < -0.999
    assert max(a - b for a, b in zip(pos_hist, pos_hist[1:])) < 0.1
    assert max(b - a for a, b in zip(neg_hist, neg_hist[1:])) < 0.1


def test_epoch_csv(tmp_path):
    records = [EpochRecord(0, 1.5, None, 0.1), EpochRecord(1, 1.2, 1.3, 0.2)]
    path = tmp_path / "epochs.csv"
    trainer.write_epoch_csv(path, records)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,train_cost,dev_cost,seconds"
    assert lines[1].startswith("0,1.5,,")
    assert lines[2].startswith("1,1.2,1.3,")
