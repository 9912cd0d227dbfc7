import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from knn_oracle import oracle_verdict
from stepmetric.data import Dataset, LabeledImage, render_dataset
from stepmetric.embed import EmbedderConfig, build_embedder
from stepmetric.errors import ConfigError, DatasetError
from stepmetric.gallery import (Gallery, Prediction, build_gallery, classify, classify_many, embeddings_csv,
                                evaluate, leave_one_out_nn, pairwise_distances, resolve_tau, score)

TINY = EmbedderConfig(input_size=16, channels=(4, 4, 8, 8), embed_dim=128)


def test_pairwise_against_loop(rng):
    a, b = rng.standard_normal((7, 5)), rng.standard_normal((300, 5))
    want = np.array([[np.sqrt(np.sum((x - y) ** 2)) for y in b] for x in a])
    np.testing.assert_allclose(pairwise_distances(a, b), want, rtol=1e-12)
    np.testing.assert_allclose(pairwise_distances(a, b, block=7), want, rtol=1e-12)


def test_classify_matches_oracle_continuous(rng):
    g = Gallery(rng.standard_normal((120, 8)), rng.integers(1, 9, size=120), k=10, tau=3.5)
    queries = rng.standard_normal((300, 8)) * 1.3
    for q, p in zip(queries, classify_many(g, queries)):
        assert p.verdict == oracle_verdict(g.vectors, g.labels, q, g.k, g.tau)
        assert classify(g, q).verdict == p.verdict


@given(st.integers(0, 2**31 - 1), st.integers(1, 12))
def test_classify_matches_oracle_with_ties(seed, k):
    # integer coordinates produce many equal distances and tied votes
    r = np.random.default_rng(seed)
    n = int(r.integers(k, 40))
    g = Gallery(r.integers(-2, 3, size=(n, 3)).astype(float), r.integers(1, 5, size=n), k=k, tau=2.5)
    for q in r.integers(-3, 4, size=(10, 3)).astype(float):
        assert classify(g, q).verdict == oracle_verdict(g.vectors, g.labels, q, k, g.tau)


@given(st.integers(0, 2**31 - 1))
def test_verdict_invariant_to_gallery_order(seed):
    r = np.random.default_rng(seed)
    vec = r.integers(-2, 3, size=(30, 3)).astype(float)
    lab = r.integers(1, 5, size=30)
    perm = r.permutation(30)
    g1 = Gallery(vec, lab, k=7, tau=2.0)
    g2 = Gallery(vec[perm], lab[perm], k=7, tau=2.0)
    for q in r.integers(-3, 4, size=(10, 3)).astype(float):
        assert classify(g1, q).verdict == classify(g2, q).verdict


def test_self_match_and_threshold(rng):
    vec = rng.standard_normal((40, 4))
    lab = np.repeat(np.arange(1, 9), 5)
    g = Gallery(vec, lab, k=1, tau=100.0)
    assert classify(g, vec[22]).verdict == 5
    # a point farther than tau from every gallery vector
    far = np.full(4, 50.0)
    nearest = pairwise_distances(far[None], vec).min()
    g = Gallery(vec, lab, k=3, tau=nearest - 1e-9)
    p = classify(g, far)
    assert p.is_anomaly and p.verdict == "anomaly" and p.nearest == pytest.approx(nearest)
    g = Gallery(vec, lab, k=3, tau=nearest)
    assert not classify(g, far).is_anomaly


def test_gallery_invariants():
    with pytest.raises(ConfigError):
        Gallery(np.zeros((5, 2)), np.ones(5), k=6)
    with pytest.raises(ConfigError):
        Gallery(np.zeros((5, 2)), np.ones(4), k=1)
    with pytest.raises(ConfigError):
        Gallery(np.zeros((5, 2)), np.ones(5), k=1, tau=0.0)


def test_resolve_tau():
    assert resolve_tau("auto", 1.0, 0.5) == 2.5
    assert resolve_tau(0.5, 1.0, 0.5) == 0.5
    assert resolve_tau("0.5", 1.0, 0.5) == 0.5
    with pytest.raises(ConfigError):
        resolve_tau(-1, 1.0, 0.5)
    with pytest.raises(ConfigError):
        resolve_tau("median", 1.0, 0.5)


def test_leave_one_out_with_duplicates():
    vec = np.array([[0.0, 0.0], [0.0, 0.0], [3.0, 4.0]])
    np.testing.assert_array_equal(leave_one_out_nn(vec), [0.0, 0.0, 5.0])


def test_build_gallery(tiny_dataset):
    model = build_embedder(TINY, seed=0)
    g = build_gallery(model, tiny_dataset, k=3)
    assert g.vectors.shape == (12, 128) and g.steps == [1, 2, 3]
    nn = leave_one_out_nn(g.vectors)
    assert g.tau == pytest.approx(nn.mean() + 3 * nn.std())
    assert build_gallery(model, tiny_dataset, k=3, tau_rule=0.5).tau == 0.5
    assert build_gallery(model, tiny_dataset, k=3).tau == g.tau
    with pytest.raises(ConfigError):
        build_gallery(model, tiny_dataset, k=12)


def test_duplicates_feed_zero_into_stats():
    img = render_dataset(0, 2, 2, 16).images
    dup = Dataset.from_images(img + [LabeledImage(img[0].pixels, img[0].step, "dup")])
    g = build_gallery(build_embedder(TINY, seed=0), dup, k=2)
    nn = leave_one_out_nn(g.vectors)
    assert nn.min() == 0.0 and g.nn_mean == pytest.approx(nn.mean())


def test_gallery_save_load(tmp_path, rng):
    g = Gallery(rng.standard_normal((12, 4)), np.arange(12) % 3 + 1, k=4, tau=1.5, nn_mean=0.4, nn_std=0.1,
                source_ids=[f"id{i}" for i in range(12)])
    g.save(tmp_path / "g.npz")
    h = Gallery.load(tmp_path / "g.npz")
    np.testing.assert_array_equal(h.vectors, g.vectors)
    assert (h.k, h.tau, h.nn_mean, h.source_ids) == (4, 1.5, 0.4, g.source_ids)
    with pytest.raises(DatasetError):
        Gallery.load(tmp_path / "missing.npz")


def test_memorised_training_set_scores_one(tiny_dataset):
    model = build_embedder(TINY, seed=0)
    g = build_gallery(model, tiny_dataset, k=1, tau_rule=1e6)
    res = evaluate(model, g, tiny_dataset)
    assert res.accuracy == 1.0 and res.rejection_rate == 0.0
    assert np.trace(res.confusion[:, :3]) == 12


def test_all_rejected(tiny_dataset):
    model = build_embedder(TINY, seed=0)
    g = build_gallery(model, tiny_dataset, k=1, tau_rule=1e-12)
    far = Dataset.from_images(LabeledImage(np.ones((16, 16, 3), np.float32) * (i % 2), s, f"x{s}{i}")
                              for s in (1, 2, 3) for i in range(2))
    res = evaluate(model, g, far)
    assert res.accuracy == 0.0 and res.rejection_rate == 1.0 and res.accuracy_accepted == 0.0
    assert res.confusion[:, -1].tolist() == [2, 2, 2]


def test_empty_test_set(tiny_dataset):
    model = build_embedder(TINY, seed=0)
    with pytest.raises(DatasetError):
        evaluate(model, build_gallery(model, tiny_dataset, k=1), Dataset())


def test_score_and_csv():
    preds = [Prediction(1, 0.1, {}), Prediction(2, 0.1, {}), Prediction(None, 9.0, {}), Prediction(2, 0.2, {})]
    res = score(preds, [1, 1, 2, 2], [1, 2])
    assert res.accuracy == 0.5 and res.rejection_rate == 0.25
    assert res.accuracy_accepted == pytest.approx(2 / 3)
    assert res.confusion_csv() == "true_step,pred_1,pred_2,rejected\n1,1,1,0\n2,0,1,1\n"


def test_embeddings_csv():
    text = embeddings_csv(np.array([[0.5, -1.0]]), [3], ["step_3/0000"])
    assert text == "source_id,step,e0,e1\nstep_3/0000,3,0.5,-1.0\n"
