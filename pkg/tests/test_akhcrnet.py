import math

import numpy as np
import pytest

from network.akhcrnet import (backward, build_akhcrnet, build_graph, forward, init_params, make_checkpoint,
                              predict, predict_proba, restore_checkpoint)
from network.optimizer import AdamState, adam_step
from schema.run_schema import ArchitectureSpec, LossConfig
from utils.checkpoint_io import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from utils.errors import FormatError, RangeError, ShapeError, UsageError
from utils.gradient_check import check_gradient
from utils.tensor_core import Precision, make_rng


@pytest.fixture(scope="module")
def full_model():
    return build_akhcrnet(seed=0)


def _reduced(seed=0, precision=Precision.WIDE, n_classes=5):
    spec = ArchitectureSpec.reduced_clone(n_classes)
    graph = build_graph(spec)
    return graph, init_params(graph, seed, precision)


def _loss_cfg(spec, lam=1e-3):
    names = [f"dense{k}.kernel" for k in range(1, len(spec.dense_widths) + 1)]
    return LossConfig(lam=lam, regularized_param_names=names)


class TestArchitecture:
    def test_static_shape_trace(self, full_model):
        graph, _ = full_model
        shapes = {n.name: n.out_shape for n in graph.nodes}
        assert shapes["input"] == (32, 32, 1)
        assert shapes["pool1"] == (16, 16, 32)
        assert shapes["inc_concat"] == (16, 16, 448)
        assert shapes["block1_pool_b"] == (4, 4, 256)
        assert shapes["block2_pool_b"] == (1, 1, 512)
        assert shapes["flatten"] == (512,)
        assert [shapes[f"dense{k}"] for k in range(1, 5)] == [(1024,), (512,), (256,), (128,)]
        assert shapes["logits"] == (84,)

    def test_inception_branches_merge(self, full_model):
        graph, _ = full_model
        concat = graph.node("inc_concat")
        assert concat.inputs == ["inc_a_conv_relu", "inc_b_conv_relu", "inc_c_conv_relu", "inc_d_conv_relu"]
        assert graph.node("inc_d_pool").window == 3 and graph.node("inc_d_pool").stride == 1
        assert graph.node("dense2_dropout").rate == 0.5
        assert [n.name for n in graph.nodes if n.mode_sensitive] == \
            ["bn1", "block1_bn", "block2_bn", "dense2_dropout"]

    def test_same_seed_same_params(self, full_model):
        _, store = full_model
        _, again = build_akhcrnet(seed=0)
        assert store.parameter_count() == again.parameter_count()
        for name, value in store.params.items():
            np.testing.assert_array_equal(value, again.params[name])
        assert np.all(store.params["conv1.bias"] == 0)

    def test_ablation_drops_inception(self):
        graph, _ = build_akhcrnet(seed=0, spec=ArchitectureSpec(use_inception=False))
        names = {n.name for n in graph.nodes}
        assert "inc_concat" not in names
        assert graph.node("block2_pool_b").out_shape == (1, 1, 512)

    def test_summary_counts_parameters(self, full_model):
        graph, store = full_model
        rows = graph.summary(store)
        assert sum(r[3] for r in rows) == store.parameter_count()
        assert dict((r[0], r[3]) for r in rows)["conv1"] == 5 * 5 * 1 * 32 + 32


class TestForward:
    def test_output_is_distribution(self, full_model, rng):
        graph, store = full_model
        probs = predict_proba(graph, store, rng.random((2, 32, 32, 1)).astype(np.float32))
        assert probs.shape == (2, 84)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_initial_loss_near_log_84(self, full_model):
        graph, store = full_model
        images = make_rng(11).random((16, 32, 32, 1)).astype(np.float32)
        labels = make_rng(12).integers(0, 84, 16)
        work = store.copy()
        logits, cache = forward(graph, work, images, mode="train", rng=make_rng(0))
        report, _ = backward(graph, work, cache, labels, _loss_cfg(graph.spec, lam=0.0))
        assert abs(report.data_loss - math.log(84)) < 0.2

    def test_infer_is_pure(self, full_model, rng):
        graph, store = full_model
        images = rng.random((2, 32, 32, 1)).astype(np.float32)
        a, _ = forward(graph, store, images, mode="infer")
        b, _ = forward(graph, store, images, mode="infer")
        np.testing.assert_array_equal(a, b)

    def test_train_mode_reproducible_with_fixed_dropout_seed(self):
        graph, store = _reduced(precision=Precision.STANDARD)
        images = make_rng(1).random((4, 8, 8, 1))
        a, _ = forward(graph, store.copy(), images, mode="train", rng=make_rng(3))
        b, _ = forward(graph, store.copy(), images, mode="train", rng=make_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_shape_mismatch(self, full_model):
        graph, store = full_model
        with pytest.raises(ShapeError):
            forward(graph, store, np.zeros((1, 28, 28, 1), dtype=np.float32))


class TestBackward:
    def test_reduced_clone_gradient_check(self):
        graph, store = _reduced(seed=4)
        cfg = _loss_cfg(graph.spec, lam=0.05)
        images = make_rng(5).random((4, 8, 8, 1))
        labels = np.array([0, 3, 1, 4])

        def run(trial):
            # fresh generator per pass so the dropout mask stays fixed
            _, cache = forward(graph, trial, images, mode="train", rng=make_rng(9))
            return backward(graph, trial, cache, labels, cfg)

        def loss():
            trial = store.copy()
            trial.params = store.params
            return run(trial)[0].total

        _, grads = run(store.copy())
        for name, value in store.params.items():
            err = check_gradient(loss, value, grads[name], max_entries=24, seed=len(name))
            assert err < 1e-3, f"{name}: relative error {err:.2e}"

    def test_zero_lambda_removes_l2_term(self):
        graph, store = _reduced(seed=1)
        images = make_rng(2).random((4, 8, 8, 1))
        labels = np.array([1, 2, 3, 4])
        out = []
        for lam in (0.0, 0.5):
            work = store.copy()
            _, cache = forward(graph, work, images, mode="train", rng=make_rng(0))
            out.append(backward(graph, work, cache, labels, _loss_cfg(graph.spec, lam))[1])
        m = images.shape[0]
        np.testing.assert_allclose(out[1]["dense1.kernel"] - out[0]["dense1.kernel"],
                                   0.5 / m * store.params["dense1.kernel"], atol=1e-12)
        np.testing.assert_array_equal(out[1]["logits.kernel"], out[0]["logits.kernel"])

    def test_stale_and_infer_caches_rejected(self):
        graph, store = _reduced()
        images = make_rng(0).random((2, 8, 8, 1))
        cfg = _loss_cfg(graph.spec)
        _, cache = forward(graph, store, images, mode="infer")
        with pytest.raises(UsageError):
            backward(graph, store, cache, np.array([0, 1]), cfg)
        _, cache = forward(graph, store, images, mode="train", rng=make_rng(0))
        store.mark_updated()
        with pytest.raises(UsageError):
            backward(graph, store, cache, np.array([0, 1]), cfg)

    def test_overfits_fixed_batch(self):
        spec = ArchitectureSpec.reduced_clone().model_copy(update={"dropout_rate": 0.0})
        graph = build_graph(spec)
        store = init_params(graph, 2, Precision.STANDARD)
        images = make_rng(3).random((16, 8, 8, 1)).astype(np.float32)
        labels = np.arange(16) % 5
        state, cfg, losses = AdamState(), _loss_cfg(spec), []
        for _ in range(50):
            _, cache = forward(graph, store, images, mode="train")
            report, grads = backward(graph, store, cache, labels, cfg)
            adam_step(store.params, grads, state, 1e-2)
            store.mark_updated()
            losses.append(report.total)
        assert np.mean(losses[-5:]) < 0.6 * np.mean(losses[:5])


class TestPredict:
    def test_topk_ranking(self, full_model, rng):
        graph, store = full_model
        image = rng.random((32, 32, 1)).astype(np.float32)
        ranked = predict(graph, store, image, topk=5)
        probs = [r.probability for r in ranked]
        assert len(ranked) == 5 and probs == sorted(probs, reverse=True)
        assert [r.rank for r in ranked] == [1, 2, 3, 4, 5]
        logits, _ = forward(graph, store, image[None], mode="infer")
        assert ranked[0].class_id == int(np.argmax(logits[0]))

    def test_all_classes_sum_to_one_and_near_uniform(self, full_model, rng):
        graph, store = full_model
        ranked = predict(graph, store, rng.random((32, 32, 1)).astype(np.float32), topk=84)
        assert sum(r.probability for r in ranked) == pytest.approx(1.0, abs=1e-6)
        assert ranked[0].probability < 0.2

    @pytest.mark.parametrize("topk", [0, 85])
    def test_topk_range(self, full_model, topk):
        graph, store = full_model
        with pytest.raises(RangeError):
            predict(graph, store, np.zeros((32, 32, 1), dtype=np.float32), topk=topk)


class TestCheckpoint:
    def _trained(self):
        graph, store = _reduced(seed=6, precision=Precision.STANDARD)
        state = AdamState()
        images = make_rng(1).random((6, 8, 8, 1)).astype(np.float32)
        labels = np.arange(6) % 5
        for step in range(3):
            _, cache = forward(graph, store, images, mode="train", rng=make_rng(step))
            _, grads = backward(graph, store, cache, labels, _loss_cfg(graph.spec))
            adam_step(store.params, grads, state, 1e-3)
            store.mark_updated()
        return graph, store, state, images, labels

    def test_bit_exact_round_trip(self, tmp_path):
        graph, store, state, _, _ = self._trained()
        ckpt = make_checkpoint(graph, store, state, epoch=3, class_names=list("abcde"))
        path = save_checkpoint(tmp_path / "m.akhw", ckpt)
        loaded = load_checkpoint(path)
        save_checkpoint(tmp_path / "again.akhw", loaded)
        assert path.read_bytes() == (tmp_path / "again.akhw").read_bytes()

        g2, s2, st2 = restore_checkpoint(loaded)
        assert loaded.epoch == 3 and loaded.class_names == list("abcde")
        assert g2.spec == graph.spec
        for name in store.params:
            np.testing.assert_array_equal(s2.params[name], store.params[name])
            np.testing.assert_array_equal(st2.m[name], state.m[name])
            np.testing.assert_array_equal(st2.v[name], state.v[name])
        for name in store.buffers:
            np.testing.assert_array_equal(s2.buffers[name], store.buffers[name])
        assert st2.t == state.t == 3

    def test_truncated_and_corrupted(self):
        graph, store, state, _, _ = self._trained()
        data = encode_checkpoint(make_checkpoint(graph, store, state, 1, list("abcde")))
        with pytest.raises(FormatError, match="offset"):
            decode_checkpoint(data[:-20])
        with pytest.raises(FormatError):
            decode_checkpoint(b"XXXX" + data[4:])
        flipped = bytearray(data)
        flipped[len(data) // 2] ^= 0xFF
        with pytest.raises(FormatError):
            decode_checkpoint(bytes(flipped))

    def test_tensors_that_do_not_fit_the_graph(self):
        graph, store, state, _, _ = self._trained()
        ckpt = make_checkpoint(graph, store, state, 1, list("abcde"))
        extra = ckpt.model_copy(update={"params": {**ckpt.params, "ghost/kernel": np.zeros(3, dtype=np.float32)}})
        with pytest.raises(FormatError, match="ghost/kernel") as info:
            restore_checkpoint(extra, "m.akhw")
        assert info.value.path == "m.akhw"
        first = next(iter(ckpt.params))
        resized = ckpt.model_copy(update={"params": {**ckpt.params, first: np.zeros(7, dtype=np.float32)}})
        with pytest.raises(FormatError):
            restore_checkpoint(resized)

    def test_resume_matches_uninterrupted(self):
        graph, store, state, images, labels = self._trained()
        cfg = _loss_cfg(graph.spec)

        def run(g, s, st, steps):
            for step in steps:
                _, cache = forward(g, s, images, mode="train", rng=make_rng([7, step]))
                _, grads = backward(g, s, cache, labels, cfg)
                adam_step(s.params, grads, st, 1e-3)
                s.mark_updated()

        snapshot = decode_checkpoint(encode_checkpoint(make_checkpoint(graph, store, state, 3, list("abcde"))))
        run(graph, store, state, range(3, 6))
        g2, s2, st2 = restore_checkpoint(snapshot)
        run(g2, s2, st2, range(3, 6))
        for name in store.params:
            np.testing.assert_array_equal(s2.params[name], store.params[name])
