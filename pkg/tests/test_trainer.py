import numpy as np
import pytest

from ftl import dataset as dm
from ftl import network as net
from ftl import trainer as trn
from ftl import transfer as tr
from ftl.errors import ConfigInvalid, Diverged, InsufficientData


def _tiny_cfg(**overrides):
    defaults = dict(
        pretrain_iters=200,
        n_iter=20,
        total_alternations=2,
        batch_size=32,
        g_dim=8,
        f_dim=8,
        hidden=16,
        pretrain_min_decrease=0.0,
        seed=0,
    )
    defaults.update(overrides)
    return trn.TrainConfig(**defaults)


def _params_equal(a, b):
    ta, tb = a.tensors(), b.tensors()
    return ta.keys() == tb.keys() and all(np.array_equal(ta[k], tb[k]) for k in ta)


class TestPretrain:
    def test_separable_toy_reaches_accuracy(self):
        cfg = dm.GeneratorConfig(
            n_regular=2, n_ur=0, samples_per_regular=60, input_dim=6,
            shared_cov_rank=2, class_sep=1.5, nuisance_strength=1.0, seed=2,
        )
        ds = dm.generate(cfg)
        tcfg = _tiny_cfg(pretrain_iters=500, seed=4)
        params, trace = trn.pretrain(ds, tcfg)
        z = net.logits(params, net.filter_features(params, net.encode(params, ds.x)))
        acc = (np.argmax(z, axis=1) == ds.labels).mean()
        assert acc >= 0.95
        assert np.mean(trace[-10:]) < trace[0]

    def test_zero_learning_rate_leaves_params_unchanged(self, small_dataset):
        tcfg = _tiny_cfg(pretrain_iters=5, lr_pretrain=0.0)
        params, _ = trn.pretrain(small_dataset, tcfg)
        fresh = net.init_params(tcfg.network_config(small_dataset), tcfg.seed)
        assert _params_equal(params, fresh)

    def test_same_seed_identical(self, small_dataset):
        tcfg = _tiny_cfg(pretrain_iters=50)
        a, _ = trn.pretrain(small_dataset, tcfg)
        b, _ = trn.pretrain(small_dataset, tcfg)
        assert _params_equal(a, b)

    def test_divergence_guard(self, small_dataset):
        # a step this large overflows the squared reconstruction error to inf
        tcfg = _tiny_cfg(pretrain_iters=200, lr_pretrain=1e200)
        with pytest.raises(Diverged):
            trn.pretrain(small_dataset, tcfg)


class TestStage1:
    @pytest.fixture(scope="class")
    def pretrained(self, small_dataset):
        tcfg = _tiny_cfg(pretrain_iters=150)
        params, _ = trn.pretrain(small_dataset, tcfg)
        stats, basis = tr.update_stats(small_dataset, params, tcfg.transfer_cfg)
        return params, stats, basis, tcfg

    def test_enc_dec_frozen_bit_exact(self, small_dataset, pretrained):
        params, stats, basis, tcfg = pretrained
        work = params.copy()
        before = {k: v.copy() for k, v in work.tensors().items()}
        trn.stage1(work, small_dataset, stats, basis, tcfg)
        after = work.tensors()
        for k in before:
            if k.startswith(("enc.", "dec.")):
                assert np.array_equal(before[k], after[k])
        assert not np.array_equal(before["fc.w"], after["fc.w"])

    def test_transferred_labels_are_ur(self, small_dataset, pretrained, monkeypatch):
        params, stats, basis, tcfg = pretrained
        calls = []
        real = trn.train_step_features

        def spy(p, g, labels, weights, opt):
            calls.append(np.asarray(labels).copy())
            return real(p, g, labels, weights, opt)

        monkeypatch.setattr(trn, "train_step_features", spy)
        trn.stage1(params.copy(), small_dataset, stats, basis, tcfg)
        ur = set(small_dataset.ur_ids.tolist())
        regular = set(small_dataset.regular_ids.tolist())
        assert len(calls) == 3 * tcfg.n_iter
        for i in range(0, len(calls), 3):
            assert set(calls[i].tolist()) <= regular  # hard batch
            assert set(calls[i + 1].tolist()) <= ur  # UR batch
            assert set(calls[i + 2].tolist()) <= ur  # transferred batch

    def test_weight_norm_cv_decreases(self, small_dataset):
        from ftl.evaluation import weight_norm_stats

        wins = 0
        for seed in range(5):
            tcfg = _tiny_cfg(pretrain_iters=200, n_iter=100, seed=seed)
            params, _ = trn.pretrain(small_dataset, tcfg)
            cv_before = weight_norm_stats(params.fc)["cv"]
            stats, basis = tr.update_stats(small_dataset, params, tcfg.transfer_cfg)
            trn.stage1(params, small_dataset, stats, basis, tcfg)
            cv_after = weight_norm_stats(params.fc)["cv"]
            wins += cv_after < cv_before
        assert wins >= 4

    def test_requires_ur_samples(self, pretrained):
        params, stats, basis, tcfg = pretrained
        cfg = dm.GeneratorConfig(n_regular=3, n_ur=0, samples_per_regular=30, input_dim=12, shared_cov_rank=4, seed=8)
        no_ur = dm.generate(cfg)
        stats2, basis2 = tr.update_stats(no_ur, lambda x: x[:, :12], tr.TransferConfig())
        with pytest.raises(InsufficientData):
            trn.stage1(params.copy(), no_ur, stats2, basis2, tcfg)


class TestStage2:
    def test_fc_frozen_bit_exact(self, small_dataset):
        tcfg = _tiny_cfg(pretrain_iters=100)
        params, _ = trn.pretrain(small_dataset, tcfg)
        before_fc = params.fc.copy()
        before_enc = params.enc.weights[0].copy()
        trn.stage2(params, small_dataset, tcfg)
        assert np.array_equal(params.fc, before_fc)
        assert not np.array_equal(params.enc.weights[0], before_enc)

    def test_zero_iterations_noop(self, small_dataset):
        tcfg = _tiny_cfg(pretrain_iters=50, n_iter=0)
        params, _ = trn.pretrain(small_dataset, tcfg)
        snapshot = {k: v.copy() for k, v in params.tensors().items()}
        trace = trn.stage2(params, small_dataset, tcfg)
        assert trace == []
        for k, v in params.tensors().items():
            assert np.array_equal(snapshot[k], v)

    def test_compactness_does_not_regress(self, small_dataset):
        tcfg = _tiny_cfg(pretrain_iters=300, n_iter=150)
        params, _ = trn.pretrain(small_dataset, tcfg)

        def mean_intra(p):
            f = net.filter_features(p, net.encode(p, small_dataset.x))
            total = 0.0
            for cls in range(small_dataset.n_classes):
                pts = f[small_dataset.labels == cls]
                total += float(np.linalg.norm(pts - pts.mean(axis=0), axis=1).mean())
            return total / small_dataset.n_classes

        before = mean_intra(params)
        trn.stage2(params, small_dataset, tcfg)
        after = mean_intra(params)
        assert after <= before * 1.05


class TestRunFtl:
    def test_zero_alternations_equals_pretrain(self, small_dataset):
        tcfg = _tiny_cfg(pretrain_iters=80, total_alternations=0)
        params, report = trn.run_ftl(small_dataset, tcfg)
        pre, _ = trn.pretrain(small_dataset, tcfg)
        assert _params_equal(params, pre)
        assert report.total_steps == tcfg.pretrain_iters

    def test_traces_finite_and_sized(self, small_dataset):
        tcfg = _tiny_cfg()
        params, report = trn.run_ftl(small_dataset, tcfg)
        assert len(report.pretrain_trace) == tcfg.pretrain_iters
        assert len(report.stage_traces) == tcfg.total_alternations
        for entry in report.stage_traces:
            assert len(entry["stage1"]) == tcfg.n_iter
            assert len(entry["stage2"]) == tcfg.n_iter
            assert np.all(np.isfinite(entry["stage1"]))
            assert np.all(np.isfinite(entry["stage2"]))
        assert len(report.snapshots) == tcfg.total_alternations + 1

    def test_deterministic(self, small_dataset):
        tcfg = _tiny_cfg()
        pa, ra = trn.run_ftl(small_dataset, tcfg)
        pb, rb = trn.run_ftl(small_dataset, tcfg)
        assert _params_equal(pa, pb)
        assert ra.to_dict() == rb.to_dict()

    def test_budget_fairness(self, small_dataset, monkeypatch):
        counts = {"n": 0}
        real = net.Adam.update

        def counting(self, tensors, grads):
            counts["n"] += 1
            return real(self, tensors, grads)

        monkeypatch.setattr(net.Adam, "update", counting)
        tcfg = _tiny_cfg()
        counts["n"] = 0
        _, report_ftl = trn.run_ftl(small_dataset, tcfg)
        ftl_steps = counts["n"]
        counts["n"] = 0
        _, report_base = trn.run_baseline(small_dataset, tcfg)
        base_steps = counts["n"]
        assert ftl_steps == base_steps
        assert report_ftl.total_steps == report_base.total_steps == ftl_steps

    def test_events_emitted(self, small_dataset):
        tcfg = _tiny_cfg(pretrain_iters=100, total_alternations=1)
        events = []
        trn.run_ftl(small_dataset, tcfg, on_event=events.append)
        kinds = {e["event"] for e in events}
        assert "pretrain_progress" in kinds
        assert "snapshot" in kinds

    def test_validate_rejects_bad_config(self, small_dataset):
        with pytest.raises(ConfigInvalid):
            trn.run_ftl(small_dataset, _tiny_cfg(lr_pretrain=0.0))
        with pytest.raises(ConfigInvalid):
            trn.run_ftl(small_dataset, _tiny_cfg(batch_size=0))
