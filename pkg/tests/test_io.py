import json

import numpy as np
import pytest

from gman import io
from gman.data import NormStats, PartitionSpec
from gman.mixer import init_gman, score_batch
from gman.synth import SPARSE_TRAJ_RULE, feature_xor, set_xor, sparse_traj
from gman.training import TrainConfig
from helpers import random_sample

GOOD = {"set_id": "s0", "label": 1, "graphs": [{"channel": "a", "nodes": [{"t": 0.0, "x": [1.0, 2.0]}]}]}


def _write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


class TestDatasetParser:
    def test_good_record(self):
        s = io.parse_sample(GOOD)
        assert s.set_id == "s0" and s.label == 1 and s.trajectories[0].features.tolist() == [[1.0, 2.0]]

    @pytest.mark.parametrize("literal", ["NaN", "Infinity", "-Infinity"])
    def test_rejects_non_finite_literals(self, tmp_path, literal):
        line = json.dumps(GOOD).replace("1.0, 2.0", f"1.0, {literal}")
        path = _write_lines(tmp_path / "d.jsonl", [line])
        with pytest.raises(io.FormatError, match=r"d\.jsonl:1"):
            io.load_dataset(path)

    def test_rejects_ragged(self, tmp_path):
        rec = {"set_id": "s", "label": 0, "graphs": [
            {"channel": "a", "nodes": [{"t": 0.0, "x": [1.0, 2.0]}, {"t": 1.0, "x": [1.0]}]}]}
        with pytest.raises(io.FormatError, match="ragged"):
            io.parse_sample(rec)

    def test_rejects_ragged_across_channels(self):
        rec = {"set_id": "s", "label": 0, "graphs": [
            {"channel": "a", "nodes": [{"t": 0.0, "x": [1.0, 2.0]}]},
            {"channel": "b", "nodes": [{"t": 0.0, "x": [1.0]}]}]}
        with pytest.raises(io.FormatError, match="ragged"):
            io.parse_sample(rec)

    def test_rejects_duplicate_channel(self):
        rec = dict(GOOD, graphs=GOOD["graphs"] * 2)
        with pytest.raises(io.FormatError, match="duplicate channel 'a'"):
            io.parse_sample(rec)

    def test_rejects_duplicate_set_id(self, tmp_path):
        path = _write_lines(tmp_path / "d.jsonl", [json.dumps(GOOD)] * 2)
        with pytest.raises(io.FormatError, match=r"d\.jsonl:2: duplicate set_id"):
            io.load_dataset(path)

    @pytest.mark.parametrize(
        "record,needle",
        [({"label": 1, "graphs": []}, "set_id"), (dict(GOOD, label=2), "label"), (dict(GOOD, graphs=[]), "graphs"),
         (dict(GOOD, graphs=[{"channel": "a", "nodes": []}]), "no nodes"),
         (dict(GOOD, graphs=[{"channel": "a", "nodes": [{"t": "x", "x": [1.0]}]}]), "timestamp"),
         (dict(GOOD, graphs=[{"channel": "a", "nodes": [{"t": 0, "x": [True]}]}]), "feature vector")],
    )
    def test_rejects_malformed(self, record, needle):
        with pytest.raises(io.FormatError, match=needle):
            io.parse_sample(record)

    def test_meta_header(self, tmp_path):
        path = _write_lines(tmp_path / "d.jsonl", [json.dumps({"_meta": {"task": "t"}}), json.dumps(GOOD), ""])
        ds = io.load_dataset(path)
        assert ds.meta == {"task": "t"} and len(ds) == 1

    def test_meta_must_come_first(self, tmp_path):
        path = _write_lines(tmp_path / "d.jsonl", [json.dumps(GOOD), json.dumps({"_meta": {}})])
        with pytest.raises(io.FormatError, match="first"):
            io.load_dataset(path)

    def test_unlabelled_allowed(self):
        assert io.parse_sample(dict(GOOD, label=None)).label is None


class TestPartitionAndConfigFiles:
    def test_partition_round_trip(self, tmp_path):
        part = PartitionSpec(((1,), (0, 2)), (("a", "b"), ("c",)))
        io.save_partition(part, tmp_path / "p.json")
        assert io.load_partition(tmp_path / "p.json") == part

    def test_bad_partition_file(self, tmp_path):
        (tmp_path / "p.json").write_text('{"feature_subsets": [[0]]}')
        with pytest.raises(io.FormatError, match="partition"):
            io.load_partition(tmp_path / "p.json")

    def test_config_unknown_key(self, tmp_path):
        (tmp_path / "c.json").write_text('{"max_epochs": 3, "lr": 0.1}')
        with pytest.raises(io.FormatError, match="unknown"):
            io.load_config(tmp_path / "c.json")


class TestCheckpoint:
    def _ckpt(self, seed=0):
        part = PartitionSpec(((0, 1), (2,)), (("a", "b"), ("c",)))
        rng = np.random.default_rng(seed)
        params = init_gman(part, seed, hidden_width=5, n_hidden=2)
        params = params.with_arrays([a + rng.standard_normal(a.shape) * 1e-3 for a in params.arrays()])
        stats = NormStats(rng.standard_normal(3), rng.uniform(0.5, 2.0, 3))
        return io.Checkpoint(params, part, TrainConfig(max_epochs=3), stats)

    def test_bit_identical_round_trip(self, tmp_path):
        ckpt = self._ckpt()
        io.save_checkpoint(ckpt, tmp_path / "c.json")
        back = io.load_checkpoint(tmp_path / "c.json")
        assert back.partition == ckpt.partition and back.config == ckpt.config
        for a, b in zip(ckpt.params.arrays(), back.params.arrays()):
            assert a.shape == b.shape and a.tobytes() == b.tobytes()
        assert back.stats.mean.tobytes() == ckpt.stats.mean.tobytes()
        assert back.stats.std.tobytes() == ckpt.stats.std.tobytes()
        assert [n.spec for e in back.params.encoders for n in e.networks()] == [
            n.spec for e in ckpt.params.encoders for n in e.networks()]

    def test_predictions_identical(self, tmp_path):
        ckpt = self._ckpt(1)
        rng = np.random.default_rng(1)
        samples = [random_sample(rng, ["a", "b", "c"], 3, set_id=f"s{i}") for i in range(20)]
        io.save_checkpoint(ckpt, tmp_path / "c.json")
        back = io.load_checkpoint(tmp_path / "c.json")
        a = score_batch(samples, ckpt.params, ckpt.partition)
        b = score_batch(samples, back.params, back.partition)
        assert a.tobytes() == b.tobytes()

    def test_special_values_survive(self):
        arr = np.array([0.1, -0.0, 5e-324, 1.7976931348623157e308, -1 / 3])
        back = io._dec_array(io._enc_array(arr))
        assert back.tobytes() == arr.tobytes()

    def test_version_mismatch(self, tmp_path):
        d = io.checkpoint_to_dict(self._ckpt())
        d["format_version"] = 99
        (tmp_path / "c.json").write_text(json.dumps(d))
        with pytest.raises(io.FormatError, match="format_version 99"):
            io.load_checkpoint(tmp_path / "c.json")

    def test_malformed(self, tmp_path):
        d = io.checkpoint_to_dict(self._ckpt())
        del d["subsets"]
        (tmp_path / "c.json").write_text(json.dumps(d))
        with pytest.raises(io.FormatError, match="malformed"):
            io.load_checkpoint(tmp_path / "c.json")


class TestSynth:
    def test_feature_xor_truth_table(self):
        samples, _ = feature_xor()
        got = [(tuple(s.trajectories[0].features[0]), s.label) for s in samples]
        assert got == [((0.0, 0.0), 0), ((0.0, 1.0), 1), ((1.0, 0.0), 1), ((1.0, 1.0), 0)]
        assert all(s.channels == ["x"] and s.trajectories[0].n_nodes == 1 for s in samples)

    def test_set_xor_truth_table(self):
        samples, _ = set_xor()
        for s in samples:
            x1 = s.get("g1").features[0, 0]
            x2 = s.get("g2").features[0, 0]
            assert s.label == int(x1) ^ int(x2)
            assert all(g.n_nodes == 1 for g in s.trajectories)
        assert len(samples) == 4

    def test_sparse_traj_deterministic_bytes(self, tmp_path):
        for name in ("a", "b"):
            samples, meta = sparse_traj(50, seed=3)
            io.dump_dataset(samples, tmp_path / f"{name}.jsonl", meta)
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        header = json.loads((tmp_path / "a.jsonl").read_text().splitlines()[0])
        assert header["_meta"]["rule"] == SPARSE_TRAJ_RULE

    def test_sparse_traj_rule(self):
        samples, _ = sparse_traj(200, seed=0, missing_rate=0.5)
        for s in samples:
            assert s.label == int(s.get("a").features.mean() * s.get("b").features.mean() > 0)
            assert 0.0 <= s.trajectories[0].times.min() and s.trajectories[0].times.max() <= 1.0
        assert 0.3 < np.mean([s.label for s in samples]) < 0.7
        assert any(s.get("n0") is None for s in samples) and any(s.get("n0") is not None for s in samples)

    @pytest.mark.parametrize("kwargs", [{"observe_rate": 0.0}, {"missing_rate": 1.0}, {"n_samples": 0}, {"noise_sd": -1}])
    def test_sparse_traj_invalid(self, kwargs):
        from gman.data import ValidationError

        with pytest.raises(ValidationError):
            sparse_traj(**kwargs)


def test_report_svg_escapes_and_scales():
    report = {"set_id": "a<b", "raw_score": 1.0, "graphs": [{"channel_id": "x&y", "total": -2.0}],
              "sets": [{"channels": ["p", "q"], "total": 1.0}]}
    svg = io.report_svg(report)
    assert svg.startswith("<svg") and "a&lt;b" in svg and "x&amp;y" in svg and "{p,q}" in svg
    assert svg.count("<rect") == 2
