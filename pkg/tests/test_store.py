import hashlib
from pathlib import Path

import numpy as np
import pytest

from neural_pathways import nn, store
from neural_pathways.errors import BudgetError, WeightsFileError
from neural_pathways.partition import PrototypeSet

from helpers import random_net

GOLDEN = Path(__file__).parent / "golden" / "reference.npw"


def params_equal_bits(a: nn.MlpParams, b: nn.MlpParams) -> bool:
    if a.dims != b.dims or a.activation != b.activation:
        return False
    for la, lb in zip(a.layers, b.layers):
        if la.weight.tobytes() != lb.weight.tobytes():
            return False
        if la.bias.tobytes() != lb.bias.tobytes():
            return False
        if (la.slopes is None) != (lb.slopes is None):
            return False
        if la.slopes is not None and la.slopes.tobytes() != lb.slopes.tobytes():
            return False
    return True


class TestWeightsRoundTrip:
    def test_bit_exact_many_shapes(self, tmp_path):
        rng = np.random.default_rng(0)
        for i in range(100):
            activation = nn.PRELU if i % 2 == 0 else nn.SUPER_EXPRESSIVE
            net = random_net(rng, max_width=6, max_hidden=3, activation=activation)
            path = tmp_path / f"net_{i}.npw"
            store.save_weights(net, path)
            assert params_equal_bits(store.load_weights(path), net)

    def test_reported_param_count(self, tmp_path):
        net = nn.init_mlp((3, 5, 2), seed=1)
        wf = store.save_weights(net, tmp_path / "n.npw")
        assert wf.param_count == nn.stored_param_count((3, 5, 2))

    def test_truncated_file_checksum_error(self, tmp_path):
        net = nn.init_mlp((4, 4, 1), seed=2)
        path = tmp_path / "t.npw"
        store.save_weights(net, path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-10])
        with pytest.raises(WeightsFileError, match="checksum|magic"):
            store.load_weights(path)

    def test_corrupted_byte_detected(self, tmp_path):
        net = nn.init_mlp((4, 4, 1), seed=3)
        path = tmp_path / "c.npw"
        store.save_weights(net, path)
        raw = bytearray(path.read_bytes())
        raw[30] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(WeightsFileError):
            store.load_weights(path)

    def test_wrong_magic_refused(self, tmp_path):
        path = tmp_path / "m.npw"
        path.write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(WeightsFileError, match="magic"):
            store.load_weights(path)

    def test_golden_fixture_loads_identically(self):
        # fixed-endianness file committed to the repo; every platform must
        # reproduce these exact bits and values
        raw = GOLDEN.read_bytes()
        assert hashlib.sha256(raw).hexdigest() == (
            "8f676c33a964ea0193c95d172766a0c6187066d2f5bb8bdb4617ccc6f1519c92")
        net = store.load_weights(GOLDEN)
        assert net.dims == (2, 2, 1)
        np.testing.assert_array_equal(
            net.layers[0].weight, [[0.5, -1.25], [2.0 ** -10, 3.141592653589793]])
        np.testing.assert_array_equal(net.layers[0].bias, [1.0 / 3.0, -0.1])
        np.testing.assert_array_equal(net.layers[0].slopes, [0.25, 1.5])
        np.testing.assert_array_equal(net.layers[1].weight, [[-0.75, 0.0078125]])
        assert net.layers[1].bias[0] == 42.0
        out = nn.mlp_forward(net, np.array([0.3, -0.7]))
        assert float(out[0]) == 40.95431068099106


class TestManifest:
    @staticmethod
    def _model(tmp_path, k=3, seed=0):
        rng = np.random.default_rng(seed)
        protos = PrototypeSet(rng.standard_normal((k, 2)))
        nets = [nn.init_mlp((2, 4, 1), seed=i) for i in range(k)]
        manifest = store.save_ensemble(protos, nets, tmp_path,
                                       routing={"arity": 2, "seed": 7})
        return protos, nets, manifest

    def test_ensemble_roundtrip(self, tmp_path):
        protos, nets, _ = self._model(tmp_path)
        protos2, nets2 = store.load_ensemble(tmp_path)
        np.testing.assert_array_equal(protos2.points, protos.points)
        assert all(params_equal_bits(a, b) for a, b in zip(nets, nets2))

    def test_manifest_fields(self, tmp_path):
        _, nets, _ = self._model(tmp_path)
        manifest = store.load_manifest(tmp_path)
        assert manifest.k == 3 and manifest.n == 2 and manifest.m == 1
        assert manifest.routing == {"arity": 2, "seed": 7}
        assert manifest.param_counts == [nn.stored_param_count((2, 4, 1))] * 3

    def test_unique_paths_enforced(self, tmp_path):
        _, _, manifest = self._model(tmp_path)
        manifest.pathway_files = ["a.npw", "a.npw", "b.npw"]
        with pytest.raises(ValueError, match="unique"):
            store.save_manifest(manifest, tmp_path)


class TestLedger:
    def test_fresh_ledger_zeros(self):
        ledger = store.MemoryLedger(budget=100)
        assert store.ledger_report(ledger) == (
            "peak_resident,total_loaded,prototype_queries\n0,0,0\n")

    def test_counter_semantics(self):
        ledger = store.MemoryLedger(budget=100)
        ledger.load(60)
        ledger.release(60)
        ledger.load(40)
        ledger.release(40)
        assert ledger.peak == 60
        assert ledger.total_loaded == 100
        assert ledger.resident == 0

    def test_budget_enforced(self):
        ledger = store.MemoryLedger(budget=50)
        ledger.load(40)
        with pytest.raises(BudgetError):
            ledger.load(20)


class TestBudgetedForward:
    @staticmethod
    def _model(tmp_path, k, dims=(2, 4, 1), seed=0):
        rng = np.random.default_rng(seed)
        protos = PrototypeSet(rng.standard_normal((k, dims[0])))
        nets = [nn.init_mlp(dims, seed=i) for i in range(k)]
        return store.save_ensemble(protos, nets, tmp_path,
                                   routing={"arity": 2, "seed": 0}), nets

    def test_single_pathway_no_queries(self, tmp_path):
        manifest, nets = self._model(tmp_path, k=1)
        count = nn.stored_param_count((2, 4, 1))
        pred, ledger = store.forward_with_budget(manifest, np.zeros(2), count)
        assert ledger.peak == count
        assert ledger.prototype_queries == 0
        assert ledger.resident == 0
        np.testing.assert_array_equal(pred, nn.mlp_forward(nets[0], np.zeros(2)))

    def test_brute_force_queries_equal_k(self, tmp_path):
        manifest, _ = self._model(tmp_path, k=4)
        _, ledger = store.forward_with_budget(manifest, np.zeros(2), 10_000)
        assert ledger.prototype_queries == 4

    def test_tree_query_bound(self, tmp_path):
        manifest, _ = self._model(tmp_path, k=16)
        _, ledger = store.forward_with_budget(manifest, np.zeros(2), 10_000,
                                              router="tree")
        assert ledger.prototype_queries <= 2 * 4  # nu * ceil(log2 16)

    def test_budget_refused_before_load(self, tmp_path):
        manifest, _ = self._model(tmp_path, k=2)
        count = nn.stored_param_count((2, 4, 1))
        with pytest.raises(BudgetError, match="largest pathway"):
            store.forward_with_budget(manifest, np.zeros(2), count - 1)

    def test_sequential_forwards_accumulate(self, tmp_path):
        manifest, _ = self._model(tmp_path, k=2)
        count = nn.stored_param_count((2, 4, 1))
        runner = store.PathwayRunner(manifest, budget=count)
        runner.forward(np.zeros(2))
        runner.forward(np.ones(2))
        assert runner.ledger.total_loaded == 2 * count
        assert runner.ledger.peak == count

    def test_hand_audited_trace(self, tmp_path):
        # K=2 toy model, two forwards, audited by hand: each forward loads
        # one 17-parameter pathway and queries both prototypes
        rng = np.random.default_rng(1)
        protos = PrototypeSet(np.array([[-1.0], [1.0]]))
        nets = [nn.init_mlp((1, 3, 1), seed=i) for i in range(2)]
        manifest = store.save_ensemble(protos, nets, tmp_path)
        count = nn.stored_param_count((1, 3, 1))
        assert count == (3 + 3 + 3) + (3 + 1)  # 13
        runner = store.PathwayRunner(manifest, budget=count)
        runner.forward(np.array([-2.0]))
        runner.forward(np.array([0.5]))
        assert runner.ledger.csv_row() == f"{count},{2 * count},4"
        assert runner.ledger.prototype_params == 2 * 1

    def test_loaded_prediction_bit_identical(self, tmp_path):
        manifest, nets = self._model(tmp_path, k=4)
        protos = PrototypeSet(manifest.prototypes)
        runner = store.PathwayRunner(manifest, budget=10_000)
        rng = np.random.default_rng(2)
        from neural_pathways.partition import assign
        for x in rng.standard_normal((1000, 2)):
            direct = nn.mlp_forward(nets[assign(x, protos)], x)
            np.testing.assert_array_equal(runner.forward(x), direct)

    def test_exact_tree_matches_brute(self, tmp_path):
        manifest, _ = self._model(tmp_path, k=8)
        exact = store.PathwayRunner(manifest, 10_000, router="tree",
                                    exact_tree=True)
        brute = store.PathwayRunner(manifest, 10_000, router="brute")
        rng = np.random.default_rng(3)
        for x in rng.standard_normal((50, 2)):
            np.testing.assert_array_equal(exact.forward(x), brute.forward(x))

    def test_resident_never_exceeds_one_pathway(self, tmp_path):
        manifest, _ = self._model(tmp_path, k=6)
        count = nn.stored_param_count((2, 4, 1))
        runner = store.PathwayRunner(manifest, budget=count)  # tightest budget
        rng = np.random.default_rng(4)
        for x in rng.standard_normal((30, 2)):
            runner.forward(x)
        assert runner.ledger.peak == count
