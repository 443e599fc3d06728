"""Tests for shape-checked operations, gradient checking and checkpoints."""

import json

import pytest
import torch

from lifeseq.core import numerics
from lifeseq.core.numerics import (
    decay_groups,
    grad_check,
    is_decay_eligible,
    load_checkpoint,
    parameter_specs,
    save_checkpoint,
)


def _leaf(*shape, seed=0):
    generator = torch.Generator().manual_seed(seed)
    return torch.randn(*shape, generator=generator, dtype=torch.float64).requires_grad_()


@pytest.mark.unit
class TestShapeChecks:
    """Test suite for operation shape validation."""

    def test_matmul_mismatch(self):
        with pytest.raises(ValueError, match="matmul: incompatible shapes"):
            numerics.matmul(torch.zeros(2, 3), torch.zeros(4, 2))

    def test_add_broadcast_mismatch(self):
        with pytest.raises(ValueError, match="add"):
            numerics.add(torch.zeros(2, 3), torch.zeros(4))

    def test_concat_mismatch(self):
        with pytest.raises(ValueError, match="concat"):
            numerics.concat([torch.zeros(2, 3), torch.zeros(3, 3)], dim=-1)

    def test_gather_rows_out_of_range(self):
        with pytest.raises(ValueError, match="ids outside"):
            numerics.gather_rows(torch.zeros(4, 2), torch.tensor([0, 4]))

    def test_slice_rows_out_of_range(self):
        with pytest.raises(ValueError):
            numerics.slice_rows(torch.zeros(4, 2), 2, 5)

    def test_dropout_identity_outside_training(self):
        x = torch.ones(3, 3)
        assert numerics.dropout(x, 0.5, training=False) is x
        assert numerics.dropout(x, 0.0) is x
        with pytest.raises(ValueError):
            numerics.dropout(x, 1.0)

    def test_dropout_rescales_kept_units(self):
        generator = torch.Generator().manual_seed(0)
        out = numerics.dropout(torch.ones(1000), 0.5, generator=generator)
        assert set(torch.unique(out).tolist()) <= {0.0, 2.0}


@pytest.mark.unit
class TestBackward:
    """Test suite for the backward pass guard."""

    def test_backward_twice_raises(self):
        x = _leaf(3)
        loss = numerics.sum(numerics.tanh(x))
        numerics.backward(loss)
        with pytest.raises(RuntimeError, match="already backpropagated"):
            numerics.backward(loss)

    def test_non_scalar_loss(self):
        with pytest.raises(ValueError, match="scalar"):
            numerics.backward(_leaf(3) * 2)

    def test_gradients_accumulate(self):
        x = _leaf(3)
        numerics.backward(numerics.sum(x * 2))
        numerics.backward(numerics.sum(x * 3))
        assert torch.allclose(x.grad, torch.full((3,), 5.0, dtype=torch.float64))


@pytest.mark.unit
class TestGradCheck:
    """Test suite for finite-difference gradient checks."""

    def test_smooth_composition(self):
        a, b = _leaf(3, 4, seed=1), _leaf(4, 2, seed=2)

        def f():
            hidden = numerics.tanh(numerics.matmul(a, b))
            return numerics.mean(numerics.softmax(hidden) * numerics.sin(hidden))

        report = grad_check(f, [a, b])
        assert report.checkable
        assert report.max_relative_error < 1e-6

    def test_gather_rows_scatter_adds(self):
        table = _leaf(5, 3, seed=3)
        ids = torch.tensor([0, 2, 2, 4])

        def f():
            return numerics.sum(numerics.exp(numerics.gather_rows(table, ids)))

        report = grad_check(f, [table])
        assert report.max_relative_error < 1e-6

    def test_concat_and_slice(self):
        x, y = _leaf(2, 3, seed=4), _leaf(2, 2, seed=5)

        def f():
            joined = numerics.concat([x, y], dim=-1)
            return numerics.sum(numerics.slice_rows(joined, 1, 2) ** 2)

        assert grad_check(f, [x, y]).max_relative_error < 1e-6

    def test_kink_is_reported(self):
        x = torch.tensor([0.0, 1.0], dtype=torch.float64, requires_grad=True)

        def f():
            return numerics.sum(torch.relu(x))

        assert not grad_check(f, [x]).checkable


@pytest.mark.unit
class TestDecayGroups:
    """Test suite for weight-decay eligibility."""

    @pytest.mark.parametrize(
        "name, eligible",
        [
            ("layers.0.attention.q_proj.weight", True),
            ("layers.0.feed_forward.up.weight", True),
            ("layers.0.feed_forward.up.bias", False),
            ("embedding.token_embedding.weight", False),
            ("layers.1.attn_norm.gain", False),
            ("embedding.rezero_gates", False),
            ("embedding.age_time2vec.w", False),
        ],
    )
    def test_names(self, name, eligible):
        assert is_decay_eligible(name) is eligible

    def test_groups_partition_parameters(self):
        module = torch.nn.ModuleDict({"proj": torch.nn.Linear(3, 2), "norm": torch.nn.LayerNorm(2)})
        decay, no_decay = decay_groups(module)
        assert len(decay) == 1 and len(no_decay) == 3
        assert [s.decay_eligible for s in parameter_specs(module)] == [True, False, False, False]


@pytest.mark.unit
class TestCheckpoints:
    """Test suite for binary checkpoints."""

    def test_round_trip_is_exact(self, temp_dir):
        state = {
            "w": torch.randn(3, 4, dtype=torch.float64),
            "b": torch.randn(4, dtype=torch.float32),
            "scalar": torch.tensor(2.5, dtype=torch.float64),
        }
        bin_path, manifest_path = save_checkpoint(
            state, str(temp_dir / "model"), decay_flags={"w": True}, extra={"epoch": 3}
        )
        assert bin_path.suffix == ".bin" and manifest_path.suffix == ".json"
        loaded, manifest = load_checkpoint(str(bin_path))
        for name, tensor in state.items():
            assert loaded[name].dtype == tensor.dtype
            assert torch.equal(loaded[name], tensor)
        assert manifest["extra"] == {"epoch": 3}
        flags = {e["name"]: e["decay_eligible"] for e in manifest["tensors"]}
        assert flags == {"w": True, "b": False, "scalar": False}

    def test_manifest_offsets(self, temp_dir):
        state = {"a": torch.zeros(2, dtype=torch.float64), "b": torch.zeros(3, dtype=torch.float32)}
        _, manifest_path = save_checkpoint(state, str(temp_dir / "ckpt.bin"))
        manifest = json.loads(manifest_path.read_text())
        assert [e["offset"] for e in manifest["tensors"]] == [0, 16]

    def test_integer_and_bool_tensors_keep_their_dtype(self, temp_dir):
        state = {
            "steps": torch.tensor([3, -7, 2**40], dtype=torch.int64),
            "counts": torch.arange(6, dtype=torch.int32).reshape(2, 3),
            "mask": torch.tensor([True, False, True]),
            "w": torch.ones(2, dtype=torch.float32),
        }
        save_checkpoint(state, str(temp_dir / "mixed"))
        loaded, manifest = load_checkpoint(str(temp_dir / "mixed"))
        assert [e["dtype"] for e in manifest["tensors"]] == ["int64", "int32", "bool", "float32"]
        for name, tensor in state.items():
            assert loaded[name].dtype == tensor.dtype
            assert torch.equal(loaded[name], tensor)

    def test_unsupported_dtype_is_rejected(self, temp_dir):
        state = {"z": torch.zeros(2, dtype=torch.complex64)}
        with pytest.raises(ValueError, match="complex64"):
            save_checkpoint(state, str(temp_dir / "bad"))
        assert not (temp_dir / "bad.bin").exists()

    def test_missing_checkpoint(self, temp_dir):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(str(temp_dir / "nothing"))
