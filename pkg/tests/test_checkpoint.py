import numpy as np
import pytest

from obic import checkpoint
from obic.checkpoint import CheckpointError
from obic.transforms import CodecNetworks


def test_save_load_round_trip(tmp_path):
    nets = CodecNetworks(channels=8, hyper_channels=4, seed=11)
    path = tmp_path / "w.obicw"
    checkpoint.save(nets, path)
    back = checkpoint.load(path)
    a, b = nets.parameters(), back.parameters()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k].data, b[k].data) for k in a)
    assert checkpoint.model_id(back) == checkpoint.model_id(nets)
    assert path.read_bytes()[:5] == b"OBICW"


def test_model_id_changes_with_any_weight():
    nets = CodecNetworks(channels=8, hyper_channels=4, seed=11)
    before = checkpoint.model_id(nets)
    nets.bkg.factorized.loc.data[0] += 1e-3
    assert checkpoint.model_id(nets) != before


def test_shape_mismatch_and_garbage_are_rejected():
    data = checkpoint.serialize(CodecNetworks(channels=8, hyper_channels=4))
    with pytest.raises(CheckpointError):
        checkpoint.load_into(CodecNetworks(channels=16, hyper_channels=4), data)
    with pytest.raises(CheckpointError):
        checkpoint.parse(b"nope")
    with pytest.raises(CheckpointError):
        checkpoint.parse(data[:-10])
