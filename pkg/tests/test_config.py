import json

import pytest

from autorig.config import ConfigError, PipelineConfig


def test_defaults():
    c = PipelineConfig()
    assert c.quantization_bins == 128
    assert c.point_count == 8192 and c.shape_groups + 1 == 257
    assert c.max_joints == 55 and c.diffusion_steps == 1000 and c.inference_steps == 25
    assert (c.beta_start, c.beta_end) == (1e-4, 0.02)
    assert c.voxel_resolution == 64 and c.bone_samples == 32


def test_load_and_override(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seq_steps": 10, "beta_end": 0.01}))
    c = PipelineConfig.load(p)
    assert c.seq_steps == 10 and c.beta_end == 0.01
    assert PipelineConfig.from_dict(c.to_dict()) == c


@pytest.mark.parametrize("bad", [{"nope": 1}, {"seq_steps": 1.5}, {"beta_start": 0.5}, {"voxel_resolution": 4},
                                 {"seq_steps": "ten"}, {"quantization_bins": 64}])
def test_invalid_values(bad):
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict(bad)
