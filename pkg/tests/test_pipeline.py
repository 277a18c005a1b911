import numpy as np
import pytest

from mscam.model import ModelConfig
from mscam.pipeline import LocalizeParams, run_study
from mscam.synthdata import ClassSpec
from mscam.trainer import TrainConfig


def test_small_study_runs():
    specs = [ClassSpec("small", "disk", (3, 6)), ClassSpec("large", "ellipse", (12, 20), (0.3, 0.5))]
    mcfg = ModelConfig(num_blocks=3, layers_per_block=1, growth_rate=4, stem_channels=4, input_size=(32, 32))
    res = run_study(0, n=60, specs=specs, model_config=mcfg, train_config=TrainConfig(max_epochs=2, seed=0))
    assert set(res.reports) == {"multiscale", "final_block"}
    assert 0.0 <= res.accuracy("multiscale", 0) <= 1.0
    assert res.shallow_weight(0) == pytest.approx(res.relevance[0, :2].sum())
    assert np.allclose(res.relevance.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("kw", [dict(tau=1.0), dict(min_area=0), dict(iou_thresholds=(0.3, 1.2)), dict(iou_thresholds=())])
def test_params_validated(kw):
    with pytest.raises(ValueError):
        LocalizeParams(**kw)


def test_thresholds_sorted():
    assert LocalizeParams(iou_thresholds=(0.5, 0.3)).iou_thresholds == (0.3, 0.5)
