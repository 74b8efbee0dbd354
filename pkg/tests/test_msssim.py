import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from obic.data import bundled
from obic.images import load_image
from obic.msssim import WEIGHTS_5, msssim, scale_weights


def test_identical_images_score_one(rng):
    x = rng.random((64, 48, 3))
    assert msssim(x, x) == pytest.approx(1.0, abs=1e-9)


@given(st.integers(0, 10_000), st.sampled_from([(32, 32), (64, 40), (176, 180)]))
def test_symmetric(seed, shape):
    r = np.random.default_rng(seed)
    a = r.random((*shape, 3))
    b = np.clip(a + r.normal(0, 0.2, a.shape), 0, 1)
    assert abs(msssim(a, b) - msssim(b, a)) <= 1e-12


@given(st.integers(0, 10_000))
def test_score_is_in_unit_interval(seed):
    r = np.random.default_rng(seed)
    a, b = r.random((40, 40, 3)), r.random((40, 40, 3))
    assert 0.0 <= msssim(a, b) <= 1.0


def test_inverted_binary_image_scores_near_zero(rng):
    x = (rng.random((64, 64, 3)) > 0.5).astype(float)
    assert msssim(x, 1 - x) < 1e-3


def test_matches_the_stored_oracle_value():
    root = bundled("fixtures")
    ref = json.loads((root / "msssim_reference.json").read_text())
    a, b = load_image(root / ref["a"]), load_image(root / ref["b"])
    assert msssim(a, b) == pytest.approx(ref["msssim"], abs=1e-4)


def test_scale_weights():
    assert scale_weights(176) == WEIGHTS_5
    three = scale_weights(64)
    assert len(three) == 3 and sum(three) == pytest.approx(1.0)
    assert three[0] / three[1] == pytest.approx(WEIGHTS_5[0] / WEIGHTS_5[1])


def test_rejects_small_or_mismatched_inputs(rng):
    with pytest.raises(ValueError):
        msssim(rng.random((31, 64, 3)), rng.random((31, 64, 3)))
    with pytest.raises(ValueError):
        msssim(rng.random((64, 64, 3)), rng.random((64, 32, 3)))


def test_more_noise_scores_lower(rng):
    x = load_image(bundled("corpus") / "scene000.png")
    noise = rng.normal(size=x.shape)
    scores = [msssim(x, np.clip(x + s * noise, 0, 1)) for s in (0.01, 0.05, 0.2)]
    assert scores[0] > scores[1] > scores[2]
