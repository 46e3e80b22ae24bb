import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

import checks
from binscene import distill
from binscene.errors import InvalidInputError

ROAD, SKY = 4, 5  # non-target ids outside the sound-making set
CAR, TRAM, MOTO = 1, 2, 3


class TestModeBackground:
    def test_majority(self):
        seq = np.array([ROAD, ROAD, CAR]).reshape(3, 1, 1)
        assert distill.mode_background(seq)[0, 0] == ROAD

    def test_single_frame(self):
        frame = np.random.default_rng(0).integers(0, 6, (4, 5))
        assert np.array_equal(distill.mode_background(distill.LabelSequence(frame[None])), frame)

    def test_tie_goes_to_smallest(self):
        seq = np.array([ROAD, CAR]).reshape(2, 1, 1)
        assert distill.mode_background(seq)[0, 0] == min(CAR, ROAD)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            distill.mode_background(np.zeros((0, 3, 3), dtype=int))

    def test_intensity_frames(self):
        frames = np.array([[[10.0]], [[200.0]], [[10.0]]])
        assert distill.mode_background(frames)[0, 0] == 10

    @settings(max_examples=60)
    @given(hnp.arrays(np.int64, st.tuples(st.integers(1, 7), st.integers(1, 5), st.integers(1, 5)),
                      elements=st.integers(0, 6)))
    def test_matches_oracle(self, frames):
        assert np.array_equal(distill.mode_background(frames), checks.mode_oracle(frames))


class TestSoundMakingMask:
    def test_static_removed(self):
        y = np.array([[CAR, ROAD], [TRAM, SKY]])
        assert not distill.soundmaking_mask(y, y).any()

    def test_car_on_road(self):
        assert distill.soundmaking_mask(np.array([[CAR]]), np.array([[ROAD]]))[0, 0] == 1

    def test_sky_is_not_target(self):
        assert distill.soundmaking_mask(np.array([[SKY]]), np.array([[ROAD]]))[0, 0] == 0

    def test_shape_mismatch(self):
        with pytest.raises(InvalidInputError):
            distill.soundmaking_mask(np.zeros((2, 2)), np.zeros((2, 3)))

    @settings(max_examples=60)
    @given(st.integers(0, 2**31 - 1), st.sets(st.integers(0, 5)), st.sets(st.integers(0, 5)))
    def test_set_logic_and_monotone(self, seed, small, extra):
        rng = np.random.default_rng(seed)
        y_t, y_bg = rng.integers(0, 6, (2, 6, 7))
        m = distill.soundmaking_mask(y_t, y_bg, small)
        oracle = np.array([[1 if (a in small and a != b) else 0 for a, b in zip(r1, r2)]
                           for r1, r2 in zip(y_t.tolist(), y_bg.tolist())])
        assert np.array_equal(m, oracle)
        assert set(np.unique(m)) <= {0, 1}
        bigger = distill.soundmaking_mask(y_t, y_bg, small | extra)
        assert np.all(bigger >= m)

    def test_distilled_labels(self):
        y_t = np.array([[CAR, TRAM, SKY]])
        y_bg = np.array([[ROAD, TRAM, ROAD]])
        assert distill.distilled_labels(y_t, y_bg).tolist() == [[CAR, 0, 0]]


class TestSelectSample:
    def test_silent(self):
        y = np.zeros((10, 10), int)
        y2 = np.ones((10, 10), int)
        assert not distill.select_sample(np.zeros((2, 100)), y2, y)

    def test_no_change(self):
        y = np.zeros((10, 10), int)
        assert not distill.select_sample(np.ones((2, 100)), y, y)

    def test_ten_percent(self):
        y_bg = np.zeros((10, 10), int)
        y_t = y_bg.copy()
        y_t[0, :] = CAR
        assert distill.select_sample(np.ones((2, 100)), y_t, y_bg)

    def test_threshold_boundary(self):
        y_bg = np.zeros((10, 10), int)
        y_t = y_bg.copy()
        y_t[0, :4] = CAR  # 4% < 5%
        assert not distill.select_sample(np.ones((2, 100)), y_t, y_bg)
        y_t[0, 4] = CAR   # exactly 5%
        assert distill.select_sample(np.ones((2, 100)), y_t, y_bg)

    def test_defaults(self):
        assert distill.DEFAULT_MIN_DIFF_FRACTION == 0.05
        assert distill.DEFAULT_ENERGY_THRESHOLD == 0.01
