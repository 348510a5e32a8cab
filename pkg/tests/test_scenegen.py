import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from socialbnn import scenegen as sg
from socialbnn.scenegen import ACTIONS, CONVERSATION, Mode, OracleConfig, Scene

VACUUM, MOP, CARRY_BIG = 0, 1, 6
ARROW_VACUUM = 8


def scene(**kw) -> Scene:
    base = dict(
        within_circle=True, circle_radius=1.0, along_arrow=False, n_humans=1, n_children=0,
        dist_child=6.0, n_animals=0, dist_animal=6.0, group_size=5, group_radius=1.0, dist_group=6.0,
        robot_in_group=False, robot_facing_group=False, dist_humans_3=(2.0, 5.0, 5.0),
        dir_robot_to_3=(90.0, 0.0, 0.0), dir_closest_to_robot=180.0, robot_facing_3=(False, False, False),
        facing_robot_3=(False, False, False), n_on_sofa=0, music=False, total_agents=2,
    )
    base.update(kw)
    return Scene(**base)


@pytest.fixture(scope="module")
def draws():
    scenes = [sg.sample_scene(sg.scene_stream(123, i)) for i in range(10_000)]
    return scenes, np.array([sg.featurize(s) for s in scenes])


class TestActions:
    def test_table(self):
        assert len(ACTIONS) == 16 and [a.index for a in ACTIONS] == list(range(16))
        assert all(a.mode is Mode.CIRCLE for a in ACTIONS[:8])
        assert all(a.mode is Mode.ARROW for a in ACTIONS[8:])
        assert ACTIONS[7].name == "Cleaning (Picking up stuff)"
        assert ACTIONS[15].name == "Starting conversation" and CONVERSATION == 15


class TestSampler:
    def test_same_stream_same_scene(self):
        assert sg.sample_scene(sg.scene_stream(5, 9)) == sg.sample_scene(sg.scene_stream(5, 9))
        assert sg.sample_scene(sg.scene_stream(5, 9)) != sg.sample_scene(sg.scene_stream(5, 10))

    def test_ranges(self, draws):
        _, x = draws
        sg.validate_features(x)
        assert x.shape == (10_000, 29)

    def test_radius_span(self, draws):
        _, x = draws
        assert x[:, 1].min() >= 0.5 and x[:, 1].max() <= 3.0
        assert x[:, 1].max() - x[:, 1].min() >= 0.95 * 2.5

    def test_booleans_balanced(self, draws):
        scenes, x = draws
        assert abs(x[:, 0].mean() - 0.5) <= 0.02
        assert abs(x[:, 27].mean() - 0.5) <= 0.02
        grp = x[:, 3] >= 2
        for j in (11, 12):
            assert abs(x[grp, j].mean() - 0.5) <= 0.02
        for k in range(3):
            present = x[:, 3] > k
            for j in (20 + k, 23 + k):
                assert abs(x[present, j].mean() - 0.5) <= 0.02

    def test_continuous_quartiles(self, draws):
        _, x = draws
        n_h = x[:, 3]
        cases = [
            (x[:, 1], 0.5, 3.0),
            (x[x[:, 4] > 0, 5], 0.4, 6.0),
            (x[x[:, 6] > 0, 7], 0.4, 6.0),
            (x[n_h >= 2, 9], 0.5, 1.0),
            (x[n_h >= 2, 10], 0.0, 6.0),
            (x[:, 13:16][np.arange(3)[None, :] < n_h[:, None]], 0.3, 5.0),
            (x[:, 16:19][np.arange(3)[None, :] < n_h[:, None]], 0.0, 360.0),
            (x[n_h > 0, 19], 0.0, 360.0),
        ]
        for values, lo, hi in cases:
            q = np.quantile(values, [0.25, 0.5, 0.75])
            expect = lo + (hi - lo) * np.array([0.25, 0.5, 0.75])
            assert np.all(np.abs(q - expect) <= 0.03 * (hi - lo)), (lo, hi, q)

    def test_counts_uniform(self, draws):
        _, x = draws
        freq = np.bincount(x[:, 3].astype(int), minlength=10) / len(x)
        assert np.all(np.abs(freq - 0.1) <= 0.02)
        assert abs(x[:, 6].mean() - 0.5) <= 0.02

    def test_reconciliation(self, draws):
        scenes, _ = draws
        for s in scenes:
            assert s.n_children <= s.n_humans and s.n_on_sofa <= s.n_humans
            assert s.total_agents == s.n_humans + s.n_animals + 1
            assert s.within_circle != s.along_arrow
            if s.n_children == 0:
                assert s.dist_child == sg.MAX_CHILD_DIST
            if s.n_animals == 0:
                assert s.dist_animal == sg.MAX_ANIMAL_DIST
            if s.n_humans < 2:
                assert s.dist_group == sg.MAX_GROUP_DIST and not s.robot_in_group
            else:
                assert 2 <= s.group_size <= s.n_humans
            present = min(s.n_humans, 3)
            assert list(s.dist_humans_3[:present]) == sorted(s.dist_humans_3[:present])
            assert all(d == sg.MAX_HUMAN_DIST for d in s.dist_humans_3[present:])


class TestFeaturize:
    def test_length(self):
        assert sg.featurize(scene()).shape == (29,)

    def test_minimum_scene(self):
        s = scene(
            within_circle=False, along_arrow=True, circle_radius=0.5, n_humans=0, dist_child=0.4,
            dist_animal=0.4, group_size=2, group_radius=0.5, dist_group=0.0,
            dist_humans_3=(0.3, 0.3, 0.3), dir_robot_to_3=(0.0, 0.0, 0.0), dir_closest_to_robot=0.0,
            total_agents=1,
        )
        expect = sg.FEATURE_LOW.copy()
        expect[2] = 1
        assert np.array_equal(sg.featurize(s), expect)

    def test_hand_built(self):
        s = scene(
            n_humans=4, n_children=1, dist_child=1.5, n_animals=1, dist_animal=2.25, group_size=3,
            group_radius=0.75, dist_group=2.0, robot_in_group=True, robot_facing_3=(True, False, True),
            facing_robot_3=(False, True, False), dist_humans_3=(0.5, 1.0, 3.5),
            dir_robot_to_3=(10.0, 200.0, 359.5), n_on_sofa=2, music=True, total_agents=6,
        )
        expect = [1, 1.0, 0, 4, 1, 1.5, 1, 2.25, 3, 0.75, 2.0, 1, 0, 0.5, 1.0, 3.5, 10, 200, 359.5, 180,
                  1, 0, 1, 0, 1, 0, 2, 1, 6]
        assert sg.featurize(s).tolist() == expect
        arrow = sg.featurize(s, Mode.ARROW)
        assert (arrow[0], arrow[2]) == (0.0, 1.0)

    def test_round_trip(self, draws):
        scenes, _ = draws
        for s in scenes[:500]:
            assert sg.scene_from_features(sg.featurize(s)) == s

    @pytest.mark.parametrize(
        "field,value",
        [("circle_radius", 3.5), ("n_humans", 10), ("dir_closest_to_robot", 360.0), ("dist_humans_3", (0.1, 1, 1))],
    )
    def test_out_of_range(self, field, value):
        with pytest.raises(ValueError, match="out of range"):
            sg.featurize(scene(**{field: value}))

    def test_both_modes_rejected(self):
        with pytest.raises(ValueError):
            sg.featurize(scene(along_arrow=True))

    def test_wrong_length(self):
        with pytest.raises(ValueError, match="29"):
            sg.validate_features(np.zeros(28))


present_scenes = st.integers(0, 2**31 - 1).map(lambda i: sg.sample_scene(sg.scene_stream(99, i))).filter(
    lambda s: s.n_humans > 0
)


class TestOracle:
    def test_empty_room(self):
        s = scene(n_humans=0, dist_humans_3=(5.0, 5.0, 5.0), n_animals=1, dist_animal=0.5, total_agents=2)
        assert all(sg.oracle_appropriateness(s, a) == 5.0 for a in ACTIONS)

    def test_conversation_close_facing_beats_far(self):
        near = scene(dist_humans_3=(0.3, 5.0, 5.0), robot_facing_3=(True, False, False))
        far = scene(dist_humans_3=(5.0, 5.0, 5.0))
        assert sg.oracle_appropriateness(near, CONVERSATION) >= sg.oracle_appropriateness(far, CONVERSATION)

    def test_vacuum_close_below_far(self):
        near = scene(dist_humans_3=(0.3, 5.0, 5.0))
        far = scene(dist_humans_3=(5.0, 5.0, 5.0))
        assert sg.oracle_appropriateness(near, VACUUM) < sg.oracle_appropriateness(far, VACUUM)

    def test_documented_form(self):
        # single human 2 m away in circle mode, radius 1: d_eff = 2 - 0.5 * 0.5 = 1.75
        cfg = OracleConfig()
        near = 1 / (1 + math.exp((1.75 - 1.5) / 0.5))
        assert sg.oracle_appropriateness(scene(), VACUUM) == pytest.approx(5 - 1.6 * near, abs=1e-12)
        # arrow mode, human at 90 degrees: path = 1 - 0.5 * 0.5
        s = scene(within_circle=False, along_arrow=True)
        near = 1 / (1 + math.exp((2.0 - 1.5) / 0.5))
        assert sg.oracle_appropriateness(s, ARROW_VACUUM) == pytest.approx(5 - 1.6 * near * 0.75, abs=1e-12)
        # conversation, nobody facing: far + robot + human penalties
        talk = 1.6 * (1 - 1 / (1 + math.exp(0.0))) + 0.8 + 0.4
        assert sg.oracle_appropriateness(s, CONVERSATION) == pytest.approx(5 - talk, abs=1e-12)
        assert cfg.digest() == OracleConfig.from_dict(cfg.to_dict()).digest()

    def test_bounded(self, draws):
        scenes, _ = draws
        vals = np.array([[sg.oracle_appropriateness(s, a) for a in range(16)] for s in scenes[:2000]])
        assert vals.min() >= 1.0 and vals.max() <= 5.0

    @settings(max_examples=200, deadline=None)
    @given(present_scenes, st.floats(0.3, 5.0), st.floats(0.3, 5.0))
    def test_distance_monotone(self, s, a, b):
        lo, hi = min(a, b), max(a, b)
        s_lo = replace(s, dist_humans_3=(lo,) + s.dist_humans_3[1:])
        s_hi = replace(s, dist_humans_3=(hi,) + s.dist_humans_3[1:])
        for act in (VACUUM, MOP, CARRY_BIG, 8, 9, 14):
            assert sg.oracle_appropriateness(s_lo, act) <= sg.oracle_appropriateness(s_hi, act)
        assert sg.oracle_appropriateness(s_lo, CONVERSATION) >= sg.oracle_appropriateness(s_hi, CONVERSATION)

    @settings(max_examples=100, deadline=None)
    @given(present_scenes.filter(lambda s: s.has_group), st.floats(0.0, 6.0), st.floats(0.0, 6.0))
    def test_group_distance_monotone(self, s, a, b):
        lo, hi = min(a, b), max(a, b)
        for act in (VACUUM, MOP, CARRY_BIG):
            assert sg.oracle_appropriateness(replace(s, dist_group=lo), act) <= sg.oracle_appropriateness(
                replace(s, dist_group=hi), act
            )

    @settings(max_examples=100, deadline=None)
    @given(present_scenes)
    def test_facing_helps_conversation(self, s):
        facing = replace(s, robot_facing_3=(True,) + s.robot_facing_3[1:])
        away = replace(s, robot_facing_3=(False,) + s.robot_facing_3[1:])
        f, w = sg.oracle_appropriateness(facing, CONVERSATION), sg.oracle_appropriateness(away, CONVERSATION)
        assert f >= w
        if w > 1.0:
            assert f > w

    def test_config_override(self):
        cfg = OracleConfig(baseline=4.0)
        assert sg.oracle_appropriateness(scene(n_humans=0), VACUUM, cfg) == 4.0


class TestAnnotators:
    def test_noise_free(self):
        assert sg.simulate_annotators(3.2, 15, 0.0, seed=0).tolist() == [3] * 15

    def test_rounding_half_up(self):
        assert sg.simulate_annotators(3.5, 3, 0.0, seed=0).tolist() == [4] * 3

    def test_clamped(self):
        r = sg.simulate_annotators(5.0, 15, 3.0, seed=1, biases=np.full(15, 2.0))
        assert r.max() <= 5 and r.min() >= 1

    def test_deterministic(self):
        a = sg.simulate_annotators(2.7, seed=4, biases=np.linspace(-0.5, 0.5, 15))
        b = sg.simulate_annotators(2.7, seed=4, biases=np.linspace(-0.5, 0.5, 15))
        assert np.array_equal(a, b)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            sg.simulate_annotators(5.5)
        with pytest.raises(ValueError):
            sg.simulate_annotators(3.0, noise_sd=-1)
        with pytest.raises(ValueError):
            sg.AnnotationSet(0, ACTIONS[0], (1,) * 14)
        with pytest.raises(ValueError):
            sg.AnnotationSet(0, ACTIONS[0], (6,) * 15)

    @pytest.mark.parametrize("true", [1.0, 2.3, 3.5, 4.9])
    def test_expected_rating_matches_monte_carlo(self, true):
        biases = np.array([-0.4, 0.0, 0.3])
        rng = np.random.default_rng(0)
        draws = np.array([sg.simulate_annotators(true, 3, 0.8, rng, biases) for _ in range(40_000)])
        assert sg.expected_rating(true, 0.8, biases) == pytest.approx(draws.mean(), abs=0.01)

    def test_expected_rating_noise_free(self):
        assert sg.expected_rating(3.2, 0.0, np.zeros(15)) == 3.0


class TestGenerate:
    def test_deterministic(self):
        a, b = sg.generate(20, 3), sg.generate(20, 3)
        assert a.dataset.equals(b.dataset) and np.array_equal(a.ratings, b.ratings)

    def test_layout(self):
        g = sg.generate(10, 1)
        ds = g.dataset
        assert len(ds) == 20 and ds.scene_ids.tolist() == [i // 2 for i in range(20)]
        assert np.all(ds.mask[0::2, :8]) and not np.any(ds.mask[0::2, 8:])
        assert np.all(ds.mask[1::2, 8:]) and not np.any(ds.mask[1::2, :8])
        assert np.allclose(ds.labels[0, :8], g.ratings[0, :8].mean(axis=1))
        assert ds.features[0, 0] == 1 and ds.features[1, 2] == 1
