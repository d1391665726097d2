import itertools

import numpy as np
import pytest
from conftest import field_from_ticks, field_from_values, random_field
from hypothesis import given
from hypothesis import strategies as st

from shapebound.bounds import (
    MarginQueue,
    _merge,
    element_bounds,
    exact_evidence,
    exact_evidence_ticks,
    extract_discrete_shape,
    extract_semidiscrete_shape,
    init_bounds,
    init_many,
    local_lower,
    local_upper,
    merged_summary,
)
from shapebound.errors import InvalidConfigurationError, InvalidHypothesisError, InvalidSummaryError
from shapebound.field import TICKS_PER_DELTA_MAX, ClampPolicy, ProbabilityImage, binary_shape_to_probability, from_probabilities
from shapebound.glyphs import embed, render_glyph
from shapebound.pgm import read_pgm
from shapebound.summaries import MSummary, Region, build_tables

T = TICKS_PER_DELTA_MAX


def pair(img_field, pri_field, m=4):
    return build_tables(img_field, m), build_tables(pri_field, m)


def random_case(rng, kind=None):
    """Random image, prior and a contained support; sizes 2..24."""
    kinds = ("uniform", "binary", "blobs", "saturated")
    pw, ph = (int(v) for v in rng.integers(1, 17, 2))
    W, H = pw + int(rng.integers(0, 8)), ph + int(rng.integers(0, 8))
    f = random_field(rng, H, W, kind or kinds[rng.integers(4)])
    h = random_field(rng, ph, pw, kind or kinds[rng.integers(4)])
    sup = Region(int(rng.integers(0, W - pw + 1)), int(rng.integers(0, H - ph + 1)), pw, ph)
    return f, h, sup


class TestLocalUpper:
    def test_both_positive(self):
        ms = MSummary(np.array([0, 0, 4]))
        assert local_upper(ms, ms, 1, 1.0) == 8

    def test_cancelling(self):
        assert local_upper(MSummary(np.array([0, 0, 4])), MSummary(np.array([4, 4, 4])), 1, 1.0) == 0

    def test_both_negative(self):
        ms = MSummary(np.array([4, 4, 4]))
        assert local_upper(ms, ms, 1, 1.0) == 0

    def test_merge_example(self):
        ms_f, ms_h = MSummary(np.array([0, 0, 4])), MSummary(np.array([4, 4, 4]))
        assert merged_summary(ms_f, ms_h).tolist() == [0, 0, 4, 4, 4, 4]

    def test_length_mismatch(self):
        with pytest.raises(InvalidSummaryError):
            local_upper(MSummary(np.array([0, 0, 4])), MSummary(np.array([0, 0, 0, 4, 4])), 1, 1.0)
        with pytest.raises(InvalidSummaryError):
            local_upper(MSummary(np.array([0, 0, 4])), MSummary(np.array([0, 0, 5])), 1, 1.0)

    @given(st.integers(1, 6), st.data())
    def test_merge_length_and_order(self, m, data):
        def counts():
            return np.sort(np.array(data.draw(st.lists(st.integers(0, 30), min_size=2 * m, max_size=2 * m)) + [30]))

        a, b = counts(), counts()
        merged = _merge(a[:, None], b[:, None])[:, 0]
        assert len(merged) == 4 * m + 2
        assert np.all(np.diff(merged) >= 0)
        assert sorted(merged.tolist()) == sorted(a.tolist() + b.tolist())


class TestLocalLower:
    @pytest.mark.parametrize("mf,mh,expect", [(3, -1, (2, 1)), (-2, -3, (0, 0)), (0, 0, (0, 0))])
    def test_examples(self, mf, mh, expect):
        assert local_lower(mf, mh) == expect

    @given(st.lists(st.tuples(st.integers(-50, 50), st.integers(-50, 50)), min_size=1, max_size=12))
    def test_labels_maximise_linear_objective(self, leaves):
        total = sum(local_lower(a, b)[0] for a, b in leaves)
        labels = [local_lower(a, b)[1] for a, b in leaves]
        best = max(
            sum((a + b) * q for (a, b), q in zip(leaves, qs)) for qs in itertools.product((0, 1), repeat=len(leaves))
        )
        assert total == best == sum((a + b) * q for (a, b), q in zip(leaves, labels))


class TestElementBounds:
    def test_sandwich_on_every_element(self, rng):
        for _ in range(50):
            f, h, sup = random_case(rng)
            img, pri = pair(f, h, int(rng.choice([1, 2, 4])))
            n = 30
            ws = rng.integers(1, sup.w + 1, n)
            hs = rng.integers(1, sup.h + 1, n)
            px = (rng.random(n) * (sup.w - ws + 1)).astype(np.int64)
            py = (rng.random(n) * (sup.h - hs + 1)).astype(np.int64)
            sf, sh, lo, up = element_bounds(img, pri, px + sup.x0, py + sup.y0, px, py, ws, hs)
            for i in range(n):
                a = f.ticks[sup.y0 + py[i] : sup.y0 + py[i] + hs[i], sup.x0 + px[i] : sup.x0 + px[i] + ws[i]]
                b = h.ticks[py[i] : py[i] + hs[i], px[i] : px[i] + ws[i]]
                exact = int(np.maximum(a + b, 0).sum())
                assert sf[i] == a.sum() and sh[i] == b.sum()
                assert lo[i] == max(0, a.sum() + b.sum())
                assert lo[i] <= exact <= up[i]

    def test_uniform_pair_is_exact(self):
        f = field_from_ticks(np.full((3, 4), T // 3))
        h = field_from_ticks(np.full((3, 4), -T // 7))
        img, pri = pair(f, h)
        _, _, lo, up = element_bounds(img, pri, [0], [0], [0], [0], [4], [3])
        assert lo[0] == up[0] == 12 * (T // 3 - T // 7)

    def test_mismatched_tables(self):
        f = field_from_ticks(np.zeros((2, 2)))
        with pytest.raises(InvalidConfigurationError):
            init_bounds(build_tables(f, 2), build_tables(f, 4), Region(0, 0, 2, 2))
        g = field_from_ticks(np.zeros((2, 2)), ClampPolicy(3.0))
        with pytest.raises(InvalidConfigurationError):
            init_bounds(build_tables(f), build_tables(g), Region(0, 0, 2, 2))


class TestMarginQueue:
    def test_shadow_max(self, rng):
        rho = 1.2
        q = MarginQueue(1.0, 1e9, rho)
        live = []
        for step in range(4000):
            if live and rng.random() < 0.45:
                margin, item = q.pop_max()
                best = max(live)
                assert margin >= best / rho
                live.remove(margin)
            else:
                v = float(np.exp(rng.uniform(0, np.log(1e9))))  # margins inside [floor, ceiling]
                q.insert(step, v)
                live.append(v)
        assert len(q) == len(live)

    def test_bucket_ranges(self):
        q = MarginQueue(1.0, 100.0, 2.0)
        assert q.bucket_of(0.5) == 0
        assert q.bucket_of(1.0) == 1
        assert q.bucket_of(1.99) == 1
        assert q.bucket_of(2.0) == 2
        assert q.bucket_of(1e12) == len(q.buckets) - 1

    def test_lifo_within_bucket(self):
        q = MarginQueue(1.0, 100.0, 2.0)
        q.insert("a", 5.0)
        q.insert("b", 6.0)
        assert q.pop_max() == (6.0, "b")
        assert q.pop_max() == (5.0, "a")
        with pytest.raises(IndexError):
            q.pop_max()

    @pytest.mark.parametrize("args", [(1.0, 10.0, 1.0), (0.0, 10.0, 1.2), (5.0, 1.0, 1.2)])
    def test_invalid(self, args):
        with pytest.raises(InvalidConfigurationError):
            MarginQueue(*args)


class TestInitBounds:
    def test_single_pixel_support_is_resolved(self):
        f = field_from_values(np.array([[1.0, -2.0]]))
        h = field_from_values(np.array([[0.5]]))
        b = init_bounds(*pair(f, h), Region(1, 0, 1, 1))
        assert b.fully_refined and b.bound_pairs == 1
        assert b.lower == b.upper
        assert b.refine_once() is None

    def test_whole_128_prior_is_one_leaf(self):
        f = from_probabilities(ProbabilityImage(np.full((130, 130), 0.3)))
        h = from_probabilities(ProbabilityImage(np.full((128, 128), 0.6)))
        b = init_bounds(*pair(f, h), Region(1, 2, 128, 128))
        assert b.bound_pairs == 1
        (leaf,) = b.leaf_regions()
        assert leaf.area == 16384

    def test_sandwich_at_init(self, rng):
        for _ in range(50):
            f, h, sup = random_case(rng)
            b = init_bounds(*pair(f, h), sup)
            exact = exact_evidence_ticks(f, h, sup)
            assert b.lower <= exact <= b.upper

    def test_support_outside_image(self):
        f = field_from_ticks(np.zeros((4, 4)))
        h = field_from_ticks(np.zeros((2, 2)))
        with pytest.raises(InvalidHypothesisError):
            init_bounds(*pair(f, h), Region(3, 0, 2, 2))

    def test_support_size_mismatch(self):
        f = field_from_ticks(np.zeros((4, 4)))
        h = field_from_ticks(np.zeros((2, 2)))
        with pytest.raises(InvalidHypothesisError):
            init_bounds(*pair(f, h), Region(0, 0, 3, 2))

    def test_init_many_matches_single(self, rng):
        f, h, sup = random_case(rng)
        img, pri = pair(f, h)
        regions = [Region(x, y, h.width, h.height) for y in range(f.height - h.height + 1) for x in range(f.width - h.width + 1)]
        many = init_many(img, pri, regions)
        for r, b in zip(regions, many):
            one = init_bounds(img, pri, r)
            assert (one.lower, one.upper) == (b.lower, b.upper)

    def test_z_term_enters_both_totals(self):
        f = field_from_ticks(np.zeros((2, 2)))
        h = field_from_ticks(np.zeros((2, 2)), z_ticks=-12345)
        b = init_bounds(*pair(f, h), Region(0, 0, 2, 2))
        assert b.lower == b.upper == -12345
        assert b.z_h == pytest.approx(-12345 * 5.0 / T)


class TestRefinement:
    def test_sandwich_and_monotone_at_every_step(self, rng):
        for _ in range(60):
            f, h, sup = random_case(rng)
            b = init_bounds(*pair(f, h, int(rng.choice([1, 4]))), sup)
            exact = exact_evidence_ticks(f, h, sup)
            lo, up = b.lower, b.upper
            while True:
                assert b.lower <= exact <= b.upper
                d = b.refine_once()
                if d is None:
                    break
                assert b.lower >= lo and b.upper <= up
                assert (d.lower_before, d.upper_before) == (lo, up)
                lo, up = b.lower, b.upper
            assert b.fully_refined

    def test_totals_are_conserved(self, rng):
        f, h, sup = random_case(rng, "uniform")
        b = init_bounds(*pair(f, h), sup)
        while b.refine_once() is not None:
            assert b.recompute_totals() == (b.lower, b.upper)

    def test_bound_pair_accounting(self, rng):
        f = random_field(rng, 16, 16)
        h = random_field(rng, 16, 16)
        b = init_bounds(*pair(f, h), Region(0, 0, 16, 16))
        children = [b.refine_once().children for _ in range(5)]
        assert b.bound_pairs == 1 + sum(children)
        assert children[0] == 4

    def test_thin_elements_split_two_ways(self):
        f = field_from_values(np.linspace(-3, 3, 7)[None, :])
        h = field_from_values(np.zeros((1, 7)))
        b = init_bounds(*pair(f, h), Region(0, 0, 7, 1))
        d = b.refine_once()
        assert d.children == 2
        assert sorted(r.w for r in b.leaf_regions()) == [3, 4]

    def test_uniform_element_split_keeps_totals(self):
        f = field_from_values(np.full((8, 8), 1.3))
        h = field_from_values(np.full((8, 8), -0.4))
        b = init_bounds(*pair(f, h), Region(0, 0, 8, 8))
        assert b.fully_refined  # zero margin
        # force a split anyway through the element bounds of the quadrants
        kids = element_bounds(b.img, b.pri, [0, 4, 0, 4], [0, 0, 4, 4], [0, 4, 0, 4], [0, 0, 4, 4], [4] * 4, [4] * 4)
        assert int(kids[2].sum()) == b.lower - b.z_ticks
        assert int(kids[3].sum()) == b.upper - b.z_ticks
        assert b.lower_total - b.z_h == pytest.approx(64 * 0.9, abs=1e-9)

    def test_1000_random_refinements_are_monotone(self, rng):
        f = random_field(rng, 72, 72, "blobs")
        h = random_field(rng, 64, 64, "uniform")
        b = init_bounds(*pair(f, h), Region(5, 7, 64, 64))
        history = [(b.lower, b.upper)]
        while len(history) <= 1000 and b.refine_once() is not None:
            history.append((b.lower, b.upper))
        assert len(history) > 1000
        lows, ups = zip(*history)
        assert all(a <= c for a, c in zip(lows, lows[1:]))
        assert all(a >= c for a, c in zip(ups, ups[1:]))

    def test_full_refinement_on_binary_fields_is_exact(self, rng):
        pol = ClampPolicy.for_levels(0.98)
        for _ in range(10):
            f = from_probabilities(binary_shape_to_probability(rng.random((16, 16)) < 0.5, 0.98, 0.02), pol)
            h = from_probabilities(binary_shape_to_probability(rng.random((16, 16)) < 0.5, 0.98, 0.02), pol)
            b = init_bounds(*pair(f, h, 16), Region(0, 0, 16, 16))
            b.refine_until_done()
            assert b.lower == b.upper == exact_evidence_ticks(f, h, Region(0, 0, 16, 16))

    def test_refine_until_done_limit(self, rng):
        f, h, sup = random_case(rng, "uniform")
        b = init_bounds(*pair(f, h), sup)
        assert b.refine_until_done(limit=0) == 0

    @given(st.integers(0, 2**32 - 1))
    def test_sandwich_property(self, seed):
        rng = np.random.default_rng(seed)
        f, h, sup = random_case(rng)
        b = init_bounds(*pair(f, h, int(rng.choice([1, 2, 4]))), sup)
        exact = exact_evidence_ticks(f, h, sup)
        for _ in range(30):
            assert b.lower <= exact <= b.upper
            if b.refine_once() is None:
                break


class TestShapes:
    def test_negative_evidence_gives_empty_shape(self, rng):
        f = field_from_values(-rng.random((6, 6)) * 5)
        h = field_from_values(-rng.random((6, 6)) * 5)
        b = init_bounds(*pair(f, h), Region(0, 0, 6, 6))
        b.refine_until_done()
        assert not extract_discrete_shape(b).rasterize(6, 6).any()

    def test_single_positive_leaf(self):
        f = field_from_values(np.full((3, 3), 2.0))
        h = field_from_values(np.full((3, 3), -1.0))
        b = init_bounds(*pair(f, h), Region(0, 0, 3, 3))
        s = extract_discrete_shape(b)
        assert s.labels == (1,)

    def test_clean_glyph_at_true_pose(self):
        pol = ClampPolicy.for_levels(0.98)
        mask = render_glyph("A", 32)
        img = embed(mask, 40, 40, 4, 3)
        f = from_probabilities(binary_shape_to_probability(img, 0.98, 0.02), pol)
        h = from_probabilities(ProbabilityImage(np.where(mask, 0.9, 0.1)), pol)
        b = init_bounds(*pair(f, h), Region(4, 3, 32, 32))
        b.refine_until_done()
        got = extract_discrete_shape(b).rasterize(40, 40)
        oracle = np.zeros((40, 40), bool)
        oracle[3:35, 4:36] = (f.ticks[3:35, 4:36] + h.ticks) > 0
        assert np.array_equal(got, oracle)
        assert np.array_equal(got, img)

    def test_semidiscrete_examples(self):
        pol = ClampPolicy(1.0)
        cases = [((1.0, 1.0), (4, 4)), ((-1.0, -1.0), (0, 0)), ((1.0, -1.0), (0, 4))]
        for (vf, vh), expect in cases:
            f = field_from_values(np.full((2, 2), vf), pol)
            h = field_from_values(np.full((2, 2), vh), pol)
            b = init_bounds(*pair(f, h, 1), Region(0, 0, 2, 2))
            s = extract_semidiscrete_shape(b)
            assert s.intervals == (expect,)
            assert s.coverage == (expect[0],)

    def test_semidiscrete_intervals_are_ordered(self, rng):
        for _ in range(20):
            f, h, sup = random_case(rng)
            b = init_bounds(*pair(f, h), sup)
            b.refine_until_done(limit=5)
            for r, (lo, hi) in zip(*astuple(extract_semidiscrete_shape(b))):
                assert 0 <= lo <= hi <= r.area

    def test_rasters_written_as_pgm(self, tmp_path):
        pol = ClampPolicy(1.0)
        f = field_from_values(np.array([[1.0, 1.0, -1.0, -1.0]] * 2), pol)
        h = field_from_values(np.full((2, 4), 0.5), pol)
        b = init_bounds(*pair(f, h, 2), Region(0, 0, 4, 2))
        b.refine_until_done()
        extract_discrete_shape(b).save(tmp_path / "d.pgm", 5, 3)
        extract_semidiscrete_shape(b).save(tmp_path / "s.pgm", 5, 3)
        d, dmax = read_pgm(tmp_path / "d.pgm")
        s, smax = read_pgm(tmp_path / "s.pgm")
        assert dmax == 255 and smax == 65535
        assert d[:2, :2].min() == 255 and d[:, 2:].max() == 0
        assert s[:2, :2].min() == 65535 and s[2].max() == 0


def astuple(shape):
    return shape.regions, shape.intervals


class TestExactEvidence:
    def test_nonpositive_sums_give_z(self):
        f = field_from_values(np.full((2, 2), -1.0), z_term=0.0)
        h = field_from_values(np.full((2, 2), 0.5), z_term=-2.5)
        assert exact_evidence(f, h, Region(0, 0, 2, 2)) == pytest.approx(-2.5)

    def test_two_by_two_toy(self):
        pol = ClampPolicy(4.0)
        sums = np.array([[1.0, -1.0], [0.5, -2.0]])
        f = field_from_values(sums, pol)
        h = field_from_values(np.zeros((2, 2)), pol, z_term=-3.0)
        got = exact_evidence(f, h, Region(0, 0, 2, 2))
        brute = max(-3.0 + float((sums.ravel() * np.array(q)).sum()) for q in itertools.product((0, 1), repeat=4))
        assert got == pytest.approx(-1.5) == pytest.approx(brute)
        assert pol.from_ticks(exact_evidence_ticks(f, h, Region(0, 0, 2, 2))) == pytest.approx(-1.5)

    def test_errors(self):
        f = field_from_ticks(np.zeros((3, 3)))
        with pytest.raises(InvalidHypothesisError):
            exact_evidence(f, field_from_ticks(np.zeros((2, 2))), Region(2, 2, 2, 2))
        with pytest.raises(InvalidHypothesisError):
            exact_evidence(f, field_from_ticks(np.zeros((2, 2))), Region(0, 0, 3, 3))
