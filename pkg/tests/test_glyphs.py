import numpy as np
import pytest

from shapebound.errors import InvalidConfigurationError
from shapebound.glyphs import LETTERS, SHAPES, embed, render, render_glyph, render_shape
from shapebound.hypotheses import shape_distance


class TestGlyphs:
    def test_full_alphabet(self):
        assert LETTERS == "ABCDEFGHIJKLMNOPQRSTUVWXYZ"

    @pytest.mark.parametrize("letter", list("AKOZ"))
    def test_ink_touches_all_edges(self, letter):
        m = render_glyph(letter, 32)
        assert m[0].any() and m[-1].any() and m[:, 0].any() and m[:, -1].any()

    def test_letters_are_distinct(self):
        ms = [render_glyph(c, 24) for c in LETTERS]
        d = [shape_distance(a, b) for i, a in enumerate(ms) for b in ms[i + 1 :]]
        assert min(d) > 0

    def test_rectangular_box(self):
        assert render_glyph("E", (20, 30)).shape == (30, 20)

    def test_variants_change_the_mask(self):
        base = render_glyph("R", 32)
        assert shape_distance(base, render_glyph("R", 32, slant=0.2)) > 0
        assert render_glyph("R", 32, thickness=0.12).sum() > base.sum()

    @pytest.mark.parametrize("kw", [{"letter": "?"}, {"width": 0.0}, {"thickness": 0.0}])
    def test_invalid(self, kw):
        args = {"letter": "A", "size": 10}
        args.update(kw)
        with pytest.raises(InvalidConfigurationError):
            render_glyph(**args)


class TestShapes:
    def test_square_is_solid(self):
        assert render_shape("square", 7).all()

    @pytest.mark.parametrize("kind", SHAPES)
    def test_nonempty_and_sized(self, kind):
        m = render(kind, (24, 20))
        assert m.shape == (20, 24) and 0 < m.sum() <= 24 * 20

    def test_disc_area(self):
        assert abs(render_shape("disc", 100).sum() / (np.pi * 2500) - 1) < 0.01

    def test_unknown(self):
        with pytest.raises(InvalidConfigurationError):
            render_shape("hexagon", 10)


class TestEmbed:
    def test_position(self):
        out = embed(np.ones((2, 3), bool), 6, 5, 2, 1)
        assert out.sum() == 6 and out[1, 2] and out[2, 4] and not out[3, 2]

    def test_must_fit(self):
        with pytest.raises(InvalidConfigurationError):
            embed(np.ones((2, 3), bool), 4, 4, 2, 0)
