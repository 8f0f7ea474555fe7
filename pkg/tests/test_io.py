import numpy as np
import pytest

from tkwin.imageio import ImageFileError, read_pgm, read_ppm, write_pgm, write_ppm
from tkwin.matcher import FineMatch, MatchSet
from tkwin.render import GREEN, RED, compose, line_color, render_matches
from tkwin.synthetic import gen_pair


class TestPGM:
    def test_round_trip_16bit(self, tmp_path):
        img = np.random.default_rng(0).random((16, 32))
        back = read_pgm(write_pgm(tmp_path / "a.pgm", img))
        assert back.shape == (16, 32)
        assert np.max(np.abs(back - img)) <= 0.5 / 65535 + 1e-15

    def test_round_trip_8bit(self, tmp_path):
        img = np.arange(256, dtype=float).reshape(16, 16) / 255
        back = read_pgm(write_pgm(tmp_path / "a.pgm", img, maxval=255))
        np.testing.assert_allclose(back, img, atol=1e-15)

    def test_header(self, tmp_path):
        write_pgm(tmp_path / "a.pgm", np.zeros((3, 5)))
        assert (tmp_path / "a.pgm").read_bytes().startswith(b"P5\n5 3\n65535\n")

    def test_comment_in_header(self, tmp_path):
        body = bytes([0, 128, 255, 64])
        (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 2\n255\n" + body)
        np.testing.assert_allclose(read_pgm(tmp_path / "c.pgm"), [[0, 128 / 255], [1, 64 / 255]])

    def test_clipped(self, tmp_path):
        back = read_pgm(write_pgm(tmp_path / "a.pgm", np.array([[-1.0, 2.0]])))
        assert back.tolist() == [[0.0, 1.0]]

    def test_wrong_magic(self, tmp_path):
        write_ppm(tmp_path / "x.ppm", np.zeros((2, 2, 3), np.uint8))
        with pytest.raises(ImageFileError, match="P5"):
            read_pgm(tmp_path / "x.ppm")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ImageFileError, match="missing.pgm"):
            read_pgm(tmp_path / "missing.pgm")

    def test_unwritable(self, tmp_path):
        with pytest.raises(ImageFileError) as info:
            write_pgm(tmp_path / "no" / "dir" / "a.pgm", np.zeros((2, 2)))
        assert isinstance(info.value, OSError)

    def test_not_2d(self, tmp_path):
        with pytest.raises(ImageFileError):
            write_pgm(tmp_path / "a.pgm", np.zeros((2, 2, 2)))


class TestPPM:
    def test_round_trip(self, tmp_path):
        img = np.random.default_rng(1).integers(0, 256, size=(7, 9, 3)).astype(np.uint8)
        assert np.array_equal(read_ppm(write_ppm(tmp_path / "a.ppm", img)), img)

    def test_bad_shape(self, tmp_path):
        with pytest.raises(ImageFileError):
            write_ppm(tmp_path / "a.ppm", np.zeros((4, 4)))


def one_match(conf):
    return MatchSet(fine=[FineMatch((3.0, 4.0), (10.0, 12.0), conf, 0.1)], grid=(2, 2))


def count(canvas, color):
    return int(np.all(canvas == color, axis=-1).sum())


class TestRender:
    @pytest.mark.parametrize(
        "conf,color", [(0.3, None), (0.31, RED), (0.4, RED), (0.5, RED), (0.51, GREEN), (0.9, GREEN)]
    )
    def test_bands(self, conf, color):
        assert line_color(conf) == color

    def test_no_matches(self):
        pair = gen_pair("translate", 16, 16, 4, 0.0, seed=0)
        canvas = compose(pair.image_a, pair.image_b, MatchSet())
        assert canvas.shape == (16, 32, 3)
        assert count(canvas, RED) == 0 and count(canvas, GREEN) == 0

    def test_one_red_line(self):
        pair = gen_pair("translate", 16, 16, 4, 0.0, seed=0)
        canvas = compose(pair.image_a, pair.image_b, one_match(0.4))
        assert count(canvas, RED) > 0 and count(canvas, GREEN) == 0
        assert tuple(canvas[4, 3]) == RED and tuple(canvas[12, 16 + 10]) == RED

    def test_one_green_line(self):
        pair = gen_pair("translate", 16, 16, 4, 0.0, seed=0)
        canvas = compose(pair.image_a, pair.image_b, one_match(0.9))
        assert count(canvas, GREEN) > 0 and count(canvas, RED) == 0

    def test_low_confidence_omitted(self):
        pair = gen_pair("translate", 16, 16, 4, 0.0, seed=0)
        canvas = compose(pair.image_a, pair.image_b, one_match(0.2))
        assert count(canvas, RED) == 0 and count(canvas, GREEN) == 0

    def test_written_file(self, tmp_path):
        pair = gen_pair("translate", 16, 16, 4, 0.0, seed=0)
        canvas = render_matches(pair, one_match(0.9), tmp_path / "m.ppm")
        assert np.array_equal(read_ppm(tmp_path / "m.ppm"), canvas)

    def test_unwritable_path(self, tmp_path):
        pair = gen_pair("translate", 16, 16, 4, 0.0, seed=0)
        with pytest.raises(ImageFileError, match="nowhere"):
            render_matches(pair, MatchSet(), tmp_path / "nowhere" / "m.ppm")
