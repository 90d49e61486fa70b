import numpy as np
import pytest
from PIL import Image

from blurig import io
from blurig.errors import InputFormatError

from conftest import DATA


@pytest.mark.parametrize("bits,top", [(8, 255), (16, 65535)])
def test_png_round_trip_is_exact_on_grid_values(tmp_path, bits, top, rng):
    values = rng.integers(0, top + 1, size=(7, 9)) / top
    io.write_image(tmp_path / "x.png", values, bits)
    assert np.array_equal(io.read_image(tmp_path / "x.png"), values)


def test_pgm_and_modes(tmp_path):
    raw = np.array([[0, 128, 255]], dtype=np.uint8)
    Image.fromarray(raw).save(tmp_path / "a.pgm")
    assert np.array_equal(io.read_input(tmp_path / "a.pgm"), raw / 255.0)
    Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8)).save(tmp_path / "rgb.png")
    with pytest.raises(InputFormatError, match="single-channel"):
        io.read_image(tmp_path / "rgb.png")
    (tmp_path / "junk.png").write_bytes(b"not a png")
    with pytest.raises(InputFormatError):
        io.read_image(tmp_path / "junk.png")
    with pytest.raises(InputFormatError):
        io.read_image(tmp_path / "missing.png")
    with pytest.raises(ValueError):
        io.write_image(tmp_path / "b.png", raw, bits=12)


def test_fixture_images():
    flat = io.read_image(DATA / "flat16.png")
    assert flat.shape == (16, 16) and np.all(flat == flat[0, 0])
    shape = io.read_image(DATA / "shape16.png")
    assert shape.shape == (16, 16) and 0 <= shape.min() < shape.max() <= 1


def test_grid_csv_round_trip(tmp_path, rng):
    grid = rng.normal(size=(4, 5))
    io.write_grid_csv(tmp_path / "g.csv", grid, ["made by a test"])
    text = (tmp_path / "g.csv").read_bytes()
    assert b"\r" not in text and text.startswith(b"# made by a test\n")
    back = io.read_input(tmp_path / "g.csv")
    assert np.max(np.abs(back - grid)) <= 1e-12 * np.max(np.abs(grid))


def test_csv_header_comments_and_signals(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("# note\nvalue\n1\n2.5\n-3e-1\n")
    assert io.read_signal_csv(p).tolist() == [1.0, 2.5, -0.3]
    p.write_text("1,2,3\n")
    assert io.read_signal_csv(p).tolist() == [1.0, 2.0, 3.0]
    p.write_text("1,2\n3,4\n")
    with pytest.raises(InputFormatError):
        io.read_signal_csv(p)


@pytest.mark.parametrize("text", ["1,2\n3\n", "a,b\n", "1,2\n3,x\n", "1,nan\n", ""])
def test_bad_grids(tmp_path, text):
    p = tmp_path / "bad.csv"
    p.write_text(text)
    with pytest.raises(InputFormatError):
        io.read_grid_csv(p)


def test_csv_text_formatting():
    text = io.csv_text(["a", "b"], [[1.0, "x"], [np.float64(0.1), 3]], ["c"])
    assert text == "# c\na,b\n1.000000000000e+00,x\n1.000000000000e-01,3\n"
