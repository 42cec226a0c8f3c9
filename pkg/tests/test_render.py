import numpy as np
import pytest

from narrownet.errors import InputError
from narrownet.net_core import Layer, Network
from narrownet.regions import analyze, build_example_net, random_narrow_net
from narrownet.render import (OUTLINE_GRAY, class_gray_levels, pgm_bytes, plot_grid, plot_sweep, read_pgm,
                              svg_text)


@pytest.fixture(scope="module")
def rotation_grid():
    return analyze(build_example_net("1"), (-1, 1), 512)


def test_pgm_header_and_size(rotation_grid):
    data = pgm_bytes(rotation_grid)
    assert data.startswith(b"P5\n512 512\n255\n")
    assert read_pgm(data).shape == (512, 512)


def test_pgm_is_byte_stable(rotation_grid):
    again = analyze(build_example_net("1"), (-1, 1), 512, threads=3)
    assert pgm_bytes(rotation_grid) == pgm_bytes(again)


def test_negative_patches_hug_left_corners(rotation_grid):
    img = read_pgm(pgm_bytes(rotation_grid))
    neg, pos = class_gray_levels(2)
    # image rows run top (x2 = 1) to bottom (x2 = -1), columns left (x1 = -1) to right
    assert img[-3, 2] == neg and img[2, 2] == neg
    assert img[256, 2] == pos and img[256, 500] == pos and img[2, 500] == pos


def test_vertical_split_two_colours():
    net = Network((Layer([[1.0, 0.0], [-1.0, 0.0]], [0.0, 0.0]),), Layer([[1.0, -1.0]], [0.0]))
    img = read_pgm(pgm_bytes(analyze(net, (-1, 1), 64)))
    neg, pos = class_gray_levels(2)
    assert set(np.unique(img[:, :30]).tolist()) <= {neg, OUTLINE_GRAY}
    assert set(np.unique(img[:, 34:]).tolist()) <= {pos, OUTLINE_GRAY}
    assert np.all(img[:, 31] == OUTLINE_GRAY) and np.all(img[:, 32] == OUTLINE_GRAY)


def test_svg_one_group_per_component(rotation_grid):
    text = svg_text(rotation_grid)
    assert text.count("<g ") == len(rotation_grid.components) == 3
    assert text == svg_text(rotation_grid)


def test_render_needs_2d():
    grid = analyze(random_narrow_net(np.random.default_rng(0), 3), (-1, 1), 8)
    with pytest.raises(InputError):
        pgm_bytes(grid)


def test_matplotlib_figures_are_reproducible(tmp_path, rotation_grid):
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    plot_grid(rotation_grid, a)
    plot_grid(rotation_grid, b)
    assert a.read_bytes() == b.read_bytes()
    table = [{"d_in": 2, "depth": 1, "width": 2, "runs": 3, "successes": 0, "success_rate": 0.0},
             {"d_in": 2, "depth": 1, "width": 3, "runs": 3, "successes": 1, "success_rate": 1 / 3}]
    plot_sweep(table, tmp_path / "s.png")
    assert (tmp_path / "s.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
