import re
import xml.etree.ElementTree as ET

import pytest

from veason.plots import plot_curves

NS = "{http://www.w3.org/2000/svg}"


def rows(n, f):
    return [{"step": i, "mean_reward": f(i), "kl": 0.01 * i, "mean_response_actions": 1.0} for i in range(n)]


def path_ys(svg_file, gid):
    root = ET.parse(svg_file).getroot()
    group = next(g for g in root.iter(f"{NS}g") if g.get("id") == gid)
    d = next(group.iter(f"{NS}path")).get("d")
    nums = [float(x) for x in re.findall(r"-?\d+(?:\.\d+)?", d)]
    return nums[1::2]


def test_svg_parses_and_curve_is_monotone(tmp_path):
    out = tmp_path / "c.svg"
    plot_curves(rows(20, lambda i: 1.0 + 0.1 * i), out)
    ys = path_ys(out, "reward-curve")
    assert len(ys) == 20
    # SVG y grows downward, so an increasing reward has decreasing y
    assert all(b < a for a, b in zip(ys, ys[1:]))
    assert path_ys(out, "kl-curve")


def test_output_is_byte_stable(tmp_path):
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    plot_curves(rows(5, float), a)
    plot_curves(rows(5, float), b)
    assert a.read_bytes() == b.read_bytes()


def test_empty_rows():
    with pytest.raises(ValueError):
        plot_curves([], "unused.svg")
