import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ulft.errors import InputError, MissingInputError
from ulft.io import (id_colors, read_ids, read_json, read_maskset, read_pgm, read_ply,
                     read_ppm, write_ids, write_json, write_maskset, write_pgm8, write_pgm16,
                     write_ply, write_ppm)
from ulft.labels import MaskSet


@given(hnp.arrays(np.uint8, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3))))
def test_ppm_round_trip(tmp_path_factory, img):
    p = tmp_path_factory.mktemp("ppm") / "a.ppm"
    write_ppm(p, img)
    assert np.array_equal(read_ppm(p), img)


@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)),
                  elements=st.floats(0, 6.5)))
def test_pgm16_round_trip_within_quantisation(tmp_path_factory, a):
    p = tmp_path_factory.mktemp("pgm") / "d.pgm"
    a = a.copy()
    a.flat[0] = np.nan
    write_pgm16(p, a, 1e-4)
    back = read_pgm(p)
    assert np.isnan(back.flat[0])
    ok = np.isfinite(a)
    assert np.max(np.abs(back[ok] - a[ok]), initial=0) <= 0.5e-4 + 1e-12


def test_pgm_errors(tmp_path):
    with pytest.raises(InputError):
        write_pgm16(tmp_path / "x.pgm", np.array([[7.0]]), 1e-4)
    with pytest.raises(InputError):
        write_pgm8(tmp_path / "x.pgm", np.array([[300]]))
    with pytest.raises(MissingInputError):
        read_pgm(tmp_path / "none.pgm")
    (tmp_path / "bad.pgm").write_bytes(b"P6\n1 1\n255\n\0\0\0")
    with pytest.raises(InputError):
        read_pgm(tmp_path / "bad.pgm")


def test_ids_and_colors(tmp_path):
    ids = np.array([[0, 1], [40000, 7]])
    write_ids(tmp_path / "i.pgm", ids)
    assert np.array_equal(read_ids(tmp_path / "i.pgm"), ids)
    c = id_colors(ids)
    assert c[0, 0].tolist() == [0, 0, 0] and c.dtype == np.uint8
    assert not np.array_equal(c[0, 1], c[1, 1])


def test_ply_round_trip(tmp_path, rng):
    pts = rng.standard_normal((12, 3))
    props = {"class": rng.integers(0, 5, 12), "instance": rng.integers(0, 9, 12)}
    write_ply(tmp_path / "p.ply", pts, props)
    back, bp = read_ply(tmp_path / "p.ply")
    assert np.array_equal(back, pts)
    assert all(np.array_equal(bp[k], props[k]) for k in props)
    with pytest.raises(InputError):
        write_ply(tmp_path / "q.ply", pts, {"x": np.zeros(3)})


def test_json_round_trip(tmp_path):
    write_json(tmp_path / "a.json", {"b": [1, 2.5], "a": np.float64(np.inf)})
    assert read_json(tmp_path / "a.json") == {"a": "inf", "b": [1, 2.5]}
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(InputError):
        read_json(tmp_path / "bad.json")


@given(st.integers(0, 10_000))
def test_maskset_round_trip(tmp_path_factory, seed):
    rng = np.random.default_rng(seed)
    ms = MaskSet((6, 7))
    for mid in rng.permutation(30)[:int(rng.integers(1, 8))] + 1:
        pix = np.flatnonzero(rng.random(42) < 0.3)
        if len(pix) == 0:
            pix = np.array([0])
        ms.add(int(mid), pix, int(rng.integers(0, 4)), "block",
               label=int(rng.integers(0, 5)) if rng.random() < 0.5 else None)
    prefix = tmp_path_factory.mktemp("ms") / "m"
    write_maskset(prefix, ms)
    back = read_maskset(prefix)
    assert back.ids == ms.ids
    for m in ms.ids:
        assert np.array_equal(back.pixels[m], ms.pixels[m])
        assert back.source[m] == ms.source[m] and back.label.get(m) == ms.label.get(m)
