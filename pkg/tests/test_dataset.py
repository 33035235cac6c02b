import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaintrace import dataset as ds
from chaintrace.jpeg_meta import q_feature
from chaintrace.chain_sim import default_profiles


def fake_entries(n_groups, chains=("natA", "natB", "aC")):
    return [ds.ManifestEntry(f"g{g}_{c}", "p", "j", c, f"g{g}") for g in range(n_groups) for c in chains]


def test_manifest_round_trip(synthetic_dir, entries, tmp_path):
    assert len(entries) == 60
    assert {e.chain for e in entries} == {"natNAT", "natA", "natB", "natC", "aC", "bC"}
    out = synthetic_dir / "copy.csv"
    ds.write_manifest(out, entries)
    again = ds.load_manifest(out)
    assert again == entries
    out.unlink()


def test_manifest_errors(tmp_path):
    bad = tmp_path / "m.csv"
    bad.write_text("id,pixels\nx,y\n")
    with pytest.raises(ds.ManifestError):
        ds.load_manifest(bad)
    bad.write_text("id,pixels,jpeg,chain\nx,a.pgm,a.jpg,natA\n")
    with pytest.raises(ds.ManifestError):
        ds.load_manifest(bad)
    assert len(ds.load_manifest(bad, check_paths=False)) == 1
    bad.write_text("id,pixels,jpeg,chain\nx,a,a,natA\nx,b,b,natB\n")
    with pytest.raises(ds.ManifestError):
        ds.load_manifest(bad, check_paths=False)


def test_split_keeps_groups_together(entries):
    train, test = ds.split(entries, 0.2, seed=0)
    assert {e.group_key for e in train}.isdisjoint({e.group_key for e in test})
    assert len(train) + len(test) == len(entries)
    counts = ds.by_class(test)
    assert all(len(v) == 2 for v in counts.values())


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.floats(0.05, 0.6), st.integers(0, 1000))
def test_split_properties(n_groups, frac, seed):
    entries = fake_entries(n_groups)
    train, test = ds.split(entries, frac, seed)
    assert {e.group_key for e in train}.isdisjoint({e.group_key for e in test})
    assert sorted(e.id for e in train + test) == sorted(e.id for e in entries)
    for code, members in ds.by_class(test).items():
        assert len(members) >= round(frac * n_groups)
    assert ds.split(entries, frac, seed) == (train, test)


def test_split_zero_fraction_warns(entries):
    with pytest.warns(UserWarning):
        train, test = ds.split(entries, 0.0)
    assert test == [] and len(train) == len(entries)


def test_split_class_too_small():
    with pytest.raises(ds.ClassTooSmall):
        ds.split(fake_entries(1), 0.5)


def test_assert_disjoint():
    with pytest.raises(ds.SplitLeakage):
        ds.assert_disjoint(["a", "b"], ["b"])


def test_extract_patches(entries):
    ps = ds.extract_patches(entries, 64, 25, seed=3, split_tag="train")
    assert ps.patches.shape == (150, 64, 64)
    assert ps.patches.dtype == np.float32
    assert 0 <= ps.patches.min() and ps.patches.max() <= 1
    assert set(ps.class_counts().values()) == {25}
    by_id = {e.id: e for e in entries}
    for i in (0, 37, 149):
        img = ds.load_luma(by_id[ps.parents[i]].pixels)
        r, c = ps.offsets[i]
        np.testing.assert_array_equal(ps.patches[i] * 255, img[r:r + 64, c:c + 64].astype(np.float32))
        assert ps.labels[i] == by_id[ps.parents[i]].chain


def test_extract_patches_deterministic(entries):
    a = ds.extract_patches(entries, 64, 10, seed=1)
    b = ds.extract_patches(entries, 64, 10, seed=1)
    c = ds.extract_patches(entries, 64, 10, seed=2)
    assert a.fingerprint() == b.fingerprint() != c.fingerprint()


def test_extract_patches_shortfall(entries):
    small = [e for e in entries if e.chain == "natA"]  # resized to 72 px
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ps = ds.extract_patches(small + [e for e in entries if e.chain == "natB"], 128, 5)
    assert ps.shortfall == {"natA": 5, "natB": 5}
    assert len(ps) == 0


def test_unsupported_patch_size(entries):
    with pytest.raises(ValueError):
        ds.extract_patches(entries, 32, 1)
    assert len(ds.extract_patches(entries, 32, 1, allow_any_size=True)) == 6


def test_make_patch_sets_no_leakage(entries):
    train, test = ds.make_patch_sets(entries, 64, 12, 4, 0.2, seed=0)
    assert {p.split("_")[0] for p in train.parents}.isdisjoint({p.split("_")[0] for p in test.parents})
    assert train.split == "train" and test.split == "test"


def test_cache_round_trip(entries, tmp_path):
    ps = ds.extract_patches(entries, 64, 4, seed=0, split_tag="test")
    ds.save_patchset(tmp_path / "c.pset", ps)
    back = ds.load_patchset(tmp_path / "c.pset")
    assert back.size == 64 and back.split == "test"
    assert back.labels == ps.labels and back.parents == ps.parents
    np.testing.assert_array_equal(back.offsets, ps.offsets)
    assert back.fingerprint() == ps.fingerprint()
    ds.save_patchset(tmp_path / "d.pset", back)
    assert (tmp_path / "c.pset").read_bytes() == (tmp_path / "d.pset").read_bytes()


def test_cache_errors(entries, tmp_path):
    (tmp_path / "x").write_bytes(b"nope")
    with pytest.raises(ds.CacheError):
        ds.load_patchset(tmp_path / "x")
    ps = ds.extract_patches(entries, 64, 1)
    ds.save_patchset(tmp_path / "y", ps)
    data = (tmp_path / "y").read_bytes()
    (tmp_path / "z").write_bytes(data[:-100])
    with pytest.raises(ds.CacheError):
        ds.load_patchset(tmp_path / "z")


def test_q_lookup(entries, synthetic_dir, tmp_path):
    look = ds.q_lookup(entries)
    profiles = default_profiles()
    aC = next(e for e in entries if e.chain == "aC")
    assert look[aC.id] == (q_feature(profiles["C"].luma_qtable), "ok")
    broken = ds.ManifestEntry("b", aC.pixels, tmp_path / "missing.jpg", "aC")
    (tmp_path / "junk.jpg").write_bytes(b"\xff\xd8garbage")
    junk = ds.ManifestEntry("j", aC.pixels, tmp_path / "junk.jpg", "aC")
    look2 = ds.q_lookup([broken, junk])
    assert look2 == {"b": (None, "no-metadata"), "j": (None, "no-metadata")}
    q, missing = ds.q_matrix(["b", aC.id, "unknown"], {**look, **look2})
    assert missing.tolist() == [True, False, True]
    assert q[0].sum() == 0 and list(q[1]) == list(q_feature(profiles["C"].luma_qtable))


def test_load_luma_colour(tmp_path):
    from PIL import Image
    rgb = np.zeros((4, 4, 3), dtype=np.uint8)
    rgb[..., 0] = 200
    rgb[..., 1] = 100
    rgb[..., 2] = 50
    Image.fromarray(rgb).save(tmp_path / "c.png")
    y = ds.load_luma(tmp_path / "c.png")
    assert abs(int(y[0, 0]) - round(0.299 * 200 + 0.587 * 100 + 0.114 * 50)) <= 1


def test_budgets():
    assert ds.PAPER_PATCH_BUDGETS[64] == (960_000, 96_000)
    assert ds.DESK_PATCH_BUDGET == (2_000, 400)
