import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaintrace import cascade as cc
from chaintrace.chain_sim import ChainRecord, emit_jpeg_stub
from chaintrace.cnn import CnnConfig, CnnModel
from chaintrace.jpeg_meta import JpegError, QuantTable
from chaintrace.labels import PAPER_TAXONOMY, SYNTHETIC_TAXONOMY, ChainLabel, UnknownPrimary
from cascade_fixtures import SIZE, random_cascade

SHARED = random_cascade()


@pytest.fixture(scope="module", params=["synthetic", "paper"])
def model(request):
    return random_cascade(SYNTHETIC_TAXONOMY if request.param == "synthetic" else PAPER_TAXONOMY)


def stub(values):
    img = np.zeros((16, 16), dtype=np.uint8)
    rec = ChainRecord((), QuantTable(0, 8, values), ChainLabel("nat", "NAT"))
    return emit_jpeg_stub(img, rec)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(1, 255), min_size=64, max_size=64), st.integers(0, 2**32 - 1))
def test_classify_chain_always_valid(values, seed):
    patch = np.random.default_rng(seed).uniform(0, 1, (SIZE, SIZE)).astype(np.float32)
    chain = cc.classify_chain(SHARED, patch, stub(values))
    assert SHARED.taxonomy.is_valid(chain)


def test_batch_outputs_valid_and_route_everywhere(model):
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (400, SIZE, SIZE)).astype(np.float32)
    q = rng.integers(1, 256, (400, 9)).astype(np.float64)
    chains = model.classify_patches(x[:, None], q)
    assert all(model.taxonomy.is_valid(c) for c in chains)
    assert {c.primary for c in chains} == set(model.taxonomy.primaries)


def test_single_and_batch_agree(model):
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, (20, SIZE, SIZE)).astype(np.float32)
    q = rng.integers(1, 256, (20, 9))
    batch = model.classify_patches(x[:, None], q)
    for i in range(20):
        p = cc.stage1_classify(model, x[i], q[i])
        assert ChainLabel(cc.stage2_classify(model, x[i], p), p) == batch[i]


def test_fused_length(model):
    feats = model.stage1_features(np.zeros((1, 1, SIZE, SIZE), np.float32), np.ones(9))
    assert feats.shape == (1, len(model.taxonomy.primaries) + 9)


def test_stage2_uses_head_order():
    m = random_cascade(PAPER_TAXONOMY)
    x = np.random.default_rng(0).uniform(0, 1, (SIZE, SIZE)).astype(np.float32)
    cls, _ = m.stage2["GOG"].classify(x[None, None])
    assert cc.stage2_classify(m, x, "GOG") == PAPER_TAXONOMY.head_classes("GOG")[cls]
    assert cc.stage2_classify(m, x, "FBL") == "nat"
    with pytest.raises(UnknownPrimary):
        cc.stage2_classify(m, x, "XYZ")


def test_missing_head():
    m = random_cascade()
    m.stage2.clear()
    with pytest.raises(cc.MissingHead):
        m.stage2_batch(np.zeros((1, 1, SIZE, SIZE), np.float32), ["C"])


def test_model_mismatch():
    m = random_cascade()
    wrong = CnnModel.build(CnnConfig(SIZE, 5, allow_any_size=True))
    with pytest.raises(cc.ModelMismatch):
        cc.CascadeModel(SYNTHETIC_TAXONOMY, wrong, m.stage1_forest)
    with pytest.raises(cc.ModelMismatch):
        cc.CascadeModel(SYNTHETIC_TAXONOMY, m.stage1_cnn, m.stage1_forest, {"C": wrong})
    with pytest.raises(cc.ModelMismatch):
        cc.CascadeModel(SYNTHETIC_TAXONOMY, m.stage1_cnn, m.stage1_forest,
                        {"A": m.stage2["C"]})


def test_classify_chain_needs_metadata():
    m = random_cascade()
    with pytest.raises(JpegError):
        cc.classify_chain(m, np.zeros((SIZE, SIZE)), b"\xff\xd8\xff\xd9")


def test_aggregate_image():
    codes = ["aC", "bC", "aC", "natC", "bC"]
    chain, conf = cc.aggregate_image(ChainLabel.parse(c) for c in codes)
    assert chain.code == "aC" and conf == pytest.approx(0.4)
    chain, conf = cc.aggregate_image([ChainLabel.parse("natA")])
    assert chain.code == "natA" and conf == 1.0
    with pytest.raises(cc.EmptyInput):
        cc.aggregate_image([])
