import math
from datetime import datetime, timezone

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from privtrend import projection as pj
from privtrend.errors import (
    DegenerateVector,
    EmptyMessage,
    InvalidAlpha,
    InvalidBudget,
)
from privtrend.fixedpoint import decode
from privtrend.mpc.shares import reconstruct_array
from tests.conftest import unit_vec


def test_dimension_table():
    # k for a 3442-message corpus across the usual distortion range
    want = {0.4: 555, 0.5: 390, 0.6: 300, 0.7: 249, 0.8: 218}
    for alpha, k in want.items():
        assert abs(pj.choose_dimension(3442, alpha) - k) <= 2


def test_dimension_validation():
    with pytest.raises(InvalidAlpha):
        pj.choose_dimension(100, 0.0)
    with pytest.raises(InvalidAlpha):
        pj.choose_dimension(100, 1.0)
    with pytest.raises(InvalidAlpha):
        pj.choose_dimension(1, 0.5)


def test_sigma_delta_value():
    # eps=2, delta=1e-5, omega2=1
    got = pj.compute_sigma_delta(2.0, 1e-5, 1.0)
    want = math.sqrt(2.0 * (math.log(1.0 / 2e-5) + 2.0)) / 2.0
    assert got == pytest.approx(want, rel=1e-12)
    assert got == pytest.approx(2.5318, abs=1e-4)


def test_sigma_delta_validation():
    with pytest.raises(InvalidBudget):
        pj.compute_sigma_delta(0.0, 1e-5, 1.0)
    with pytest.raises(InvalidBudget):
        pj.compute_sigma_delta(1.0, 0.7, 1.0)


def test_projection_reproducible():
    p1 = pj.generate_projection(64, 32, seed=5)
    p2 = pj.generate_projection(64, 32, seed=5)
    assert np.array_equal(p1.matrix, p2.matrix)
    assert p1.omega2 == p2.omega2
    assert pj.generate_projection(64, 32, seed=6).omega2 != p1.omega2


def test_jl_distortion():
    rng = np.random.default_rng(1)
    alpha = 0.5
    n = 300
    k = pj.choose_dimension(n, alpha)
    proj = pj.generate_projection(256, k, seed=2)
    X = rng.normal(size=(n, 256))
    Y = X @ proj.matrix
    ok = 0
    trials = 1000
    for _ in range(trials):
        i, j = rng.integers(0, n, size=2)
        if i == j:
            trials -= 1
            continue
        d0 = np.sum((X[i] - X[j]) ** 2)
        d1 = np.sum((Y[i] - Y[j]) ** 2)
        if (1 - alpha) * d0 <= d1 <= (1 + alpha) * d0:
            ok += 1
    assert ok / trials >= 0.99


def _raw(vec, mid="m0", ts=1000):
    return pj.RawEmbedding(vec, mid, datetime.fromtimestamp(ts, tz=timezone.utc))


def test_epoch_is_utc_day():
    r = _raw(np.ones(4) / 2.0, ts=3 * 86400 + 5)
    assert r.epoch == 3


def test_prepare_message_unit_norms():
    rng = np.random.default_rng(3)
    proj = pj.generate_projection(64, 16, seed=4)
    params = pj.CoarseNoiseParams(2.0, 1e-5, pj.compute_sigma_delta(2.0, 1e-5, proj.omega2))
    pe = pj.prepare_message(_raw(unit_vec(rng, 64)), proj, params)
    assert np.linalg.norm(pe.x) == pytest.approx(1.0)
    assert np.linalg.norm(pe.x_tilde) == pytest.approx(1.0)
    assert np.array_equal(pe.x_sq, pe.x * pe.x)
    assert not np.allclose(pe.x, pe.x_tilde)  # perturbed
    assert np.all(np.abs(pe.x) <= 1.0)


def test_prepare_message_zero_sigma_copies():
    rng = np.random.default_rng(4)
    proj = pj.generate_projection(64, 16, seed=5)
    pe = pj.prepare_message(
        _raw(unit_vec(rng, 64)), proj, pj.CoarseNoiseParams(2.0, 1e-5, 0.0)
    )
    assert np.array_equal(pe.x, pe.x_tilde)


def test_prepare_message_deterministic_per_message():
    rng = np.random.default_rng(5)
    proj = pj.generate_projection(64, 16, seed=6)
    params = pj.CoarseNoiseParams(2.0, 1e-5, 1.0)
    v = unit_vec(rng, 64)
    a = pj.prepare_message(_raw(v, "msg-1"), proj, params)
    b = pj.prepare_message(_raw(v, "msg-1"), proj, params)
    c = pj.prepare_message(_raw(v, "msg-2"), proj, params)
    assert np.array_equal(a.x_tilde, b.x_tilde)
    assert not np.array_equal(a.x_tilde, c.x_tilde)


def test_prepare_message_rejects_non_unit():
    proj = pj.generate_projection(8, 4, seed=7)
    params = pj.CoarseNoiseParams(2.0, 1e-5, 0.0)
    with pytest.raises(DegenerateVector):
        pj.prepare_message(_raw(np.ones(8)), proj, params)


def test_share_out_reconstructs():
    rng = np.random.default_rng(6)
    proj = pj.generate_projection(64, 16, seed=8)
    params = pj.CoarseNoiseParams(2.0, 1e-5, 0.5)
    pe = pj.prepare_message(_raw(unit_vec(rng, 64)), proj, params)
    alpha = 0xABCDEF1 | 1
    bundles = pj.share_out(pe, 3, rng, alpha)
    for name, want in (("x", pe.x), ("x_tilde_sq", pe.x_tilde_sq)):
        got = decode(
            reconstruct_array([b[name] for b in bundles], check_macs=True, alpha=alpha)
        )
        assert np.allclose(got, want, atol=2**-16)


def test_toy_embed_properties():
    a = pj.toy_embed("election day rumors")
    b = pj.toy_embed("election day rumors")
    c = pj.toy_embed("cute cat pictures")
    assert np.array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert float(a @ c) < float(a @ pj.toy_embed("election night rumors"))
    with pytest.raises(EmptyMessage):
        pj.toy_embed("")


def test_jsonl_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    recs = [
        _raw(unit_vec(rng, 8), mid=f"m{i}", ts=86400 * i + 42) for i in range(5)
    ]
    path = tmp_path / "corpus.jsonl"
    assert pj.write_embeddings_jsonl(path, recs) == 5
    back = list(pj.read_embeddings_jsonl(path))
    assert [r.message_id for r in back] == [r.message_id for r in recs]
    assert all(np.allclose(a.x_prime, b.x_prime) for a, b in zip(back, recs))
    assert [r.epoch for r in back] == [r.epoch for r in recs]


def test_projection_file_roundtrip(tmp_path):
    proj = pj.generate_projection(32, 12, seed=9)
    path = tmp_path / "proj.bin"
    pj.save_projection(path, proj)
    loaded = pj.load_projection(path)
    assert np.array_equal(loaded.matrix, proj.matrix)
    assert loaded.seed == 9 and loaded.omega2 == proj.omega2
    path.write_bytes(b"XXXXXXXX")
    with pytest.raises(ValueError):
        pj.load_projection(path)


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=2, max_value=10**6), st.floats(min_value=0.05, max_value=0.95))
def test_dimension_positive_property(n, alpha):
    assert pj.choose_dimension(n, alpha) >= 1
