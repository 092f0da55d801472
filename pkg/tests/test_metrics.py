import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_chamfer, brute_matching, euclid_cost, hungarian, naive_psnr, naive_ssim
from springsplat.metrics import (
    MetricReport,
    chamfer,
    chamfer_and_grad,
    emd,
    image_report,
    psnr,
    ssim,
    to_table_units,
    trajectory_report,
)
from springsplat.trajectory import Trajectory


def cloud(seed, n):
    return np.random.default_rng(seed).normal(size=(n, 3))


# chamfer

def test_chamfer_identical_is_zero():
    a = cloud(0, 50)
    assert chamfer(a, a) == 0.0


def test_chamfer_hand_value_and_table_units():
    cd = chamfer([[0, 0, 0]], [[0, 0, 0.003]])
    assert cd == pytest.approx(1.8e-5, rel=1e-12)
    assert to_table_units(cd) == pytest.approx(0.018, rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 120), st.integers(1, 120), st.integers(0, 2**31))
def test_chamfer_brute_force_and_symmetry(na, nb, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(na, 3)), rng.normal(size=(nb, 3))
    assert chamfer(a, b) == pytest.approx(brute_chamfer(a, b), rel=1e-12)
    assert chamfer(a, b) == pytest.approx(chamfer(b, a), rel=1e-14)
    assert chamfer(a, b) >= 0


def test_chamfer_large_uses_same_convention():
    a, b = cloud(1, 400), cloud(2, 300)
    assert chamfer(a, b) == pytest.approx(brute_chamfer(a, b), rel=1e-12)


def test_chamfer_multiset_zero():
    a = cloud(3, 10)
    assert chamfer(a, np.concatenate([a, a[::-1]])) == 0.0


def test_chamfer_gradient_matches_fd():
    a, b = cloud(4, 20), cloud(5, 25)
    _, g = chamfer_and_grad(a, b)
    h = 1e-6
    fd = np.zeros_like(a)
    for i in range(20):
        for c in range(3):
            p, m = a.copy(), a.copy()
            p[i, c] += h
            m[i, c] -= h
            fd[i, c] = (chamfer(p, b) - chamfer(m, b)) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-9)


def test_chamfer_empty_raises():
    with pytest.raises(ValueError):
        chamfer(np.zeros((0, 3)), cloud(0, 3))


# emd

def test_emd_identical_and_permuted():
    a = cloud(6, 40)
    assert emd(a, a) == 0.0
    assert emd(a, a[np.random.default_rng(0).permutation(40)]) == 0.0


def test_emd_hand_value():
    assert emd([[0, 0, 0], [1, 0, 0]], [[0.1, 0, 0], [0.9, 0, 0]]) == pytest.approx(0.1, rel=1e-12)


def test_hungarian_oracle_against_permutations():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        c = rng.uniform(size=(6, 6))
        assert hungarian(c)[0] == pytest.approx(brute_matching(c), rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(1, 48), st.integers(0, 2**31))
def test_emd_matches_hungarian(n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
    assert emd(a, b) == pytest.approx(hungarian(euclid_cost(a, b))[0] / n, rel=1e-12)
    assert emd(a, b) == pytest.approx(emd(b, a), rel=1e-12)


def test_emd_matches_hungarian_256():
    a, b = cloud(7, 256), cloud(8, 256)
    assert emd(a, b) == pytest.approx(hungarian(euclid_cost(a, b))[0] / 256, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_emd_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 65))
    a, b, c = (rng.normal(size=(n, 3)) for _ in range(3))
    assert emd(a, c) <= emd(a, b) + emd(b, c) + 1e-12


def test_emd_unequal_sizes_subsamples():
    a, b = cloud(9, 30), cloud(10, 12)
    value = emd(a, b)
    assert value > 0 and value == emd(a, b)
    assert emd(a, b, max_points=5) != value


# psnr

def test_psnr_examples():
    img = np.random.default_rng(0).uniform(size=(16, 16, 3))
    assert psnr(img, img) == 100.0
    assert psnr(np.full((8, 8, 3), 0.6), np.full((8, 8, 3), 0.5)) == pytest.approx(20.0, abs=1e-9)
    checker = (np.indices((8, 8)).sum(axis=0) % 2).astype(float)
    assert psnr(checker, np.full((8, 8), 0.5)) == pytest.approx(10 * np.log10(4), abs=1e-9)
    assert psnr(checker, np.full((8, 8), 0.5)) == pytest.approx(6.02, abs=5e-3)


def test_psnr_matches_naive():
    rng = np.random.default_rng(1)
    x, y = rng.uniform(size=(20, 24, 3)), rng.uniform(size=(20, 24, 3))
    assert psnr(x, y) == pytest.approx(naive_psnr(x, y), abs=1e-9)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


# ssim

def test_ssim_identical():
    img = np.random.default_rng(2).uniform(size=(20, 20, 3))
    assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)


def test_ssim_negative_image():
    rng = np.random.default_rng(3)
    img = 0.5 + 0.3 * rng.uniform(-1, 1, size=(24, 24))
    assert ssim(img, 1.0 - img) < -0.9


@pytest.mark.parametrize("shape", [(11, 11), (17, 23), (16, 14, 3)])
def test_ssim_matches_naive(shape):
    rng = np.random.default_rng(sum(shape))
    x, y = rng.uniform(size=shape), rng.uniform(size=shape)
    assert ssim(x, y) == pytest.approx(naive_ssim(x, y), abs=1e-9)


def test_ssim_correlated_pair_matches_naive():
    rng = np.random.default_rng(5)
    x = rng.uniform(size=(30, 30, 3))
    y = np.clip(x + rng.normal(0, 0.05, x.shape), 0, 1)
    assert ssim(x, y) == pytest.approx(naive_ssim(x, y), abs=1e-9)


def test_ssim_errors():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))
    with pytest.raises(ValueError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))


# reports

def test_trajectory_report_and_json():
    a = Trajectory.from_positions(np.stack([cloud(0, 10), cloud(1, 10)]), 0.1)
    b = Trajectory.from_positions(np.stack([cloud(0, 10) + 0.001, cloud(1, 10)]), 0.1)
    raw = trajectory_report(a, b)
    table = trajectory_report(a, b, table_units=True)
    assert table.cd == pytest.approx(raw.cd * 1e3)
    assert raw.emd == pytest.approx(np.sqrt(3) * 0.001 / 2, rel=1e-9)
    d = json.loads(table.to_json())
    assert d["cd_table_units"] is True and d["psnr"] is None


def test_image_report():
    rng = np.random.default_rng(0)
    imgs = [rng.uniform(size=(12, 12, 3)) for _ in range(2)]
    rep = image_report(imgs, imgs)
    assert rep.psnr == 100.0 and rep.ssim == pytest.approx(1.0)
    with pytest.raises(ValueError):
        image_report(imgs, imgs[:1])
    assert isinstance(rep, MetricReport)
