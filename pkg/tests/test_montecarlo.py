"""Ensemble sampling and the statistical verification operations (small scale)."""

import numpy as np
import pytest
from scipy.stats import ks_2samp

import txlaw
from txlaw.errors import DomainError
from txlaw.montecarlo import (
    _rng_for_run,
    build_t,
    control_parameter,
    deterministic_resolvent,
    empirical_m2,
    sample_entries,
)
from conftest import mp_stieltjes


def small_cfg(spec, **kw):
    defaults = dict(N=spec.N, M=spec.M, spec=spec, runs=4, seed=123, threads=2)
    defaults.update(kw)
    return txlaw.EnsembleConfig(**defaults)


@pytest.fixture(scope="module")
def spec200():
    return txlaw.SigmaSpectrum(s=(1.0,), l=(200,), N=200, M=200)


@pytest.fixture(scope="module")
def fig2_200():
    return txlaw.SigmaSpectrum(s=(32 / 17, 2 / 17), l=(100, 100), N=200, M=200)


def test_determinism_across_worker_counts(spec200):
    cfg1 = small_cfg(spec200, z_list=(1.5 + 0j,), threads=1)
    cfg2 = small_cfg(spec200, z_list=(1.5 + 0j,), threads=4)
    runs1 = txlaw.run_ensemble(cfg1)
    runs2 = txlaw.run_ensemble(cfg2)
    for a, b in zip(runs1, runs2):
        assert np.array_equal(a.eigenvalues, b.eigenvalues)
        assert np.array_equal(a.singular[1.5 + 0j], b.singular[1.5 + 0j])


def test_trivial_zero_count_tall():
    spec = txlaw.SigmaSpectrum(s=(1.0,), l=(4,), N=6, M=4)
    cfg = small_cfg(spec, runs=3, z_list=(0.5 + 0j,))
    for r in txlaw.run_ensemble(cfg):
        assert txlaw.count_trivial_zeros(r) == 2
        assert r.eigenvalues.size == 6
        assert r.singular[0.5 + 0j].size == 4          # reduced square problem
        assert np.all(r.singular[0.5 + 0j] >= 0)


def test_entry_moments_5_sigma():
    K = 300
    n_entries = K * K
    for dist, third in (("gauss", 0.0), ("rademacher", 0.0), ("skewed", 1.5)):
        rng = np.random.default_rng(7)
        X = sample_entries(rng, (K, K), dist, K)
        xs = X.ravel() * np.sqrt(K)
        se = 1.0 / np.sqrt(n_entries)
        assert abs(xs.mean()) < 5 * se
        assert abs((xs**2).mean() - 1.0) < 5 * np.sqrt(np.var(xs**2) / n_entries) + 5 * se
        m3_se = np.sqrt(np.var(xs**3) / n_entries)
        assert abs((xs**3).mean() - third) < 5 * max(m3_se, se)


def test_build_t_modes(fig2_200):
    rng = np.random.default_rng(0)
    cfg_d = small_cfg(fig2_200, t_mode="diagonal")
    T = build_t(cfg_d, rng)
    assert T.shape == (200, 200)
    s_want = np.sort(fig2_200.expand())
    assert np.sort(np.diag(T) ** 2) == pytest.approx(s_want)
    cfg_h = small_cfg(fig2_200, t_mode="haar")
    Th = build_t(cfg_h, rng)
    lam = np.linalg.eigvalsh(Th @ Th.T)
    assert np.sort(lam) == pytest.approx(s_want, abs=1e-9)


def test_gaussian_invariance_haar_vs_diagonal(fig2_200):
    z = 1.5 + 0j
    pooled = {}
    for mode in ("diagonal", "haar"):
        cfg = small_cfg(fig2_200, t_mode=mode, runs=30, z_list=(z,), seed=11)
        runs = txlaw.run_ensemble(cfg)
        pooled[mode] = np.concatenate([r.singular[z] for r in runs])
    stat = ks_2samp(pooled["diagonal"], pooled["haar"])
    assert stat.pvalue >= 0.01


def test_rotation_invariance_phase(fig2_200):
    za = 1.2 + 0j
    zb = 1.2 * np.exp(0.7j)
    cfg = small_cfg(fig2_200, runs=30, z_list=(za, zb), seed=19)
    runs = txlaw.run_ensemble(cfg)
    a = np.concatenate([r.singular[za] for r in runs])
    b = np.concatenate([r.singular[zb] for r in runs])
    assert ks_2samp(a, b).pvalue >= 0.01


def test_empirical_m2_matches_mp(spec200):
    # z = 0 diagnostic: X^dag X spectra against the closed-form transform
    cfg = small_cfg(spec200, runs=20, z_list=(0j,), seed=5)
    runs = txlaw.run_ensemble(cfg)
    w = 2.0 + 0.2j
    vals = [empirical_m2(r.singular[0j], w) for r in runs]
    assert np.mean(vals) == pytest.approx(mp_stieltjes(w), abs=0.05)


def test_averaged_law_profile_interface(fig2_200):
    cfg = small_cfg(fig2_200, runs=8, z_list=(1.5 + 0j,), seed=3)
    prof = txlaw.averaged_law_profile(cfg, 1.5, E_bulk=4.0, eta_grid=[1.0, 0.1])
    assert prof[0]["eta"] == 1.0
    assert prof[0]["median"] <= 2.0          # trivially concentrated regime
    assert all(p["runs"] == 8 for p in prof)


def test_entrywise_law_small(spec200):
    cfg = small_cfg(spec200, runs=6, seed=21)
    out = txlaw.entrywise_law_check(cfg, 1.5 + 0j, 4.0 + 0.1j)
    ratios = [o["max_group_ratio"] for o in out]
    assert np.median(ratios) <= 10.0
    probe = np.concatenate([o["probe_ratios"] for o in out])
    assert np.median(probe) <= 10.0
    # scaling sanity: a 10x smaller declared control parameter inflates ratios 10x
    for o in out:
        assert o["max_group_norm"] / (o["psi"] / 10) == pytest.approx(
            10 * o["max_group_ratio"]
        )


def test_entrywise_rejects_low_eta(spec200):
    cfg = small_cfg(spec200, runs=1)
    with pytest.raises(DomainError):
        txlaw.entrywise_law_check(cfg, 1.5 + 0j, 4.0 + 1e-6j)


def test_pi_norm_bound(fig2_200):
    # deterministic-equivalent blocks stay O(|w|^{-1/2})
    rng = np.random.default_rng(13)
    d = np.sqrt(fig2_200.expand())
    for _ in range(25):
        w = complex(rng.uniform(0.3, 8), rng.uniform(0.05, 1.0))
        sol = txlaw.solve_master(w, fig2_200, 1.5)
        Pi = deterministic_resolvent(d, 1.5 + 0j, w, sol.m1c, sol.m2c)
        N = d.size
        blocks = np.stack(
            [
                np.stack([np.diag(Pi)[:N], np.diag(Pi, k=N)], axis=1),
                np.stack([np.diag(Pi, k=-N), np.diag(Pi)[N:]], axis=1),
            ],
            axis=1,
        )
        norms = np.linalg.norm(blocks, ord=2, axis=(1, 2))
        assert norms.max() <= 10.0 / np.sqrt(abs(w))


def test_control_parameter_shape():
    assert control_parameter(0.5 + 1j, 0.5 + 1j, 100, 0.1) == pytest.approx(
        np.sqrt(2.0 / 10.0) + 0.1
    )


def test_extreme_stats(fig2_200):
    cfg = small_cfg(fig2_200, runs=10, z_list=(1.5 + 0j,), seed=29)
    out = txlaw.extreme_singular_stats(cfg, 1.5)
    assert out["n_small_violations"] == 0
    assert out["n_big_violations"] == 0
    assert out["n_det_violations"] == 0
    # larger |z| pushes the smallest eigenvalue up
    cfg3 = small_cfg(fig2_200, runs=10, z_list=(3.0 + 0j,), seed=29)
    out3 = txlaw.extreme_singular_stats(cfg3, 3.0)
    assert np.median(out3["lambda_min"]) > np.median(out["lambda_min"])


def test_bump_properties():
    assert txlaw.bump(np.array([0.0]))[0] == 1.0
    assert txlaw.bump(np.array([1.0, 2.0])) == pytest.approx([0.0, 0.0])
    # oracle: 2D quadrature of |Laplacian| over the plane
    n = 2001
    xs = np.linspace(-1, 1, n)
    X, Y = np.meshgrid(xs, xs)
    R2 = X * X + Y * Y
    lap = np.where(R2 <= 1.0, 12 * (1 - R2) * (3 * R2 - 1), 0.0)
    quad = np.sum(np.abs(lap)) * (xs[1] - xs[0]) ** 2
    assert txlaw.bump_laplacian_l1() == pytest.approx(quad, rel=1e-3)


def test_local_circular_outside_disk(spec200, identity_radial_profile):
    cfg = small_cfg(spec200, runs=6, seed=31)
    out = txlaw.local_circular_error(cfg, 1.5 + 0j, 0.25, identity_radial_profile)
    assert abs(out["target"]) <= 0.01
    assert np.median(out["errors"]) <= 0.05


def test_local_circular_inside_disk(spec200, identity_radial_profile):
    cfg = small_cfg(spec200, runs=6, seed=37)
    out = txlaw.local_circular_error(cfg, 0.5j, 0.25, identity_radial_profile)
    # chi is 1 on the bump: target = (1/pi) int F = 1/4
    assert out["target"] == pytest.approx(0.25, abs=0.01)


def test_local_circular_rejects_band_overlap(spec200, identity_radial_profile):
    cfg = small_cfg(spec200, runs=1)
    with pytest.raises(DomainError):
        txlaw.local_circular_error(cfg, 1.0 + 0j, 0.25, identity_radial_profile)


def test_radial_esd_small(spec200, identity_radial_profile):
    cfg = small_cfg(spec200, runs=12, seed=41)
    out = txlaw.radial_esd_cdf(cfg, identity_radial_profile)
    med = float(np.median(out["sup_dev"]))
    assert med <= 0.08          # N = 200: about sqrt(5) looser than the N = 1000 gate
    # concentration: single run deviates more than the 12-run median curve
    one = txlaw.radial_esd_cdf(
        txlaw.EnsembleConfig(
            N=200, M=200, spec=spec200, runs=1, seed=41, z_list=(), threads=1
        ),
        identity_radial_profile,
    )
    pooled_dev = float(np.max(np.abs(out["Fhat_median"] - out["F_theory"])))
    assert pooled_dev <= np.max(one["sup_dev"]) + 1e-12


def test_rng_stream_independence():
    a = _rng_for_run(1, 0).standard_normal(4)
    b = _rng_for_run(1, 1).standard_normal(4)
    c = _rng_for_run(1, 0).standard_normal(4)
    assert not np.allclose(a, b)
    assert np.array_equal(a, c)


def test_law_statistics_container(spec200, identity_radial_profile):
    cfg = small_cfg(spec200, runs=3, z_list=(1.5 + 0j,), seed=51)
    runs = txlaw.run_ensemble(cfg)
    stats = txlaw.LawStatistics(
        config=cfg,
        averaged_profile=txlaw.averaged_law_profile(
            cfg, 1.5, E_bulk=4.0, eta_grid=[0.5], runs=runs
        ),
        radial_cdf=txlaw.radial_esd_cdf(cfg, identity_radial_profile, runs=runs),
    )
    assert stats.averaged_profile[0]["runs"] == 3
    with pytest.raises(txlaw.InputError):
        txlaw.LawStatistics(config=cfg, rigidity={"median": float("nan")})


def test_failed_run_policy(spec200):
    good = txlaw.sample_run(small_cfg(spec200, runs=1), 0)
    bad = txlaw.RunResult(
        run_index=1, seed_used=(0, 1), eigenvalues=np.empty(0, dtype=complex),
        singular={}, elapsed=0.0, failed=True,
    )
    assert txlaw.successful([good] * 20) == [good] * 20
    kept = txlaw.successful([good] * 19 + [bad])
    assert len(kept) == 19
    with pytest.raises(txlaw.SolverError):
        txlaw.successful([good, bad])
