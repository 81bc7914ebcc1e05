import numpy as np
import pytest
from conftest import LAMBDA

from crossfield.channel import ChannelMatrix, ChannelModel
from crossfield.estimation import (
    build_far_field_codebook,
    build_subarray_codebook,
    dse_estimate,
    neighbourhood_mask,
    omp_estimate,
    simulate_pilots,
    sse_estimate,
)
from crossfield.geometry import build_upa, build_wsms
from crossfield.metrics import nmse_db


def on_grid_channel(rx_cb, tx_cb, pairs, gains):
    h = sum(g * np.outer(rx_cb.atoms[:, i], tx_cb.atoms[:, j].conj()) for (i, j), g in zip(pairs, gains))
    return ChannelMatrix(h, ChannelModel.SWM, LAMBDA)


def best_two_atom_support(obs, cb):
    """Exhaustive search over all pairs of Kronecker atoms for the best LS fit."""
    phi = obs.combiners.conj().T @ cb.atoms
    psi = cb.atoms.conj().T @ obs.precoders
    gr, gt = phi.conj().T @ phi, psi @ psi.conj().T
    g = np.kron(gr, gt.T)  # Gram of vec-ordered pairs, index rx * G + tx
    c = (phi.conj().T @ obs.measurements @ psi.conj().T).ravel()
    d = np.real(np.diag(g))
    num = (d[None, :] * np.abs(c[:, None]) ** 2 + d[:, None] * np.abs(c[None, :]) ** 2
           - 2 * np.real(np.conj(c[:, None]) * g * c[None, :]))
    den = d[:, None] * d[None, :] - np.abs(g) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        explained = np.where(den > 1e-9 * d[:, None] * d[None, :], num / den, -np.inf)
    np.fill_diagonal(explained, -np.inf)
    a, b = np.unravel_index(int(np.argmax(explained)), explained.shape)
    n = cb.size
    return {divmod(int(a), n), divmod(int(b), n)}


# codebooks -------------------------------------------------------------------

def test_far_field_codebook_is_dft_basis():
    cb = build_far_field_codebook(build_upa(8, 8, 0.5, LAMBDA))
    assert cb.size == 64 and cb.structure == "whole-array"
    np.testing.assert_allclose(cb.atoms.conj().T @ cb.atoms, np.eye(64), atol=1e-12)


def test_oversampled_codebook_coherence():
    cb = build_far_field_codebook(build_upa(8, 8, 0.5, LAMBDA), oversampling=2)
    assert cb.size == 256
    np.testing.assert_allclose(np.linalg.norm(cb.atoms, axis=0), 1.0, atol=1e-12)
    gram = np.abs(cb.atoms.conj().T @ cb.atoms)
    np.fill_diagonal(gram, 0)
    # frozen from a closed-form Dirichlet-kernel scan over all grid offsets
    assert gram.max() == pytest.approx(0.6407288619353766, abs=1e-9)


def test_subarray_codebook_structure():
    g = build_wsms(2, 2, 16, 16, 0.5, 32, LAMBDA)
    cb = build_subarray_codebook(g)
    assert cb.size == 4 * 256 and cb.structure == "per-subarray"
    support = np.abs(cb.atoms) > 0
    for j in (0, 300, 700, 1023):
        np.testing.assert_array_equal(np.flatnonzero(support[:, j]), g.subarray_members(cb.subarray_map[j]))
    np.testing.assert_allclose(np.linalg.norm(cb.atoms, axis=0), 1.0, atol=1e-12)
    cross = cb.atoms[:, cb.subarray_map == 0].conj().T @ cb.atoms[:, cb.subarray_map == 3]
    assert np.all(cross == 0)


def test_subarray_codebook_degenerates_to_whole_array():
    g = build_upa(4, 4, 0.5, LAMBDA)
    np.testing.assert_array_equal(build_subarray_codebook(g).atoms, build_far_field_codebook(g).atoms)


def test_neighbourhood_mask_wraps():
    cb = build_far_field_codebook(build_upa(8, 8, 0.5, LAMBDA))
    corner = int(np.flatnonzero((cb.grid_index[:, 0] == 0) & (cb.grid_index[:, 1] == 0))[0])
    mask = neighbourhood_mask(cb, [corner], 1)
    assert mask.sum() == 9
    assert not neighbourhood_mask(cb, [], 3).any()
    assert neighbourhood_mask(cb, [corner], 4).all()


# pilots ------------------------------------------------------------------------

def test_pilots_noiseless_and_deterministic():
    cb = build_far_field_codebook(build_upa(4, 4, 0.5, LAMBDA))
    h = on_grid_channel(cb, cb, [(1, 2)], [1.0])
    obs = simulate_pilots(h, 32, 2, np.inf, 5)
    hn = h.entries / obs.scale
    np.testing.assert_array_equal(obs.measurements, obs.combiners.conj().T @ hn @ obs.precoders)
    w, f, y = obs.frame(3)
    np.testing.assert_allclose(y, w.conj().T @ hn @ f, atol=1e-14)
    np.testing.assert_allclose(np.abs(obs.combiners), 0.25)
    np.testing.assert_allclose(np.abs(obs.precoders), 0.25)
    again = simulate_pilots(h, 32, 2, np.inf, 5)
    np.testing.assert_array_equal(again.measurements, obs.measurements)
    assert obs.q_frames * obs.m_rx < 16 * 16


def test_pilots_compression_precondition():
    cb = build_far_field_codebook(build_upa(2, 2, 0.5, LAMBDA))
    h = on_grid_channel(cb, cb, [(0, 0)], [1.0])
    with pytest.raises(ValueError):
        simulate_pilots(h, 8, 2, 10.0, 0)


def test_pilot_snr_is_calibrated():
    rng = np.random.default_rng(0)
    n = 64
    h = ChannelMatrix(rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)), ChannelModel.SWM, LAMBDA)
    clean = simulate_pilots(h, 1000, 1, np.inf, 9)
    noisy = simulate_pilots(h, 1000, 1, 10.0, 9)
    noise = noisy.measurements - clean.measurements
    snr = 10 * np.log10(np.mean(np.abs(clean.measurements) ** 2) / np.mean(np.abs(noise) ** 2))
    assert abs(snr - 10.0) < 0.2


# OMP ---------------------------------------------------------------------------

def test_omp_single_path_exact():
    cb = build_far_field_codebook(build_upa(4, 4, 0.5, LAMBDA))
    h = on_grid_channel(cb, cb, [(5, 11)], [0.3 - 0.2j])
    est = omp_estimate(simulate_pilots(h, 48, 2, np.inf, 1), cb, cb, 1)
    assert est.support == [(5, 11)]
    assert nmse_db(est.h_hat, h) <= -80


def test_omp_matches_exhaustive_two_atom_search():
    cb = build_far_field_codebook(build_upa(4, 4, 0.5, LAMBDA))
    rng = np.random.default_rng(3)
    for trial in range(10):
        flat = rng.choice(256, 2, replace=False)
        pairs = [divmod(int(f), 16) for f in flat]
        gains = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        h = on_grid_channel(cb, cb, pairs, gains)
        obs = simulate_pilots(h, 48, 2, np.inf, trial)
        est = omp_estimate(obs, cb, cb, 2)
        assert set(est.support) == best_two_atom_support(obs, cb) == set(pairs)
        assert nmse_db(est.h_hat, h) <= -80


def test_omp_residual_nonincreasing_and_in_span():
    g = build_upa(4, 4, 0.5, LAMBDA)
    cb = build_far_field_codebook(g)
    rng = np.random.default_rng(4)
    h = ChannelMatrix(rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16)), ChannelModel.SWM, LAMBDA)
    obs = simulate_pilots(h, 64, 2, 10.0, 4)
    est = omp_estimate(obs, cb, cb, 6)
    assert np.all(np.diff(est.residual_norms) <= 1e-12)
    basis = np.stack([np.outer(cb.atoms[:, i], cb.atoms[:, j].conj()).ravel() for i, j in est.support], axis=1)
    coef, *_ = np.linalg.lstsq(basis, est.h_hat.entries.ravel(), rcond=None)
    assert np.linalg.norm(basis @ coef - est.h_hat.entries.ravel()) < 1e-8 * np.linalg.norm(est.h_hat.entries)
    # least-squares residual is orthogonal to every selected sensing column
    phi = obs.combiners.conj().T @ cb.atoms
    psi = cb.atoms.conj().T @ obs.precoders
    resid = obs.measurements - sum(x / obs.scale * np.outer(phi[:, i], psi[j]) for (i, j), x in zip(est.support, est.gains))
    for i, j in est.support:
        inner = phi[:, i].conj() @ resid @ psi[j].conj()
        assert abs(inner) < 1e-8 * np.linalg.norm(obs.measurements)


def test_omp_deterministic():
    cb = build_far_field_codebook(build_upa(4, 4, 0.5, LAMBDA))
    h = on_grid_channel(cb, cb, [(1, 2), (7, 3)], [1.0, 0.5j])
    a = omp_estimate(simulate_pilots(h, 48, 2, 5.0, 8), cb, cb, 3)
    b = omp_estimate(simulate_pilots(h, 48, 2, 5.0, 8), cb, cb, 3)
    assert a.support == b.support
    np.testing.assert_array_equal(a.h_hat.entries, b.h_hat.entries)


# SSE / DSE ---------------------------------------------------------------------

@pytest.fixture
def wsms_on_grid():
    g = build_wsms(2, 2, 4, 4, 0.5, 8, LAMBDA)
    cb = build_subarray_codebook(g)
    rng = np.random.default_rng(2)
    x = np.zeros((cb.size, cb.size), complex)
    for p in range(4):
        for q in range(4):
            x[p * 16 + 3, q * 16 + 5] = 1 + rng.standard_normal()
            x[p * 16 + 7, q * 16 + 9] = 0.5 * np.exp(1j * rng.uniform(0, 6))
    h = ChannelMatrix(cb.atoms @ x @ cb.atoms.conj().T, ChannelModel.HSPM, LAMBDA)
    return cb, h


def test_sse_dse_noiseless_exact(wsms_on_grid):
    cb, h = wsms_on_grid
    obs = simulate_pilots(h, 512, 4, np.inf, 2)
    for est in (sse_estimate(obs, (cb, cb), 2), dse_estimate(obs, (cb, cb), 2, 2)):
        assert nmse_db(est.h_hat, h) <= -80
        rx_atoms = {i for i, _ in est.support}
        assert rx_atoms == {p * 16 + k for p in range(4) for k in (3, 7)}
        assert len(est.support) <= 2 * 2 * 4 * 4


def test_dse_with_full_neighbourhood_equals_sse(wsms_on_grid):
    cb, h = wsms_on_grid
    obs = simulate_pilots(h, 512, 4, 0.0, 3)
    sse = sse_estimate(obs, (cb, cb), 2)
    dse = dse_estimate(obs, (cb, cb), neighborhood_halfwidth=4, max_atoms_per_block=2)
    assert dse.support == sse.support
    np.testing.assert_array_equal(dse.h_hat.entries, sse.h_hat.entries)


def test_dse_scores_fewer_candidates():
    g = build_wsms(2, 2, 8, 8, 0.5, 8, LAMBDA)
    cb = build_subarray_codebook(g)
    rng = np.random.default_rng(5)
    x = np.zeros((cb.size, cb.size), complex)
    for p in range(4):
        for q in range(4):
            x[p * 64 + 10, q * 64 + 20] = 1 + rng.standard_normal()
    h = ChannelMatrix(cb.atoms @ x @ cb.atoms.conj().T, ChannelModel.HSPM, LAMBDA)
    obs = simulate_pilots(h, 1024, 4, 10.0, 5)
    dft = omp_estimate(obs, build_far_field_codebook(g), build_far_field_codebook(g), 1)
    sse = sse_estimate(obs, (cb, cb), 1)
    dse = dse_estimate(obs, (cb, cb), 1, 1)
    assert dft.counters["correlations"] >= sse.counters["correlations"] >= dse.counters["correlations"]


def test_sse_single_subarray_equals_omp():
    g = build_upa(4, 4, 0.5, LAMBDA)
    sub, whole = build_subarray_codebook(g), build_far_field_codebook(g)
    rng = np.random.default_rng(6)
    for trial in range(5):
        rx_idx = rng.choice(16, 2, replace=False)
        tx_idx = rng.choice(16, 2, replace=False)
        pairs = list(zip(rx_idx, tx_idx))
        h = on_grid_channel(whole, whole, pairs, rng.standard_normal(2) + 2)
        obs = simulate_pilots(h, 48, 2, np.inf, trial)
        omp = omp_estimate(obs, whole, whole, 2)
        sse = sse_estimate(obs, (sub, sub), 2)
        np.testing.assert_allclose(sse.h_hat.entries, omp.h_hat.entries, atol=1e-9 * np.abs(h.entries).max())


def test_dse_rejects_negative_halfwidth(wsms_on_grid):
    cb, h = wsms_on_grid
    obs = simulate_pilots(h, 512, 4, np.inf, 2)
    with pytest.raises(ValueError):
        dse_estimate(obs, (cb, cb), -1, 2)
