import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import grad_of, max_fd_error
from oracles import oracle_terms
from weca import diffcore as dc
from weca.losses import (
    BatchLatents,
    LatentOverflowError,
    forecast_mae,
    instance_loss,
    instance_temporal_loss,
    joint_loss,
    negative_aggregate,
    positive_similarity,
    temporal_loss,
    weca_loss,
)


def _lat(B, T, D, seed, weights=None, scale=1.0):
    rng = np.random.default_rng(seed)
    z = dc.parameter(scale * rng.normal(size=(B, T, D)), name="z")
    zt = dc.parameter(scale * rng.normal(size=(B, T, D)), name="zt")
    return BatchLatents(z, zt, weights)


def _unit(v):
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


# --------------------------------------------------------------------------
# scalar-loop oracles


def oracle_weca(z, zt, w=None):
    A, N = oracle_terms(z, zt)
    w = np.ones_like(A) if w is None else w
    return math.fsum((-w * np.log(A / N)).ravel()) / A.size


def oracle_temporal(z, zt):
    B, T, _ = z.shape
    terms = []
    for i in range(B):
        for t in range(T):
            pos = math.exp(float(z[i, t] @ zt[i, t]))
            neg = sum(math.exp(float(z[i, t] @ zt[i, s])) for s in range(T))
            neg += sum(math.exp(float(z[i, t] @ z[i, s])) for s in range(T) if s != t)
            terms.append(-math.log(pos / neg))
    return math.fsum(terms) / len(terms)


@pytest.mark.parametrize("seed", range(10))
def test_similarity_terms_match_loop_oracle(seed):
    lat = _lat(3, 3, 3, seed, scale=0.7)
    A, N = oracle_terms(lat.z.data, lat.z_tilde.data)
    np.testing.assert_allclose(positive_similarity(lat).data, A, rtol=1e-12, atol=0)
    np.testing.assert_allclose(negative_aggregate(lat).data, N, rtol=1e-12, atol=0)


def test_positive_similarity_anchor_values():
    v = _unit(np.array([[[1.0, 2.0, 2.0]]]))
    same = BatchLatents(dc.tensor(v), dc.tensor(v))
    assert abs(positive_similarity(same).data[0, 0] - math.e) <= 1e-12
    ortho = BatchLatents(dc.tensor(np.array([[[1.0, 0.0]]])), dc.tensor(np.array([[[0.0, 1.0]]])))
    assert positive_similarity(ortho).data[0, 0] == 1.0


def test_single_instance_has_no_negatives_and_zero_loss():
    lat = _lat(1, 4, 3, 0)
    np.testing.assert_allclose(negative_aggregate(lat).data, positive_similarity(lat).data, rtol=1e-14)
    assert abs(weca_loss(lat, normalize=False).item()) <= 1e-14


def test_zero_latents_give_uniform_negatives():
    B = 5
    lat = BatchLatents(dc.tensor(np.zeros((B, 3, 2))), dc.tensor(np.zeros((B, 3, 2))))
    np.testing.assert_allclose(negative_aggregate(lat).data, 2 * B - 1, rtol=1e-12, atol=0)
    assert abs(weca_loss(lat, normalize=False).item() - math.log(2 * B - 1)) <= 1e-14


@pytest.mark.parametrize("seed", range(10))
def test_weca_and_temporal_match_loop_oracle(seed):
    rng = np.random.default_rng(seed)
    w = rng.uniform(size=(3, 4))
    lat = _lat(3, 4, 3, seed, weights=w, scale=0.8)
    z, zt = lat.z.data, lat.z_tilde.data
    assert abs(weca_loss(lat, normalize=False).item() - oracle_weca(z, zt, w)) <= 1e-12
    assert abs(temporal_loss(lat, normalize=False).item() - oracle_temporal(z, zt)) <= 1e-12
    zn, ztn = _unit(z), _unit(zt)
    assert abs(weca_loss(lat).item() - oracle_weca(zn, ztn, w)) <= 1e-12


def test_temporal_loss_two_steps_by_hand():
    z = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    zt = np.array([[[0.5, 0.5], [0.2, -0.3]]])
    lat = BatchLatents(dc.tensor(z), dc.tensor(zt))
    # t=0: pos z0.zt0 = 0.5; negatives zt0, zt1 and z1
    t0 = -0.5 + math.log(math.exp(0.5) + math.exp(0.2) + math.exp(0.0))
    t1 = 0.3 + math.log(math.exp(0.5) + math.exp(-0.3) + math.exp(0.0))
    assert abs(temporal_loss(lat, normalize=False).item() - (t0 + t1) / 2) <= 1e-14


def test_temporal_loss_rejects_single_step():
    with pytest.raises(ValueError, match="T' >= 2"):
        temporal_loss(_lat(3, 1, 2, 0))


def test_iltl_is_unweighted_sum():
    lat = _lat(3, 4, 2, 1)
    total = instance_loss(lat).item() + temporal_loss(lat).item()
    assert instance_temporal_loss(lat).item() == pytest.approx(total, abs=1e-14)


# --------------------------------------------------------------------------
# weights


def test_reduction_to_instance_loss_with_unit_weights():
    rng = np.random.default_rng(0)
    for _ in range(100):
        B, T, D = rng.integers(1, 5), rng.integers(1, 7), rng.integers(1, 5)
        lat = _lat(B, T, D, int(rng.integers(1 << 30)), weights=np.ones((B, T)))
        for normalize in (True, False):
            assert abs(weca_loss(lat, normalize).item() - instance_loss(lat, normalize).item()) <= 1e-12


def test_zero_weights_give_zero_loss_and_gradient():
    lat = _lat(3, 4, 2, 2, weights=np.zeros((3, 4)))
    assert weca_loss(lat).item() == 0.0
    gz, gzt = grad_of(lambda: weca_loss(lat), lat.z, lat.z_tilde)
    assert np.all(gz == 0) and np.all(gzt == 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 1.0))
def test_loss_is_monotone_in_weights(seed, bump):
    rng = np.random.default_rng(seed)
    w = rng.uniform(size=(3, 4)) * 0.5
    lat = _lat(3, 4, 2, seed, weights=w)
    heavier = _lat(3, 4, 2, seed, weights=np.minimum(w + bump, 1.0))
    # each per-(i,t) term is non-negative, so heavier weights never lower the loss
    assert heavier.weights is not None
    assert weca_loss(heavier).item() >= weca_loss(lat).item() - 1e-15


def test_batch_permutation_symmetry():
    rng = np.random.default_rng(5)
    w = rng.uniform(size=(4, 3))
    lat = _lat(4, 3, 3, 5, weights=w)
    perm = np.array([2, 0, 3, 1])
    permuted = BatchLatents(dc.tensor(lat.z.data[perm]), dc.tensor(lat.z_tilde.data[perm]), w[perm])
    assert weca_loss(permuted).item() == pytest.approx(weca_loss(lat).item(), abs=1e-14)


def test_weights_are_validated():
    z = dc.tensor(np.zeros((2, 3, 2)))
    with pytest.raises(ValueError):
        BatchLatents(z, z, np.full((2, 3), 1.5))
    with pytest.raises(dc.ShapeError):
        BatchLatents(z, z, np.ones((3, 2)))
    with pytest.raises(dc.ShapeError):
        BatchLatents(z, dc.tensor(np.zeros((2, 4, 2))))


def test_raw_mode_overflow_is_reported():
    lat = _lat(2, 2, 2, 0, scale=30.0)
    with pytest.raises(LatentOverflowError, match="normalize_latents"):
        weca_loss(lat, normalize=False)
    assert math.isfinite(weca_loss(lat).item())


# --------------------------------------------------------------------------
# forecast loss


def test_mae_examples():
    y = np.array([[1.0], [2.0], [3.0]])
    assert forecast_mae(dc.tensor(y), y).item() == 0.0
    assert forecast_mae(dc.tensor(y + 1.0), y).item() == 1.0
    two = np.array([[1.0, 1.0], [0.0, 0.0]])
    # per-step L1 over channels, averaged over H
    assert forecast_mae(dc.tensor(np.zeros((2, 2))), two).item() == 1.0
    batched = np.stack([y, y + 2.0])
    assert forecast_mae(dc.tensor(np.zeros_like(batched)), batched).item() == pytest.approx(3.0)
    with pytest.raises(dc.ShapeError):
        forecast_mae(dc.tensor(np.zeros((3, 1))), np.zeros((2, 1)))


def test_joint_loss_is_linear_in_lambda():
    lat = _lat(3, 4, 2, 3, weights=np.full((3, 4), 0.5))
    rng = np.random.default_rng(3)
    yh, y = dc.tensor(rng.normal(size=(3, 2, 1))), rng.normal(size=(3, 2, 1))
    mae = forecast_mae(yh, y).item()
    c = weca_loss(lat).item()
    for lam in (0.0, 0.5, 1.0, 3.0):
        assert joint_loss(yh, y, lat, lam).item() == pytest.approx(mae + lam * c, abs=1e-13)
    assert joint_loss(yh, y, lat, 0.0).item() == mae
    with pytest.raises(ValueError):
        joint_loss(yh, y, lat, -1.0)


# --------------------------------------------------------------------------
# gradients


LOSSES = {
    "weca": lambda lat, y_hat, y: weca_loss(lat),
    "weca_raw": lambda lat, y_hat, y: weca_loss(lat, normalize=False),
    "il": lambda lat, y_hat, y: instance_loss(lat),
    "tl": lambda lat, y_hat, y: temporal_loss(lat),
    "iltl": lambda lat, y_hat, y: instance_temporal_loss(lat),
    "mae": lambda lat, y_hat, y: forecast_mae(y_hat, y),
    "joint": lambda lat, y_hat, y: joint_loss(y_hat, y, lat, 0.7),
}


@pytest.mark.parametrize("name", sorted(LOSSES))
def test_loss_gradients_match_finite_differences(name):
    fn = LOSSES[name]
    for k in range(20):
        rng = np.random.default_rng(1000 * k + len(name))
        B, T, D = rng.integers(2, 4), rng.integers(2, 5), rng.integers(2, 4)
        lat = _lat(B, T, D, k, weights=rng.uniform(size=(B, T)), scale=0.8)
        y_hat = dc.parameter(rng.normal(size=(B, 3, 1)), name="y_hat")
        # keep |y_hat - y| away from the kink of |.|
        y = y_hat.data + rng.choice([-1.0, 1.0], size=y_hat.shape) * rng.uniform(0.1, 1.0, size=y_hat.shape)
        assert max_fd_error(lambda: fn(lat, y_hat, y), [lat.z, lat.z_tilde, y_hat]) <= 1e-4


def test_instance_loss_decreases_under_gradient_descent():
    lat = _lat(4, 3, 3, 7)
    start = instance_loss(lat).item()
    for _ in range(50):
        gz, gzt = grad_of(lambda: instance_loss(lat), lat.z, lat.z_tilde)
        lat.z.data -= 0.5 * gz
        lat.z_tilde.data -= 0.5 * gzt
    assert instance_loss(lat).item() < start
