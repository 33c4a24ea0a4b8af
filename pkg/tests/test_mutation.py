import math

import numpy as np
import pytest
from scipy import stats as sps

from popdescent.errors import DomainError
from popdescent.individual import Individual
from popdescent.localsearch import AdamState
from popdescent.mutation import (
    ALPHA_MAX,
    ALPHA_MIN,
    LogInit,
    MutationConfig,
    factor_tail_fractions,
    init_hyperparams,
    log_symmetry_check,
    mutate,
)
from popdescent.streams import substream

CFG = MutationConfig()


def _ind(theta=(0.0, 0.0), lr=0.001, reg=None):
    alpha = {"learning_rate": lr}
    if reg is not None:
        alpha["regularization_rate"] = reg
    return Individual(theta=np.array(theta, dtype=np.float64), alpha=alpha, id=3, opt_state=AdamState.zeros(len(theta)))


class TestMutate:
    def test_zero_magnitude_identity(self):
        ind = _ind((0.5, -1.25), reg=0.1)
        rng = substream(0, "m")
        before = rng.bit_generator.state
        out = mutate(ind, 0.0, CFG, rng)
        assert out.identical_to(ind)
        assert out is not ind
        assert rng.bit_generator.state == before

    @pytest.mark.parametrize("bad", [-0.01, 1.01, math.nan])
    def test_magnitude_domain(self, bad):
        with pytest.raises(DomainError):
            mutate(_ind(), bad, CFG, substream(0))

    def test_theta_noise_sd(self):
        rng = substream(1, "sd")
        ind = _ind((0.0, 0.0))
        draws = np.array([mutate(ind, 1.0, CFG, rng).theta for _ in range(100_000)])
        sd = draws.std(axis=0)
        assert np.all((0.0095 <= sd) & (sd <= 0.0105))

    def test_lr_median_log_symmetric(self):
        rng = substream(2, "lr")
        ind = _ind(lr=0.001)
        lrs = np.array([mutate(ind, 0.5, CFG, rng).learning_rate for _ in range(100_000)])
        assert abs(np.median(lrs) / 0.001 - 1) <= 0.02
        logs = np.log(lrs / 0.001)
        assert abs(sps.skew(logs)) < 0.05
        # log2 of the factor is N(0, 15 * 0.5)
        assert np.std(np.log2(lrs / 0.001)) == pytest.approx(7.5, rel=0.02)

    def test_magnitude_linearity(self):
        rng = substream(3, "lin")
        ind = _ind((0.0,) * 50)
        half = np.concatenate([mutate(ind, 0.5, CFG, rng).theta for _ in range(2000)])
        full = np.concatenate([mutate(ind, 1.0, CFG, rng).theta for _ in range(2000)])
        assert 0.45 <= half.std() / full.std() <= 0.55

    def test_positivity_and_clamp_counting(self):
        rng = substream(4, "clamp")
        stats = {}
        for _ in range(2000):
            out = mutate(_ind(lr=1e-10, reg=1e5), 1.0, CFG, rng, stats)
            assert all(ALPHA_MIN <= v <= ALPHA_MAX and v > 0 for v in out.alpha.values())
        assert stats["clamped"] > 0

    def test_opt_state_and_id_kept(self):
        ind = _ind()
        ind.opt_state.m[:] = 1.5
        out = mutate(ind, 0.8, CFG, substream(5))
        assert out.id == ind.id
        assert out.opt_state.m.tolist() == [1.5, 1.5]
        assert out.opt_state is not ind.opt_state

    def test_deterministic(self):
        a = mutate(_ind(reg=0.01), 0.6, CFG, substream(9, "d"))
        b = mutate(_ind(reg=0.01), 0.6, CFG, substream(9, "d"))
        assert a.identical_to(b)

    def test_alpha_key_order_irrelevant(self):
        a = Individual(np.zeros(2), {"learning_rate": 0.1, "regularization_rate": 0.2}, 0)
        b = Individual(np.zeros(2), {"regularization_rate": 0.2, "learning_rate": 0.1}, 0)
        ma = mutate(a, 0.5, CFG, substream(1))
        mb = mutate(b, 0.5, CFG, substream(1))
        assert ma.alpha == mb.alpha

    def test_config_validation(self):
        with pytest.raises(DomainError):
            MutationConfig(beta1=-1)
        with pytest.raises(DomainError):
            MutationConfig(base=1.0)


class TestInit:
    def test_lr_distribution(self):
        rng = substream(0, "init")
        draws = [init_hyperparams(CFG, rng) for _ in range(100_000)]
        lr = np.log10([d["learning_rate"] for d in draws])
        reg = np.log10([d["regularization_rate"] for d in draws])
        assert -4.1 <= np.median(lr) <= -3.9
        assert 1.96 <= lr.std() <= 2.04
        assert -0.1 <= np.median(reg) <= 0.1
        assert all(d["learning_rate"] > 0 and d["regularization_rate"] > 0 for d in draws)

    def test_log_init(self):
        x = LogInit(1.0, 0.0).sample(substream(0), size=3)
        np.testing.assert_allclose(x, 10.0)


class TestSymmetry:
    def test_base10(self):
        p_low, p_high = log_symmetry_check(1.0, 10.0, 1_000_000, substream(0, "sym"))
        phi = sps.norm.cdf(-1)
        assert abs(p_low - p_high) < 0.01
        assert abs(p_low - phi) <= 0.005 and abs(p_high - phi) <= 0.005

    def test_sigma_zero(self):
        assert log_symmetry_check(0.0, 10.0, 100_000, substream(0)) == (0.0, 0.0)

    def test_base2(self):
        p_low, p_high = factor_tail_fractions(1.0, 2.0, 1_000_000, substream(1, "sym"), factor=2.0)
        assert abs(p_low - p_high) < 0.01

    def test_needs_many_draws(self):
        with pytest.raises(DomainError):
            log_symmetry_check(1.0, 10.0, 1000, substream(0))
