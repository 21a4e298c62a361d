"""Market-model identities: martingales, measure changes, swap rates, correlation."""
import numpy as np
import pytest

from aimm.errors import DomainViolation
from aimm.model import (
    ModelConfig,
    StateVector,
    TenorStructure,
    ab_pair,
    build_u_vectors,
    build_v_vectors,
    correlation,
    forward_cpi,
    forward_inflation,
    forward_rate,
    martingale,
    mgf_log_cpi,
    mgf_state,
    mgf_two_time,
    mgf_yoy,
    real_bond,
    yyiis_rate,
    zciis_rate,
)
from conftest import random_state, small_process


class TestParameterTables:
    def test_u_row_pattern(self):
        n, years = 8, 4
        u_tilde = np.linspace(0.03, 0.0, n)
        u_bar = np.linspace(0.04, 0.01, n)
        rows = build_u_vectors(u_tilde, u_bar, years)
        # row 3 (k=3): common tilt, own-year loading on process 2, later odd loadings
        assert rows[2, 0] == u_tilde[2]
        assert rows[2, 1] == 0.0
        assert rows[2, 2] == u_bar[2]
        assert rows[2, 3] == u_bar[4]  # u_bar_5
        assert rows[2, 4] == u_bar[6]  # u_bar_7
        assert np.all(rows[:, 5:] == 0.0)
        # decreasing componentwise
        assert np.all(np.diff(rows, axis=0) <= 1e-15)

    def test_v_rows_share_nominal_entries(self):
        n, years = 8, 4
        u_tilde = np.linspace(0.03, 0.0, n)
        u_bar = np.linspace(0.04, 0.01, n)
        v_tilde = u_tilde * 1.1
        v_bar = np.linspace(0.1, 0.4, n)
        u = build_u_vectors(u_tilde, u_bar, years)
        v = build_v_vectors(v_tilde, u_bar, v_bar, years)
        np.testing.assert_array_equal(u[:, 1 : years + 1], v[:, 1 : years + 1])
        for k in range(1, n + 1):
            j = (k + 1) // 2
            assert v[k - 1, years + j] == v_bar[k - 1]

    def test_config_rejects_increasing_rows(self):
        n, years = 8, 4
        tenor = TenorStructure(n=n)
        u_tilde = np.linspace(0.0, 0.03, n)  # increasing: negative forwards
        u_bar = np.linspace(0.04, 0.01, n)
        with pytest.raises(ValueError):
            ModelConfig(
                tenor=tenor,
                process=small_process(years),
                u_tilde=u_tilde,
                u_bar=u_bar,
                v_tilde=u_tilde.copy(),
                v_bar=np.zeros(n),
                numeraire_df=0.8,
            )

    def test_config_roundtrips_through_dict(self, toy_config):
        rebuilt = ModelConfig.from_dict(toy_config.to_dict())
        np.testing.assert_array_equal(rebuilt.u, toy_config.u)
        np.testing.assert_array_equal(rebuilt.v, toy_config.v)
        assert rebuilt.numeraire_df == toy_config.numeraire_df


class TestMartingale:
    def test_zero_argument(self, toy_config):
        rng = np.random.default_rng(0)
        st = random_state(toy_config, rng, 1.0)
        assert martingale(toy_config, np.zeros(toy_config.process.dim), st) == 1.0

    def test_terminal_condition(self, toy_config):
        rng = np.random.default_rng(1)
        st = random_state(toy_config, rng, toy_config.tenor.horizon)
        w = 0.3 * np.ones(toy_config.process.dim) * np.array([0.1] * 5 + [1.0] * 4)
        assert float(martingale(toy_config, w, st)) == pytest.approx(
            float(np.exp(w @ st.x)), rel=1e-14
        )

    def test_ab_pair_trivials(self, toy_config):
        w = toy_config.u_row(2)
        a, b = ab_pair(toy_config, 1.0, w, w)
        assert a == 0.0 and np.all(b == 0.0)
        a, b = ab_pair(toy_config, toy_config.tenor.horizon, toy_config.u_row(1), w)
        assert a == 0.0
        np.testing.assert_allclose(b, toy_config.u_row(1) - w, atol=1e-15)

    def test_domain_violation_propagates(self, toy_config):
        w = np.zeros(toy_config.process.dim)
        w[-1] = 100.0
        with pytest.raises(DomainViolation):
            martingale(toy_config, w, toy_config.initial_state())


class TestForwardQuantities:
    def test_forward_rate_zero_when_rows_equal(self):
        years, n = 4, 8
        tenor = TenorStructure(n=n)
        u_tilde = np.array([0.03, 0.03, 0.022, 0.018, 0.014, 0.010, 0.006, 0.0])
        u_bar = np.array([0.04, 0.04, 0.03, 0.026, 0.022, 0.018, 0.014, 0.01])
        cfg = ModelConfig(
            tenor=tenor,
            process=small_process(years),
            u_tilde=u_tilde,
            u_bar=u_bar,
            v_tilde=u_tilde.copy(),
            v_bar=np.zeros(n),
            numeraire_df=0.8,
        )
        st = random_state(cfg, np.random.default_rng(2), 0.7)
        assert forward_rate(cfg, 2, st) == 0.0

    def test_forward_rates_nonnegative_for_decreasing_rows(self, toy_config):
        rng = np.random.default_rng(3)
        for _ in range(200):
            st = random_state(toy_config, rng, rng.uniform(0, 2.0))
            k = int(rng.integers(2, toy_config.tenor.n + 1))
            assert forward_rate(toy_config, k, st) >= 0.0

    def test_forward_cpi_positive_and_degenerate(self, toy_config):
        rng = np.random.default_rng(4)
        st = random_state(toy_config, rng, 0.5)
        assert forward_cpi(toy_config, 3, st) > 0.0
        degenerate = ModelConfig(
            tenor=toy_config.tenor,
            process=toy_config.process,
            u_tilde=toy_config.u_tilde,
            u_bar=toy_config.u_bar,
            v_tilde=toy_config.u_tilde.copy(),
            v_bar=np.zeros(toy_config.tenor.n),
            numeraire_df=toy_config.numeraire_df,
        )
        assert not degenerate.has_inflation
        assert forward_cpi(degenerate, 3, st) == 1.0
        assert zciis_rate(degenerate, 2) == 0.0
        assert yyiis_rate(degenerate, 2) == 0.0
        assert forward_inflation(degenerate, 4, 2, st) == 0.0

    def test_real_bond_time_zero(self, toy_config):
        st = toy_config.initial_state()
        p_k = toy_config.numeraire_df * float(martingale(toy_config, toy_config.u_row(4), st))
        assert real_bond(toy_config, 4) == pytest.approx(forward_cpi(toy_config, 4, st) * p_k, rel=1e-14)


class TestMgfs:
    def test_mgf_log_cpi_normalization(self, toy_config):
        st = random_state(toy_config, np.random.default_rng(5), 0.7)
        assert complex(mgf_log_cpi(toy_config, 3, 0.0, st)) == pytest.approx(1.0, abs=1e-14)

    def test_mgf_log_cpi_martingale_identity(self, toy_config):
        rng = np.random.default_rng(6)
        worst = 0.0
        for _ in range(100):
            t = rng.uniform(0.0, 1.5)
            st = random_state(toy_config, rng, t)
            k = int(rng.integers(1, toy_config.tenor.n + 1))
            if toy_config.tenor.date(k) < t:
                continue
            lhs = complex(mgf_log_cpi(toy_config, k, 1.0, st))
            worst = max(worst, abs(lhs - forward_cpi(toy_config, k, st)))
        assert worst < 1e-12

    def test_mgf_two_time_trivial_and_reduction(self, toy_config):
        rng = np.random.default_rng(7)
        dim = toy_config.process.dim
        st = random_state(toy_config, rng, 0.3)
        one = complex(
            mgf_two_time(toy_config, 5, np.zeros(dim), np.zeros(dim), 1.0, 2.0, st)
        )
        assert one == pytest.approx(1.0, abs=1e-14)
        worst = 0.0
        for _ in range(50):
            st = random_state(toy_config, rng, rng.uniform(0, 0.8))
            r = rng.uniform(st.t, 2.0)
            t = rng.uniform(r, 2.5)
            w = np.concatenate([rng.uniform(-0.2, 0.1, 5), rng.uniform(-0.5, 0.5, 4)])
            k = int(rng.integers(5, toy_config.tenor.n + 1))
            via_lemma = complex(mgf_two_time(toy_config, k, np.zeros(dim), w, r, t, st))
            direct = complex(mgf_state(toy_config, k, w, t, st))
            worst = max(worst, abs(via_lemma / direct - 1.0))
        assert worst < 1e-12

    def test_mgf_yoy_matches_forward_inflation(self, toy_config):
        rng = np.random.default_rng(8)
        worst = 0.0
        for _ in range(100):
            k = int(rng.integers(2, toy_config.tenor.n + 1))
            j = int(rng.integers(1, k + 1))
            t_max = toy_config.tenor.date(k - j) if j < k else toy_config.tenor.date(k)
            st = random_state(toy_config, rng, rng.uniform(0, max(t_max, 1e-9)))
            span = toy_config.tenor.date(k) - toy_config.tenor.date(k - j)
            lhs = complex(mgf_yoy(toy_config, k, j, 1.0, st))
            rhs = 1.0 + span * forward_inflation(toy_config, k, j, st)
            worst = max(worst, abs(lhs - rhs))
        assert worst < 1e-12

    def test_mgf_yoy_normalization(self, toy_config):
        st = random_state(toy_config, np.random.default_rng(9), 0.4)
        assert complex(mgf_yoy(toy_config, 6, 2, 0.0, st)) == pytest.approx(1.0, abs=1e-14)


class TestSwapRates:
    def test_zciis_direct_inversion(self, toy_config):
        # ZCIIS rate inverts the forward CPI at the annual pillar
        state = toy_config.initial_state()
        for years in (1, 2):
            gross = forward_cpi(toy_config, 2 * years, state)
            assert zciis_rate(toy_config, years) == pytest.approx(
                gross ** (1.0 / years) - 1.0, rel=1e-14
            )

    def test_yyiis_single_period_equals_forward_inflation(self, toy_config):
        state = toy_config.initial_state()
        assert yyiis_rate(toy_config, 1) == pytest.approx(
            forward_inflation(toy_config, 2, 2, state), rel=1e-14
        )

    def test_yyiis_is_weighted_average_of_forwards(self, toy_config):
        state = toy_config.initial_state()
        rate = yyiis_rate(toy_config, toy_config.tenor.years)
        fis = [
            forward_inflation(toy_config, 2 * m, min(2, 2 * m), state)
            for m in range(1, toy_config.tenor.years + 1)
        ]
        assert min(fis) - 1e-15 <= rate <= max(fis) + 1e-15


class TestTelescoping:
    def test_gross_forward_product_reproduces_curve(self, toy_config):
        # product of gross forwards telescopes to the normalized bond ratio
        state = toy_config.initial_state()
        delta = toy_config.tenor.delta
        n = toy_config.tenor.n
        m_last = float(martingale(toy_config, toy_config.u_row(n), state))
        worst = 0.0
        for k in range(1, n):
            prod = 1.0
            for j in range(k + 1, n + 1):
                prod *= 1.0 + delta * forward_rate(toy_config, j, state)
            target = float(martingale(toy_config, toy_config.u_row(k), state)) / m_last
            worst = max(worst, abs(prod / target - 1.0))
        assert worst < 1e-10


class TestCorrelation:
    def test_self_correlation(self, toy_config):
        assert correlation(toy_config, ("forward_rate", 3), ("forward_rate", 3), 1.0) == 1.0

    def test_disjoint_support_zero(self, toy_config):
        n = toy_config.tenor.n
        flat = np.full(n, 0.01)
        cfg = ModelConfig(
            tenor=toy_config.tenor,
            process=toy_config.process,
            u_tilde=flat,
            u_bar=toy_config.u_bar,
            v_tilde=flat.copy(),
            v_bar=np.zeros(n),
            numeraire_df=0.8,
        )
        assert correlation(cfg, ("forward_rate", 2), ("forward_rate", 6), 1.0) == 0.0

    def test_decreasing_tilts_give_positive_forward_correlations(self, toy_config):
        rho = correlation(toy_config, ("forward_rate", 2), ("forward_rate", 6), 1.0)
        assert 0.0 < rho < 1.0

    def test_positive_tilt_gives_positive_cpi_rate_correlation(self, toy_config):
        rho = correlation(toy_config, ("log_cpi", 6), ("forward_rate", 2), 1.0)
        assert rho >= 0.0

    def test_bounded(self, toy_config):
        for qa in (("forward_rate", 2), ("log_cpi", 4), ("yoy_inflation", 8, 2)):
            for qb in (("forward_rate", 6), ("log_cpi", 8)):
                rho = correlation(toy_config, qa, qb, 1.0)
                assert -1.0 <= rho <= 1.0
