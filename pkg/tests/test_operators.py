import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from catchup.geometry import Box, Halfline, NonnegOrthant
from catchup.operators import (
    AffineField,
    CustomPart,
    IntervalBox,
    LinearPart,
    MinimalNorm,
    MonotoneModel,
    Randomized,
    SeparableL1,
    SignConvention,
    ZeroPart,
    check_linear_growth,
    check_tangent_dissipativity,
    estimate_one_sided_lipschitz,
    globalize_constants,
    model_from_config,
    select_F,
)

from oracles import clamp_interval


def scalar_model(a=1.0, b=2.0):
    """The halfline model: f(x) = -a x + b, G(x) = {x}, C = [0, inf)."""
    rate = a + 1.0
    return MonotoneModel(
        f=AffineField([[-a]], [b]),
        G=LinearPart([[1.0]]),
        C=Halfline(),
        growth=(abs(b), rate),
        dissipativity=(1.0, b * b / (2.0 * rate), rate / 2.0),
        ell=-rate,
        name="onedim",
    )


def friction_model(tau, K=None, weights=None, lower=-2.0, upper=2.0):
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    n = tau.shape[0]
    K = np.eye(n) if K is None else np.asarray(K, dtype=float)
    weights = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    C = Box(np.full(n, lower), np.full(n, upper))
    R = C.bounding_radius()
    L = float(np.linalg.norm(tau)) + float(np.linalg.norm(K, 2)) * R + float(np.sqrt(n) * weights.max())
    return MonotoneModel(
        f=AffineField(-K, tau),
        G=SeparableL1(weights),
        C=C,
        growth=(float(np.linalg.norm(tau)) + np.sqrt(n) * weights.max(), float(np.linalg.norm(K, 2))),
        dissipativity=(R / 2.0, L * R + R * R, 1.0),
        ell=-float(np.linalg.eigvalsh(K).min()),
        name="dry_friction",
    )


class TestIntervalBox:
    def test_l1_interval_at_zero(self):
        G = SeparableL1([1.0])
        box = G.value([0.0])
        np.testing.assert_allclose(box.lower, [-1.0])
        np.testing.assert_allclose(box.upper, [1.0])
        assert not box.is_singleton()

    def test_l1_singleton_off_zero(self):
        G = SeparableL1([1.0, 2.0])
        box = G.value([0.5, -0.3])
        np.testing.assert_allclose(box.lower, [1.0, -2.0])
        np.testing.assert_allclose(box.upper, [1.0, -2.0])
        assert box.is_singleton()

    def test_linear_identity_value(self):
        G = LinearPart(np.eye(1))
        box = G.value([3.0])
        np.testing.assert_allclose(box.lower, [3.0])
        assert box.is_singleton()

    def test_vertices_enumeration(self):
        box = IntervalBox([-1.0, 2.0, 0.0], [1.0, 2.0, 3.0])
        V = box.vertices()
        assert V.shape == (4, 3)
        assert {tuple(v) for v in V} == {
            (-1.0, 2.0, 0.0), (1.0, 2.0, 0.0), (-1.0, 2.0, 3.0), (1.0, 2.0, 3.0),
        }

    def test_max_norm_at_vertex(self):
        box = IntervalBox([-3.0, -1.0], [1.0, 2.0])
        assert box.max_norm() == pytest.approx(np.sqrt(9.0 + 4.0))

    def test_linear_part_rejects_indefinite(self):
        with pytest.raises(ValueError):
            LinearPart([[0.0, 1.0], [1.0, 0.0]])
        with pytest.raises(ValueError):
            LinearPart([[1.0, 2.0], [0.0, 1.0]])


class TestSelection:
    def test_scalar_model_balance_point(self):
        m = scalar_model(a=1.0, b=2.0)
        for rule in (MinimalNorm(), SignConvention(-1), SignConvention(0),
                     SignConvention(1), Randomized(seed=0)):
            w = select_F(m, [1.0], rule=rule)
            assert w[0] == pytest.approx(0.0, abs=1e-15)

    def test_sticking_selection(self):
        m = friction_model([0.5])
        w = select_F(m, [0.0], rule=MinimalNorm())
        g_oracle = clamp_interval(0.5, -1.0, 1.0)
        assert w[0] == pytest.approx(0.5 - g_oracle)
        assert w[0] == 0.0

    def test_sliding_selection(self):
        m = friction_model([2.0])
        w = select_F(m, [0.0], rule=MinimalNorm())
        g_oracle = clamp_interval(2.0, -1.0, 1.0)
        assert w[0] == pytest.approx(2.0 - g_oracle)
        assert w[0] == pytest.approx(1.0)

    def test_sign_convention_endpoints(self):
        m = friction_model([0.0])
        # g at the lower end -1 gives w = +1; at the upper end +1 gives w = -1
        assert select_F(m, [0.0], rule=SignConvention(-1))[0] == pytest.approx(1.0)
        assert select_F(m, [0.0], rule=SignConvention(1))[0] == pytest.approx(-1.0)
        assert select_F(m, [0.0], rule=SignConvention(0))[0] == pytest.approx(0.0)

    def test_randomized_is_seeded(self):
        m = friction_model([0.0])
        w1 = select_F(m, [0.0], rule=Randomized(seed=5))
        w2 = select_F(m, [0.0], rule=Randomized(seed=5))
        assert w1[0] == w2[0]
        assert -1.0 <= w1[0] <= 1.0

    @given(st.floats(min_value=-5, max_value=5), st.floats(min_value=0.0, max_value=4.0))
    @settings(max_examples=200, deadline=None)
    def test_selection_containment(self, tau, x):
        m = friction_model([tau], lower=-5.0, upper=5.0)
        x_vec = np.array([x])
        for rule in (MinimalNorm(), SignConvention(-1), SignConvention(1), Randomized(seed=1)):
            w = select_F(m, x_vec, rule=rule)
            box = m.F_interval(x_vec)
            assert box.contains(w, tol=1e-12)

    @given(st.floats(min_value=-5, max_value=5))
    @settings(max_examples=100, deadline=None)
    def test_minimal_norm_optimality(self, tau):
        m = friction_model([tau], lower=-5.0, upper=5.0)
        x = np.array([0.0])
        w_min = select_F(m, x, rule=MinimalNorm())
        for rule in (SignConvention(-1), SignConvention(0), SignConvention(1), Randomized(seed=2)):
            w = select_F(m, x, rule=rule)
            assert np.linalg.norm(w_min) <= np.linalg.norm(w) + 1e-12


class TestGlobalize:
    def test_worked_example(self):
        assert globalize_constants(2.0, 2.0, 1.0, 1.0, 1.0) == 5.0

    def test_vanishing_radius(self):
        assert globalize_constants(3.0, 1.0, 0.0, 7.0, 2.0) == 7.0

    def test_pure_radius_arm(self):
        assert globalize_constants(0.0, 0.0, 1.0, 0.0, 1.0) == 1.0

    def test_rejects_bad_gamma(self):
        with pytest.raises(ValueError):
            globalize_constants(1.0, 1.0, 1.0, 1.0, 0.0)

    def test_model_property_uses_it(self):
        m = scalar_model(a=1.0, b=2.0)
        # growth (2,2), r_star=1, M=1, gamma=1: max{1, 1*(2+2)+1} = 5
        assert m.M_global == 5.0


class TestGrowthCheck:
    def test_scalar_model_holds(self):
        m = scalar_model(a=1.0, b=2.0)
        rec = check_linear_growth(m, rng=np.random.default_rng(0), n_samples=300, radius=10.0)
        assert rec["holds"]
        assert rec["kind"] == "falsification"

    def test_zero_field_holds(self):
        m = MonotoneModel(
            f=AffineField([[0.0]], [0.0]), G=ZeroPart(1), C=Halfline(),
            growth=(0.0, 0.0), dissipativity=(1.0, 1.0, 1.0),
        )
        assert check_linear_growth(m, rng=np.random.default_rng(1))["holds"]

    def test_understated_slope_is_falsified(self):
        # |F(x)| = |2 - 2x| exceeds 2 + x once x > 4
        m = MonotoneModel(
            f=AffineField([[-1.0]], [2.0]), G=LinearPart([[1.0]]), C=Halfline(),
            growth=(2.0, 1.0), dissipativity=(1.0, 1.0, 1.0),
        )
        rec = check_linear_growth(m, rng=np.random.default_rng(2), n_samples=400, radius=10.0)
        assert not rec["holds"]
        assert rec["witness"][0] > 4.0


class TestDissipativityCheck:
    def test_scalar_model_holds_globally(self):
        m = scalar_model(a=1.0, b=2.0)
        rec = check_tangent_dissipativity(
            m, rng=np.random.default_rng(0), n_samples=300, radius=10.0, use_global=True
        )
        assert rec["holds"]
        assert rec["level"] == 5.0

    def test_scalar_model_local_level(self):
        # xF(x) = -2x^2 + 2x <= 1 - x^2 for all x, so the local level M=1
        # already works without globalization
        m = scalar_model(a=1.0, b=2.0)
        rec = check_tangent_dissipativity(
            m, rng=np.random.default_rng(0), n_samples=300, radius=10.0, use_global=False
        )
        assert rec["holds"]
        assert rec["level"] == 1.0

    def test_friction_model_holds_on_box(self):
        m = friction_model([0.5, -0.3], K=[[2.0, 0.0], [0.0, 1.0]], weights=[1.0, 1.0])
        rec = check_tangent_dissipativity(m, rng=np.random.default_rng(3), n_samples=200)
        assert rec["holds"]

    def test_anti_dissipative_is_falsified(self):
        m = MonotoneModel(
            f=AffineField([[1.0]], [0.0]), G=ZeroPart(1), C=Halfline(),
            growth=(0.0, 1.0), dissipativity=(1.0, 1.0, 1.0),
        )
        rec = check_tangent_dissipativity(
            m, rng=np.random.default_rng(4), n_samples=200, radius=10.0
        )
        assert not rec["holds"]


class TestOneSidedLipschitz:
    def test_affine_model_estimate_is_exact(self):
        m = scalar_model(a=1.0, b=2.0)
        rec = estimate_one_sided_lipschitz(m, rng=np.random.default_rng(0), n_pairs=200)
        assert rec["estimate"] == pytest.approx(-2.0, abs=1e-9)
        assert rec["consistent"]

    def test_understated_level_is_flagged(self):
        m = MonotoneModel(
            f=AffineField([[1.0]], [0.0]), G=ZeroPart(1), C=Halfline(),
            growth=(0.0, 1.0), dissipativity=(1.0, 1.0, 1.0), ell=0.5,
        )
        rec = estimate_one_sided_lipschitz(m, rng=np.random.default_rng(1), n_pairs=200)
        assert rec["estimate"] == pytest.approx(1.0, abs=1e-9)
        assert not rec["consistent"]

    @given(st.integers(min_value=0, max_value=50))
    @settings(max_examples=30, deadline=None)
    def test_monotone_regular_part_pairs(self, seed):
        # a subdifferential is monotone for arbitrary selections, extreme
        # points included
        G = SeparableL1([1.0, 0.5])
        rng = np.random.default_rng(seed)
        pts = rng.uniform(-2, 2, size=(2, 2))
        pts[rng.random(size=(2, 2)) < 0.3] = 0.0
        x1, x2 = pts
        for g1 in G.value(x1).vertices():
            for g2 in G.value(x2).vertices():
                assert float((g1 - g2) @ (x1 - x2)) >= -1e-12


class TestModelConfig:
    def test_round_trip(self):
        m = friction_model([0.5, -0.3], K=[[2.0, 0.5], [0.5, 1.0]])
        cfg = m.to_config()
        m2 = model_from_config(cfg)
        assert m2.dim == m.dim
        assert m2.a == m.a and m2.b == m.b
        assert m2.M == m.M and m2.gamma == m.gamma and m2.r_star == m.r_star
        assert m2.ell == m.ell
        x = np.array([0.3, -0.7])
        np.testing.assert_allclose(select_F(m2, x), select_F(m, x))

    def test_missing_constants_rejected(self):
        m = scalar_model()
        cfg = m.to_config()
        del cfg["constants"]["gamma"]
        with pytest.raises(ValueError):
            model_from_config(cfg)

    def test_custom_part_has_no_config(self):
        part = CustomPart(lambda x: np.zeros(1), dim=1)
        with pytest.raises(ValueError):
            part.to_config()

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            MonotoneModel(
                f=AffineField([[1.0]], [0.0]), G=ZeroPart(2), C=Halfline(),
                growth=(1.0, 1.0), dissipativity=(1.0, 1.0, 1.0),
            )
