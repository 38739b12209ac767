use proptest::prelude::*;
use wedge_core::fbp_solver::{shoot, sigma, solve_boundaries, ShootTolerances};
use wedge_core::model::{classify, AuxParams, Costs, MarketParams};
use wedge_core::ode_field::{Branch, FieldContext};
use wedge_core::policy::{PolicySurface, Position};

fn case1() -> FieldContext {
    FieldContext::new(0.5, 0.25, 1.75, 0.85)
}

fn case4() -> FieldContext {
    FieldContext::new(1.25, 1.5, 1.25, 2.0)
}

/// `P(q) = R b2 + (1-2R) q - (1-R) q^2`.
fn p_quad(c: &FieldContext, q: f64) -> f64 {
    let r = c.risk_aversion;
    r * c.b2 + (1.0 - 2.0 * r) * q - (1.0 - r) * q * q
}

fn sign_changes(v: &[f64]) -> usize {
    v.windows(2).filter(|w| w[0].signum() != w[1].signum()).count()
}

prop_compose! {
    fn low_r_ctx()(r in 0.15f64..0.9, b1 in 0.1f64..2.0, b2 in 1.05f64..3.0, b3 in 0.2f64..3.0) -> FieldContext {
        FieldContext::new(r, b1, b2, b3)
    }
}

prop_compose! {
    fn high_r_ctx()(r in 1.1f64..3.0, b1 in 0.1f64..2.0, b2 in 1.05f64..3.0, b3 in 0.2f64..3.0) -> FieldContext {
        FieldContext::new(r, b1, b2, b3)
    }
}

fn any_ctx() -> impl Strategy<Value = FieldContext> {
    prop_oneof![low_r_ctx(), high_r_ctx()]
}

/// Away from `q = 1`, the pole and (for `q > 1`) the curve `n = l(q)`.
fn regular_point(c: &FieldContext, q: f64, n: f64) -> bool {
    let near_pole = c.pole().map_or(false, |p| (q - p).abs() < 1e-3);
    let near_ell = q > 1.0 && c.ell(q).map_or(true, |l| (n - l).abs() < 1e-3);
    (q - 1.0).abs() > 1e-3 && !near_pole && !near_ell
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ell_above_m_below_one_and_single_crossing_above(c in low_r_ctx()) {
        for i in 1..=200 {
            let q = i as f64 / 200.0;
            prop_assert!(c.ell(q).unwrap() - c.m(q) > 0.0, "q = {q}");
        }
        let r = c.risk_aversion;
        let root = ((1.0 - 2.0 * r) + ((1.0 - 2.0 * r).powi(2) + 4.0 * (1.0 - r) * r * c.b2).sqrt()) / (2.0 * (1.0 - r));
        let qs: Vec<f64> = (1..=4000).map(|i| 1.0 + 2.0 * root * i as f64 / 4000.0).collect();
        let gap: Vec<f64> = qs.iter().map(|&q| c.ell(q).unwrap() - c.m(q)).collect();
        let quad: Vec<f64> = qs.iter().map(|&q| p_quad(&c, q)).collect();
        prop_assert_eq!(sign_changes(&gap), 1);
        prop_assert_eq!(sign_changes(&quad), 1);
        let cross_gap = gap.windows(2).position(|w| w[0].signum() != w[1].signum()).unwrap();
        let cross_quad = quad.windows(2).position(|w| w[0].signum() != w[1].signum()).unwrap();
        prop_assert_eq!(cross_gap, cross_quad);
    }

    #[test]
    fn m_above_ell_below_one_for_high_risk_aversion(c in high_r_ctx()) {
        for i in 1..=200 {
            let q = i as f64 / 200.0;
            prop_assert!(c.m(q) - c.ell(q).unwrap() > 0.0, "q = {q}");
        }
        let pole = c.pole().unwrap();
        let beyond: Vec<f64> = (1..=2000)
            .map(|i| pole + 1e-3 + 8.0 * pole * i as f64 / 2000.0)
            .filter_map(|q| c.ell(q).ok().map(|l| l - c.m(q)))
            .collect();
        prop_assert_eq!(sign_changes(&beyond), 0);
    }

    #[test]
    fn q_m_is_positive(c in any_ctx()) {
        prop_assert!(c.q_m() > 0.0);
    }

    #[test]
    fn f_vanishes_exactly_on_m(c in any_ctx(), q in 0.01f64..4.0) {
        prop_assume!(regular_point(&c, q, c.m(q)));
        let f = c.f_field(q, c.m(q));
        prop_assert_eq!(f.branch, Branch::Regular);
        prop_assert!(f.value.abs() < 1e-12, "F(q, m(q)) = {}", f.value);
    }

    #[test]
    fn f_has_the_sign_of_m_minus_n(c in any_ctx(), q in 0.01f64..4.0, t in -2.0f64..2.0) {
        let n = c.m(q) + t;
        prop_assume!(regular_point(&c, q, n) && t.abs() > 1e-6);
        let f = c.f_field(q, n);
        prop_assume!(!f.is_blowup());
        prop_assert!(f.value != 0.0);
        prop_assert_eq!(f.value.signum(), -t.signum(), "q = {}, n = {}, F = {}", q, n, f.value);
    }

    #[test]
    fn f_is_nonincreasing_in_n(c in any_ctx(), q in 0.02f64..4.0, t in 0.01f64..0.95) {
        let s = (1.0 - c.risk_aversion).signum();
        let m = c.m(q);
        let n = if q <= 1.0 {
            m + t * (c.ell(q).unwrap() - m)
        } else {
            m + s * 2.0 * t
        };
        prop_assume!(regular_point(&c, q, n));
        let h = 1e-6;
        let (lo, mid, hi) = (c.f_field(q, n - h), c.f_field(q, n), c.f_field(q, n + h));
        prop_assume!(!lo.is_blowup() && !hi.is_blowup());
        let slope = (hi.value - lo.value) / (2.0 * h);
        prop_assert!(slope <= 1e-8 * mid.value.abs().max(1.0), "dF/dn = {slope} at q = {q}, n = {n}");
    }

    #[test]
    fn limit_at_one_matches_nearby_regular_values(c in any_ctx(), t in 0.05f64..0.95) {
        let n = c.m(1.0) + t * (c.ell(1.0).unwrap() - c.m(1.0));
        let eps = 1e-6;
        let lim = c.f_limit_at_one(n);
        // The O(eps) constant is the q-slope, estimated well away from the window.
        let slope = (c.f_field(1.001, n).value - c.f_field(0.999, n).value) / 0.002;
        for q in [1.0 - eps, 1.0 + eps] {
            let v = c.f_field(q, n);
            prop_assert_eq!(v.branch, Branch::Regular);
            let bound = 2.0 * slope.abs() * eps + 1e-9 * lim.abs().max(1.0);
            prop_assert!((v.value - lim).abs() <= bound, "{} vs {lim}, bound {bound}", v.value);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sigma_decreases_in_u(a in 0.05f64..0.95, b in 0.05f64..0.95, high in any::<bool>()) {
        prop_assume!((a - b).abs() > 1e-3);
        let c = if high { case4() } else { case1() };
        let tol = ShootTolerances::default();
        let (u1, u2) = (a.min(b) * c.q_m(), a.max(b) * c.q_m());
        let (s1, s2) = (sigma(&c, u1, &tol).unwrap(), sigma(&c, u2, &tol).unwrap());
        prop_assert!(s1 > s2, "Sigma({u1}) = {s1} <= Sigma({u2}) = {s2}");
    }

    #[test]
    fn solution_family_does_not_cross(a in 0.05f64..0.95, b in 0.05f64..0.95) {
        prop_assume!((a - b).abs() > 1e-3);
        let c = case1();
        let tol = ShootTolerances::default();
        let (u1, u2) = (a.min(b) * c.q_m(), a.max(b) * c.q_m());
        let (p1, p2) = (shoot(&c, u1, &tol).unwrap(), shoot(&c, u2, &tol).unwrap());
        let (lo, hi) = (u2, p1.zeta.min(p2.zeta));
        for i in 0..=100 {
            let q = lo + (hi - lo) * i as f64 / 100.0;
            let (n1, n2) = (p1.n_at(q).unwrap(), p2.n_at(q).unwrap());
            prop_assert!(n1 >= n2 - 1e-10, "n_u1({q}) = {n1} < n_u2({q}) = {n2}");
        }
    }

    #[test]
    fn classification_ignores_the_realization(r in 0.0f64..0.05, rho in -0.8f64..0.8, sigma in 0.1f64..0.6, b3 in 0.5f64..1.6) {
        let costs = Costs::new(0.05, 0.05).unwrap();
        let aux = AuxParams::from_reduced(0.5, 0.25, 1.75, b3, 13.0, costs.xi()).unwrap();
        let m = MarketParams::realize(&aux, costs, r, rho, sigma).unwrap();
        let derived = wedge_core::model::derive_aux(&m).unwrap();
        let (a, b) = (classify(&aux).unwrap(), classify(&derived).unwrap());
        prop_assert_eq!(a.case, b.case);
        prop_assert!((a.q_m - b.q_m).abs() < 1e-12 && (a.m_m - b.m_m).abs() < 1e-12);
    }

    #[test]
    fn value_is_homogeneous_and_region_scale_free(p in -0.5f64..1.8, w in 0.1f64..10.0, k in 0.1f64..10.0) {
        let s = surface(0.1);
        let pos = Position::new(w * (1.0 - p), 1.0, w * p);
        let scaled = Position::new(k * pos.x, pos.y, k * pos.theta);
        let (v, vk) = (s.value_function(&pos).unwrap(), s.value_function(&scaled).unwrap());
        let r = s.aux.risk_aversion;
        prop_assert!((vk - k.powf(1.0 - r) * v).abs() <= 1e-12 * vk.abs());
        prop_assert_eq!(s.region(pos.fraction()), s.region(scaled.fraction()));
    }

    #[test]
    fn value_is_increasing_and_concave_in_cash(t in 0.02f64..0.98, w in 0.5f64..5.0) {
        let s = surface(0.1);
        let p = s.p_star + t * (s.p_upper - s.p_star);
        let (x, yth) = (w * (1.0 - p), w * p);
        let h = 1e-3 * w;
        let v = |x: f64| s.value_function(&Position::new(x, 1.0, yth)).unwrap();
        let (lo, mid, hi) = (v(x - h), v(x), v(x + h));
        prop_assert!((hi - lo) / (2.0 * h) > 0.0);
        prop_assert!((hi - 2.0 * mid + lo) / (h * h) < 0.0);
    }

    #[test]
    fn p_of_q_round_trips(t in 0.0f64..1.0) {
        let s = surface(0.1);
        let q = s.solution.q_star + t * (s.solution.q_upper - s.solution.q_star);
        let p = s.p_of_q(q).unwrap();
        prop_assert!((s.q_of_p(p).unwrap() - q).abs() < 1e-10);
    }
}

fn surface(xi: f64) -> PolicySurface {
    let costs = Costs::from_xi(xi).unwrap();
    let aux = AuxParams::from_reduced(0.5, 0.25, 1.75, 0.85, 13.0, xi).unwrap();
    PolicySurface::build(&aux, costs, &ShootTolerances::default()).unwrap()
}

#[test]
fn solving_is_deterministic() {
    let tol = ShootTolerances::default();
    let c = case1();
    let a = solve_boundaries(&c, Costs::from_xi(0.2).unwrap(), &tol).unwrap();
    let b = solve_boundaries(&c, Costs::from_xi(0.2).unwrap(), &tol).unwrap();
    assert_eq!(a.q_star.to_bits(), b.q_star.to_bits());
    assert_eq!(a.q_upper.to_bits(), b.q_upper.to_bits());
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}
