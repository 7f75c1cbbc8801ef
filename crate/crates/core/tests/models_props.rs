use proptest::prelude::*;
use statrs::function::gamma::gamma;

use relsub::models::{self, ModelKind, ParamVector};

fn weibull() -> impl Strategy<Value = ParamVector> {
    (0.3f64..6.0, 0.2f64..20.0).prop_map(|(b, e)| ParamVector::weibull(b, e).unwrap())
}

fn glfp() -> impl Strategy<Value = ParamVector> {
    (0.01f64..0.6, 0.5f64..3.0, 0.1f64..2.0, 0.8f64..5.0, 2.0f64..20.0)
        .prop_map(|(p, b1, e1, b2, e2)| ParamVector::glfp(p, b1, e1, b2, e2).unwrap())
}

fn any_model() -> impl Strategy<Value = ParamVector> {
    prop_oneof![(0.01f64..10.0).prop_map(|t| ParamVector::exponential(t).unwrap()), weibull(), glfp()]
}

fn scale_of(p: &ParamVector) -> f64 {
    let v = p.values();
    match p.model() {
        ModelKind::Exponential => 1.0 / v[0],
        ModelKind::Weibull => v[1],
        ModelKind::Glfp { .. } => v[3],
    }
}

fn central_diff(f: impl Fn(&ParamVector) -> f64, p: &ParamVector, k: usize) -> f64 {
    let h = 1e-6 * p.values()[k];
    let at = |s: f64| {
        let mut v = p.values().to_vec();
        v[k] += s;
        p.with_values(&v).unwrap()
    };
    (f(&at(h)) - f(&at(-h))) / (2.0 * h)
}

/// Composite Simpson on [a, b], refined until two successive grids agree.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> f64 {
    let rule = |n: usize| {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0
    };
    let mut n = 64;
    let mut prev = rule(n);
    loop {
        n *= 2;
        let next = rule(n);
        if (next - prev).abs() <= rel * next.abs() || n > 1 << 22 {
            return next;
        }
        prev = next;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gradients_match_finite_differences(p in any_model(), u in 0.02f64..3.0) {
        let t = u * scale_of(&p);
        let gp = models::grad_log_pdf(&p, t).unwrap();
        let gs = models::grad_log_survival(&p, t).unwrap();
        for k in 0..p.dim() {
            let fp = central_diff(|q| models::log_pdf(q, t).unwrap(), &p, k);
            let fs = central_diff(|q| models::log_survival(q, t).unwrap(), &p, k);
            prop_assert!((gp[k] - fp).abs() <= 1e-5 * gp.amax().max(1e-3), "pdf k={} {} vs {}", k, gp[k], fp);
            prop_assert!((gs[k] - fs).abs() <= 1e-5 * gs.amax().max(1e-3), "surv k={} {} vs {}", k, gs[k], fs);
        }
    }

    #[test]
    fn hessians_match_finite_differences(p in any_model(), u in 0.02f64..3.0) {
        let t = u * scale_of(&p);
        let hp = models::hess_log_pdf(&p, t).unwrap();
        let hs = models::hess_log_survival(&p, t).unwrap();
        for j in 0..p.dim() {
            for k in 0..p.dim() {
                let fp = central_diff(|q| models::grad_log_pdf(q, t).unwrap()[j], &p, k);
                let fs = central_diff(|q| models::grad_log_survival(q, t).unwrap()[j], &p, k);
                prop_assert!((hp[(j, k)] - fp).abs() <= 1e-4 * hp.amax().max(1e-3));
                prop_assert!((hs[(j, k)] - fs).abs() <= 1e-4 * hs.amax().max(1e-3));
            }
        }
    }

    #[test]
    fn hessians_are_symmetric(p in any_model(), u in 0.02f64..3.0) {
        let t = u * scale_of(&p);
        let h = models::hess_log_pdf(&p, t).unwrap();
        prop_assert!((&h - h.transpose()).amax() <= 1e-12 * h.amax().max(1.0));
    }

    #[test]
    fn survival_is_monotone(p in any_model(), a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let s = scale_of(&p);
        let (lo, hi) = if a < b { (a * s, b * s) } else { (b * s, a * s) };
        let (s_lo, s_hi) = (models::survival(&p, lo).unwrap(), models::survival(&p, hi).unwrap());
        prop_assert!((0.0..=1.0).contains(&s_lo) && (0.0..=1.0).contains(&s_hi));
        prop_assert!(s_hi <= s_lo);
    }

    #[test]
    fn glfp_survival_matches_integrated_density(p in glfp(), u in 0.05f64..2.0) {
        let t = u * scale_of(&p);
        let f = |x: f64| if x <= 0.0 { 0.0 } else { models::log_pdf(&p, x).map(f64::exp).unwrap_or(0.0) };
        // Substituting x = t v^2 removes the x^(beta - 1) singularity at the origin.
        let cdf = simpson(|v| 2.0 * t * v * f(t * v * v), 0.0, 1.0, 1e-10);
        let s = models::survival(&p, t).unwrap();
        prop_assert!((1.0 - s - cdf).abs() <= 1e-7, "1 - S = {} vs {}", 1.0 - s, cdf);
    }

    #[test]
    fn weibull_mttf_matches_gamma_function(p in weibull()) {
        let v = p.values();
        let want = v[1] * gamma(1.0 + 1.0 / v[0]);
        let got = models::mttf(&p).unwrap();
        prop_assert!((got - want).abs() <= 1e-9 * want);
    }
}

#[test]
fn glfp_mttf_matches_grid_refinement() {
    let p = ParamVector::glfp(0.054, 1.0, 0.5, 2.5, 6.0).unwrap();
    // Survival is below e^-(60/6)^2.5 beyond t = 60.
    let grid = simpson(|t| models::survival(&p, t).unwrap(), 0.0, 60.0, 1e-12);
    let got = models::mttf(&p).unwrap();
    assert!((got - grid).abs() <= 1e-8 * grid, "{got} vs {grid}");
}

#[test]
fn exponential_mttf() {
    assert_eq!(models::mttf(&ParamVector::exponential(0.5).unwrap()).unwrap(), 2.0);
}
