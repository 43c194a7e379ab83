use cdep_core::bounds::{s_index, t_lower, t_upper, SIndex};
use proptest::prelude::*;

#[test]
fn hand_values() {
    // tau + (c/p) min(tau, 1 - tau) = 0.5 + 0.5 * 0.5 = 0.75 < tau/p = 1.25
    assert_eq!(t_upper(0.5, 0.2, 0.4), 0.75);
    assert_eq!(t_lower(0.5, 0.2, 0.4), 0.25);
    // tau / p binds: 0.2 / 0.25 = 0.8 below 0.2 + 4 * 0.2 = 1.0
    assert_eq!(t_upper(0.2, 1.0, 0.25), 0.8);
    // (tau - 1)/p + 1 = 0.75 binds on the lower side against 0.8 - 0.625 * 0.2
    assert!((t_lower(0.8, 0.5, 0.8) - 0.75).abs() < 1e-15);
    assert_eq!(t_upper(0.9, 1.0, 0.5), 1.0);
    assert_eq!(t_lower(0.1, 1.0, 0.5), 0.0);
}

#[test]
fn trimming_clamps() {
    let eps = 0.05;
    assert_eq!(s_index(SIndex::S2, 0.01, 0.0, 0.5, eps), eps);
    assert_eq!(s_index(SIndex::S1, 0.99, 0.0, 0.5, eps), 0.99_f64.min(1.0 - eps));
    assert_eq!(s_index(SIndex::S4, 0.99, 0.0, 0.5, eps), 1.0 - eps);
    assert_eq!(s_index(SIndex::S3, 0.01, 0.0, 0.5, eps), eps);
}

proptest! {
    #[test]
    fn ordering(tau in 0.0..=1.0f64, c in 0.0..=1.0f64, p in 0.01..=1.0f64) {
        let lo = t_lower(tau, c, p);
        let up = t_upper(tau, c, p);
        prop_assert!(0.0 <= lo && lo <= tau + 1e-15);
        prop_assert!(tau <= up + 1e-15 && up <= 1.0);
    }

    #[test]
    fn zero_c_is_identity(tau in 0.0..=1.0f64, p in 0.01..=1.0f64) {
        prop_assert_eq!(t_upper(tau, 0.0, p), tau);
        prop_assert_eq!(t_lower(tau, 0.0, p), tau);
    }

    #[test]
    fn monotone_in_c(tau in 0.0..=1.0f64, c1 in 0.0..=1.0f64, c2 in 0.0..=1.0f64, p in 0.01..=1.0f64) {
        let (a, b) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
        prop_assert!(t_upper(tau, a, p) <= t_upper(tau, b, p));
        prop_assert!(t_lower(tau, a, p) >= t_lower(tau, b, p));
    }

    #[test]
    fn monotone_in_tau(t1 in 0.0..=1.0f64, t2 in 0.0..=1.0f64, c in 0.0..=1.0f64, p in 0.01..=1.0f64) {
        let (a, b) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        prop_assert!(t_upper(a, c, p) <= t_upper(b, c, p) + 1e-15);
        prop_assert!(t_lower(a, c, p) <= t_lower(b, c, p) + 1e-15);
    }

    #[test]
    fn manski_beyond_p(tau in 0.0..=1.0f64, p in 0.01..=1.0f64) {
        // c >= max(p, 1 - p) leaves only the no-assumption terms
        let c = p.max(1.0 - p);
        prop_assert!((t_upper(tau, c, p) - (tau / p).min(1.0)).abs() < 1e-15);
        prop_assert!((t_lower(tau, c, p) - ((tau - 1.0) / p + 1.0).max(0.0)).abs() < 1e-15);
    }

    #[test]
    fn trimmed_indices_in_range(tau in 0.0..=1.0f64, c in 0.0..=1.0f64, p in 0.01..=1.0f64, eps in 0.001..0.3f64) {
        for kind in [SIndex::S2, SIndex::S4] {
            let s = s_index(kind, tau, c, p, eps);
            prop_assert!(eps <= s && s <= 1.0 - eps);
        }
        prop_assert!(s_index(SIndex::S4, tau, c, p, eps) <= s_index(SIndex::S2, tau, c, p, eps));
    }
}
