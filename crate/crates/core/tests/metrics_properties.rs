use flakecat::metrics::{
    consistency_index, discriminancy_index, entropy_and_mutual_information, fdc, fdc_in_base, macro_f1,
    ConfusionMatrix, MetricsError,
};
use proptest::prelude::*;

// Mutual information and input entropy by explicit joint/marginal
// probabilities, logs taken in base 2 directly.
fn direct_fdc(counts: &[Vec<u64>]) -> f64 {
    let k = counts.len();
    let n: f64 = counts.iter().flatten().map(|&c| c as f64).sum();
    let p: Vec<Vec<f64>> = counts.iter().map(|r| r.iter().map(|&c| c as f64 / n).collect()).collect();
    let p_in: Vec<f64> = (0..k).map(|i| (0..k).map(|j| p[i][j]).sum()).collect();
    let p_out: Vec<f64> = (0..k).map(|j| (0..k).map(|i| p[i][j]).sum()).collect();
    let mut h = 0.0;
    for &pi in &p_in {
        if pi > 0.0 {
            h -= pi * pi.log2();
        }
    }
    let mut mi = 0.0;
    for i in 0..k {
        for j in 0..k {
            if p[i][j] > 0.0 {
                mi += p[i][j] * (p[i][j] / (p_in[i] * p_out[j])).log2();
            }
        }
    }
    mi / h
}

fn square(k: usize, max: u64) -> impl Strategy<Value = Vec<Vec<u64>>> {
    prop::collection::vec(prop::collection::vec(0..=max, k), k)
}

// At least two non-empty rows, so H(c_in) > 0.
fn informative() -> impl Strategy<Value = Vec<Vec<u64>>> {
    (2usize..8)
        .prop_flat_map(|k| square(k, 40))
        .prop_filter("two populated rows", |m| m.iter().filter(|r| r.iter().sum::<u64>() > 0).count() >= 2)
}

fn cm(counts: Vec<Vec<u64>>) -> ConfusionMatrix {
    ConfusionMatrix::from_counts(counts).unwrap()
}

// Every column has at most one non-zero row: the prediction determines the
// actual class.
fn output_determines_input(counts: &[Vec<u64>]) -> bool {
    (0..counts.len()).all(|j| counts.iter().filter(|r| r[j] > 0).count() <= 1)
}

// Classes absent from both sides are outside the macro mean, so an empty
// diagonal entry is allowed.
fn is_diagonal(counts: &[Vec<u64>]) -> bool {
    counts
        .iter()
        .enumerate()
        .all(|(i, r)| r.iter().enumerate().all(|(j, &c)| i == j || c == 0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn fdc_bounded_and_mi_below_entropy(counts in informative()) {
        let m = cm(counts);
        let v = fdc(&m).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        let (h, i) = entropy_and_mutual_information(&m, 2.0);
        prop_assert!(i >= -1e-12 && i <= h + 1e-12, "I = {i}, H = {h}");
    }

    #[test]
    fn base_cancels(counts in informative()) {
        let m = cm(counts);
        let two = fdc_in_base(&m, 2.0).unwrap();
        let e = fdc_in_base(&m, std::f64::consts::E).unwrap();
        prop_assert!((two - e).abs() <= 1e-12, "{two} vs {e}");
    }

    #[test]
    fn matches_direct_summation(counts in informative()) {
        let oracle = direct_fdc(&counts).clamp(0.0, 1.0);
        let v = fdc(&cm(counts)).unwrap();
        prop_assert!((v - oracle).abs() <= 1e-12, "{v} vs {oracle}");
    }

    #[test]
    fn invariant_under_class_reordering(counts in informative(), seed in any::<u64>()) {
        let k = counts.len();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut s = seed;
        for i in (1..k).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (s >> 33) as usize % (i + 1));
        }
        let m = cm(counts);
        let a = fdc(&m).unwrap();
        let b = fdc(&m.permuted(&perm)).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((macro_f1(&m).macro_f1 - macro_f1(&m.permuted(&perm)).macro_f1).abs() <= 1e-12);
    }

    #[test]
    fn fdc_is_one_exactly_when_prediction_determines_class(counts in informative()) {
        let determined = output_determines_input(&counts);
        let v = fdc(&cm(counts)).unwrap();
        prop_assert_eq!(v > 1.0 - 1e-12, determined, "fdc = {}", v);
    }

    #[test]
    fn f1_and_fdc_both_one_iff_diagonal(counts in informative()) {
        let diag = is_diagonal(&counts);
        let m = cm(counts);
        let both = macro_f1(&m).macro_f1 > 1.0 - 1e-12 && fdc(&m).unwrap() > 1.0 - 1e-12;
        prop_assert_eq!(both, diag);
    }

    #[test]
    fn independent_joint_counts_have_zero_fdc(
        a in prop::collection::vec(1u64..20, 2..7),
        b_seed in prop::collection::vec(1u64..20, 7),
    ) {
        let b = &b_seed[..a.len()];
        let counts: Vec<Vec<u64>> = a.iter().map(|&ai| b.iter().map(|&bj| ai * bj).collect()).collect();
        prop_assert!(fdc(&cm(counts)).unwrap() <= 1e-12);
    }
}

#[test]
fn diagonal_matrices_score_one() {
    for k in 2..8 {
        let counts: Vec<Vec<u64>> = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1 + i as u64 * 3 } else { 0 }).collect())
            .collect();
        let m = cm(counts);
        assert_eq!(fdc(&m).unwrap(), 1.0);
        assert_eq!(macro_f1(&m).macro_f1, 1.0);
    }
}

#[test]
fn single_row_has_no_entropy() {
    let m = cm(vec![vec![4, 2], vec![0, 0]]);
    assert_eq!(fdc(&m).unwrap_err(), MetricsError::ZeroInputEntropy);
}

// Ordered-pair enumeration written against the set definitions: R/S for
// consistency, P (f separates, g ties) and Q (g separates, f ties).
fn enumerate(f: &[f64], g: &[f64], eps: f64) -> (usize, usize, usize, usize) {
    let (mut r, mut s, mut p, mut q) = (0, 0, 0, 0);
    for a in 0..f.len() {
        for b in 0..f.len() {
            if a >= b {
                continue;
            }
            let f_gt = f[a] - f[b] > eps;
            let f_lt = f[b] - f[a] > eps;
            let g_gt = g[a] - g[b] > eps;
            let g_lt = g[b] - g[a] > eps;
            let f_eq = !f_gt && !f_lt;
            let g_eq = !g_gt && !g_lt;
            if (f_gt && g_gt) || (f_lt && g_lt) {
                r += 1;
            }
            if (f_gt && g_lt) || (f_lt && g_gt) {
                s += 1;
            }
            if !f_eq && g_eq {
                p += 1;
            }
            if f_eq && !g_eq {
                q += 1;
            }
        }
    }
    (r, s, p, q)
}

fn two_decimals(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

proptest! {
    #[test]
    fn consistency_and_discriminancy_match_enumeration(
        g in prop::collection::vec(0.0f64..1.0, 2..40),
        noise in prop::collection::vec(-0.05f64..0.05, 40),
        eps in prop_oneof![Just(0.0), Just(0.005), Just(0.01)],
    ) {
        let g: Vec<f64> = g.into_iter().map(two_decimals).collect();
        let f: Vec<f64> = g.iter().zip(&noise).map(|(v, e)| two_decimals(v + e)).collect();
        let (r, s, p, q) = enumerate(&f, &g, eps);
        match consistency_index(&f, &g, eps) {
            Ok(c) => prop_assert_eq!(c, r as f64 / (r + s) as f64),
            Err(e) => {
                prop_assert_eq!(e, MetricsError::NoOrderedPairs);
                prop_assert_eq!(r + s, 0);
            }
        }
        let d = discriminancy_index(&f, &g, eps).unwrap();
        prop_assert_eq!((d.p, d.q), (p, q));
    }

    #[test]
    fn rounded_copy_discriminancy(g in prop::collection::vec(0.0f64..1.0, 2..60)) {
        let f: Vec<f64> = g.iter().copied().map(two_decimals).collect();
        let (_, _, p, q) = enumerate(&f, &g, 0.0);
        let d = discriminancy_index(&f, &g, 0.0).unwrap();
        prop_assert_eq!((d.p, d.q), (p, q));
        // rounding can only merge values, never separate them
        prop_assert_eq!(d.p, 0);
    }

    #[test]
    fn self_consistency_is_one(f in prop::collection::vec(0.0f64..1.0, 2..30)) {
        let distinct = f.iter().any(|&v| v != f[0]);
        prop_assume!(distinct);
        prop_assert_eq!(consistency_index(&f, &f, 0.0).unwrap(), 1.0);
    }
}
