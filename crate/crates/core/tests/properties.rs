use oodgate::datagen::{split, Dataset, Role};
use oodgate::numkit::cholesky;
use oodgate::ood::{auroc, fit, OodParams};
use oodgate::Matrix;
use proptest::prelude::*;

fn pairwise_auroc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut credit = 0.0;
    for p in pos {
        for n in neg {
            if p > n {
                credit += 1.0;
            } else if p == n {
                credit += 0.5;
            }
        }
    }
    credit / (pos.len() * neg.len()) as f64
}

fn grid() -> impl Strategy<Value = f64> + Clone {
    (-5i32..=5).prop_map(|v| v as f64 * 0.25)
}

/// SPD matrix `B Bᵀ + δI` from a generated square `B`.
fn spd(e: usize) -> impl Strategy<Value = Matrix> {
    proptest::collection::vec(-2.0f64..2.0, e * e).prop_map(move |b| {
        let b = Matrix::new(e, e, b).unwrap();
        let mut s = b.matmul(&b.transpose()).unwrap();
        for i in 0..e {
            s.set(i, i, s.get(i, i) + 0.3);
        }
        s
    })
}

fn explicit_quadratic(sigma: &Matrix, d: &[f64]) -> f64 {
    // Gauss-Jordan on [Σ | d] gives Σ⁻¹d without touching the Cholesky path
    let n = d.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut r = sigma.row(i).to_vec();
            r.push(d[i]);
            r
        })
        .collect();
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
        m.swap(c, p);
        let piv = m[c][c];
        for v in &mut m[c] {
            *v /= piv;
        }
        for r in 0..n {
            if r != c {
                let f = m[r][c];
                let row = m[c].clone();
                for (v, q) in m[r].iter_mut().zip(&row) {
                    *v -= f * q;
                }
            }
        }
    }
    (0..n).map(|i| d[i] * m[i][n]).sum()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, ..ProptestConfig::default() })]

    #[test]
    fn auroc_equals_pairwise_count(
        pos in proptest::collection::vec(grid(), 1..8),
        neg in proptest::collection::vec(grid(), 1..8),
    ) {
        prop_assert_eq!(auroc(&pos, &neg).unwrap(), pairwise_auroc(&pos, &neg));
    }

    #[test]
    fn auroc_swap_is_complement(
        pos in proptest::collection::vec(grid(), 1..10),
        neg in proptest::collection::vec(grid(), 1..10),
    ) {
        let a = auroc(&pos, &neg).unwrap();
        let b = auroc(&neg, &pos).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auroc_ignores_monotone_rescaling(
        pos in proptest::collection::vec(-10.0f64..10.0, 1..20),
        neg in proptest::collection::vec(-10.0f64..10.0, 1..20),
    ) {
        let f = |v: &Vec<f64>| v.iter().map(|x| 3.0 * x.powi(3) + 1.0).collect::<Vec<_>>();
        prop_assert_eq!(auroc(&pos, &neg).unwrap(), auroc(&f(&pos), &f(&neg)).unwrap());
    }

    #[test]
    fn cholesky_reconstructs(s in (1usize..7).prop_flat_map(spd)) {
        let l = cholesky(&s).unwrap();
        let back = l.matmul(&l.transpose()).unwrap();
        let scale = s.max_abs();
        for (a, b) in back.as_slice().iter().zip(s.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn maha_matches_explicit_solve(
        (s, mu, x) in (1usize..9).prop_flat_map(|e| (
            spd(e),
            proptest::collection::vec(-3.0f64..3.0, e),
            proptest::collection::vec(-3.0f64..3.0, e),
        )),
    ) {
        let params = OodParams::from_moments(vec![mu.clone()], vec![s.clone()], 0.0).unwrap();
        let d: Vec<f64> = x.iter().zip(&mu).map(|(a, b)| a - b).collect();
        let want = explicit_quadratic(&s, &d);
        let got = params.maha_score(&x).unwrap();
        prop_assert!((got - want).abs() <= 1e-8 * want.abs().max(1e-12), "{got} vs {want}");
    }

    #[test]
    fn maha_invariant_under_affine_maps(
        seed in 0u64..1_000,
        shift in proptest::collection::vec(-5.0f64..5.0, 3),
    ) {
        // fit on data, then on A·data + b: distances of mapped queries agree
        let mut rng = oodgate::RngStream::new(seed, 0);
        let n = 40;
        let data = Matrix::new(n, 3, rng.gaussian_vec(n * 3)).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let a = Matrix::from_rows(&[[2.0, 0.5, 0.0], [0.0, 1.0, -1.0], [0.3, 0.0, 1.5]]).unwrap();
        let map = |m: &Matrix| {
            let mut y = m.matmul(&a).unwrap();
            for r in 0..y.rows() {
                for (v, b) in y.row_mut(r).iter_mut().zip(&shift) {
                    *v += b;
                }
            }
            y
        };
        let p1 = fit(&data, &labels, 2, 0.0).unwrap();
        let p2 = fit(&map(&data), &labels, 2, 0.0).unwrap();
        let q = Matrix::new(5, 3, rng.gaussian_vec(15)).unwrap();
        let s1 = p1.scores(&q).unwrap();
        let s2 = p2.scores(&map(&q)).unwrap();
        for (a, b) in s1.iter().zip(&s2) {
            prop_assert!((a - b).abs() <= 1e-7 * a.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn fit_ignores_sample_order(seed in 0u64..1_000) {
        let mut rng = oodgate::RngStream::new(seed, 1);
        let n = 30;
        let data = Matrix::new(n, 4, rng.gaussian_vec(n * 4)).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut perm);
        let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let a = fit(&data, &labels, 3, 0.1).unwrap();
        let b = fit(&data.select_rows(&perm), &pl, 3, 0.1).unwrap();
        let q = Matrix::new(4, 4, rng.gaussian_vec(16)).unwrap();
        for (x, y) in a.scores(&q).unwrap().iter().zip(b.scores(&q).unwrap()) {
            prop_assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }

    #[test]
    fn split_is_a_stratified_partition(
        counts in proptest::collection::vec(2usize..30, 1..6),
        frac in 0.1f64..0.9,
        seed in 0u64..100,
    ) {
        let labels: Vec<usize> = counts.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat(c).take(n)).collect();
        let n = labels.len();
        let x = Matrix::new(n, 1, (0..n).map(|i| i as f64).collect()).unwrap();
        let ds = Dataset::new(x, labels, counts.len(), Role::IdTrain).unwrap();
        let (tr, te) = split(&ds, frac, seed).unwrap();
        prop_assert_eq!(tr.len() + te.len(), n);
        let mut seen: Vec<f64> = tr.inputs.as_slice().iter().chain(te.inputs.as_slice()).copied().collect();
        seen.sort_by(f64::total_cmp);
        prop_assert_eq!(seen, (0..n).map(|i| i as f64).collect::<Vec<_>>());
        for (c, &k) in counts.iter().enumerate() {
            prop_assert!(tr.class_counts()[c] >= 1 && te.class_counts()[c] >= 1, "class {c} of {k}");
        }
        let (tr2, _) = split(&ds, frac, seed).unwrap();
        prop_assert_eq!(tr2.inputs, tr.inputs);
    }
}
