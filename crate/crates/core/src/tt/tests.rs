use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::C64;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_hermitian(dim: usize, rng: &mut impl Rng) -> DMatrix<C64> {
    let g = DMatrix::from_fn(dim, dim, |_, _| c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    (&g + g.adjoint()) * c(0.5, 0.0)
}

fn dense_err(a: &TtTensor, b: &DenseOperator) -> f64 {
    (a.to_dense().unwrap().matrix() - b.matrix()).norm()
}

fn maximally_mixed_tt(n: usize) -> TtTensor {
    let half = DMatrix::identity(2, 2) * c(0.5, 0.0);
    TtTensor::product(&vec![half; n]).unwrap()
}

#[test]
fn from_dense_product_operator_is_rank_one() {
    let dense = DenseOperator::maximally_mixed(2, 2).unwrap();
    let tt = TtTensor::from_dense(&dense, &Truncation::Ranks(vec![1])).unwrap();
    assert_eq!(tt.ranks(), vec![1, 1, 1]);
    let e = dense_err(&tt, &dense);
    assert!(e <= 1e-12, "{e}");
}

#[test]
fn from_dense_in_class_input_is_exact() {
    let a = TtTensor::random(2, &[4, 4], &mut rng(1));
    let dense = a.to_dense().unwrap();
    let tt = TtTensor::from_dense(&dense, &Truncation::Ranks(vec![4, 4])).unwrap();
    assert!(dense_err(&tt, &dense) <= 1e-10 * dense.frobenius_norm());
}

#[test]
fn from_dense_single_cut_matches_optimal_truncation() {
    let mut r = rng(2);
    let h = DenseOperator::new(2, 2, random_hermitian(4, &mut r)).unwrap();
    let tt = TtTensor::from_dense(&h, &Truncation::Ranks(vec![2])).unwrap();
    let err2 = dense_err(&tt, &h).powi(2);
    // oracle: Eckart-Young on the single unfolding
    let s = h.unfolding(1).singular_values();
    let mut s: Vec<f64> = s.iter().copied().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let best2: f64 = s[2..].iter().map(|x| x * x).sum();
    assert!(err2 <= best2 + 1e-10);
    assert!((err2 - best2).abs() <= 1e-10);
}

#[test]
fn rejects_bad_rank_vectors() {
    let dense = DenseOperator::maximally_mixed(3, 2).unwrap();
    assert!(matches!(
        TtTensor::from_dense(&dense, &Truncation::Ranks(vec![17, 1])),
        Err(TomoError::InvalidRanks(_))
    ));
    assert!(matches!(
        TtTensor::from_dense(&dense, &Truncation::Ranks(vec![1])),
        Err(TomoError::InvalidRanks(_))
    ));
    assert!(matches!(
        TtTensor::from_dense(&dense, &Truncation::Ranks(vec![0, 1])),
        Err(TomoError::InvalidRanks(_))
    ));
}

#[test]
fn dense_limit_is_enforced() {
    let big = TtTensor::zero(11, 2);
    assert!(matches!(big.to_dense(), Err(TomoError::TooLarge { sites: 11, limit: 10 })));
    assert!(matches!(
        DenseOperator::new(2, 2, DMatrix::zeros(3, 3)),
        Err(TomoError::ShapeMismatch(_))
    ));
}

#[test]
fn to_dense_of_maximally_mixed() {
    for n in 1..=4 {
        let d = maximally_mixed_tt(n).to_dense().unwrap();
        let dim = 1 << n;
        let expect = DMatrix::<C64>::identity(dim, dim) * c(1.0 / dim as f64, 0.0);
        assert!((d.matrix() - expect).norm() <= 1e-15);
    }
}

#[test]
fn dense_round_trip_lossless() {
    let mut r = rng(3);
    let rho = DenseOperator::new(3, 2, random_hermitian(8, &mut r)).unwrap();
    let tt = TtTensor::from_dense(&rho, &Truncation::Tolerance(1e-12)).unwrap();
    assert!(dense_err(&tt, &rho) <= 1e-10);
}

#[test]
fn single_site_index_fusion() {
    let (a, b, cc, e) = (c(1.0, 0.0), c(2.0, 1.0), c(3.0, -1.0), c(4.0, 0.5));
    let core = Core::from_vec(1, 4, 1, vec![a, b, cc, e]).unwrap();
    let tt = TtTensor::new(2, vec![core]).unwrap();
    let d = tt.to_dense().unwrap();
    // s = i + 2 j: s=0 -> (0,0), s=1 -> (1,0), s=2 -> (0,1), s=3 -> (1,1)
    assert_eq!(d.matrix()[(0, 0)], a);
    assert_eq!(d.matrix()[(1, 0)], b);
    assert_eq!(d.matrix()[(0, 1)], cc);
    assert_eq!(d.matrix()[(1, 1)], e);
}

#[test]
fn inner_products() {
    for n in 1..=5 {
        let m = maximally_mixed_tt(n);
        let v = m.inner(&m).unwrap();
        assert!((v - c(0.5f64.powi(n as i32), 0.0)).norm() <= 1e-15);
    }
    let mut r = rng(4);
    let a = TtTensor::random(2, &[3, 2], &mut r);
    let b = TtTensor::random(2, &[2, 4], &mut r);
    let da = a.to_dense().unwrap();
    let db = b.to_dense().unwrap();
    let oracle: C64 = da.matrix().iter().zip(db.matrix().iter()).map(|(x, y)| x.conj() * y).sum();
    let got = a.inner(&b).unwrap();
    assert!((got - oracle).norm() <= 1e-10 * oracle.norm());
    for seed in 0..100 {
        let a = TtTensor::random(2, &[2, 3], &mut rng(100 + seed));
        let v = a.inner(&a).unwrap();
        assert!(v.re >= 0.0 && v.im.abs() <= 1e-12 * v.re);
    }
    let wrong = TtTensor::zero(2, 2);
    assert!(matches!(a.inner(&wrong), Err(TomoError::ShapeMismatch(_))));
}

#[test]
fn norms() {
    assert!((maximally_mixed_tt(4).norm() - 0.25).abs() <= 1e-15);
    let zero_proj = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
    let pure = TtTensor::product(&vec![zero_proj; 5]).unwrap();
    assert!((pure.norm() - 1.0).abs() <= 1e-15);
    let a = TtTensor::random(2, &[4, 3], &mut rng(5));
    let dn = a.to_dense().unwrap().frobenius_norm();
    assert!((a.norm() - dn).abs() <= 1e-10 * dn);
}

#[test]
fn traces() {
    for n in 1..=6 {
        assert!((maximally_mixed_tt(n).trace() - c(1.0, 0.0)).norm() <= 1e-14);
    }
    let a = TtTensor::random(2, &[3, 3], &mut rng(6));
    let dt = a.to_dense().unwrap().trace();
    assert!((a.trace() - dt).norm() <= 1e-12 * dt.norm().max(1.0));
    let s = c(0.3, -2.0);
    assert!((a.scale(s).trace() - a.trace() * s).norm() <= 1e-12 * a.trace().norm().max(1.0));
}

#[test]
fn add_and_scale() {
    let mut r = rng(7);
    let a = TtTensor::random(2, &[2, 3], &mut r);
    let b = TtTensor::random(2, &[3, 2], &mut r);
    let zero = a.add(&a.scale_real(-1.0)).unwrap().round(&Truncation::Tolerance(1e-12)).unwrap();
    assert!(zero.norm() <= 1e-12);
    let ab = a.add(&b).unwrap();
    assert_eq!(ab.bond_ranks(), vec![5, 5]);
    assert!((ab.trace() - a.trace() - b.trace()).norm() <= 1e-12 * ab.trace().norm().max(1.0));
    let dense_sum = a.to_dense().unwrap().matrix() + b.to_dense().unwrap().matrix();
    assert!((ab.to_dense().unwrap().matrix() - &dense_sum).norm() <= 1e-10 * dense_sum.norm());
    let many = TtTensor::sum(&[a.clone(), b.clone(), a.clone()]).unwrap();
    let dense3 = &dense_sum + a.to_dense().unwrap().matrix();
    assert!((many.to_dense().unwrap().matrix() - &dense3).norm() <= 1e-10 * dense3.norm());
    // single site
    let x = TtTensor::random(2, &[], &mut r);
    let y = TtTensor::random(2, &[], &mut r);
    let xy = x.add(&y).unwrap();
    assert_eq!(xy.ranks(), vec![1, 1]);
}

#[test]
fn rounding() {
    let mut r = rng(8);
    let a = TtTensor::random(2, &[3, 4, 2], &mut r);
    let ar = a.round(&Truncation::Ranks(vec![3, 4, 2])).unwrap();
    assert!(a.sub(&ar).unwrap().norm() <= 1e-12 * a.norm());

    let doubled = a.add(&a).unwrap().round(&Truncation::Ranks(a.bond_ranks())).unwrap();
    assert!(doubled.sub(&a.scale_real(2.0)).unwrap().norm() <= 1e-10 * a.norm());

    // rounding in TT form agrees with dense TT-SVD
    let b = TtTensor::random(2, &[4, 4], &mut r);
    let target = Truncation::Ranks(vec![2, 2]);
    let rounded = b.round(&target).unwrap();
    let bd = b.to_dense().unwrap();
    let via_dense = TtTensor::from_dense(&bd, &target).unwrap();
    let e1 = dense_err(&rounded, &bd);
    let e2 = dense_err(&via_dense, &bd);
    assert!((e1 - e2).abs() <= 1e-8);
    assert!(rounded.bond_ranks().iter().all(|&x| x <= 2));
}

#[test]
fn rounding_tolerance_contract() {
    for seed in 0..20 {
        let mut r = rng(200 + seed);
        let a = TtTensor::random(2, &[3, 4, 3], &mut r);
        let b = TtTensor::random(2, &[2, 2, 2], &mut r).scale_real(0.01);
        let s = a.add(&b).unwrap();
        for tol in [1e-1, 1e-2, 1e-3] {
            let rounded = s.round(&Truncation::Tolerance(tol)).unwrap();
            assert!(s.sub(&rounded).unwrap().norm() <= tol * s.norm() * (1.0 + 1e-10));
        }
    }
}

#[test]
fn zero_tensor_rounds_to_rank_one_zero() {
    let a = TtTensor::random(2, &[2, 2], &mut rng(9));
    let z = a.sub(&a).unwrap();
    let out = z.round(&Truncation::Ranks(vec![2, 2])).unwrap();
    assert_eq!(out.ranks(), vec![1, 1, 1, 1]);
    assert_eq!(out.norm(), 0.0);
}

#[test]
fn adjoint() {
    let a = TtTensor::random(2, &[3], &mut rng(10));
    assert_eq!(a.adjoint().adjoint(), a);
    let lhs = a.adjoint().to_dense().unwrap();
    let rhs = a.to_dense().unwrap().matrix().adjoint();
    assert!((lhs.matrix() - rhs).norm() <= 1e-12);
    assert!(!a.is_hermitian(1e-6));
    let h = a.add(&a.adjoint()).unwrap();
    assert!(h.is_hermitian(1e-12));
}

#[test]
fn smallest_singular_value() {
    let m = maximally_mixed_tt(2);
    let sv = m.smallest_tt_singular_value(&[1]).unwrap();
    // single nonzero singular value equals ||I/4||_F = 1/2
    assert!((sv - 0.5).abs() <= 1e-14, "{sv}");
    // true ranks (1, 1) below requested (2, 3)
    let p = maximally_mixed_tt(3);
    assert!(p.smallest_tt_singular_value(&[2, 3]).unwrap() <= 1e-12);

    let a = TtTensor::random(2, &[3, 2], &mut rng(11));
    let svals = a.unfolding_singular_values().unwrap();
    let dense = a.to_dense().unwrap();
    for (l, got) in svals.iter().enumerate() {
        let mut s: Vec<f64> = dense.unfolding(l + 1).singular_values().iter().copied().collect();
        s.sort_by(|x, y| y.partial_cmp(x).unwrap());
        for (k, g) in got.iter().enumerate() {
            assert!((g - s[k]).abs() <= 1e-10 * s[0]);
        }
    }
    let sig = a.smallest_tt_singular_value(&[3, 2]).unwrap();
    assert!((sig - svals[0][2].min(svals[1][1])).abs() <= 1e-14);
}

#[test]
fn quasi_optimality_two_cuts() {
    for seed in 0..20 {
        let mut r = rng(300 + seed);
        let h = DenseOperator::new(3, 2, random_hermitian(8, &mut r)).unwrap();
        let tt = TtTensor::from_dense(&h, &Truncation::Ranks(vec![2, 3])).unwrap();
        let err2 = dense_err(&tt, &h).powi(2);
        let mut lower: f64 = 0.0;
        for (l, rank) in [(1usize, 2usize), (2, 3)] {
            let mut s: Vec<f64> = h.unfolding(l).singular_values().iter().copied().collect();
            s.sort_by(|x, y| y.partial_cmp(x).unwrap());
            lower = lower.max(s[rank..].iter().map(|x| x * x).sum());
        }
        assert!(err2 <= 2.0 * lower + 1e-12, "seed {seed}: {err2} vs {lower}");
    }
}

#[test]
fn elementwise_matches_dense() {
    let mut r = rng(12);
    for trial in 0..100 {
        let n = 1 + trial % 4;
        let ranks: Vec<usize> = (0..n - 1).map(|_| r.gen_range(1..=3)).collect();
        let a = TtTensor::random(2, &ranks, &mut r);
        let d = a.to_dense().unwrap();
        let rows: Vec<usize> = (0..n).map(|_| r.gen_range(0..2)).collect();
        let cols: Vec<usize> = (0..n).map(|_| r.gen_range(0..2)).collect();
        let ri = rows.iter().fold(0, |acc, &x| acc * 2 + x);
        let ci = cols.iter().fold(0, |acc, &x| acc * 2 + x);
        assert!((a.element(&rows, &cols) - d.matrix()[(ri, ci)]).norm() <= 1e-12);
    }
}

#[test]
fn qutrit_sites_supported() {
    let a = TtTensor::random(3, &[4], &mut rng(13));
    let d = a.to_dense().unwrap();
    assert_eq!(d.dim(), 9);
    let back = TtTensor::from_dense(&d, &Truncation::Ranks(vec![4])).unwrap();
    assert!(dense_err(&back, &d) <= 1e-10 * d.frobenius_norm());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn json_round_trip_is_lossless(seed in any::<u64>(), n in 1usize..4) {
        let ranks: Vec<usize> = (0..n - 1).map(|l| 1 + (seed as usize >> l) % 3).collect();
        let a = TtTensor::random(2, &ranks, &mut rng(seed));
        let text = serde_json::to_string(&a).unwrap();
        let back: TtTensor = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(back, a);
    }

    #[test]
    fn linearity_of_trace_inner_and_dense(seed in any::<u64>(), re in -2.0f64..2.0, im in -2.0f64..2.0) {
        let mut r = rng(seed);
        let a = TtTensor::random(2, &[2, 2], &mut r);
        let b = TtTensor::random(2, &[1, 3], &mut r);
        let z = TtTensor::random(2, &[2, 1], &mut r);
        let s = C64::new(re, im);
        let comb = a.scale(s).add(&b).unwrap();
        let tr = comb.trace() - (a.trace() * s + b.trace());
        prop_assert!(tr.norm() <= 1e-12 * 10.0);
        let ip = z.inner(&comb).unwrap() - (z.inner(&a).unwrap() * s + z.inner(&b).unwrap());
        prop_assert!(ip.norm() <= 1e-12 * 100.0);
        let dd = comb.to_dense().unwrap().matrix()
            - (a.to_dense().unwrap().matrix() * s + b.to_dense().unwrap().matrix());
        prop_assert!(dd.norm() <= 1e-12 * 100.0);
    }
}
