use abt_core::objective::{batch_normalize, bt_loss, bt_loss_grad, correlation_stats, cross_correlation, LossConfig};
use abt_core::rng::{stream, Stream};
use abt_core::tensor::Tensor;
use abt_core::Error;
use abt_verify::{bruteforce_bt_loss, finite_diff_grad, max_rel_err};
use proptest::prelude::*;
use rand::Rng;

fn random(b: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = stream(seed, Stream::Init, &[b as u64, d as u64]);
    Tensor::from_vec(&[b, d], (0..b * d).map(|_| rng.random_range(-2.0..2.0)).collect())
}

fn loss_of(za: &Tensor, zb: &Tensor, cfg: &LossConfig) -> f64 {
    let c = cross_correlation(&batch_normalize(za, cfg.std_floor).unwrap(), &batch_normalize(zb, cfg.std_floor).unwrap()).unwrap();
    bt_loss(&c, cfg).unwrap().loss
}

#[test]
fn matches_bruteforce_on_random_instances() {
    let cfg = LossConfig::default();
    for k in 0..100u64 {
        let (b, d) = (2 + (k % 7) as usize, 1 + (k % 5) as usize);
        let (za, zb) = (random(b, d, 2 * k), random(b, d, 2 * k + 1));
        let got = bt_loss_grad(&za, &zb, &cfg).unwrap().terms.loss;
        let want = bruteforce_bt_loss(za.data(), zb.data(), b, d, cfg.alpha, cfg.lambda, cfg.std_floor);
        assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "instance {k}: {got} vs {want}");
    }
}

#[test]
fn hand_computed_cases() {
    let cfg = LossConfig::default();
    let eye = Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    assert_eq!(bt_loss(&eye, &cfg).unwrap().loss, 0.0);
    // Diagonal terms vanish; two off-diagonal ones contribute λ each.
    let ones = Tensor::full(&[2, 2], 1.0);
    let t = bt_loss(&ones, &cfg).unwrap();
    assert!((t.loss - 0.01).abs() < 1e-15);
    assert_eq!((t.invariance, t.redundancy), (0.0, 2.0));
    let zero = Tensor::zeros(&[4, 4]);
    assert_eq!(bt_loss(&zero, &cfg).unwrap().loss, 4.0);
}

#[test]
fn identical_views_have_unit_diagonal() {
    for (b, d) in [(2, 1), (2, 5), (3, 2), (16, 8), (64, 3)] {
        let z = random(b, d, 99);
        let out = bt_loss_grad(&z, &z, &LossConfig::default()).unwrap();
        for j in 0..d {
            assert!((out.c.data()[j * d + j] - 1.0).abs() < 1e-6, "B={b} d={d}");
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let cfg = LossConfig { lambda: 0.05, ..LossConfig::default() };
    for (b, d, seed) in [(4, 3, 1), (6, 5, 2), (3, 2, 3)] {
        let (za, zb) = (random(b, d, seed), random(b, d, seed + 50));
        let out = bt_loss_grad(&za, &zb, &cfg).unwrap();
        let na = finite_diff_grad(&mut |x| loss_of(&Tensor::from_vec(&[b, d], x.to_vec()), &zb, &cfg), za.data(), 1e-6);
        let nb = finite_diff_grad(&mut |x| loss_of(&za, &Tensor::from_vec(&[b, d], x.to_vec()), &cfg), zb.data(), 1e-6);
        assert!(max_rel_err(out.grad_a.data(), &na) < 1e-5, "grad_a {}", max_rel_err(out.grad_a.data(), &na));
        assert!(max_rel_err(out.grad_b.data(), &nb) < 1e-5, "grad_b {}", max_rel_err(out.grad_b.data(), &nb));
    }
}

#[test]
fn degenerate_inputs_are_errors() {
    let cfg = LossConfig::default();
    let one = random(1, 3, 0);
    assert!(matches!(bt_loss_grad(&one, &one, &cfg), Err(Error::DegenerateBatch)));
    assert!(bt_loss_grad(&random(4, 3, 0), &random(4, 2, 0), &cfg).is_err());
    assert!(bt_loss(&Tensor::zeros(&[2, 3]), &cfg).is_err());
    // A constant feature standardizes to zero instead of dividing by zero.
    let mut z = random(5, 2, 4);
    (0..5).for_each(|r| z.data_mut()[r * 2] = 3.0);
    let out = bt_loss_grad(&z, &z, &cfg).unwrap();
    assert!(out.terms.loss.is_finite() && out.grad_a.data().iter().all(|g| g.is_finite()));
    assert_eq!(out.c.data()[0], 0.0);
}

#[test]
fn correlation_summary() {
    let c = Tensor::from_vec(&[2, 2], vec![1.0, -0.5, 0.25, 0.5]);
    let s = correlation_stats(&c);
    assert_eq!((s.diag_mean, s.offdiag_mean_abs, s.offdiag_max_abs), (0.75, 0.375, 0.5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_nonnegative_and_matches_oracle(b in 2usize..10, d in 1usize..6, seed in 0u64..10_000) {
        let cfg = LossConfig::default();
        let (za, zb) = (random(b, d, seed), random(b, d, seed ^ 0xABCD));
        let got = bt_loss_grad(&za, &zb, &cfg).unwrap().terms.loss;
        prop_assert!(got >= 0.0);
        let want = bruteforce_bt_loss(za.data(), zb.data(), b, d, cfg.alpha, cfg.lambda, cfg.std_floor);
        prop_assert!((got - want).abs() <= 1e-12 * want.max(1.0));
    }

    #[test]
    fn swapping_views_transposes_c(b in 2usize..10, d in 1usize..6, seed in 0u64..10_000) {
        let cfg = LossConfig::default();
        let (za, zb) = (random(b, d, seed), random(b, d, seed + 1));
        let ab = bt_loss_grad(&za, &zb, &cfg).unwrap();
        let ba = bt_loss_grad(&zb, &za, &cfg).unwrap();
        for i in 0..d {
            for j in 0..d {
                prop_assert!((ab.c.data()[i * d + j] - ba.c.data()[j * d + i]).abs() < 1e-14);
            }
        }
        prop_assert!((ab.terms.loss - ba.terms.loss).abs() < 1e-12);
    }

    #[test]
    fn per_feature_affine_maps_leave_loss_unchanged(b in 3usize..10, d in 1usize..6, seed in 0u64..10_000, scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let cfg = LossConfig::default();
        let (za, zb) = (random(b, d, seed), random(b, d, seed + 7));
        let base = loss_of(&za, &zb, &cfg);
        let moved = za.map(|v| scale * v + shift);
        prop_assert!((loss_of(&moved, &zb, &cfg) - base).abs() < 1e-7 * base.max(1.0));
    }

    #[test]
    fn correlations_are_bounded(b in 2usize..12, d in 1usize..6, seed in 0u64..10_000) {
        let out = bt_loss_grad(&random(b, d, seed), &random(b, d, seed + 3), &LossConfig::default()).unwrap();
        prop_assert!(out.c.data().iter().all(|v| v.abs() <= 1.0 + 1e-9));
    }
}
