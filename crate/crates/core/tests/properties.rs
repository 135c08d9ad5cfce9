mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use emmixformer::attention::{attention, EncoderBlock, TransformerConfig};
use emmixformer::attlstm::{AttLstm, LstmState, PeepholeLstm};
use emmixformer::data::{read_csv, spread_profiles, synthesize, write_csv, ColumnMap};
use emmixformer::eval::{eer, frr_at_far, ScoreSet};
use emmixformer::fourier::{from_spectrum, to_spectrum};
use emmixformer::nn::Module;
use emmixformer::preprocess::{split_fast_slow, velocities, window, GazeRecording};
use emmixformer::tensor::{dft_complex_axis, idft_complex_axis};
use emmixformer::{no_grad, ComplexTensor, Tensor};

use common::{max_abs_diff, rows};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::from_vec(shape, data).unwrap()
}

/// A `[rows, cols]` matrix with entries in `range`.
fn matrix(rows: usize, cols: usize, range: std::ops::Range<f64>) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(range, rows * cols).prop_map(move |d| tensor(&[rows, cols], d))
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..10, 1usize..10)
}

fn scores() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    let q = (0u32..200).prop_map(|v| f64::from(v) / 200.0);
    (prop::collection::vec(q.clone(), 1..40), prop::collection::vec(q, 1..80))
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn softmax_rows_sum_to_one(x in dims().prop_flat_map(|(r, c)| matrix(r, c, -50.0..50.0))) {
        let s = x.softmax();
        for row in rows(&s) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_convex_combinations_of_values(
        (q, k, v) in (1usize..6, 1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(n, m, dk, dv)| {
            (matrix(n, dk, -3.0..3.0), matrix(m, dk, -3.0..3.0), matrix(m, dv, -3.0..3.0))
        })
    ) {
        let out = attention(&q, &k, &v).unwrap();
        let vr = rows(&v);
        for row in rows(&out) {
            for (j, &o) in row.iter().enumerate() {
                let lo = vr.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                let hi = vr.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(o >= lo - 1e-12 && o <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn joint_query_key_scaling_squares_the_temperature(
        (q, k, v) in (1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(n, m, d)| {
            (matrix(n, d, -2.0..2.0), matrix(m, d, -2.0..2.0), matrix(m, d, -2.0..2.0))
        }),
        alpha in 0.25f64..3.0,
    ) {
        let got = attention(&q.scale(alpha), &k.scale(alpha), &v).unwrap();
        let logits = q.matmul_nt(&k).unwrap().scale(alpha * alpha / (q.shape()[1] as f64).sqrt());
        let want = logits.softmax().matmul(&v).unwrap();
        prop_assert!(max_abs_diff(&got.to_vec(), &want.to_vec()) <= 1e-12);
    }

    #[test]
    fn encoder_block_is_permutation_equivariant(seed in any::<u64>(), t in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 8;
        let block = EncoderBlock::new(&mut rng, &TransformerConfig::new(d));
        let x: Vec<Vec<f64>> = (0..t).map(|i| (0..d).map(|j| ((seed as f64) * 0.1 + (i * d + j) as f64).sin()).collect()).collect();
        let perm: Vec<usize> = (0..t).map(|i| (i * 3 + seed as usize) % t).collect();
        prop_assume!({ let mut p = perm.clone(); p.sort(); p == (0..t).collect::<Vec<_>>() });
        let px: Vec<Vec<f64>> = perm.iter().map(|&i| x[i].clone()).collect();
        let out = no_grad(|| block.forward(&tensor(&[t, d], x.concat())).unwrap());
        let pout = no_grad(|| block.forward(&tensor(&[t, d], px.concat())).unwrap());
        let or = rows(&out);
        let permuted: Vec<f64> = perm.iter().flat_map(|&i| or[i].clone()).collect();
        prop_assert!(max_abs_diff(&pout.to_vec(), &permuted) <= 1e-12);
    }

    #[test]
    fn spectrum_round_trip_and_parseval(x in (1usize..48, 1usize..5).prop_flat_map(|(t, d)| matrix(t, d, -10.0..10.0))) {
        let sp = to_spectrum(&x).unwrap();
        prop_assert!(sp.is_principal());
        let back = from_spectrum(&sp).unwrap();
        prop_assert!(max_abs_diff(&back.to_vec(), &x.to_vec()) <= 1e-10);
        let ex: f64 = x.to_vec().iter().map(|v| v * v).sum();
        let ea: f64 = sp.amplitude.to_vec().iter().map(|a| a * a).sum();
        prop_assert!((ex - ea).abs() <= 1e-10 * ex.max(1.0));
    }

    #[test]
    fn inverse_of_real_spectrum_has_no_imaginary_leakage(x in (1usize..48, 1usize..4).prop_flat_map(|(t, d)| matrix(t, d, -10.0..10.0))) {
        let zero = Tensor::zeros(x.shape());
        let f = dft_complex_axis(&ComplexTensor::new(x.clone(), zero).unwrap(), 0).unwrap();
        let back = idft_complex_axis(&f, 0).unwrap();
        prop_assert!(back.im.to_vec().iter().all(|v| v.abs() < 1e-10));
        prop_assert!(max_abs_diff(&back.re.to_vec(), &x.to_vec()) <= 1e-10);
    }

    #[test]
    fn recurrent_hidden_state_stays_in_unit_ball(seed in any::<u64>(), scale in 0.1f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 8;
        let att = AttLstm::new(&mut rng, d, 4).unwrap();
        let pee = PeepholeLstm::new(&mut rng, d);
        let x = tensor(&[2, 5, d], (0..80).map(|i| scale * (i as f64 * 0.37 + seed as f64).sin()).collect());
        for h in [att.sequence(&x).unwrap(), pee.sequence(&x).unwrap()] {
            prop_assert!(h.to_vec().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn slow_channel_is_inside_open_interval(
        v in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 2..64),
        c in 1e-4f64..1.0,
    ) {
        let dy: Vec<f64> = v.iter().rev().cloned().collect();
        let ch = split_fast_slow(&v, &dy, 40.0, c).unwrap();
        prop_assert!(ch.slow.iter().flatten().all(|s| *s > -1.0 && *s < 1.0));
    }

    #[test]
    fn fast_channel_is_standardized(
        dx in prop::collection::vec((40.0f64..900.0, any::<bool>()), 3..200),
        dy in prop::collection::vec(-900.0f64..900.0, 3..200),
    ) {
        // every sample at or above v_min on x, so nothing is truncated
        let dx: Vec<f64> = dx.iter().map(|&(v, neg)| if neg { -v } else { v }).collect();
        let n = dx.len().min(dy.len());
        let ch = split_fast_slow(&dx[..n], &dy[..n], 40.0, 0.02).unwrap();
        for (f, degenerate) in ch.fast.iter().zip(ch.degenerate) {
            let m = f.iter().sum::<f64>() / n as f64;
            prop_assert!(m.abs() <= 1e-9);
            if !degenerate {
                let sd = (f.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt();
                prop_assert!((sd - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn non_overlapping_windows_tile_the_series(n in 1usize..300, len in 1usize..40) {
        let dx: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin() * 80.0).collect();
        let dy: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos() * 80.0).collect();
        let ch = split_fast_slow(&dx, &dy, 40.0, 0.02).unwrap();
        let ws = window(&ch, len, len, "S01", "1").unwrap();
        prop_assert_eq!(ws.len(), n / len);
        let mut joined = Vec::new();
        for w in &ws {
            joined.extend_from_slice(&w.fast[..len]);
        }
        prop_assert_eq!(&joined[..], &ch.fast[0][..ws.len() * len]);
    }

    #[test]
    fn eer_is_a_rate((g, i) in scores()) {
        let (e, _) = eer(&ScoreSet::new(g, i)).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
    }

    #[test]
    fn eer_is_symmetric_under_swap_and_negate((g, i) in scores()) {
        let (a, _) = eer(&ScoreSet::new(g.clone(), i.clone())).unwrap();
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        let (b, _) = eer(&ScoreSet::new(neg(&i), neg(&g))).unwrap();
        prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn frr_does_not_grow_as_the_far_target_loosens((g, i) in scores()) {
        let targets = [0.01, 0.05, 0.1, 0.2, 0.4, 0.8];
        let r = frr_at_far(&ScoreSet::new(g, i), &targets).unwrap();
        for pair in r.windows(2) {
            prop_assert!(pair[1].frr <= pair[0].frr);
        }
    }

    #[test]
    fn metrics_ignore_strictly_increasing_maps((g, i) in scores(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let f = |v: &[f64]| v.iter().map(|x| a * x + b + x.powi(3)).collect::<Vec<_>>();
        let s = ScoreSet::new(g.clone(), i.clone());
        let w = ScoreSet::new(f(&g), f(&i));
        prop_assert_eq!(eer(&s).unwrap().0, eer(&w).unwrap().0);
        let targets = [0.05, 0.2];
        let fa: Vec<f64> = frr_at_far(&s, &targets).unwrap().iter().map(|r| r.frr).collect();
        let fb: Vec<f64> = frr_at_far(&w, &targets).unwrap().iter().map(|r| r.frr).collect();
        prop_assert_eq!(fa, fb);
    }

    #[test]
    fn csv_round_trip_preserves_recordings(xs in prop::collection::vec((-30.0f64..30.0, -30.0f64..30.0), 1..50), rate in 10.0f64..1000.0) {
        let rec = GazeRecording {
            subject_id: "S07".into(),
            session_id: "2".into(),
            sample_rate_hz: rate,
            t: (0..xs.len()).map(|i| i as f64 / rate).collect(),
            x: xs.iter().map(|p| p.0).collect(),
            y: xs.iter().map(|p| p.1).collect(),
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, std::slice::from_ref(&rec)).unwrap();
        let back = read_csv(&buf[..], &ColumnMap::default()).unwrap();
        prop_assert_eq!(back.len(), 1);
        let r = &back[0];
        prop_assert_eq!(&r.subject_id, &rec.subject_id);
        prop_assert_eq!(&r.session_id, &rec.session_id);
        prop_assert!(max_abs_diff(&r.x, &rec.x) <= 1e-9 && max_abs_diff(&r.y, &rec.y) <= 1e-9 && max_abs_diff(&r.t, &rec.t) <= 1e-9);
    }

    #[test]
    fn mean_pool_ignores_token_order(x in (2usize..8, 1usize..6).prop_flat_map(|(t, d)| matrix(t, d, -5.0..5.0)), shift in 1usize..8) {
        let t = x.shape()[0];
        let r = rows(&x);
        let rolled: Vec<f64> = (0..t).flat_map(|i| r[(i + shift) % t].clone()).collect();
        let a = x.mean_axis(0).unwrap().to_vec();
        let b = tensor(x.shape(), rolled).mean_axis(0).unwrap().to_vec();
        prop_assert!(max_abs_diff(&a, &b) <= 1e-12);
    }

    #[test]
    fn convolution_commutes_with_interior_shifts(
        w in prop::collection::vec(-1.0f64..1.0, 2 * 3 * 5),
        x in prop::collection::vec(-1.0f64..1.0, 3 * 40),
        shift in 1usize..6,
    ) {
        let (cin, width, k) = (3, 40, 5);
        let weight = tensor(&[2, cin, k], w);
        let shifted: Vec<f64> = (0..cin)
            .flat_map(|c| (0..width).map(|t| if t >= shift { x[c * width + t - shift] } else { 0.0 }).collect::<Vec<_>>())
            .collect();
        let a = tensor(&[1, cin, width], x).conv1d(&weight, None).unwrap().to_vec();
        let b = tensor(&[1, cin, width], shifted).conv1d(&weight, None).unwrap().to_vec();
        let pad = (k - 1) / 2;
        for co in 0..2 {
            for t in shift + pad..width - pad {
                prop_assert!((b[co * width + t] - a[co * width + t - shift]).abs() <= 1e-12);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..config() })]

    #[test]
    fn synthetic_velocities_are_finite_and_bounded(seed in any::<u64>(), difficulty in 0.0f64..=1.0) {
        let profiles = spread_profiles(3, difficulty, seed).unwrap();
        let recs = synthesize(&profiles, 1, 8.0, 100.0, seed).unwrap();
        for (rec, p) in recs.iter().zip(&profiles) {
            prop_assert!(rec.x.iter().chain(&rec.y).chain(&rec.t).all(|v| v.is_finite()));
            let (dx, dy) = velocities(rec).unwrap();
            let top = dx.iter().zip(&dy).map(|(a, b)| a.hypot(*b)).fold(0.0, f64::max);
            prop_assert!(top <= 1.2 * p.peak_velocity, "{} > 1.2 * {}", top, p.peak_velocity);
        }
    }
}

#[test]
fn zero_state_and_input_is_a_fixed_point_without_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cell = PeepholeLstm::new(&mut rng, 6);
    for (name, p) in cell.parameters() {
        if name.ends_with("bias") {
            p.set_data(vec![0.0; p.numel()]).unwrap();
        }
    }
    let zero = LstmState::zeros(1, 6);
    let out = cell.step(&Tensor::zeros(&[1, 6]), &zero).unwrap();
    assert!(out.c.to_vec().iter().all(|v| *v == 0.0));
    assert!(out.h.to_vec().iter().all(|v| *v == 0.0));
}
