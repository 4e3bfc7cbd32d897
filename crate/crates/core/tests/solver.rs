mod common;

use common::{region_psnr, render_canvas, Texture};
use proptest::prelude::*;
use shearlf::geometry::LineMask;
use shearlf::solver::*;
use shearlf::{CoefficientStack, Plane, ShearletSystem};

fn lines_mask(h: usize, w: usize) -> LineMask {
    LineMask::new(h, w, vec![16, 32, 48]).unwrap()
}

#[test]
fn constant_lines_give_constant_canvas() {
    let sys = ShearletSystem::new(128, 128, 4, 127).unwrap();
    let mask = lines_mask(128, 128);
    let measured = mask.apply(&Plane::filled(128, 128, 0.6)).unwrap();
    let init = lowpass_init(&sys, &measured, 16).unwrap();
    for r in 17..48 {
        for c in 0..128 {
            assert!((init.get(r, c) - 0.6).abs() < 0.15, "lowpass init at ({r},{c}) = {}", init.get(r, c));
        }
    }
    let cfg = SolverConfig { iterations: 40, ..SolverConfig::default() };
    let out = st_reconstruct(&sys, &measured, &mask, &cfg).unwrap();
    for r in 16..=48 {
        for c in 0..128 {
            assert!((out.get(r, c) - 0.6).abs() < 1e-3, "({r},{c}) = {}", out.get(r, c));
        }
    }
}

#[test]
fn measured_rows_are_reproduced_exactly() {
    let sys = ShearletSystem::new(128, 128, 4, 127).unwrap();
    let gt = render_canvas(128, 128, 0.5, 16, &Texture::new(4));
    let mask = lines_mask(128, 128);
    let measured = mask.apply(&gt).unwrap();
    let cfg = SolverConfig { iterations: 10, ..SolverConfig::default() };
    let out = st_reconstruct(&sys, &measured, &mask, &cfg).unwrap();
    for &r in mask.active_rows() {
        assert_eq!(out.row(r), gt.row(r));
    }
}

#[test]
fn saturated_mask_returns_the_measurements() {
    let sys = ShearletSystem::new(64, 64, 4, 127).unwrap();
    let x = common::random_plane(64, 64, 3);
    let mask = LineMask::all_rows(64, 64);
    let cfg = SolverConfig { iterations: 3, ..SolverConfig::default() };
    let out = st_reconstruct(&sys, &x, &mask, &cfg).unwrap();
    assert_eq!(out, x);
}

#[test]
fn residual_trace_shrinks_and_dore_helps() {
    let sys = ShearletSystem::new(128, 256, 4, 127).unwrap();
    let gt = render_canvas(128, 256, 0.5, 16, &Texture::new(11));
    let mask = lines_mask(128, 256);
    let measured = mask.apply(&gt).unwrap();
    let held: Vec<usize> = (17..48).filter(|r| *r != 32).collect();
    let mut finals = Vec::new();
    for dore in [false, true] {
        let cfg = SolverConfig { iterations: 60, dore, ..SolverConfig::default() };
        let mut trace = Vec::new();
        let out = st_reconstruct_traced(&sys, &measured, &mask, &cfg, |r, _| trace.push(*r)).unwrap();
        assert_eq!(trace.len(), 60);
        assert!(trace.windows(2).all(|w| w[1].lambda <= w[0].lambda));
        assert!(trace[59].masked_residual < 0.25 * trace[0].masked_residual);
        let psnr = region_psnr(&out, &gt, &held, 26..230);
        assert!(psnr > 30.0, "dore={dore}: {psnr:.2} dB");
        finals.push(trace[59].masked_residual);
    }
    assert!(finals[1] <= finals[0]);
}

#[test]
fn residual_log_is_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("res.csv");
    let recs = [
        IterationRecord { iteration: 0, lambda: 1.0, masked_residual: 0.5 },
        IterationRecord { iteration: 1, lambda: 0.5, masked_residual: 0.25 },
    ];
    write_residual_log(&path, &recs).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "iteration,lambda,masked_residual");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("1,"));
}

#[test]
fn config_validation() {
    let ok = SolverConfig::default();
    assert!(ok.validate().is_ok());
    assert!(SolverConfig { iterations: 0, ..ok.clone() }.validate().is_err());
    assert!(SolverConfig { alpha: 0.0, ..ok.clone() }.validate().is_err());
    assert!(SolverConfig { lambda_min: -1.0, ..ok.clone() }.validate().is_err());
    assert_eq!("exp".parse::<Schedule>().unwrap(), Schedule::Exponential);
    assert!("cubic".parse::<Schedule>().is_err());
}

#[test]
fn schedules_start_at_lambda_max() {
    for schedule in [Schedule::Linear, Schedule::Exponential] {
        let cfg = SolverConfig { iterations: 50, schedule, lambda_min: 0.01, ..SolverConfig::default() };
        assert_eq!(threshold_schedule(0, &cfg, 2.0).unwrap(), 2.0);
        let last = threshold_schedule(49, &cfg, 2.0).unwrap();
        assert!(last >= 0.01 - 1e-15 && last < 0.05);
        assert!(threshold_schedule(50, &cfg, 2.0).is_err());
    }
    let cfg = SolverConfig { iterations: 10, schedule: Schedule::Exponential, alpha: 5.0, ..SolverConfig::default() };
    assert!((threshold_schedule(4, &cfg, 1.0).unwrap() - (-2.0f64).exp()).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn threshold_keeps_large_and_lowpass(vals in proptest::collection::vec(-2.0f64..2.0, 3 * 16), lambda in 0.0f64..1.5) {
        let c = CoefficientStack::from_vec(4, 4, 3, vals.clone()).unwrap();
        let t = hard_threshold(&c, lambda).unwrap();
        for (i, (a, b)) in vals.iter().zip(t.data()).enumerate() {
            if i < 16 || a.abs() > lambda {
                prop_assert_eq!(a, b);
            } else {
                prop_assert_eq!(*b, 0.0);
            }
        }
        prop_assert_eq!(hard_threshold(&t, lambda).unwrap(), t);
    }

    #[test]
    fn dore_never_increases_residual(seed in 0u64..500) {
        let z = common::random_plane(8, 8, seed);
        let p = common::random_plane(8, 8, seed + 1);
        let q = common::random_plane(8, 8, seed + 2);
        let d = common::random_plane(8, 8, seed + 3);
        let mask = LineMask::new(8, 8, vec![1, 4, 6]).unwrap();
        let measured = mask.apply(&d).unwrap();
        let v = dore_step(&z, &p, &q, &mask, &measured).unwrap();
        prop_assert!(masked_residual(&mask, &measured, &v) <= masked_residual(&mask, &measured, &z) + 1e-12);
    }

    #[test]
    fn linear_schedule_is_monotone(k in 2usize..200, lmax in 0.1f64..10.0) {
        let cfg = SolverConfig { iterations: k, ..SolverConfig::default() };
        let vals: Vec<f64> = (0..k).map(|i| threshold_schedule(i, &cfg, lmax).unwrap()).collect();
        prop_assert!(vals.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(vals[k - 1].abs() < 1e-12);
    }
}
