use nalgebra::DMatrix;

use sqdm_gp::control::*;
use sqdm_gp::grid::{mse_rows, GridSpec, Polarity};
use sqdm_gp::plant::*;

fn grid(nx: usize, ny: usize) -> GridSpec {
    GridSpec::new(nx, ny, 0.1, 0.1).unwrap()
}

fn flat(nx: usize, ny: usize) -> Phantom {
    let mut p = PhantomParams::for_kind(PhantomKind::R1Like);
    p.bumps_min = 0;
    p.bumps_max = 0;
    make_phantom_with(grid(nx, ny), &p, 0)
}

/// `v_minus` rising by `step` volts per line.
fn ramp(nx: usize, ny: usize, step: f64) -> Phantom {
    let mut ph = flat(nx, ny);
    ph.v_minus = DMatrix::from_fn(ny, nx, |j, _| -1.0 + step * j as f64);
    ph
}

#[test]
fn constant_surface_gives_constant_predictions() {
    let ph = flat(12, 8);
    let level = ph.v_minus[(0, 0)];
    for model in ModelKind::ALL {
        if model == ModelKind::FeedbackOnly {
            continue;
        }
        let cfg = ScanConfig::new(80.0, Polarity::Negative, model);
        let out = run_scan_detailed(&ph, &cfg, 3).unwrap();
        assert!(out.result.aborted.is_none(), "{}", model.as_str());
        for l in out.lines.iter().filter(|l| l.line >= 1 && l.line + 1 < 8) {
            let p = l.prediction.as_ref().unwrap();
            let worst = p.vb_ff.iter().map(|v| (v - level).abs()).fold(0.0, f64::max);
            assert!(worst < 1e-3, "{} line {}: off by {worst}", model.as_str(), l.line);
        }
    }
}

#[test]
fn copy_model_feeds_the_tracked_row_forward() {
    let ph = make_phantom(PhantomKind::R1Like, Some(grid(16, 8)), 2);
    let cfg = ScanConfig::new(60.0, Polarity::Negative, ModelKind::None);
    let out = run_scan_detailed(&ph, &cfg, 0).unwrap();
    for l in out.lines.iter().filter(|l| l.line + 1 < 8) {
        let row: Vec<f64> = out.result.image.row(l.line).iter().copied().collect();
        assert_eq!(l.prediction.as_ref().unwrap().vb_ff, row);
    }
}

#[test]
fn fitc_extrapolates_a_ramp_better_than_copying() {
    let step = 0.02;
    let ph = ramp(12, 12, step);
    let cfg = ScanConfig::new(120.0, Polarity::Negative, ModelKind::Fitc);
    let out = run_scan_detailed(&ph, &cfg, 1).unwrap();
    assert!(out.result.aborted.is_none());
    let (mut gp_err, mut copy_err) = (0.0, 0.0);
    for l in out.lines.iter().filter(|l| (5..11).contains(&l.line)) {
        let p = l.prediction.as_ref().unwrap();
        for (i, v) in p.vb_ff.iter().enumerate() {
            let truth = ph.v_minus[(l.line + 1, i)];
            gp_err += (v - truth).abs();
            copy_err += (out.result.image[(l.line, i)] - truth).abs();
        }
    }
    assert!(gp_err < copy_err, "gp {gp_err} vs copy {copy_err}");
}

#[test]
fn scans_are_deterministic_in_the_seed() {
    let ph = make_phantom(PhantomKind::R1Like, Some(grid(14, 8)), 5);
    for model in [ModelKind::Fitc, ModelKind::SodCluster, ModelKind::Ssgpr, ModelKind::Kronecker] {
        let cfg = ScanConfig::new(50.0, Polarity::Positive, model);
        let a = run_scan(&ph, &cfg, 4).unwrap();
        let b = run_scan(&ph, &cfg, 4).unwrap();
        assert_eq!((&a.image, &a.lock_map, a.aborted), (&b.image, &b.lock_map, b.aborted), "{}", model.as_str());
        let c = run_scan(&ph, &cfg, 5).unwrap();
        assert_ne!(a.image, c.image);
    }
}

#[test]
fn slower_feedback_scans_are_more_accurate() {
    let ph = make_phantom(PhantomKind::R1Like, Some(grid(24, 12)), 1);
    let err = |t: f64| {
        let r = run_scan(&ph, &ScanConfig::new(t, Polarity::Negative, ModelKind::FeedbackOnly), 0).unwrap();
        assert!(r.aborted.is_none());
        mse_rows(&r.image, &ph.v_minus, 12).unwrap()
    };
    let (fast, slow) = (err(100.0), err(400.0));
    assert!(slow < fast, "{slow} vs {fast}");
}

#[test]
fn abort_leaves_the_rest_unscanned() {
    let ph = make_phantom(PhantomKind::R1Like, None, 0);
    let cfg = ScanConfig::new(75.0, Polarity::Negative, ModelKind::FeedbackOnly);
    let r = run_scan(&ph, &cfg, 0).unwrap();
    let j = r.aborted.expect("too fast for feedback alone");
    assert_eq!(r.image.shape(), (63, 63));
    assert_eq!(r.lock_map.shape(), (63, 63));
    for row in j..63 {
        assert!(r.lock_map.row(row).iter().all(|l| !l));
        assert!(r.image.row(row).iter().all(|v| v.is_nan()));
    }
    assert!(r.lock_map.row(j - 1).iter().all(|&l| l));
}

#[test]
fn copy_model_uses_no_compute_budget() {
    let ph = make_phantom(PhantomKind::R1Like, Some(grid(16, 8)), 2);
    let cfg = ScanConfig::new(60.0, Polarity::Negative, ModelKind::None);
    let r = run_scan(&ph, &cfg, 0).unwrap();
    let rep = compute_budget_report(&r, &cfg, &ph.grid);
    assert!(rep.mean_fraction < 1e-3, "{}", rep.mean_fraction);
    assert_eq!(rep.rows.len(), 8);
}

#[test]
fn invalid_configs_are_rejected() {
    let ph = flat(6, 4);
    let mut cfg = ScanConfig::new(0.0, Polarity::Negative, ModelKind::Fitc);
    assert!(run_scan(&ph, &cfg, 0).is_err());
    cfg.total_time = 10.0;
    cfg.m_fraction = 0.0;
    assert!(run_scan(&ph, &cfg, 0).is_err());
    let mut cfg = ScanConfig::new(10.0, Polarity::Negative, ModelKind::Fitc);
    cfg.esc.amplitude = 1.0;
    assert!(run_scan(&ph, &cfg, 0).is_err());
}
