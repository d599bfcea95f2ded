mod common;

use common::*;
use ris_zf::channel::{
    db_to_linear, dbm_to_watts, distance, draw_realization, path_loss_db, ula_steering,
    ScenarioConfig,
};

#[test]
fn same_seed_same_realization() {
    let cfg = ScenarioConfig::reference(4, 16);
    let a = draw_realization(&cfg, 42, 7).unwrap();
    let b = draw_realization(&cfg, 42, 7).unwrap();
    assert_eq!(a.h_direct, b.h_direct);
    assert_eq!(a.h_ris_user, b.h_ris_user);
    assert_eq!(a.a, b.a);
    assert_eq!(a.user_positions, b.user_positions);
    let c = draw_realization(&cfg, 42, 8).unwrap();
    assert_ne!(a.h_direct, c.h_direct);
    let d = draw_realization(&cfg, 43, 7).unwrap();
    assert_ne!(a.h_direct, d.h_direct);
}

#[test]
fn shapes_and_unit_b() {
    let cfg = ScenarioConfig::reference(12, 32);
    let r = draw_realization(&cfg, 1, 0).unwrap();
    assert_eq!(r.h_direct.shape(), (12, 8));
    assert_eq!(r.h_ris_user.shape(), (12, 32));
    assert_eq!(r.a.len(), 32);
    assert!((r.b.norm() - 1.0).abs() < 1e-14);
    assert_eq!(r.h_los().shape(), (32, 8));
}

#[test]
fn users_inside_disc() {
    let cfg = ScenarioConfig::reference(12, 16);
    for t in 0..50 {
        let r = draw_realization(&cfg, 9, t).unwrap();
        for p in &r.user_positions {
            let dx = p[0] - cfg.user_center[0];
            let dy = p[1] - cfg.user_center[1];
            assert!((dx * dx + dy * dy).sqrt() <= cfg.user_radius + 1e-12);
            assert_eq!(p[2], cfg.user_height);
        }
    }
}

#[test]
fn los_gain_carries_path_loss_and_array_gain() {
    let cfg = ScenarioConfig::reference(2, 20);
    let r = draw_realization(&cfg, 0, 0).unwrap();
    let sigma2 = dbm_to_watts(cfg.noise_dbm);
    let expected = 8.0 * 20.0 * 10f64.powf(-(30.0 + 22.0 * 2.0) / 10.0) / sigma2;
    let got = r.a.norm_squared() * r.b.norm_squared();
    assert!(rel_err(got, expected) < 1e-12, "{got} vs {expected}");
    // frobenius norm of the LOS matrix is the same quantity
    assert!(rel_err(r.h_los().norm_squared(), expected) < 1e-12);
}

#[test]
fn entry_variances_follow_path_loss() {
    // Average |h|^2 times the inverse loss over many draws should be near 1.
    let mut cfg = ScenarioConfig::reference(4, 16);
    cfg.user_radius = 1e-6;
    let sigma2 = dbm_to_watts(cfg.noise_dbm);
    let trials = 400;
    let (mut direct_pen, mut direct_free, mut ris) = (0.0, 0.0, 0.0);
    for t in 0..trials {
        let r = draw_realization(&cfg, 5, t).unwrap();
        let p = r.user_positions[0];
        let ld = db_to_linear(-path_loss_db(distance(&cfg.bs_pos, &p), 30.0, 3.7).unwrap());
        let lr = db_to_linear(-path_loss_db(distance(&cfg.ris_pos, &p), 30.0, 3.2).unwrap());
        direct_pen += r.h_direct.row(0).norm_squared() * sigma2 / (8.0 * ld * 0.01);
        direct_free += r.h_direct.row(3).norm_squared() * sigma2 / (8.0 * ld);
        ris += r.h_ris_user.row(1).norm_squared() / (16.0 * lr);
    }
    let n = trials as f64;
    for (name, v) in [("penalized", direct_pen / n), ("free", direct_free / n), ("ris", ris / n)] {
        assert!((v - 1.0).abs() < 0.05, "{name}: {v}");
    }
}

#[test]
fn penalized_users_are_first_ceil_fraction() {
    let mut cfg = ScenarioConfig::reference(5, 8);
    assert_eq!(cfg.penalized_users(), 3);
    cfg.penalized_fraction = 0.0;
    assert_eq!(cfg.penalized_users(), 0);
    cfg.penalized_fraction = 1.0;
    assert_eq!(cfg.penalized_users(), 5);
}

#[test]
fn steering_vector_and_conversions() {
    let v = ula_steering(6, 0.0);
    assert!(v.iter().all(|z| (z.re - 1.0).abs() < 1e-15 && z.im.abs() < 1e-15));
    let w = ula_steering(4, 0.3);
    assert!(w.iter().all(|z| (z.norm() - 1.0).abs() < 1e-14));
    assert!(rel_err(dbm_to_watts(20.0), 0.1) < 1e-15);
    assert!(rel_err(dbm_to_watts(-100.0), 1e-13) < 1e-12);
    assert!(rel_err(path_loss_db(100.0, 30.0, 2.2).unwrap(), 74.0) < 1e-15);
    assert!(path_loss_db(0.0, 30.0, 2.0).is_err());
}

#[test]
fn invalid_configs_rejected() {
    let mut cfg = ScenarioConfig::reference(4, 8);
    cfg.user_radius = 0.0;
    assert!(draw_realization(&cfg, 0, 0).is_err());
    let mut cfg = ScenarioConfig::reference(4, 8);
    cfg.penalized_fraction = 1.5;
    assert!(cfg.validate().is_err());
    let mut cfg = ScenarioConfig::reference(4, 8);
    cfg.beta_r = -1.0;
    assert!(cfg.validate().is_err());
    assert!(ScenarioConfig::reference(6, 4).validate().is_err());
}

#[test]
fn dead_ris_zeroes_cascade() {
    let cfg = ScenarioConfig::reference(3, 8);
    let r = draw_realization(&cfg, 2, 2).unwrap().with_dead_ris();
    assert_eq!(r.a.norm(), 0.0);
    let theta = rand_phases(&mut rng(1), 8);
    let h = oracle_composite(&r, &[0, 1, 2], &theta);
    assert_eq!(h, r.h_direct);
}
