//! Distributional invariants of the sampler, at 10^5 replicas and 3 standard errors.

use std::sync::Arc;
use ym2_core::noise::{GridRegion, GridWindow, NoiseField};
use ym2_core::rng;
use ym2_core::stats::{compare, Accumulator, MCEstimate};
use ym2_core::transport::{martingale_increment_coords, transport_horizontal, HorizontalCurve};
use ym2_core::verify::run_replicas;
use ym2_core::{GroupContext, GroupKind};

const N: u64 = 100_000;

fn su2() -> Arc<GroupContext> {
    Arc::new(GroupContext::new(GroupKind::SU2).unwrap())
}

fn within(est: MCEstimate, exact: f64, what: &str) {
    let r = compare(est, MCEstimate::exact(exact), 3.0);
    assert!(r.pass, "{what}: {} +- {} vs {exact} (z = {:.2})", est.mean, est.stderr, r.z);
}

/// Standard error of a sample variance, from the fourth central moment.
fn variance_estimate(xs: &Accumulator, fourth: &Accumulator) -> MCEstimate {
    let n = xs.n() as f64;
    let v = xs.variance();
    let m4 = fourth.mean();
    MCEstimate { mean: v, stderr: ((m4 - v * v).max(0.0) / n).sqrt(), n: xs.n() }
}

#[test]
fn brownian_endpoint_matches_the_heat_kernel_mean() {
    for kind in [GroupKind::U1, GroupKind::SU2] {
        let ctx = GroupContext::new(kind).unwrap();
        let d = ctx.matrix_dim() as f64;
        for t in [0.25f64, 1.0, 4.0] {
            let steps = (100.0 * t).ceil() as usize;
            let acc = run_replicas(N, 11, 1, |s, out| {
                let mut r = rng::stream(s, &[1]);
                out[0] = ctx.brownian_sample(t, steps, &mut r).trace().re / d;
                Ok(())
            })
            .unwrap();
            within(acc[0].estimate(), ctx.heat_mean(t).trace().re / d, &format!("{kind} t = {t}"));
        }
    }
}

#[test]
fn region_values_are_centred_with_area_variance() {
    let w = GridWindow::with_spacing(-0.5, 0.5, -1.0, 1.0, 0.25, 0.5).unwrap();
    let ctx = su2();
    let b = GridRegion::rect(&w, -0.25, 0.5, -0.5, 1.0).unwrap();
    let area = b.area(&w);
    let acc = run_replicas(N, 3, 4, |s, out| {
        let f = NoiseField::sample(ctx.clone(), w, s)?;
        let c = f.f_coords(&b)?;
        let h = f.f_hat_coords(&b)?;
        out.copy_from_slice(&[c[0], c[1], h[0], c[0].powi(4)]);
        Ok(())
    })
    .unwrap();
    within(acc[0].estimate(), 0.0, "mean of f(B)_0");
    within(acc[1].estimate(), 0.0, "mean of f(B)_1");
    within(acc[2].estimate(), 0.0, "mean of fhat(B)_0");
    let var = variance_estimate(&acc[0], &acc[3]);
    within(var, area, "variance of f(B)_0");
    // Isometry in law: the two variances agree.
    let hat_var = MCEstimate { mean: acc[2].variance(), stderr: var.stderr, n: N };
    assert!(compare(hat_var, var, 3.0).pass, "{hat_var:?} vs {var:?}");
}

#[test]
fn increments_over_disjoint_blocks_are_uncorrelated() {
    let ctx = su2();
    let w = GridWindow::with_spacing(-0.5, 0.5, -1.0, 1.0, 0.05, 0.5).unwrap();
    let curve = HorizontalCurve::flat(0.0, 0.5, 1.0).unwrap();
    let substeps = 4;
    // First and second half of the curve, coordinate 0.
    let acc = run_replicas(N, 5, 2, |s, out| {
        let f = NoiseField::sample(ctx.clone(), w, s)?;
        let inc = martingale_increment_coords(&f, &curve, substeps)?;
        let half = inc.len() / 2;
        out[0] = inc[..half].chunks(3).map(|c| c[0]).sum();
        out[1] = inc[half..].chunks(3).map(|c| c[0]).sum();
        Ok(())
    })
    .unwrap();
    let prod = run_replicas(N, 5, 1, |s, out| {
        let f = NoiseField::sample(ctx.clone(), w, s)?;
        let inc = martingale_increment_coords(&f, &curve, substeps)?;
        let half = inc.len() / 2;
        let a: f64 = inc[..half].chunks(3).map(|c| c[0]).sum();
        let b: f64 = inc[half..].chunks(3).map(|c| c[0]).sum();
        out[0] = a * b;
        Ok(())
    })
    .unwrap();
    let cov = prod[0].mean() - acc[0].mean() * acc[1].mean();
    let corr = cov / (acc[0].variance() * acc[1].variance()).sqrt();
    assert!(corr.abs() < 0.02, "corr = {corr}");
}

#[test]
fn martingale_second_moment_grows_with_swept_area() {
    let ctx = su2();
    let w = GridWindow::with_spacing(-0.5, 0.5, -1.0, 1.0, 0.05, 0.5).unwrap();
    let curve = HorizontalCurve::flat(-0.25, 0.5, 1.0).unwrap();
    let substeps = 2;
    // M_t - M_tau for tau = 5 columns in, t = 12 columns in: area 7 * 0.05 * 1.
    let (tau, t) = (5 * substeps, 12 * substeps);
    let acc = run_replicas(N, 9, 1, |s, out| {
        let f = NoiseField::sample(ctx.clone(), w, s)?;
        let inc = martingale_increment_coords(&f, &curve, substeps)?;
        let m: Vec<f64> = (0..3).map(|k| inc[tau * 3..t * 3].chunks(3).map(|c| c[k]).sum()).collect();
        let sq: f64 = m.iter().map(|v| v * v).sum();
        out[0] = sq;
        Ok(())
    })
    .unwrap();
    within(acc[0].estimate(), 3.0 * 7.0 * 0.05, "E|M_t - M_tau|^2");
}

#[test]
fn transport_mean_is_the_heat_kernel_of_the_swept_area() {
    for kind in [GroupKind::U1, GroupKind::SU2] {
        let ctx = Arc::new(GroupContext::new(kind).unwrap());
        let w = GridWindow::with_spacing(-0.5, 0.5, -1.0, 1.0, 0.05, 0.5).unwrap();
        let curve = HorizontalCurve::flat(0.0, 0.5, 1.0).unwrap();
        let d = ctx.matrix_dim() as f64;
        let acc = run_replicas(N, 13, 1, |s, out| {
            let f = NoiseField::sample(ctx.clone(), w, s)?;
            out[0] = transport_horizontal(&f, &curve, 16)?.trace().re / d;
            Ok(())
        })
        .unwrap();
        within(acc[0].estimate(), ctx.heat_mean(curve.signed_area()).trace().re / d, &format!("{kind}"));
    }
}
