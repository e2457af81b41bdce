mod common;

use common::criteria::{metric_oracle_errors, FRECHET_TOL};
use common::oracles::{frechet_brute, wilcoxon_enumerate};
use proptest::prelude::*;
use trajcql::geom::{PixelPoint, Resolution};
use trajcql::metrics::{ade, fde, frechet, parse_metrics_csv, to_pixels, wilcoxon_signed_rank, MetricsError, MetricsReport, EXACT_MAX_N};

type P = (f64, f64);

#[test]
fn oracle_agreement() {
    let w = metric_oracle_errors(99, 300);
    assert!(w[0] <= FRECHET_TOL, "fréchet {:e}", w[0]);
    assert!(w[1] <= 1e-9 && w[2] <= 1e-12, "ade {:e} fde {:e}", w[1], w[2]);
    assert!(w[3] <= 1e-12 && w[4] == 0.0, "wilcoxon p {:e} W {:e}", w[3], w[4]);
}

#[test]
fn documented_examples() {
    let z = [(0.0, 0.0), (0.0, 0.0)];
    let p = [(0.0, 0.0), (3.0, 4.0)];
    assert_eq!(ade(&p, &z).unwrap(), 2.5);
    assert_eq!(fde(&p, &z).unwrap(), 5.0);
    assert_eq!(fde(&z, &z).unwrap(), 0.0);
    let a = [(0.0, 0.0), (1.0, 0.0)];
    let b = [(0.0, 1.0), (1.0, 1.0)];
    assert_eq!(frechet(&a, &b).unwrap(), 1.0);
    assert_eq!(frechet_brute(&a, &b), 1.0);
    assert!(matches!(frechet(&[], &b), Err(MetricsError::EmptyTrajectory)));
    assert!(matches!(ade(&a, &b[..1]), Err(MetricsError::LengthMismatch(2, 1))));
}

#[test]
fn wilcoxon_examples() {
    let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
    assert!(matches!(wilcoxon_signed_rank(&a, &a), Err(MetricsError::NoNonzeroDifferences)));
    let b: Vec<f64> = a.iter().map(|v| v - 0.5 * v).collect();
    let r = wilcoxon_signed_rank(&a, &b).unwrap();
    assert_eq!(r.statistic, 0.0);
    assert!((r.p_value - 2.0 / 64.0).abs() < 1e-15);
    assert_eq!(wilcoxon_enumerate(&a, &b), (0.0, 0.03125));
    assert!(matches!(wilcoxon_signed_rank(&a[..4], &b[..4]), Err(MetricsError::TooFewPairs(4))));
}

#[test]
fn wilcoxon_switches_to_normal_approximation() {
    let n = EXACT_MAX_N + 5;
    let a: Vec<f64> = (0..n).map(|i| i as f64 * 1.3 + 1.0).collect();
    let b: Vec<f64> = (0..n).map(|i| (i as f64 * 2.1).sin() * 5.0 + i as f64 * 1.3).collect();
    let r = wilcoxon_signed_rank(&a, &b).unwrap();
    assert!(!r.exact);
    assert!((0.0..=1.0).contains(&r.p_value));
}

#[test]
fn report_csv_round_trip() {
    let res = Resolution::new(101, 51).unwrap();
    let ids = vec!["a,1".to_string(), "b".to_string()];
    let preds = vec![vec![PixelPoint::new(0.0, 0.0), PixelPoint::new(0.5, 0.5)], vec![PixelPoint::new(1.0, 1.0)]];
    let truth = vec![vec![PixelPoint::new(0.0, 0.0), PixelPoint::new(0.5, 1.0)], vec![PixelPoint::new(1.0, 0.0)]];
    let rep = MetricsReport::from_predictions("m", res, &ids, &preds, &truth).unwrap();
    // y is scaled by height − 1 = 50
    assert_eq!(rep.rows[0].fde_px, 25.0);
    assert_eq!(rep.rows[1].ade_px, 50.0);
    let rows = parse_metrics_csv(&rep.to_csv()).unwrap();
    assert_eq!(rows, rep.rows);
    assert_eq!(rep.summary().n, 2);
    assert!(parse_metrics_csv("id,ade_px,fde_px,fd_px\nx,1,NaN,2\n").is_err());
    assert!(parse_metrics_csv("id,ade\nx,1\n").is_err());
}

fn points(max: usize) -> impl Strategy<Value = Vec<P>> {
    prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn translation_invariance(a in points(8), shift in (-500.0f64..500.0, -500.0f64..500.0), seed in any::<u64>()) {
        let b: Vec<P> = a.iter().enumerate().map(|(i, p)| (p.0 + ((seed >> (i % 32)) & 7) as f64, p.1 - i as f64)).collect();
        let t = |v: &[P]| -> Vec<P> { v.iter().map(|p| (p.0 + shift.0, p.1 + shift.1)).collect() };
        let (ta, tb) = (t(&a), t(&b));
        prop_assert!((ade(&a, &b).unwrap() - ade(&ta, &tb).unwrap()).abs() < 1e-9);
        prop_assert!((fde(&a, &b).unwrap() - fde(&ta, &tb).unwrap()).abs() < 1e-9);
        prop_assert!((frechet(&a, &b).unwrap() - frechet(&ta, &tb).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn frechet_identity_reversal_and_bounds(a in points(7), b in points(7)) {
        prop_assert_eq!(frechet(&a, &a).unwrap(), 0.0);
        let fd = frechet(&a, &b).unwrap();
        prop_assert!(fd >= 0.0);
        prop_assert_eq!(fd, frechet(&b, &a).unwrap());
        let ra: Vec<P> = a.iter().rev().copied().collect();
        let rb: Vec<P> = b.iter().rev().copied().collect();
        prop_assert!((fd - frechet(&ra, &rb).unwrap()).abs() < 1e-12);
        // every coupling includes both endpoint pairs
        let end = ((a[a.len() - 1].0 - b[b.len() - 1].0).hypot(a[a.len() - 1].1 - b[b.len() - 1].1)).max((a[0].0 - b[0].0).hypot(a[0].1 - b[0].1));
        prop_assert!(fd >= end - 1e-12);
    }

    #[test]
    fn fde_bounded_by_pointwise_max(a in points(8), seed in any::<u64>()) {
        let b: Vec<P> = a.iter().enumerate().map(|(i, p)| (p.0 - ((seed >> (i % 40)) & 15) as f64, p.1)).collect();
        let max = a.iter().zip(&b).map(|(x, y)| (x.0 - y.0).hypot(x.1 - y.1)).fold(0.0, f64::max);
        prop_assert!(fde(&a, &b).unwrap() <= max + 1e-12);
        prop_assert!(ade(&a, &b).unwrap() <= max + 1e-12);
    }

    /// With a square resolution, rescaling after the metric equals rescaling before it.
    #[test]
    fn isotropic_pixel_rescaling(raw in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 1..8), side in 2u32..2000) {
        let res = Resolution::new(side, side).unwrap();
        let scale = f64::from(side - 1);
        let a: Vec<PixelPoint> = raw.iter().map(|r| PixelPoint::new(r.0, r.1)).collect();
        let b: Vec<PixelPoint> = raw.iter().map(|r| PixelPoint::new(r.2, r.3)).collect();
        let norm = |v: &[PixelPoint]| -> Vec<P> { v.iter().map(|p| (p.x, p.y)).collect() };
        let (pa, pb) = (to_pixels(&a, res), to_pixels(&b, res));
        prop_assert!((ade(&norm(&a), &norm(&b)).unwrap() * scale - ade(&pa, &pb).unwrap()).abs() < 1e-9);
        prop_assert!((frechet(&norm(&a), &norm(&b)).unwrap() * scale - frechet(&pa, &pb).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn wilcoxon_p_in_unit_interval(a in prop::collection::vec(0.0f64..10.0, 5..40), seed in any::<u64>()) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, v)| v + ((seed.rotate_left(i as u32) % 7) as f64 - 3.0) * 0.37).collect();
        if let Ok(r) = wilcoxon_signed_rank(&a, &b) {
            prop_assert!((0.0..=1.0).contains(&r.p_value));
            prop_assert!(r.statistic >= 0.0 && r.statistic <= (r.n * (r.n + 1)) as f64 / 4.0);
        }
    }

    #[test]
    fn metrics_csv_parser_never_panics(text in "[a-z0-9_,.\\-\n]{0,200}") {
        let _ = parse_metrics_csv(&text);
    }
}
