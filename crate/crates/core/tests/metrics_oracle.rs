//! Metric oracles: stratified Monte-Carlo area estimates for the rotated
//! IoU, an independent exhaustive matcher for AP / recall / the point
//! protocol, and the LET reduction check.

use echo_polar_core::boxes::{Box3D, Detection};
use echo_polar_core::geometry::wrap_angle;
use echo_polar_core::metrics::{
    average_precision, bev_iou, let_iou, radial_point_metrics, recall_at, Frame,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bx(x: f64, y: f64, l: f64, w: f64, yaw: f64) -> Box3D {
    Box3D::new([x, y, 0.0], [l, w, 1.5], yaw).unwrap()
}

fn det(score: f64, b: Box3D) -> Detection {
    Detection { score, bbox: b }
}

/// Point-in-rotated-rectangle test in the box frame; independent of the
/// clipping code.
fn inside(b: &Box3D, px: f64, py: f64) -> bool {
    let (s, c) = b.yaw.sin_cos();
    let dx = px - b.center[0];
    let dy = py - b.center[1];
    let along = c * dx + s * dy;
    let across = -s * dx + c * dy;
    along.abs() <= b.dims[0] / 2.0 && across.abs() <= b.dims[1] / 2.0
}

/// Stratified (jittered-grid) Monte-Carlo IoU over the joint bounding box.
fn mc_iou(a: &Box3D, b: &Box3D, n_side: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for bb in [a, b] {
        let diag = 0.5 * (bb.dims[0].hypot(bb.dims[1]));
        for k in 0..2 {
            lo[k] = lo[k].min(bb.center[k] - diag);
            hi[k] = hi[k].max(bb.center[k] + diag);
        }
    }
    let (sx, sy) = ((hi[0] - lo[0]) / n_side as f64, (hi[1] - lo[1]) / n_side as f64);
    let mut both = 0u64;
    let mut either = 0u64;
    for i in 0..n_side {
        for j in 0..n_side {
            let px = lo[0] + (i as f64 + rng.random_range(0.0..1.0)) * sx;
            let py = lo[1] + (j as f64 + rng.random_range(0.0..1.0)) * sy;
            let in_a = inside(a, px, py);
            let in_b = inside(b, px, py);
            if in_a && in_b {
                both += 1;
            }
            if in_a || in_b {
                either += 1;
            }
        }
    }
    both as f64 / either as f64
}

#[test]
fn rotated_square_matches_million_sample_oracle() {
    let a = bx(0.0, 0.0, 1.0, 1.0, 0.0);
    let b = bx(0.0, 0.0, 1.0, 1.0, std::f64::consts::FRAC_PI_4);
    let exact = bev_iou(&a, &b);
    let mc = mc_iou(&a, &b, 1000, 42);
    assert!(
        (exact - mc).abs() < 1e-3,
        "clipping {exact} vs monte carlo {mc}"
    );
}

#[test]
fn hundred_random_rotated_pairs_match_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    for case in 0..100 {
        let a = bx(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(0.8..3.0),
            rng.random_range(0.8..3.0),
            rng.random_range(-3.2..3.2),
        );
        let b = bx(
            a.center[0] + rng.random_range(-1.5..1.5),
            a.center[1] + rng.random_range(-1.5..1.5),
            rng.random_range(0.8..3.0),
            rng.random_range(0.8..3.0),
            rng.random_range(-3.2..3.2),
        );
        let exact = bev_iou(&a, &b);
        let mc = mc_iou(&a, &b, 1000, 777 + case);
        assert!(
            (exact - mc).abs() < 1e-3,
            "case {case}: clipping {exact} vs monte carlo {mc}"
        );
    }
}

#[test]
fn let_iou_with_zero_tolerance_is_bev_iou_on_1000_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..1000 {
        let a = bx(
            rng.random_range(2.0..60.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(0.5..5.0),
            rng.random_range(0.5..3.0),
            rng.random_range(-3.2..3.2),
        );
        let b = bx(
            a.center[0] + rng.random_range(-2.0..2.0),
            a.center[1] + rng.random_range(-2.0..2.0),
            rng.random_range(0.5..5.0),
            rng.random_range(0.5..3.0),
            rng.random_range(-3.2..3.2),
        );
        assert_eq!(let_iou(&a, &b, 0.0, (0.0, 0.0)), bev_iou(&a, &b));
    }
}

// -------------------------------------------------------------------
// Independent exhaustive matcher and AP

/// Greedy matcher re-written from the definition, index loops only.
fn oracle_match(
    preds: &[(f64, Box3D)],
    gts: &[Box3D],
    threshold: f64,
) -> Vec<Option<usize>> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[j].0.partial_cmp(&preds[i].0).unwrap());
    let mut taken = vec![false; gts.len()];
    let mut assigned = vec![None; preds.len()];
    for pi in order {
        let mut best_iou = -1.0;
        let mut best_gt = None;
        for (gi, gt) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let iou = bev_iou(&preds[pi].1, gt);
            if iou >= threshold && iou > best_iou {
                best_iou = iou;
                best_gt = Some(gi);
            }
        }
        if let Some(gi) = best_gt {
            taken[gi] = true;
            assigned[pi] = Some(gi);
        }
    }
    assigned
}

/// AP by the definition: sort by score, cumulate, envelope, integrate.
fn oracle_ap(frames: &[Frame], threshold: f64) -> Option<f64> {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let mut n_gt = 0;
    for f in frames {
        n_gt += f.ground_truths.len();
        let preds: Vec<(f64, Box3D)> =
            f.predictions.iter().map(|d| (d.score, d.bbox)).collect();
        let assigned = oracle_match(&preds, &f.ground_truths, threshold);
        for (p, a) in preds.iter().zip(assigned.iter()) {
            scored.push((p.0, a.is_some()));
        }
    }
    if n_gt == 0 {
        return None;
    }
    scored.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
    let mut tp = 0.0;
    let mut curve: Vec<(f64, f64)> = Vec::new();
    for (i, (_, hit)) in scored.iter().enumerate() {
        if *hit {
            tp += 1.0;
        }
        curve.push((tp / n_gt as f64, tp / (i + 1) as f64));
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for i in 0..curve.len() {
        let env = curve[i..]
            .iter()
            .map(|c| c.1)
            .fold(f64::NEG_INFINITY, f64::max);
        ap += (curve[i].0 - prev) * env;
        prev = curve[i].0;
    }
    Some(ap)
}

#[test]
fn ap_agrees_with_independent_oracle_on_random_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    for trial in 0..20 {
        let mut frames = Vec::new();
        for _ in 0..3 {
            let gts: Vec<Box3D> = (0..rng.random_range(1..5))
                .map(|_| {
                    bx(
                        rng.random_range(5.0..60.0),
                        rng.random_range(-15.0..15.0),
                        4.0,
                        2.0,
                        rng.random_range(-1.5..1.5),
                    )
                })
                .collect();
            let mut preds = Vec::new();
            for g in &gts {
                if rng.random_bool(0.8) {
                    preds.push(det(
                        rng.random_range(0.05..1.0),
                        bx(
                            g.center[0] + rng.random_range(-1.0..1.0),
                            g.center[1] + rng.random_range(-0.6..0.6),
                            4.0,
                            2.0,
                            g.yaw + rng.random_range(-0.3..0.3),
                        ),
                    ));
                }
            }
            for _ in 0..rng.random_range(0..3) {
                preds.push(det(
                    rng.random_range(0.05..1.0),
                    bx(
                        rng.random_range(5.0..60.0),
                        rng.random_range(-15.0..15.0),
                        4.0,
                        2.0,
                        0.0,
                    ),
                ));
            }
            frames.push(Frame { predictions: preds, ground_truths: gts });
        }
        for threshold in [0.3, 0.5, 0.7] {
            let got = average_precision(&frames, bev_iou, threshold, &[]).overall;
            let expect = oracle_ap(&frames, threshold);
            match (got, expect) {
                (Some(a), Some(b)) => {
                    assert!((a - b).abs() < 1e-12, "trial {trial} thr {threshold}: {a} vs {b}")
                }
                (a, b) => assert_eq!(a.is_some(), b.is_some(), "trial {trial}"),
            }
        }
    }
}

#[test]
fn recall_agrees_with_exhaustive_matcher() {
    let mut rng = ChaCha8Rng::seed_from_u64(555);
    for _ in 0..20 {
        let gts: Vec<Box3D> = (0..4)
            .map(|_| {
                bx(
                    rng.random_range(5.0..60.0),
                    rng.random_range(-15.0..15.0),
                    4.0,
                    2.0,
                    rng.random_range(-1.5..1.5),
                )
            })
            .collect();
        let mut preds: Vec<Detection> = Vec::new();
        for g in &gts {
            if rng.random_bool(0.7) {
                preds.push(det(
                    rng.random_range(0.1..1.0),
                    bx(
                        g.center[0] + rng.random_range(-0.8..0.8),
                        g.center[1] + rng.random_range(-0.4..0.4),
                        4.0,
                        2.0,
                        g.yaw,
                    ),
                ));
            }
        }
        let frame = Frame { predictions: preds.clone(), ground_truths: gts.clone() };
        let got = recall_at(&[frame], bev_iou, 0.5, &[]).overall.unwrap();
        let pred_tuples: Vec<(f64, Box3D)> = preds.iter().map(|d| (d.score, d.bbox)).collect();
        let matched = oracle_match(&pred_tuples, &gts, 0.5)
            .iter()
            .filter(|a| a.is_some())
            .count();
        assert_eq!(got, matched as f64 / gts.len() as f64);
    }
}

/// Per-threshold brute-force re-computation of the point protocol on a
/// mixed two-frame case.
#[test]
fn radial_point_protocol_matches_per_threshold_oracle() {
    let g1 = bx(20.0, 1.0, 4.0, 2.0, 0.2);
    let g2 = bx(45.0, -6.0, 4.0, 2.0, -0.7);
    let g3 = bx(70.0, 10.0, 4.0, 2.0, 1.2);
    let frames = vec![
        Frame {
            predictions: vec![
                det(0.95, bx(20.2, 1.1, 4.0, 2.0, 0.2)),
                det(0.35, bx(45.5, -6.2, 4.0, 2.0, -0.7)),
                det(0.65, bx(10.0, 10.0, 4.0, 2.0, 0.0)), // false alarm
            ],
            ground_truths: vec![g1, g2],
        },
        Frame {
            predictions: vec![det(0.55, bx(70.4, 9.8, 4.0, 2.0, 1.2))],
            ground_truths: vec![g3],
        },
    ];

    let got = radial_point_metrics(&frames);

    // oracle: loop thresholds explicitly
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    let mut re_sum = 0.0;
    let mut ae_sum = 0.0;
    let mut matches = 0usize;
    for k in 1..=9 {
        let tau = k as f64 / 10.0;
        let mut tp = 0usize;
        let mut kept_all = 0usize;
        let mut gt_all = 0usize;
        for f in &frames {
            let kept: Vec<(f64, Box3D)> = f
                .predictions
                .iter()
                .filter(|p| p.score >= tau)
                .map(|p| (p.score, p.bbox))
                .collect();
            kept_all += kept.len();
            gt_all += f.ground_truths.len();
            for (pi, a) in oracle_match(&kept, &f.ground_truths, 0.5).iter().enumerate() {
                if let Some(gi) = a {
                    tp += 1;
                    matches += 1;
                    let p = kept[pi].1;
                    let g = f.ground_truths[*gi];
                    let rho_p = p.center[0].hypot(p.center[1]);
                    let rho_g = g.center[0].hypot(g.center[1]);
                    re_sum += (rho_p - rho_g).abs();
                    let phi_p = p.center[1].atan2(p.center[0]);
                    let phi_g = g.center[1].atan2(g.center[0]);
                    ae_sum += wrap_angle(phi_p - phi_g).abs();
                }
            }
        }
        precisions.push(if kept_all == 0 {
            if gt_all == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            tp as f64 / kept_all as f64
        });
        recalls.push(if gt_all == 0 { 1.0 } else { tp as f64 / gt_all as f64 });
    }
    let ap = precisions.iter().sum::<f64>() / 9.0;
    let ar = recalls.iter().sum::<f64>() / 9.0;
    let f1 = if ap + ar > 0.0 { 2.0 * ap * ar / (ap + ar) } else { 0.0 };

    assert_eq!(got.ap, ap);
    assert_eq!(got.ar, ar);
    assert_eq!(got.f1, f1);
    assert_eq!(got.range_error, Some(re_sum / matches as f64));
    assert_eq!(got.azimuth_error, Some(ae_sum / matches as f64));
}
