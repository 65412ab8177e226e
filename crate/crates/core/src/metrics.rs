//! BEV detection metrics: rotated-box IoU, longitudinal-error-tolerant IoU,
//! average precision, the point-protocol AP/AR/F1/RE/AE, translation/scale/
//! orientation errors, and recall at an IoU threshold.
//!
//! Matching is greedy in descending score with deterministic tie-breaks:
//! equal-score predictions are ordered by their serialized fields, and a
//! prediction prefers the ground truth with the higher IoU, then the lower
//! index. All metrics are therefore invariant to prediction input order.

use serde::{Deserialize, Serialize};

use crate::boxes::{Box3D, Detection};
use crate::error::{Error, Result};
use crate::geometry::wrap_angle;

/// Which evaluation protocol a run reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    /// AP at a BEV IoU threshold with range buckets, plus the LET variant.
    WaymoAp,
    /// Score-threshold-swept AP/AR/F1 with range and azimuth errors.
    RadialPoint,
    /// Translation / scale / orientation errors of matched pairs.
    NuscenesErrors,
}

/// Evaluation settings shared by the protocols.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub iou_threshold: f64,
    /// LET tolerance as a fraction of ground-truth range.
    pub let_tolerance: f64,
    pub range_buckets: Vec<(f64, f64)>,
    pub protocol: Protocol,
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Config("iou_threshold must lie in (0, 1]".into()));
        }
        if !(self.let_tolerance >= 0.0) {
            return Err(Error::Config("let_tolerance must be nonnegative".into()));
        }
        let mut sorted = self.range_buckets.clone();
        sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in sorted.windows(2) {
            if w[0].1 > w[1].0 {
                return Err(Error::Config(format!(
                    "range buckets {:?} and {:?} overlap",
                    w[0], w[1]
                )));
            }
        }
        Ok(())
    }
}

/// Predictions and ground truths of one frame.
#[derive(Debug, Clone, Default)]
pub struct Frame {
    pub predictions: Vec<Detection>,
    pub ground_truths: Vec<Box3D>,
}

/// Outcome of greedy one-to-one matching in one frame.
#[derive(Debug, Clone)]
pub struct MatchResult {
    /// Per prediction (input order): matched ground-truth index and IoU.
    pub pred_matches: Vec<Option<(usize, f64)>>,
    pub gt_matched: Vec<bool>,
}

// ---------------------------------------------------------------------
// Rotated-rectangle overlap
// ---------------------------------------------------------------------

/// BEV footprint corners of a box, counterclockwise. The first dim is the
/// extent along the heading, the second across it.
pub fn bev_corners(b: &Box3D) -> [[f64; 2]; 4] {
    let (cx, cy) = (b.center[0], b.center[1]);
    let (hl, hw) = (b.dims[0] / 2.0, b.dims[1] / 2.0);
    let (s, c) = b.yaw.sin_cos();
    let u = [c * hl, s * hl];
    let v = [-s * hw, c * hw];
    [
        [cx + u[0] + v[0], cy + u[1] + v[1]],
        [cx - u[0] + v[0], cy - u[1] + v[1]],
        [cx - u[0] - v[0], cy - u[1] - v[1]],
        [cx + u[0] - v[0], cy + u[1] - v[1]],
    ]
}

fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let j = (i + 1) % poly.len();
        twice += poly[i][0] * poly[j][1] - poly[j][0] * poly[i][1];
    }
    twice.abs() / 2.0
}

/// Clip `subject` by the half-plane on the left of edge a→b
/// (Sutherland–Hodgman step; the clip polygon must be counterclockwise).
fn clip_by_edge(subject: &[[f64; 2]], a: [f64; 2], b: [f64; 2]) -> Vec<[f64; 2]> {
    let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let mut out = Vec::with_capacity(subject.len() + 1);
    for i in 0..subject.len() {
        let cur = subject[i];
        let next = subject[(i + 1) % subject.len()];
        let s_cur = side(cur);
        let s_next = side(next);
        if s_cur >= 0.0 {
            out.push(cur);
        }
        if (s_cur > 0.0 && s_next < 0.0) || (s_cur < 0.0 && s_next > 0.0) {
            let t = s_cur / (s_cur - s_next);
            out.push([
                cur[0] + t * (next[0] - cur[0]),
                cur[1] + t * (next[1] - cur[1]),
            ]);
        }
    }
    out
}

fn convex_intersection_area(p: &[[f64; 2]; 4], q: &[[f64; 2]; 4]) -> f64 {
    let mut poly: Vec<[f64; 2]> = p.to_vec();
    for i in 0..4 {
        if poly.is_empty() {
            return 0.0;
        }
        poly = clip_by_edge(&poly, q[i], q[(i + 1) % 4]);
    }
    polygon_area(&poly)
}

/// Intersection-over-union of two oriented BEV footprints (l×w rectangles
/// at yaw). Symmetric; degenerate footprints give 0.
pub fn bev_iou(a: &Box3D, b: &Box3D) -> f64 {
    let area_a = a.dims[0] * a.dims[1];
    let area_b = b.dims[0] * b.dims[1];
    if !(area_a > 0.0) || !(area_b > 0.0) {
        return 0.0;
    }
    let inter = convex_intersection_area(&bev_corners(a), &bev_corners(b));
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Support radius of a centered box footprint in direction `n`.
fn footprint_support(b: &Box3D, n: [f64; 2]) -> f64 {
    let (s, c) = b.yaw.sin_cos();
    (b.dims[0] / 2.0) * (n[0] * c + n[1] * s).abs()
        + (b.dims[1] / 2.0) * (-n[0] * s + n[1] * c).abs()
}

/// Exact interval of translations t for which `pred` shifted by t·u still
/// touches `gt` (separating-axis bounds over the four rectangle axes).
fn overlap_support(pred: &Box3D, gt: &Box3D, u: [f64; 2]) -> Option<(f64, f64)> {
    let rel = [pred.center[0] - gt.center[0], pred.center[1] - gt.center[1]];
    let axes = |b: &Box3D| {
        let (s, c) = b.yaw.sin_cos();
        [[c, s], [-s, c]]
    };
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for n in axes(pred).into_iter().chain(axes(gt)) {
        let reach = footprint_support(pred, n) + footprint_support(gt, n);
        let along = n[0] * u[0] + n[1] * u[1];
        let offset = n[0] * rel[0] + n[1] * rel[1];
        if along.abs() < 1e-300 {
            if offset.abs() > reach {
                return None;
            }
        } else {
            let t1 = (-reach - offset) / along;
            let t2 = (reach - offset) / along;
            lo = lo.max(t1.min(t2));
            hi = hi.min(t1.max(t2));
        }
    }
    if lo <= hi {
        Some((lo, hi))
    } else {
        None
    }
}

/// Longitudinal-error-tolerant IoU: the predicted center may slide along
/// the sensor→prediction line of sight by up to `tolerance × gt_range`;
/// the reported value is the best BEV IoU over the admissible slide. Zero
/// tolerance reduces to [`bev_iou`].
///
/// The slide that zeroes the longitudinal center error is always admissible
/// (up to the cap), but for skewed yaw/offset combinations it does not
/// maximize the IoU; taking the best admissible slide is what keeps the
/// metric monotone in the tolerance and never below the plain IoU.
pub fn let_iou(
    pred: &Box3D,
    gt: &Box3D,
    tolerance: f64,
    sensor_origin: (f64, f64),
) -> f64 {
    let gt_range =
        (gt.center[0] - sensor_origin.0).hypot(gt.center[1] - sensor_origin.1);
    let cap = tolerance * gt_range;
    if !(cap > 0.0) {
        return bev_iou(pred, gt);
    }
    let los = [pred.center[0] - sensor_origin.0, pred.center[1] - sensor_origin.1];
    let norm = los[0].hypot(los[1]);
    if norm == 0.0 {
        return bev_iou(pred, gt);
    }
    let u = [los[0] / norm, los[1] / norm];
    let iou_at = |t: f64| {
        let moved = Box3D {
            center: [
                pred.center[0] + t * u[0],
                pred.center[1] + t * u[1],
                pred.center[2],
            ],
            ..*pred
        };
        bev_iou(&moved, gt)
    };

    let longitudinal =
        (pred.center[0] - gt.center[0]) * u[0] + (pred.center[1] - gt.center[1]) * u[1];
    let mut best = iou_at(0.0).max(iou_at((-longitudinal).clamp(-cap, cap)));

    // The overlap area is log-concave along a translation line, so the IoU
    // is unimodal in t over the exact overlap support. Dense scan plus
    // iterated refinement around the bracketed peak.
    let Some((s0, s1)) = overlap_support(pred, gt, u) else {
        return best;
    };
    let (w0, w1) = (s0.max(-cap), s1.min(cap));
    if w0 > w1 {
        return best;
    }
    const POINTS: usize = 128;
    let (mut a, mut b) = (w0, w1);
    for _ in 0..8 {
        let step = (b - a) / POINTS as f64;
        let mut arg = a;
        let mut peak = f64::NEG_INFINITY;
        for i in 0..=POINTS {
            let t = a + step * i as f64;
            let v = iou_at(t);
            if v > peak {
                peak = v;
                arg = t;
            }
        }
        best = best.max(peak);
        if step == 0.0 {
            break;
        }
        a = (arg - step).max(w0);
        b = (arg + step).min(w1);
    }
    best
}

// ---------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------

/// Canonical prediction order: score descending, ties broken by the
/// serialized box fields so results do not depend on input order.
fn canonical_order(preds: &[Detection]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..preds.len()).collect();
    idx.sort_by(|&i, &j| {
        let a = &preds[i];
        let b = &preds[j];
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| {
                let ka = (a.bbox.center, a.bbox.dims, a.bbox.yaw);
                let kb = (b.bbox.center, b.bbox.dims, b.bbox.yaw);
                ka.partial_cmp(&kb).unwrap()
            })
    });
    idx
}

/// Greedy one-to-one matching at an IoU threshold. Each prediction (in
/// canonical order) takes the unmatched ground truth with the highest IoU
/// ≥ threshold; IoU ties go to the lower ground-truth index.
pub fn match_greedy<F>(
    preds: &[Detection],
    gts: &[Box3D],
    iou_fn: F,
    threshold: f64,
) -> MatchResult
where
    F: Fn(&Box3D, &Box3D) -> f64,
{
    let mut pred_matches = vec![None; preds.len()];
    let mut gt_matched = vec![false; gts.len()];
    for &pi in &canonical_order(preds) {
        let mut best: Option<(usize, f64)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt_matched[gi] {
                continue;
            }
            let iou = iou_fn(&preds[pi].bbox, gt);
            if iou >= threshold {
                let better = match best {
                    None => true,
                    Some((_, best_iou)) => iou > best_iou,
                };
                if better {
                    best = Some((gi, iou));
                }
            }
        }
        if let Some((gi, iou)) = best {
            gt_matched[gi] = true;
            pred_matches[pi] = Some((gi, iou));
        }
    }
    MatchResult { pred_matches, gt_matched }
}

// ---------------------------------------------------------------------
// Average precision
// ---------------------------------------------------------------------

/// AP of one evaluation set: None when it contains no ground truths.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApReport {
    pub overall: Option<f64>,
    pub per_bucket: Vec<BucketValue>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BucketValue {
    pub bucket: (f64, f64),
    pub value: Option<f64>,
}

fn in_bucket(range: f64, bucket: (f64, f64)) -> bool {
    range >= bucket.0 && range < bucket.1
}

/// A prediction's score, serialized-order tie-break key, and match flag.
struct ScoredFlag {
    score: f64,
    key: [f64; 7],
    tp: bool,
}

fn flag_key(b: &Box3D) -> [f64; 7] {
    [
        b.center[0], b.center[1], b.center[2], b.dims[0], b.dims[1], b.dims[2], b.yaw,
    ]
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a.max(1)
}

/// Exact rational accumulator a/b; None once the arithmetic would overflow.
#[derive(Clone, Copy)]
struct Fraction {
    num: u128,
    den: u128,
}

impl Fraction {
    fn add(self, num: u128, den: u128) -> Option<Fraction> {
        let lhs = self.num.checked_mul(den)?;
        let rhs = num.checked_mul(self.den)?;
        let num = lhs.checked_add(rhs)?;
        let den = self.den.checked_mul(den)?;
        let g = gcd(num, den);
        Some(Fraction { num: num / g, den: den / g })
    }
}

/// Integrate a precision-recall curve with the precision envelope over all
/// recall points (continuous all-point interpolation).
///
/// Since every recall step is 1/n_gt, the integral reduces to the sum of
/// envelope precisions at true-positive steps divided by n_gt. The sum is
/// carried as an exact fraction while it fits; pathological sizes fall back
/// to float accumulation.
fn ap_from_flags(mut flags: Vec<ScoredFlag>, n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    if flags.is_empty() {
        return Some(0.0);
    }
    flags.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then_with(|| a.key.partial_cmp(&b.key).unwrap())
    });

    // precision after detection i, as the exact fraction tp/(i+1)
    let mut tp = 0u64;
    let precisions: Vec<(u64, u64)> = flags
        .iter()
        .enumerate()
        .map(|(i, f)| {
            if f.tp {
                tp += 1;
            }
            (tp, i as u64 + 1)
        })
        .collect();
    // envelope: max precision at any recall ≥ r (fraction compare a/b vs c/d)
    let mut envelope = precisions.clone();
    for i in (0..envelope.len() - 1).rev() {
        let (a, b) = envelope[i];
        let (c, d) = envelope[i + 1];
        if (a as u128) * (d as u128) < (c as u128) * (b as u128) {
            envelope[i] = envelope[i + 1];
        }
    }

    let mut exact = Some(Fraction { num: 0, den: 1 });
    for (f, env) in flags.iter().zip(envelope.iter()) {
        if f.tp {
            exact = exact.and_then(|acc| acc.add(env.0 as u128, env.1 as u128));
        }
    }
    if let Some(sum) = exact {
        if let Some(den) = sum.den.checked_mul(n_gt as u128) {
            let g = gcd(sum.num, den);
            let (num, den) = (sum.num / g, den / g);
            if num <= (1 << 53) && den <= (1 << 53) {
                return Some(num as f64 / den as f64);
            }
        }
    }
    // float fallback for curves whose exact denominators overflow
    let sum: f64 = flags
        .iter()
        .zip(envelope.iter())
        .filter(|(f, _)| f.tp)
        .map(|(_, env)| env.0 as f64 / env.1 as f64)
        .sum();
    Some(sum / n_gt as f64)
}

/// Waymo-style AP: greedy matching at the threshold, precision-envelope
/// integration over all recall points, range buckets filtering both ground
/// truths and predictions by their BEV range.
pub fn average_precision<F>(
    frames: &[Frame],
    iou_fn: F,
    threshold: f64,
    buckets: &[(f64, f64)],
) -> ApReport
where
    F: Fn(&Box3D, &Box3D) -> f64 + Copy,
{
    let eval_subset = |bucket: Option<(f64, f64)>| -> Option<f64> {
        let mut flags: Vec<ScoredFlag> = Vec::new();
        let mut n_gt = 0usize;
        for frame in frames {
            let gts: Vec<Box3D> = frame
                .ground_truths
                .iter()
                .filter(|g| bucket.is_none_or(|bk| in_bucket(g.range(), bk)))
                .cloned()
                .collect();
            let preds: Vec<Detection> = frame
                .predictions
                .iter()
                .filter(|p| bucket.is_none_or(|bk| in_bucket(p.bbox.range(), bk)))
                .cloned()
                .collect();
            n_gt += gts.len();
            let matches = match_greedy(&preds, &gts, iou_fn, threshold);
            for (p, m) in preds.iter().zip(matches.pred_matches.iter()) {
                flags.push(ScoredFlag { score: p.score, key: flag_key(&p.bbox), tp: m.is_some() });
            }
        }
        ap_from_flags(flags, n_gt)
    };

    ApReport {
        overall: eval_subset(None),
        per_bucket: buckets
            .iter()
            .map(|&bk| BucketValue { bucket: bk, value: eval_subset(Some(bk)) })
            .collect(),
    }
}

// ---------------------------------------------------------------------
// Point protocol: threshold-swept AP/AR/F1 with RE/AE
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadialPointReport {
    pub ap: f64,
    pub ar: f64,
    pub f1: f64,
    /// Mean |range error| (m) over matched pairs, per threshold instance.
    pub range_error: Option<f64>,
    /// Mean |azimuth error| (rad) over matched pairs, per threshold instance.
    pub azimuth_error: Option<f64>,
}

/// AP and AR averaged over score thresholds 0.1..0.9 (step 0.1) with BEV
/// IoU matching at 0.5; F1 = 2·AP·AR/(AP+AR). Range/azimuth errors average
/// over every (threshold, matched pair) instance.
pub fn radial_point_metrics(frames: &[Frame]) -> RadialPointReport {
    const IOU_AT: f64 = 0.5;
    let mut precisions = Vec::with_capacity(9);
    let mut recalls = Vec::with_capacity(9);
    let mut abs_range_errors: Vec<f64> = Vec::new();
    let mut abs_azimuth_errors: Vec<f64> = Vec::new();

    for k in 1..=9 {
        let tau = k as f64 / 10.0;
        let mut tp = 0usize;
        let mut kept_total = 0usize;
        let mut gt_total = 0usize;
        for frame in frames {
            let kept: Vec<Detection> = frame
                .predictions
                .iter()
                .filter(|p| p.score >= tau)
                .cloned()
                .collect();
            kept_total += kept.len();
            gt_total += frame.ground_truths.len();
            let matches = match_greedy(&kept, &frame.ground_truths, bev_iou, IOU_AT);
            for (p, m) in kept.iter().zip(matches.pred_matches.iter()) {
                if let Some((gi, _)) = m {
                    tp += 1;
                    let g = &frame.ground_truths[*gi];
                    let (rho_p, phi_p, _) = p.bbox.center_polar();
                    let (rho_g, phi_g, _) = g.center_polar();
                    abs_range_errors.push((rho_p - rho_g).abs());
                    abs_azimuth_errors.push(wrap_angle(phi_p - phi_g).abs());
                }
            }
        }
        let precision = if kept_total == 0 {
            if gt_total == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            tp as f64 / kept_total as f64
        };
        let recall = if gt_total == 0 { 1.0 } else { tp as f64 / gt_total as f64 };
        precisions.push(precision);
        recalls.push(recall);
    }

    let ap = precisions.iter().sum::<f64>() / precisions.len() as f64;
    let ar = recalls.iter().sum::<f64>() / recalls.len() as f64;
    let f1 = if ap + ar > 0.0 { 2.0 * ap * ar / (ap + ar) } else { 0.0 };
    let mean = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    RadialPointReport {
        ap,
        ar,
        f1,
        range_error: mean(&abs_range_errors),
        azimuth_error: mean(&abs_azimuth_errors),
    }
}

// ---------------------------------------------------------------------
// Translation / scale / orientation errors
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TranslationScaleOrientation {
    /// Mean 2D center distance (m).
    pub ate: f64,
    /// Mean 1 − IoU after aligning centers and yaw (pure scale mismatch).
    pub ase: f64,
    /// Mean absolute yaw difference wrapped to [0, π].
    pub aoe: f64,
}

/// Errors of matched (prediction, ground truth) pairs; None without pairs.
pub fn nuscenes_errors(pairs: &[(Box3D, Box3D)]) -> Option<TranslationScaleOrientation> {
    if pairs.is_empty() {
        return None;
    }
    let n = pairs.len() as f64;
    let mut ate = 0.0;
    let mut ase = 0.0;
    let mut aoe = 0.0;
    for (p, g) in pairs {
        ate += (p.center[0] - g.center[0]).hypot(p.center[1] - g.center[1]);
        let overlap = p.dims[0].min(g.dims[0]) * p.dims[1].min(g.dims[1]);
        let union = p.dims[0] * p.dims[1] + g.dims[0] * g.dims[1] - overlap;
        ase += 1.0 - overlap / union;
        aoe += wrap_angle(p.yaw - g.yaw).abs();
    }
    Some(TranslationScaleOrientation { ate: ate / n, ase: ase / n, aoe: aoe / n })
}

/// Matched pairs at an IoU threshold, for feeding [`nuscenes_errors`].
pub fn matched_pairs<F>(frames: &[Frame], iou_fn: F, threshold: f64) -> Vec<(Box3D, Box3D)>
where
    F: Fn(&Box3D, &Box3D) -> f64 + Copy,
{
    let mut pairs = Vec::new();
    for frame in frames {
        let matches = match_greedy(&frame.predictions, &frame.ground_truths, iou_fn, threshold);
        for (p, m) in frame.predictions.iter().zip(matches.pred_matches.iter()) {
            if let Some((gi, _)) = m {
                pairs.push((p.bbox, frame.ground_truths[*gi]));
            }
        }
    }
    pairs
}

// ---------------------------------------------------------------------
// Recall
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecallReport {
    pub overall: Option<f64>,
    pub per_bucket: Vec<BucketValue>,
}

/// Fraction of ground truths matched by any prediction at the threshold
/// (greedy, score descending); absent when a subset has no ground truths.
pub fn recall_at<F>(
    frames: &[Frame],
    iou_fn: F,
    threshold: f64,
    buckets: &[(f64, f64)],
) -> RecallReport
where
    F: Fn(&Box3D, &Box3D) -> f64 + Copy,
{
    let eval_subset = |bucket: Option<(f64, f64)>| -> Option<f64> {
        let mut matched = 0usize;
        let mut total = 0usize;
        for frame in frames {
            let gts: Vec<Box3D> = frame
                .ground_truths
                .iter()
                .filter(|g| bucket.is_none_or(|bk| in_bucket(g.range(), bk)))
                .cloned()
                .collect();
            let preds: Vec<Detection> = frame
                .predictions
                .iter()
                .filter(|p| bucket.is_none_or(|bk| in_bucket(p.bbox.range(), bk)))
                .cloned()
                .collect();
            total += gts.len();
            let m = match_greedy(&preds, &gts, iou_fn, threshold);
            matched += m.gt_matched.iter().filter(|x| **x).count();
        }
        if total == 0 {
            None
        } else {
            Some(matched as f64 / total as f64)
        }
    };
    RecallReport {
        overall: eval_subset(None),
        per_bucket: buckets
            .iter()
            .map(|&bk| BucketValue { bucket: bk, value: eval_subset(Some(bk)) })
            .collect(),
    }
}
