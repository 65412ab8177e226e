//! Oriented 3D boxes, their polar regression encoding, and the detection
//! head losses.
//!
//! A box is encoded relative to a polar reference point (ρ, φ, z) as the
//! 8-vector
//!
//! ```text
//! (dρ, dφ, dz, log l, log w, log h, sin(θ - φ), cos(θ - φ))
//! ```
//!
//! where dφ is an angular difference in radians. Decoding uses atan2, so the
//! (sin, cos) pair does not need to be normalized.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::wrap_angle;

/// An oriented box: Cartesian center, dims (length along the heading, width
/// across, height), and yaw in (-π, π].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
}

impl Box3D {
    /// Build with validated dimensions; the yaw is wrapped to (-π, π].
    pub fn new(center: [f64; 3], dims: [f64; 3], yaw: f64) -> Result<Self> {
        if dims.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Input(format!("box dims must be positive, got {dims:?}")));
        }
        if center.iter().any(|c| !c.is_finite()) || !yaw.is_finite() {
            return Err(Error::Input("box fields must be finite".into()));
        }
        Ok(Self { center, dims, yaw: wrap_angle(yaw) })
    }

    /// Build from a polar center (ρ, φ, z).
    pub fn from_polar(rho: f64, phi: f64, z: f64, dims: [f64; 3], yaw: f64) -> Result<Self> {
        Self::new([rho * phi.cos(), rho * phi.sin(), z], dims, yaw)
    }

    /// Center as (ρ, φ, z).
    pub fn center_polar(&self) -> (f64, f64, f64) {
        (
            self.center[0].hypot(self.center[1]),
            self.center[1].atan2(self.center[0]),
            self.center[2],
        )
    }

    /// BEV range of the center from the origin.
    pub fn range(&self) -> f64 {
        self.center[0].hypot(self.center[1])
    }
}

/// A scored detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub score: f64,
    pub bbox: Box3D,
}

/// Polar reference point a regression target is measured from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferencePoint {
    pub rho: f64,
    pub phi: f64,
    pub z: f64,
}

/// The 8-component regression vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionTarget {
    pub d_rho: f64,
    pub d_phi: f64,
    pub d_z: f64,
    pub log_l: f64,
    pub log_w: f64,
    pub log_h: f64,
    pub sin_yaw: f64,
    pub cos_yaw: f64,
}

impl RegressionTarget {
    pub fn as_array(&self) -> [f64; 8] {
        [
            self.d_rho, self.d_phi, self.d_z, self.log_l, self.log_w, self.log_h,
            self.sin_yaw, self.cos_yaw,
        ]
    }
}

/// Encode a box relative to a reference point: center offsets in (ρ, φ, z),
/// log dims, and the heading relative to the reference azimuth as
/// (sin, cos).
pub fn encode_box(b: &Box3D, reference: &ReferencePoint) -> Result<RegressionTarget> {
    if b.dims.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Input("cannot encode a box with nonpositive dims".into()));
    }
    let (rho, phi, z) = b.center_polar();
    let rel = b.yaw - reference.phi;
    Ok(RegressionTarget {
        d_rho: rho - reference.rho,
        d_phi: phi - reference.phi,
        d_z: z - reference.z,
        log_l: b.dims[0].ln(),
        log_w: b.dims[1].ln(),
        log_h: b.dims[2].ln(),
        sin_yaw: rel.sin(),
        cos_yaw: rel.cos(),
    })
}

/// Invert [`encode_box`]. The (sin, cos) pair may be unnormalized; atan2
/// recovers the heading at any scale.
pub fn decode_box(t: &RegressionTarget, reference: &ReferencePoint) -> Box3D {
    let rho = reference.rho + t.d_rho;
    let phi = reference.phi + t.d_phi;
    let z = reference.z + t.d_z;
    let yaw = wrap_angle(t.sin_yaw.atan2(t.cos_yaw) + reference.phi);
    Box3D {
        center: [rho * phi.cos(), rho * phi.sin(), z],
        dims: [t.log_l.exp(), t.log_w.exp(), t.log_h.exp()],
        yaw,
    }
}

/// Focal loss `-α_t (1-p_t)^γ log(p_t)` for a binary label; `p` is clamped
/// to [1e-7, 1-1e-7].
pub fn focal_loss(p: f64, y: bool, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    let (p_t, alpha_t) = if y { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    -alpha_t * (1.0 - p_t).powf(gamma) * p_t.ln()
}

/// Mean absolute difference over the unmasked components; an empty mask
/// yields 0.
pub fn l1_loss(pred: &RegressionTarget, target: &RegressionTarget, mask: &[bool; 8]) -> f64 {
    let p = pred.as_array();
    let t = target.as_array();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..8 {
        if mask[i] {
            sum += (p[i] - t[i]).abs();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn identity_case_encodes_to_zeros_and_unit_cos() {
        let reference = ReferencePoint { rho: 12.0, phi: 0.4, z: -0.5 };
        let b = Box3D::from_polar(12.0, 0.4, -0.5, [1.0, 1.0, 1.0], 0.4).unwrap();
        let t = encode_box(&b, &reference).unwrap();
        let arr = t.as_array();
        for v in &arr[..7] {
            assert!(v.abs() < 1e-12, "{arr:?}");
        }
        assert!((t.cos_yaw - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_law_on_dims() {
        // l = e² → log l = 2
        let reference = ReferencePoint { rho: 5.0, phi: 0.0, z: 0.0 };
        let b = Box3D::from_polar(5.0, 0.0, 0.0, [std::f64::consts::E.powi(2), 1.0, 1.0], 0.0)
            .unwrap();
        let t = encode_box(&b, &reference).unwrap();
        assert!((t.log_l - 2.0).abs() < 1e-12);
    }

    #[test]
    fn decode_trivial_vectors() {
        let reference = ReferencePoint { rho: 3.0, phi: 0.7, z: 0.2 };
        let t = RegressionTarget {
            d_rho: 0.0,
            d_phi: 0.0,
            d_z: 0.0,
            log_l: 0.0,
            log_w: 0.0,
            log_h: 0.0,
            sin_yaw: 0.0,
            cos_yaw: 1.0,
        };
        let b = decode_box(&t, &reference);
        let (rho, phi, z) = b.center_polar();
        assert!((rho - 3.0).abs() < 1e-12 && (phi - 0.7).abs() < 1e-12 && (z - 0.2).abs() < 1e-12);
        assert_eq!(b.dims, [1.0, 1.0, 1.0]);
        assert!((b.yaw - 0.7).abs() < 1e-12);

        // (sin, cos) = (1, 0) at reference azimuth 0 → yaw π/2
        let t2 = RegressionTarget { sin_yaw: 1.0, cos_yaw: 0.0, ..t };
        let b2 = decode_box(&t2, &ReferencePoint { rho: 3.0, phi: 0.0, z: 0.0 });
        assert!((b2.yaw - PI / 2.0).abs() < 1e-12);

        // scaling the (sin, cos) pair decodes the same yaw
        let t3 = RegressionTarget { sin_yaw: 2.0 * 0.6, cos_yaw: 2.0 * 0.8, ..t };
        let t4 = RegressionTarget { sin_yaw: 0.6, cos_yaw: 0.8, ..t };
        assert_eq!(
            decode_box(&t3, &reference).yaw,
            decode_box(&t4, &reference).yaw
        );
    }

    #[test]
    fn encode_decode_round_trip() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let b = Box3D::from_polar(
                rng.random_range(1.0..90.0),
                rng.random_range(-1.4..1.4),
                rng.random_range(-2.0..2.0),
                [
                    rng.random_range(0.3..8.0),
                    rng.random_range(0.3..4.0),
                    rng.random_range(0.5..3.0),
                ],
                rng.random_range(-PI..PI),
            )
            .unwrap();
            let reference = ReferencePoint {
                rho: rng.random_range(1.0..90.0),
                phi: rng.random_range(-1.4..1.4),
                z: rng.random_range(-2.0..2.0),
            };
            let back = decode_box(&encode_box(&b, &reference).unwrap(), &reference);
            for i in 0..3 {
                assert!((b.center[i] - back.center[i]).abs() < 1e-9);
                assert!((b.dims[i] - back.dims[i]).abs() < 1e-9);
            }
            assert!(wrap_angle(b.yaw - back.yaw).abs() < 1e-9);
        }
    }

    #[test]
    fn yaw_periodicity() {
        let reference = ReferencePoint { rho: 10.0, phi: 0.3, z: 0.0 };
        let a = Box3D::new([5.0, 2.0, 0.0], [4.0, 2.0, 1.5], 0.9).unwrap();
        let b = Box3D::new([5.0, 2.0, 0.0], [4.0, 2.0, 1.5], 0.9 + 2.0 * PI).unwrap();
        let ta = encode_box(&a, &reference).unwrap().as_array();
        let tb = encode_box(&b, &reference).unwrap().as_array();
        for (x, y) in ta.iter().zip(tb.iter()) {
            assert!((x - y).abs() < 1e-12, "{ta:?} vs {tb:?}");
        }
    }

    #[test]
    fn focal_loss_values() {
        // perfectly confident and correct → 0
        assert!(focal_loss(1.0, true, 0.25, 2.0) < 1e-5);
        // closed form at p = 1/2: 0.25 · 0.25 · ln 2
        let expect = 0.25 * 0.25 * (2.0_f64).ln();
        assert!((focal_loss(0.5, true, 0.25, 2.0) - expect).abs() < 1e-15);
        // γ = 0, α = 1/2 halves the plain cross-entropy
        for p in [0.1f64, 0.4, 0.9] {
            let ce = -p.ln();
            assert!((focal_loss(p, true, 0.5, 0.0) - 0.5 * ce).abs() < 1e-12);
            let ce0 = -(1.0 - p).ln();
            assert!((focal_loss(p, false, 0.5, 0.0) - 0.5 * ce0).abs() < 1e-12);
        }
    }

    #[test]
    fn focal_loss_monotone_and_nonnegative() {
        let mut prev = f64::INFINITY;
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let loss = focal_loss(p, true, 0.25, 2.0);
            assert!(loss >= 0.0);
            assert!(loss < prev, "focal loss not decreasing in p_t at p={p}");
            prev = loss;
        }
    }

    #[test]
    fn l1_loss_cases() {
        let reference = ReferencePoint { rho: 1.0, phi: 0.0, z: 0.0 };
        let b = Box3D::new([3.0, 1.0, 0.2], [2.0, 1.0, 1.0], 0.3).unwrap();
        let t = encode_box(&b, &reference).unwrap();
        assert_eq!(l1_loss(&t, &t, &[true; 8]), 0.0);

        let shifted = RegressionTarget {
            d_rho: t.d_rho + 1.0,
            d_phi: t.d_phi + 1.0,
            d_z: t.d_z + 1.0,
            log_l: t.log_l + 1.0,
            log_w: t.log_w + 1.0,
            log_h: t.log_h + 1.0,
            sin_yaw: t.sin_yaw + 1.0,
            cos_yaw: t.cos_yaw + 1.0,
        };
        assert!((l1_loss(&shifted, &t, &[true; 8]) - 1.0).abs() < 1e-12);
        assert_eq!(l1_loss(&shifted, &t, &[false; 8]), 0.0);

        // naive elementwise oracle on a random pair
        let p = RegressionTarget { d_rho: 0.3, d_phi: -0.4, ..t };
        let mask = [true, false, true, true, true, false, true, true];
        let pa = p.as_array();
        let ta = t.as_array();
        let mut expect = 0.0;
        let mut n = 0;
        for i in 0..8 {
            if mask[i] {
                expect += (pa[i] - ta[i]).abs();
                n += 1;
            }
        }
        assert_eq!(l1_loss(&p, &t, &mask), expect / n as f64);
    }

    #[test]
    fn triangle_inequality() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let random_target = |rng: &mut rand_chacha::ChaCha8Rng| RegressionTarget {
            d_rho: rng.random_range(-2.0..2.0),
            d_phi: rng.random_range(-2.0..2.0),
            d_z: rng.random_range(-2.0..2.0),
            log_l: rng.random_range(-2.0..2.0),
            log_w: rng.random_range(-2.0..2.0),
            log_h: rng.random_range(-2.0..2.0),
            sin_yaw: rng.random_range(-2.0..2.0),
            cos_yaw: rng.random_range(-2.0..2.0),
        };
        for _ in 0..200 {
            let a = random_target(&mut rng);
            let b = random_target(&mut rng);
            let c = random_target(&mut rng);
            let mask = [true; 8];
            assert!(
                l1_loss(&a, &c, &mask) <= l1_loss(&a, &b, &mask) + l1_loss(&b, &c, &mask) + 1e-12
            );
        }
    }

    #[test]
    fn nonpositive_dims_rejected() {
        assert!(Box3D::new([0.0; 3], [0.0, 1.0, 1.0], 0.0).is_err());
        assert!(Box3D::new([0.0; 3], [1.0, -2.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn encoded_targets_satisfy_sin_cos_identity() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let b = Box3D::from_polar(
                rng.random_range(1.0..50.0),
                rng.random_range(-1.0..1.0),
                0.0,
                [1.0, 1.0, 1.0],
                rng.random_range(-PI..PI),
            )
            .unwrap();
            let reference = ReferencePoint { rho: 1.0, phi: 0.2, z: 0.0 };
            let t = encode_box(&b, &reference).unwrap();
            assert!((t.sin_yaw * t.sin_yaw + t.cos_yaw * t.cos_yaw - 1.0).abs() < 1e-9);
        }
    }
}
