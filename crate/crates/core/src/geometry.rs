//! Polar BEV grid and radar↔camera geometry.
//!
//! A BEV query at polar cell (r_bev, φ_bev) is a pillar of infinite height
//! at `x_R = r·cos φ`, `y_R = r·sin φ`. Projecting the pillar through the
//! rig extrinsics `p_C = R·p_R + T` and a pinhole camera
//! `x_I = u0 + fx·x_C/z_C` lands on a single image column exactly when the
//! rotation satisfies
//!
//! ```text
//! c1 = R[0][2] = sinγ·sinα + cosγ·sinβ·cosα = 0
//! c3 = R[2][2] = cosβ·cosα                  = 0
//! ```
//!
//! under the Euler convention `R = R_z(γ)·R_y(β)·R_x(α)` (that convention is
//! forced: it is the one whose c1/c3 entries take the closed forms above).
//! The admissible Euler angles form three families:
//!
//! ```text
//! 1. β =  π/2, γ =  α ± π/2
//! 2. β = -π/2, γ = -α ± π/2
//! 3. α = ±π/2, γ ∈ {0, π}, β free
//! ```
//!
//! Real rig calibrations only satisfy the condition approximately;
//! [`column_condition`] reports the squared residuals (c1², c3²) and
//! [`column_drift_bound`] gives a first-order cap on how far the column
//! wanders as the pillar height varies.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

/// Orthogonality/determinant tolerance for programmatically built rotations.
pub const STRICT_ROTATION_TOL: f64 = 1e-9;

/// Tolerance for calibrations ingested from files: measured rigs publish
/// rounded matrix entries, so RᵀR deviates from I at the rounding scale.
pub const MEASURED_ROTATION_TOL: f64 = 1e-2;

/// Pinhole intrinsics: focal lengths and principal point, in pixels.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
}

/// Camera intrinsics plus radar→camera extrinsics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationSet {
    intrinsics: Intrinsics,
    rotation: Mat3,
    translation: Vec3,
}

fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for (k, bk) in b.iter().enumerate() {
                out[i][j] += a[i][k] * bk[j];
            }
        }
    }
    out
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

impl CalibrationSet {
    /// Validate and build. `rotation_tol` bounds both `max|RᵀR - I|` and
    /// `|det R - 1|`; use [`STRICT_ROTATION_TOL`] for synthetic rotations
    /// and [`MEASURED_ROTATION_TOL`] for rig calibration files.
    pub fn new(
        intrinsics: Intrinsics,
        rotation: Mat3,
        translation: Vec3,
        rotation_tol: f64,
    ) -> Result<Self> {
        if !(intrinsics.fx > 0.0) || !(intrinsics.fy > 0.0) {
            return Err(Error::Config("focal lengths must be positive".into()));
        }
        if !intrinsics.u0.is_finite() || !intrinsics.v0.is_finite() {
            return Err(Error::Config("principal point must be finite".into()));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("translation must be finite".into()));
        }
        let mut rt = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                rt[i][j] = rotation[j][i];
            }
        }
        let gram = mat_mul(&rt, &rotation);
        let mut max_dev: f64 = 0.0;
        for (i, row) in gram.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                max_dev = max_dev.max((v - target).abs());
            }
        }
        if max_dev > rotation_tol {
            return Err(Error::Config(format!(
                "rotation is not orthogonal: max|RᵀR - I| = {max_dev:.3e} > {rotation_tol:.1e}"
            )));
        }
        let det = det3(&rotation);
        if (det - 1.0).abs() > rotation_tol {
            return Err(Error::Config(format!(
                "rotation determinant {det} deviates from 1 beyond {rotation_tol:.1e}"
            )));
        }
        Ok(Self { intrinsics, rotation, translation })
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.intrinsics
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Load from the JSON form
    /// `{"fx":..,"fy":..,"u0":..,"v0":..,"R":[[..],[..],[..]],"T":[..]}`
    /// using the measured-rig rotation tolerance.
    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct CalibFile {
            fx: f64,
            fy: f64,
            u0: f64,
            v0: f64,
            #[serde(rename = "R")]
            r: Mat3,
            #[serde(rename = "T")]
            t: Vec3,
        }
        let f: CalibFile = serde_json::from_str(text)?;
        Self::new(
            Intrinsics { fx: f.fx, fy: f.fy, u0: f.u0, v0: f.v0 },
            f.r,
            f.t,
            MEASURED_ROTATION_TOL,
        )
    }
}

/// Polar→Cartesian in the radar BEV plane: `x = r·cos φ`, `y = r·sin φ`.
pub fn polar_to_cartesian(r_bev: f64, phi_bev: f64) -> (f64, f64) {
    (r_bev * phi_bev.cos(), r_bev * phi_bev.sin())
}

/// Cartesian→polar inverse; φ in (-π, π].
pub fn cartesian_to_polar(x: f64, y: f64) -> (f64, f64) {
    (x.hypot(y), y.atan2(x))
}

/// A projected pixel with its camera-frame depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelProjection {
    pub x: f64,
    pub y: f64,
    /// z_C, the depth along the camera optical axis.
    pub depth: f64,
}

/// Radar-frame point expressed in the camera frame: `R·p + T`.
pub fn camera_frame(p: &Vec3, calib: &CalibrationSet) -> Vec3 {
    let r = mat_vec(calib.rotation(), p);
    [
        r[0] + calib.translation()[0],
        r[1] + calib.translation()[1],
        r[2] + calib.translation()[2],
    ]
}

/// Pinhole projection of a radar-frame point. Returns `None` when the point
/// is not in front of the camera (z_C ≤ 0), in which case no pixel exists.
pub fn project_point(p: &Vec3, calib: &CalibrationSet) -> Option<PixelProjection> {
    let c = camera_frame(p, calib);
    if c[2] <= 0.0 {
        return None;
    }
    let k = calib.intrinsics();
    Some(PixelProjection {
        x: k.u0 + k.fx * c[0] / c[2],
        y: k.v0 + k.fy * c[1] / c[2],
        depth: c[2],
    })
}

/// Image column of the pillar at (r_bev, φ_bev), evaluated at reference
/// height `z_ref`. `None` marks the query image-invisible (behind camera).
pub fn column_of_query(
    r_bev: f64,
    phi_bev: f64,
    z_ref: f64,
    calib: &CalibrationSet,
) -> Option<f64> {
    let (x, y) = polar_to_cartesian(r_bev, phi_bev);
    project_point(&[x, y, z_ref], calib).map(|p| p.x)
}

/// Squared pillar-to-column residuals `(c1², c3²)` of a rotation; both are
/// zero exactly when every pillar projects to a single column.
pub fn column_condition(rotation: &Mat3) -> (f64, f64) {
    let c1 = rotation[0][2];
    let c3 = rotation[2][2];
    (c1 * c1, c3 * c3)
}

/// First-order bound on the column drift `|x_I(z_ref + dz) - x_I(z_ref)|`
/// for an imperfect calibration, evaluated at `z_ref = 0`:
///
/// ```text
/// fx · (|c1| + |c3|·|x_C/z_C|) · |dz| / z_C · 1.1
/// ```
///
/// The 10% margin covers the second-order remainder while `|c3·dz| ≪ z_C`.
/// `None` when the pillar base is behind the camera.
pub fn column_drift_bound(
    r_bev: f64,
    phi_bev: f64,
    dz: f64,
    calib: &CalibrationSet,
) -> Option<f64> {
    let (x, y) = polar_to_cartesian(r_bev, phi_bev);
    let c = camera_frame(&[x, y, 0.0], calib);
    if c[2] <= 0.0 {
        return None;
    }
    let c1 = calib.rotation()[0][2].abs();
    let c3 = calib.rotation()[2][2].abs();
    let fx = calib.intrinsics().fx;
    Some(fx * (c1 + c3 * (c[0] / c[2]).abs()) * dz.abs() / c[2] * 1.1)
}

/// Wrap an angle to (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}

/// Absolute angular distance on the circle, in [0, π].
fn circ_dist(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

/// Euler angles under the composition `R = R_z(yaw)·R_y(pitch)·R_x(roll)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

/// Compose the rotation `R_z(γ)·R_y(β)·R_x(α)`.
pub fn euler_to_rotation(e: &EulerAngles) -> Mat3 {
    let (sa, ca) = e.roll.sin_cos();
    let (sb, cb) = e.pitch.sin_cos();
    let (sg, cg) = e.yaw.sin_cos();
    [
        [cg * cb, cg * sb * sa - sg * ca, cg * sb * ca + sg * sa],
        [sg * cb, sg * sb * sa + cg * ca, sg * sb * ca - cg * sa],
        [-sb, cb * sa, cb * ca],
    ]
}

/// Recover Euler angles; pitch lands in [-π/2, π/2]. At gimbal lock
/// (|cos β| < 1e-9) only roll∓yaw is observable, so the representative with
/// yaw = 0 is returned.
pub fn rotation_to_euler(r: &Mat3) -> EulerAngles {
    let sin_pitch = -r[2][0];
    let cos_pitch = (r[2][1] * r[2][1] + r[2][2] * r[2][2]).sqrt();
    if cos_pitch < 1e-9 {
        if sin_pitch > 0.0 {
            // R = [[0, sin(α-γ), cos(α-γ)], [0, cos(α-γ), -sin(α-γ)], [-1, 0, 0]]
            EulerAngles { roll: r[0][1].atan2(r[0][2]), pitch: PI / 2.0, yaw: 0.0 }
        } else {
            // R = [[0, -sin(α+γ), -cos(α+γ)], [0, cos(α+γ), -sin(α+γ)], [1, 0, 0]]
            EulerAngles { roll: (-r[0][1]).atan2(-r[0][2]), pitch: -PI / 2.0, yaw: 0.0 }
        }
    } else {
        EulerAngles {
            roll: r[2][1].atan2(r[2][2]),
            pitch: sin_pitch.atan2(cos_pitch),
            yaw: r[1][0].atan2(r[0][0]),
        }
    }
}

/// Test membership (within `tol`, angles compared on the circle) in the
/// three admissible families that zero both pillar-to-column residuals.
pub fn in_solution_family(e: &EulerAngles, tol: f64) -> bool {
    let f1 = circ_dist(e.pitch, PI / 2.0) <= tol
        && (circ_dist(e.yaw, e.roll + PI / 2.0) <= tol
            || circ_dist(e.yaw, e.roll - PI / 2.0) <= tol);
    let f2 = circ_dist(e.pitch, -PI / 2.0) <= tol
        && (circ_dist(e.yaw, -e.roll + PI / 2.0) <= tol
            || circ_dist(e.yaw, -e.roll - PI / 2.0) <= tol);
    let f3 = (circ_dist(e.roll, PI / 2.0) <= tol || circ_dist(e.roll, -PI / 2.0) <= tol)
        && (circ_dist(e.yaw, 0.0) <= tol || circ_dist(e.yaw, PI) <= tol);
    f1 || f2 || f3
}

/// Uniform polar BEV grid for one feature level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolarGrid {
    pub n_range: usize,
    pub n_azimuth: usize,
    pub channels: usize,
    /// [r_min, r_max] in meters, r_min > 0.
    pub range_span: (f64, f64),
    /// [φ_min, φ_max] in radians.
    pub azimuth_span: (f64, f64),
    pub level: usize,
}

impl PolarGrid {
    pub fn validate(&self) -> Result<()> {
        if self.n_range == 0 || self.n_azimuth == 0 || self.channels == 0 {
            return Err(Error::Config("grid extents must be nonzero".into()));
        }
        if !(self.range_span.0 > 0.0) || !(self.range_span.1 > self.range_span.0) {
            return Err(Error::Config("range span must satisfy 0 < r_min < r_max".into()));
        }
        if !(self.azimuth_span.1 > self.azimuth_span.0) {
            return Err(Error::Config("azimuth span must be increasing".into()));
        }
        Ok(())
    }

    pub fn range_step(&self) -> f64 {
        (self.range_span.1 - self.range_span.0) / self.n_range as f64
    }

    pub fn azimuth_step(&self) -> f64 {
        (self.azimuth_span.1 - self.azimuth_span.0) / self.n_azimuth as f64
    }

    /// Center range of bin i.
    pub fn range_center(&self, i: usize) -> f64 {
        self.range_span.0 + (i as f64 + 0.5) * self.range_step()
    }

    /// Center azimuth of bin j.
    pub fn azimuth_center(&self, j: usize) -> f64 {
        self.azimuth_span.0 + (j as f64 + 0.5) * self.azimuth_step()
    }

    /// Bin containing (r, φ), if inside the grid.
    pub fn bin_of(&self, r: f64, phi: f64) -> Option<(usize, usize)> {
        if r < self.range_span.0 || r >= self.range_span.1 {
            return None;
        }
        if phi < self.azimuth_span.0 || phi >= self.azimuth_span.1 {
            return None;
        }
        let i = ((r - self.range_span.0) / self.range_step()) as usize;
        let j = ((phi - self.azimuth_span.0) / self.azimuth_step()) as usize;
        Some((i.min(self.n_range - 1), j.min(self.n_azimuth - 1)))
    }
}
