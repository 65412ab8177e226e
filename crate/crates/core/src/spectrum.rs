//! The lossless FFT chain: ADC → RT → RD → (READ / RA).
//!
//! All transforms are unnormalized forward DFTs,
//! `X[k] = Σ_n x[n]·w[n]·exp(-2πi·k·n/N)`, so each stage satisfies the exact
//! Parseval identity `Σ|X|² = N · Σ|w·x|²`. Spectra carry an axis table
//! (kind, length, physical step, unit) plus the carrier wavelength, so later
//! stages and file readers can recover every bin scale without the radar
//! configuration.
//!
//! Stage layouts:
//!
//! ```text
//! RT    (channel, chirp, range_bin)           complex
//! RD    (channel, range_bin, doppler_bin)     complex
//! READ  (range_bin, azimuth_bin, doppler_bin) complex
//! RA    (range_bin, azimuth_bin)              real magnitude map
//! ```
//!
//! The channel axis step is recorded in wavelengths, which makes the
//! angle-FFT bin mapping `sin θ = b' / (step_wl · n_bins)` self-contained
//! (`b'` is the signed bin index).

use ndarray::{ArrayD, Dimension, IxDyn};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::sim::AdcCube;

/// Semantic kind of one spectrum axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisKind {
    FastTime,
    Chirp,
    RangeBin,
    DopplerBin,
    Channel,
    AzimuthBin,
    ElevationBin,
}

/// Physical unit of an axis step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisUnit {
    Seconds,
    Meters,
    MetersPerSecond,
    /// Element spacing expressed in carrier wavelengths.
    Wavelengths,
    /// sin(azimuth) per bin, signed-bin convention.
    SineAzimuth,
    Dimensionless,
}

/// One axis of a spectrum grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub kind: AxisKind,
    pub len: usize,
    pub step: f64,
    pub unit: AxisUnit,
}

/// Processing stage tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Rt,
    Rd,
    Read,
    Ra,
}

impl std::str::FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rt" => Ok(Stage::Rt),
            "rd" => Ok(Stage::Rd),
            "read" => Ok(Stage::Read),
            "ra" => Ok(Stage::Ra),
            other => Err(Error::Input(format!("unknown stage `{other}`"))),
        }
    }
}

/// Grid payload: complex for RT/RD/READ, real for RA.
#[derive(Debug, Clone)]
pub enum SpectrumData {
    Complex(ArrayD<Complex64>),
    Real(ArrayD<f64>),
}

/// A spectrum grid with explicit axis semantics.
#[derive(Debug, Clone)]
pub struct Spectrum {
    stage: Stage,
    /// Carrier wavelength (m); fixes the Doppler and angle scales.
    wavelength: f64,
    axes: Vec<Axis>,
    data: SpectrumData,
}

impl Spectrum {
    /// Construct and validate stage/axis/shape consistency.
    pub fn new(
        stage: Stage,
        wavelength: f64,
        axes: Vec<Axis>,
        data: SpectrumData,
    ) -> Result<Self> {
        if !(wavelength > 0.0) {
            return Err(Error::Contract("wavelength must be positive".into()));
        }
        let shape: Vec<usize> = match &data {
            SpectrumData::Complex(a) => a.shape().to_vec(),
            SpectrumData::Real(a) => a.shape().to_vec(),
        };
        if shape.len() != axes.len() {
            return Err(Error::Contract(format!(
                "axis count {} does not match rank {}",
                axes.len(),
                shape.len()
            )));
        }
        for (axis, &len) in axes.iter().zip(shape.iter()) {
            if axis.len != len {
                return Err(Error::Contract(format!(
                    "axis {:?} length {} does not match data extent {len}",
                    axis.kind, axis.len
                )));
            }
        }
        let kinds: Vec<AxisKind> = axes.iter().map(|a| a.kind).collect();
        let ok = match stage {
            Stage::Rt => {
                matches!(data, SpectrumData::Complex(_))
                    && kinds == [AxisKind::Channel, AxisKind::Chirp, AxisKind::RangeBin]
            }
            Stage::Rd => {
                matches!(data, SpectrumData::Complex(_))
                    && kinds == [AxisKind::Channel, AxisKind::RangeBin, AxisKind::DopplerBin]
            }
            Stage::Read => {
                matches!(data, SpectrumData::Complex(_))
                    && (kinds
                        == [AxisKind::RangeBin, AxisKind::AzimuthBin, AxisKind::DopplerBin]
                        || kinds
                            == [
                                AxisKind::RangeBin,
                                AxisKind::ElevationBin,
                                AxisKind::AzimuthBin,
                                AxisKind::DopplerBin,
                            ])
            }
            Stage::Ra => {
                matches!(data, SpectrumData::Real(_))
                    && kinds == [AxisKind::RangeBin, AxisKind::AzimuthBin]
            }
        };
        if !ok {
            return Err(Error::Contract(format!(
                "stage {stage:?} is inconsistent with axes {kinds:?}"
            )));
        }
        Ok(Self { stage, wavelength, axes, data })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    /// Find an axis by kind; returns (position, axis).
    pub fn axis(&self, kind: AxisKind) -> Option<(usize, &Axis)> {
        self.axes.iter().enumerate().find(|(_, a)| a.kind == kind)
    }

    pub fn data(&self) -> &SpectrumData {
        &self.data
    }

    pub fn complex(&self) -> Result<&ArrayD<Complex64>> {
        match &self.data {
            SpectrumData::Complex(a) => Ok(a),
            SpectrumData::Real(_) => {
                Err(Error::Contract("expected complex spectrum, found real".into()))
            }
        }
    }

    pub fn real(&self) -> Result<&ArrayD<f64>> {
        match &self.data {
            SpectrumData::Real(a) => Ok(a),
            SpectrumData::Complex(_) => {
                Err(Error::Contract("expected real spectrum, found complex".into()))
            }
        }
    }

    /// Total energy Σ|z|² of the grid.
    pub fn energy(&self) -> f64 {
        match &self.data {
            SpectrumData::Complex(a) => a.iter().map(|z| z.norm_sqr()).sum(),
            SpectrumData::Real(a) => a.iter().map(|v| v * v).sum(),
        }
    }
}

/// Tapering window, periodic (DFT-even) form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowKind {
    Rectangular,
    Hann,
    Hamming,
}

/// A window to apply along the transformed axis. Coefficients are generated
/// at exactly the axis length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub kind: WindowKind,
}

impl WindowSpec {
    pub fn rectangular() -> Self {
        Self { kind: WindowKind::Rectangular }
    }

    pub fn hann() -> Self {
        Self { kind: WindowKind::Hann }
    }

    pub fn hamming() -> Self {
        Self { kind: WindowKind::Hamming }
    }

    /// Window coefficients of length `n`. The periodic forms keep on-grid
    /// tones compact: a pure bin-k tone spreads to bins k-1..k+1 only.
    pub fn coefficients(&self, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let x = 2.0 * PI * i as f64 / n as f64;
                match self.kind {
                    WindowKind::Rectangular => 1.0,
                    WindowKind::Hann => 0.5 * (1.0 - x.cos()),
                    WindowKind::Hamming => 0.54 - 0.46 * x.cos(),
                }
            })
            .collect()
    }
}

impl std::str::FromStr for WindowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rect" | "rectangular" => Ok(WindowKind::Rectangular),
            "hann" => Ok(WindowKind::Hann),
            "hamming" => Ok(WindowKind::Hamming),
            other => Err(Error::Input(format!("unknown window kind `{other}`"))),
        }
    }
}

/// Signed bin index for an FFT axis of length `n`: bins past n/2 alias to
/// negative frequencies.
pub fn signed_bin(bin: usize, n: usize) -> i64 {
    if bin < n.div_ceil(2) {
        bin as i64
    } else {
        bin as i64 - n as i64
    }
}

/// Range FFT: transform fast time per (channel, chirp).
///
/// Output stage RT with axes (channel, chirp, range_bin); the range step is
/// `c·T_c·f_s / (2B·N_s)` per bin.
pub fn range_fft(adc: &AdcCube, window: &WindowSpec) -> Result<Spectrum> {
    let cfg = adc.config();
    let n = cfg.n_samples;
    if n < 2 {
        return Err(Error::Contract("range_fft needs at least 2 samples".into()));
    }
    let w = window.coefficients(n);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);

    let mut out = adc.data().to_owned();
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for mut lane in out.rows_mut() {
        for (i, v) in buf.iter_mut().enumerate() {
            *v = lane[i] * w[i];
        }
        fft.process(&mut buf);
        for (i, v) in buf.iter().enumerate() {
            lane[i] = *v;
        }
    }

    let axes = vec![
        Axis {
            kind: AxisKind::Channel,
            len: cfg.n_rx,
            step: cfg.rx_spacing / cfg.wavelength(),
            unit: AxisUnit::Wavelengths,
        },
        Axis {
            kind: AxisKind::Chirp,
            len: cfg.n_chirps,
            step: cfg.chirp_duration,
            unit: AxisUnit::Seconds,
        },
        Axis {
            kind: AxisKind::RangeBin,
            len: n,
            step: cfg.range_bin_spacing(),
            unit: AxisUnit::Meters,
        },
    ];
    Spectrum::new(Stage::Rt, cfg.wavelength(), axes, SpectrumData::Complex(out.into_dyn()))
}

/// Doppler FFT: transform the chirp axis of an RT spectrum.
///
/// Output stage RD with axes (channel, range_bin, doppler_bin); one Doppler
/// bin spans `λ / (2·N_c·T_c)` of radial speed.
pub fn doppler_fft(rt: &Spectrum, window: &WindowSpec) -> Result<Spectrum> {
    if rt.stage() != Stage::Rt {
        return Err(Error::Contract(format!(
            "doppler_fft expects stage Rt, found {:?}",
            rt.stage()
        )));
    }
    let data = rt.complex()?;
    let (n_ch, n_chirps, n_range) = (data.shape()[0], data.shape()[1], data.shape()[2]);
    let chirp_step = rt.axis(AxisKind::Chirp).expect("validated RT").1.step;
    let channel_axis = *rt.axis(AxisKind::Channel).expect("validated RT").1;
    let range_axis = *rt.axis(AxisKind::RangeBin).expect("validated RT").1;

    let w = window.coefficients(n_chirps);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_chirps);

    let mut out = ArrayD::<Complex64>::zeros(IxDyn(&[n_ch, n_range, n_chirps]));
    let mut buf = vec![Complex64::new(0.0, 0.0); n_chirps];
    for c in 0..n_ch {
        for r in 0..n_range {
            for p in 0..n_chirps {
                buf[p] = data[[c, p, r]] * w[p];
            }
            fft.process(&mut buf);
            for d in 0..n_chirps {
                out[[c, r, d]] = buf[d];
            }
        }
    }

    let doppler_step = rt.wavelength() / (2.0 * chirp_step * n_chirps as f64);
    let axes = vec![
        channel_axis,
        range_axis,
        Axis {
            kind: AxisKind::DopplerBin,
            len: n_chirps,
            step: doppler_step,
            unit: AxisUnit::MetersPerSecond,
        },
    ];
    Spectrum::new(Stage::Rd, rt.wavelength(), axes, SpectrumData::Complex(out))
}

/// Split the Doppler axis of an RD spectrum into `n_tx` segments, unstacking
/// the transmitters that DDM shifted by `N_c/n_tx` bins each.
///
/// Virtual channel `k·N_Rx + m` holds segment k of physical channel m. The
/// Doppler axis shrinks to `N_c/n_tx` bins of unchanged width. `n_tx = 1` is
/// the identity.
pub fn ddm_demultiplex(rd: &Spectrum, n_tx: usize) -> Result<Spectrum> {
    if rd.stage() != Stage::Rd {
        return Err(Error::Contract(format!(
            "ddm_demultiplex expects stage Rd, found {:?}",
            rd.stage()
        )));
    }
    if n_tx == 0 {
        return Err(Error::Input("n_tx must be at least 1".into()));
    }
    let data = rd.complex()?;
    let (n_ch, n_range, n_dop) = (data.shape()[0], data.shape()[1], data.shape()[2]);
    if !n_dop.is_multiple_of(n_tx) {
        return Err(Error::Input(format!(
            "Doppler length {n_dop} is not divisible by n_tx {n_tx}"
        )));
    }
    if n_tx == 1 {
        return Ok(rd.clone());
    }
    let seg = n_dop / n_tx;

    let mut out = ArrayD::<Complex64>::zeros(IxDyn(&[n_ch * n_tx, n_range, seg]));
    for k in 0..n_tx {
        for m in 0..n_ch {
            for r in 0..n_range {
                for j in 0..seg {
                    out[[k * n_ch + m, r, j]] = data[[m, r, k * seg + j]];
                }
            }
        }
    }

    let channel_axis = rd.axis(AxisKind::Channel).expect("validated RD").1;
    let doppler_axis = rd.axis(AxisKind::DopplerBin).expect("validated RD").1;
    let range_axis = *rd.axis(AxisKind::RangeBin).expect("validated RD").1;
    let axes = vec![
        Axis { len: n_ch * n_tx, ..*channel_axis },
        range_axis,
        Axis { len: seg, ..*doppler_axis },
    ];
    Spectrum::new(Stage::Rd, rd.wavelength(), axes, SpectrumData::Complex(out))
}

/// Angle FFT: zero-padded transform of the (virtual) channel axis to
/// `n_azimuth_bins`.
///
/// Output stage READ with axes (range_bin, azimuth_bin, doppler_bin). Bin b
/// maps to `sin θ = b' · λ / (spacing · n_azimuth_bins)` with b' the signed
/// bin index; the azimuth axis step records that sine increment.
pub fn angle_fft(rd: &Spectrum, n_azimuth_bins: usize) -> Result<Spectrum> {
    if rd.stage() != Stage::Rd {
        return Err(Error::Contract(format!(
            "angle_fft expects stage Rd, found {:?}",
            rd.stage()
        )));
    }
    let data = rd.complex()?;
    let (n_ch, n_range, n_dop) = (data.shape()[0], data.shape()[1], data.shape()[2]);
    if n_azimuth_bins < n_ch {
        return Err(Error::Input(format!(
            "n_azimuth_bins {n_azimuth_bins} is smaller than channel count {n_ch}"
        )));
    }
    let channel_axis = rd.axis(AxisKind::Channel).expect("validated RD").1;
    if channel_axis.unit != AxisUnit::Wavelengths || !(channel_axis.step > 0.0) {
        return Err(Error::Contract(
            "channel axis must carry a positive spacing in wavelengths".into(),
        ));
    }
    let range_axis = *rd.axis(AxisKind::RangeBin).expect("validated RD").1;
    let doppler_axis = *rd.axis(AxisKind::DopplerBin).expect("validated RD").1;

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_azimuth_bins);
    let mut out = ArrayD::<Complex64>::zeros(IxDyn(&[n_range, n_azimuth_bins, n_dop]));
    let mut buf = vec![Complex64::new(0.0, 0.0); n_azimuth_bins];
    for r in 0..n_range {
        for d in 0..n_dop {
            for v in buf.iter_mut() {
                *v = Complex64::new(0.0, 0.0);
            }
            for c in 0..n_ch {
                buf[c] = data[[c, r, d]];
            }
            fft.process(&mut buf);
            for b in 0..n_azimuth_bins {
                out[[r, b, d]] = buf[b];
            }
        }
    }

    let axes = vec![
        range_axis,
        Axis {
            kind: AxisKind::AzimuthBin,
            len: n_azimuth_bins,
            step: 1.0 / (channel_axis.step * n_azimuth_bins as f64),
            unit: AxisUnit::SineAzimuth,
        },
        doppler_axis,
    ];
    Spectrum::new(Stage::Read, rd.wavelength(), axes, SpectrumData::Complex(out))
}

/// Compress the Doppler axis (and elevation, if present) of a READ tensor by
/// magnitude sum, producing the real range×azimuth map.
pub fn compress_to_ra(read: &Spectrum) -> Result<Spectrum> {
    if read.stage() != Stage::Read {
        return Err(Error::Contract(format!(
            "compress_to_ra expects stage Read, found {:?}",
            read.stage()
        )));
    }
    let data = read.complex()?;
    let (r_pos, range_axis) = read.axis(AxisKind::RangeBin).expect("validated READ");
    let (a_pos, azimuth_axis) = read.axis(AxisKind::AzimuthBin).expect("validated READ");
    let (range_axis, azimuth_axis) = (*range_axis, *azimuth_axis);
    let (n_range, n_az) = (range_axis.len, azimuth_axis.len);

    let mut out = ArrayD::<f64>::zeros(IxDyn(&[n_range, n_az]));
    for (idx, z) in data.indexed_iter() {
        let i = idx.slice()[r_pos];
        let j = idx.slice()[a_pos];
        out[[i, j]] += z.norm();
    }

    Spectrum::new(
        Stage::Ra,
        read.wavelength(),
        vec![range_axis, azimuth_axis],
        SpectrumData::Real(out),
    )
}

/// How a complex grid is flattened into real feature channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComplexFeatureMode {
    /// Real and imaginary parts.
    Iq,
    /// Magnitude and phase (atan2).
    Mp,
}

/// A real-valued tensor with the same axis bookkeeping as [`Spectrum`].
#[derive(Debug, Clone)]
pub struct RealTensor {
    pub data: ArrayD<f64>,
    pub axes: Vec<Axis>,
}

/// Interpret a complex spectrum as real feature channels.
///
/// The channel axis doubles: the first half holds component 0 (re or |z|),
/// the second half component 1 (im or phase). Spectra without a channel axis
/// gain a leading channel axis of length 2.
pub fn complex_to_features(spec: &Spectrum, mode: ComplexFeatureMode) -> Result<RealTensor> {
    let data = spec.complex()?;
    let split = |z: &Complex64| -> (f64, f64) {
        match mode {
            ComplexFeatureMode::Iq => (z.re, z.im),
            ComplexFeatureMode::Mp => (z.norm(), z.im.atan2(z.re)),
        }
    };

    match spec.axis(AxisKind::Channel) {
        Some((pos, channel_axis)) => {
            let c = channel_axis.len;
            let mut shape = data.shape().to_vec();
            shape[pos] *= 2;
            let mut out = ArrayD::<f64>::zeros(IxDyn(&shape));
            for (idx, z) in data.indexed_iter() {
                let (a, b) = split(z);
                let mut i0 = idx.slice().to_vec();
                out[IxDyn(&i0)] = a;
                i0[pos] += c;
                out[IxDyn(&i0)] = b;
            }
            let mut axes = spec.axes().to_vec();
            axes[pos].len *= 2;
            Ok(RealTensor { data: out, axes })
        }
        None => {
            let mut shape = vec![2];
            shape.extend_from_slice(data.shape());
            let mut out = ArrayD::<f64>::zeros(IxDyn(&shape));
            for (idx, z) in data.indexed_iter() {
                let (a, b) = split(z);
                let mut i0 = vec![0];
                i0.extend_from_slice(idx.slice());
                out[IxDyn(&i0)] = a;
                i0[0] = 1;
                out[IxDyn(&i0)] = b;
            }
            let mut axes = vec![Axis {
                kind: AxisKind::Channel,
                len: 2,
                step: 0.0,
                unit: AxisUnit::Dimensionless,
            }];
            axes.extend_from_slice(spec.axes());
            Ok(RealTensor { data: out, axes })
        }
    }
}

/// Rebuild the complex grid from a feature tensor produced by
/// [`complex_to_features`].
pub fn complex_from_features(t: &RealTensor, mode: ComplexFeatureMode) -> Result<ArrayD<Complex64>> {
    let pos = t
        .axes
        .iter()
        .position(|a| a.kind == AxisKind::Channel)
        .ok_or_else(|| Error::Contract("feature tensor has no channel axis".into()))?;
    let c2 = t.axes[pos].len;
    if !c2.is_multiple_of(2) {
        return Err(Error::Contract("feature channel axis has odd length".into()));
    }
    let c = c2 / 2;
    let mut shape = t.data.shape().to_vec();
    shape[pos] = c;
    let mut out = ArrayD::<Complex64>::zeros(IxDyn(&shape));
    for (idx, z) in out.indexed_iter_mut() {
        let i0 = idx.slice().to_vec();
        let mut i1 = i0.clone();
        i1[pos] += c;
        let a = t.data[IxDyn(&i0)];
        let b = t.data[IxDyn(&i1)];
        *z = match mode {
            ComplexFeatureMode::Iq => Complex64::new(a, b),
            ComplexFeatureMode::Mp => Complex64::from_polar(a, b),
        };
    }
    Ok(out)
}
