//! FMCW/MIMO echo synthesis.
//!
//! Generates raw ADC cubes for scenes of ideal point reflectors under the
//! stop-and-hop approximation: the range of a target is frozen within one
//! chirp and its phase advances chirp to chirp. Each target contributes a
//! complex exponential with
//!
//! ```text
//! beat frequency   f_b  = 2 * B * r / (c * T_c)          (fast time)
//! Doppler step     dψ   = 4π * v * T_c / λ   per chirp   (slow time)
//! AoA phase        φ_m  = 2π * (m * d_rx / λ) * sin θ    (channel m)
//! ```
//!
//! With Doppler-domain multiplexing (DDM) enabled, transmitter k adds a
//! per-chirp phase ramp `2π * k * p / N_Tx`, shifting its echo by
//! `N_c / N_Tx` Doppler bins so the receive chain can split the spectrum
//! back into virtual channels.
//!
//! Noise is circularly-symmetric complex Gaussian, drawn from a seeded
//! stream so cubes are bit-reproducible.

use ndarray::Array3;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// FMCW/MIMO waveform and array description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RadarConfig {
    /// Carrier frequency (Hz).
    pub carrier_freq: f64,
    /// Swept bandwidth B (Hz).
    pub bandwidth: f64,
    /// Chirp duration T_c (s). Chirps are assumed back to back, so this is
    /// also the chirp repetition interval.
    pub chirp_duration: f64,
    /// ADC sample rate f_s (Hz).
    pub sample_rate: f64,
    /// Fast-time samples per chirp N_s.
    pub n_samples: usize,
    /// Chirps per frame N_c.
    pub n_chirps: usize,
    /// Transmit antennas N_Tx.
    pub n_tx: usize,
    /// Receive antennas N_Rx.
    pub n_rx: usize,
    /// Receive element spacing (m), uniform linear array.
    pub rx_spacing: f64,
    /// Transmit element spacing (m). `n_rx * rx_spacing` yields a filled
    /// virtual ULA of `n_tx * n_rx` elements.
    pub tx_spacing: f64,
    /// Doppler-domain multiplexing of the transmitters.
    pub ddm_enabled: bool,
    /// Linear noise power; 0 disables noise.
    pub noise_power: f64,
    /// Seed for the noise stream.
    pub rng_seed: u64,
}

impl RadarConfig {
    /// 77 GHz desk-scale defaults: 256 samples at 10 MHz (critically sampled
    /// 25.6 us chirps), 128 chirps, four receivers at half-wavelength
    /// spacing, single transmitter.
    pub fn desk_scale() -> Self {
        let carrier_freq = 77.0e9;
        let wavelength = SPEED_OF_LIGHT / carrier_freq;
        let n_rx = 4;
        Self {
            carrier_freq,
            // delta_r = c / (2B) = 0.5 m
            bandwidth: SPEED_OF_LIGHT / (2.0 * 0.5),
            chirp_duration: 25.6e-6,
            sample_rate: 10.0e6,
            n_samples: 256,
            n_chirps: 128,
            n_tx: 1,
            n_rx,
            rx_spacing: wavelength / 2.0,
            tx_spacing: n_rx as f64 * wavelength / 2.0,
            ddm_enabled: false,
            noise_power: 0.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier_freq > 0.0) {
            return Err(Error::Config("carrier_freq must be positive".into()));
        }
        if !(self.bandwidth > 0.0) {
            return Err(Error::Config("bandwidth must be positive".into()));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        if !(self.chirp_duration > 0.0) {
            return Err(Error::Config("chirp_duration must be positive".into()));
        }
        if self.n_samples as f64 / self.sample_rate > self.chirp_duration * (1.0 + 1e-12) {
            return Err(Error::Config(
                "sampling window n_samples/sample_rate exceeds chirp_duration".into(),
            ));
        }
        if self.n_samples == 0 || self.n_chirps == 0 {
            return Err(Error::Config("n_samples and n_chirps must be nonzero".into()));
        }
        if self.n_tx == 0 || self.n_rx == 0 {
            return Err(Error::Config("n_tx and n_rx must be at least 1".into()));
        }
        if self.n_tx > 1 && !self.ddm_enabled {
            return Err(Error::Config(
                "n_tx > 1 requires ddm_enabled (simultaneous transmitters would collide)".into(),
            ));
        }
        if !(self.rx_spacing > 0.0) || !(self.tx_spacing > 0.0) {
            return Err(Error::Config("antenna spacings must be positive".into()));
        }
        if self.noise_power < 0.0 || !self.noise_power.is_finite() {
            return Err(Error::Config("noise_power must be finite and >= 0".into()));
        }
        if self.ddm_enabled && !self.n_chirps.is_multiple_of(self.n_tx) {
            return Err(Error::Config(
                "n_chirps must be divisible by n_tx under DDM".into(),
            ));
        }
        Ok(())
    }

    /// Wavelength λ = c / carrier_freq (m).
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq
    }

    /// Range resolution Δr = c / (2B) (m).
    pub fn range_resolution(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.bandwidth)
    }

    /// Maximum unambiguous range R_max = Δr · N_s (m).
    pub fn max_range(&self) -> f64 {
        self.range_resolution() * self.n_samples as f64
    }

    /// Range covered by one range-FFT bin: c·T_c·f_s / (2B·N_s) (m).
    ///
    /// Equals [`range_resolution`](Self::range_resolution) when the sampling
    /// window spans the whole chirp (N_s = f_s · T_c).
    pub fn range_bin_spacing(&self) -> f64 {
        SPEED_OF_LIGHT * self.chirp_duration * self.sample_rate
            / (2.0 * self.bandwidth * self.n_samples as f64)
    }

    /// Doppler bin width Δv = λ / (2 · N_c · T_c) (m/s).
    pub fn doppler_resolution(&self) -> f64 {
        self.wavelength() / (2.0 * self.n_chirps as f64 * self.chirp_duration)
    }

    /// Virtual channel count N_Tx · N_Rx.
    pub fn n_virtual(&self) -> usize {
        self.n_tx * self.n_rx
    }
}

/// One ideal point reflector. Angles in radians, amplitude is a linear
/// reflectivity factor.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PointTarget {
    pub range: f64,
    pub radial_velocity: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub amplitude: f64,
}

/// A collection of point reflectors. An empty scene is valid.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Scene {
    pub targets: Vec<PointTarget>,
}

impl Scene {
    pub fn validate(&self, config: &RadarConfig) -> Result<()> {
        let r_max = config.max_range();
        for (i, t) in self.targets.iter().enumerate() {
            if !(t.range > 0.0 && t.range < r_max) {
                return Err(Error::Input(format!(
                    "target {i}: range {} outside (0, {r_max})",
                    t.range
                )));
            }
            if !(t.azimuth.abs() < PI / 2.0) {
                return Err(Error::Input(format!(
                    "target {i}: azimuth {} outside (-pi/2, pi/2)",
                    t.azimuth
                )));
            }
            if !(t.amplitude > 0.0) {
                return Err(Error::Input(format!("target {i}: amplitude must be positive")));
            }
            if !t.radial_velocity.is_finite() || !t.elevation.is_finite() {
                return Err(Error::Input(format!("target {i}: non-finite field")));
            }
        }
        Ok(())
    }
}

/// Raw complex IF samples, shape `(n_rx, n_chirps, n_samples)` = channel ×
/// slow time × fast time. Immutable after synthesis.
#[derive(Debug, Clone)]
pub struct AdcCube {
    data: Array3<Complex64>,
    config: RadarConfig,
}

impl AdcCube {
    /// Wrap existing samples, checking the shape against the configuration.
    pub fn from_parts(data: Array3<Complex64>, config: RadarConfig) -> Result<Self> {
        config.validate()?;
        let expect = (config.n_rx, config.n_chirps, config.n_samples);
        if data.dim() != expect {
            return Err(Error::Contract(format!(
                "cube shape {:?} does not match config {:?}",
                data.dim(),
                expect
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Contract("cube contains non-finite samples".into()));
        }
        Ok(Self { data, config })
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn config(&self) -> &RadarConfig {
        &self.config
    }
}

/// Synthesize the ADC cube for a scene.
///
/// Every target contributes, per receive channel m, chirp p and sample n,
/// the phase
///
/// ```text
/// φ = 2π f_b n/f_s  +  4π r/λ  +  (4π v T_c/λ) p
///   + 2π (m d_rx + k d_tx)/λ · sin θ   [+ 2π k p / N_Tx under DDM]
/// ```
///
/// summed over transmitters k. The constant `4π r/λ` is the two-way carrier
/// phase at the start of the frame. Elevation is carried on the target as
/// ground truth but the default array is an azimuth-only ULA and cannot
/// observe it.
pub fn synthesize_adc(scene: &Scene, config: &RadarConfig) -> Result<AdcCube> {
    config.validate()?;
    scene.validate(config)?;

    let (n_rx, n_chirps, n_samples) = (config.n_rx, config.n_chirps, config.n_samples);
    let lambda = config.wavelength();
    let t_c = config.chirp_duration;

    // Per-target per-channel constants, hoisted out of the sample loops.
    struct TargetTerms {
        amplitude: f64,
        // beat phase advance per fast-time sample
        beat_step: f64,
        // Doppler phase advance per chirp
        doppler_step: f64,
        // carrier phase at frame start
        base_phase: f64,
        // per (tx, rx) AoA phase
        aoa_phase: Vec<f64>,
    }

    let terms: Vec<TargetTerms> = scene
        .targets
        .iter()
        .map(|t| {
            let f_beat = 2.0 * config.bandwidth * t.range / (SPEED_OF_LIGHT * t_c);
            let sin_az = t.azimuth.sin();
            let aoa_phase = (0..config.n_tx)
                .flat_map(|k| {
                    (0..n_rx).map(move |m| {
                        2.0 * PI
                            * (m as f64 * config.rx_spacing + k as f64 * config.tx_spacing)
                            / lambda
                            * sin_az
                    })
                })
                .collect();
            TargetTerms {
                amplitude: t.amplitude,
                beat_step: 2.0 * PI * f_beat / config.sample_rate,
                doppler_step: 4.0 * PI * t.radial_velocity * t_c / lambda,
                base_phase: 4.0 * PI * t.range / lambda,
                aoa_phase,
            }
        })
        .collect();

    let ddm_ramp = |k: usize, p: usize| -> f64 {
        if config.ddm_enabled {
            2.0 * PI * k as f64 * p as f64 / config.n_tx as f64
        } else {
            0.0
        }
    };

    // Deterministic: each (m, p, n) cell accumulates its targets in order,
    // independent of how cells are distributed over threads.
    let mut data = Array3::<Complex64>::zeros((n_rx, n_chirps, n_samples));
    data.outer_iter_mut()
        .into_par_iter()
        .enumerate()
        .for_each(|(m, mut channel)| {
            for p in 0..n_chirps {
                for n in 0..n_samples {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for t in &terms {
                        for k in 0..config.n_tx {
                            let phase = t.base_phase
                                + t.beat_step * n as f64
                                + t.doppler_step * p as f64
                                + t.aoa_phase[k * n_rx + m]
                                + ddm_ramp(k, p);
                            acc += Complex64::from_polar(t.amplitude, phase);
                        }
                    }
                    channel[[p, n]] = acc;
                }
            }
        });

    if config.noise_power > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let normal = Normal::new(0.0, (config.noise_power / 2.0).sqrt())
            .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
        for z in data.iter_mut() {
            let re: f64 = normal.sample(&mut rng);
            let im: f64 = normal.sample(&mut rng);
            *z += Complex64::new(re, im);
        }
    }

    Ok(AdcCube { data, config: config.clone() })
}

/// Scene document as ingested from JSON: angles in degrees, waveform
/// configuration inline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSpec {
    pub targets: Vec<TargetSpec>,
    pub config: RadarConfig,
}

/// JSON form of one target; `elevation_deg` defaults to zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TargetSpec {
    pub range: f64,
    pub velocity: f64,
    pub azimuth_deg: f64,
    #[serde(default)]
    pub elevation_deg: f64,
    pub amplitude: f64,
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn scene(&self) -> Scene {
        Scene {
            targets: self
                .targets
                .iter()
                .map(|t| PointTarget {
                    range: t.range,
                    radial_velocity: t.velocity,
                    azimuth: t.azimuth_deg.to_radians(),
                    elevation: t.elevation_deg.to_radians(),
                    amplitude: t.amplitude,
                })
                .collect(),
        }
    }
}
