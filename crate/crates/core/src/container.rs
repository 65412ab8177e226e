//! Little-endian binary container for ADC cubes, spectra, and named tensor
//! records.
//!
//! Every file starts with a 16-byte header: the 8-byte magic `ECHOPOLR`,
//! a u32 payload kind, and a u32 format version.
//!
//! ```text
//! ADC cube   kind 1: dims u32×3 (rx, chirps, samples),
//!                    then interleaved f32 re/im, row-major
//! Spectrum   kind 2: stage u32, wavelength f64, dtype u32 (0 complex,
//!                    1 real), n_axes u32,
//!                    per axis {kind u32, unit u32, len u32, step f64},
//!                    then f32 payload (interleaved re/im when complex)
//! Tensors    kind 3: count u32, per record {name_len u32, name bytes,
//!                    rank u32, dims u32×rank, f64 payload}
//! ```
//!
//! Tensor records keep f64 payloads so attention parameters round-trip
//! bit-exactly; cube and spectrum grids are stored as f32.

use ndarray::{Array3, ArrayD, IxDyn};
use num_complex::Complex64;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sim::{AdcCube, RadarConfig};
use crate::spectrum::{Axis, AxisKind, AxisUnit, Spectrum, SpectrumData, Stage};

const MAGIC: &[u8; 8] = b"ECHOPOLR";
const VERSION: u32 = 1;
const KIND_ADC: u32 = 1;
const KIND_SPECTRUM: u32 = 2;
const KIND_TENSORS: u32 = 3;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new(kind: u32) -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&kind.to_le_bytes());
        buf.extend_from_slice(&VERSION.to_le_bytes());
        Self { buf }
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], expect_kind: u32) -> Result<Self> {
        let mut r = Self { buf, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Container("bad magic bytes".into()));
        }
        let kind = r.u32()?;
        if kind != expect_kind {
            return Err(Error::Container(format!(
                "payload kind {kind} does not match expected {expect_kind}"
            )));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Container(format!("unsupported format version {version}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Container("truncated file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Container(format!(
                "{} trailing bytes after payload",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}

fn stage_code(stage: Stage) -> u32 {
    match stage {
        Stage::Rt => 0,
        Stage::Rd => 1,
        Stage::Read => 2,
        Stage::Ra => 3,
    }
}

fn stage_from(code: u32) -> Result<Stage> {
    match code {
        0 => Ok(Stage::Rt),
        1 => Ok(Stage::Rd),
        2 => Ok(Stage::Read),
        3 => Ok(Stage::Ra),
        other => Err(Error::Container(format!("unknown stage code {other}"))),
    }
}

fn axis_kind_code(kind: AxisKind) -> u32 {
    match kind {
        AxisKind::FastTime => 0,
        AxisKind::Chirp => 1,
        AxisKind::RangeBin => 2,
        AxisKind::DopplerBin => 3,
        AxisKind::Channel => 4,
        AxisKind::AzimuthBin => 5,
        AxisKind::ElevationBin => 6,
    }
}

fn axis_kind_from(code: u32) -> Result<AxisKind> {
    match code {
        0 => Ok(AxisKind::FastTime),
        1 => Ok(AxisKind::Chirp),
        2 => Ok(AxisKind::RangeBin),
        3 => Ok(AxisKind::DopplerBin),
        4 => Ok(AxisKind::Channel),
        5 => Ok(AxisKind::AzimuthBin),
        6 => Ok(AxisKind::ElevationBin),
        other => Err(Error::Container(format!("unknown axis kind code {other}"))),
    }
}

fn axis_unit_code(unit: AxisUnit) -> u32 {
    match unit {
        AxisUnit::Seconds => 0,
        AxisUnit::Meters => 1,
        AxisUnit::MetersPerSecond => 2,
        AxisUnit::Wavelengths => 3,
        AxisUnit::SineAzimuth => 4,
        AxisUnit::Dimensionless => 5,
    }
}

fn axis_unit_from(code: u32) -> Result<AxisUnit> {
    match code {
        0 => Ok(AxisUnit::Seconds),
        1 => Ok(AxisUnit::Meters),
        2 => Ok(AxisUnit::MetersPerSecond),
        3 => Ok(AxisUnit::Wavelengths),
        4 => Ok(AxisUnit::SineAzimuth),
        5 => Ok(AxisUnit::Dimensionless),
        other => Err(Error::Container(format!("unknown axis unit code {other}"))),
    }
}

/// Serialize an ADC cube.
pub fn adc_cube_bytes(cube: &AdcCube) -> Vec<u8> {
    let (n_rx, n_chirps, n_samples) = cube.data().dim();
    let mut w = Writer::new(KIND_ADC);
    w.u32(n_rx as u32);
    w.u32(n_chirps as u32);
    w.u32(n_samples as u32);
    for z in cube.data().iter() {
        w.f32(z.re as f32);
        w.f32(z.im as f32);
    }
    w.buf
}

/// Write an ADC cube to disk.
pub fn write_adc_cube(path: &Path, cube: &AdcCube) -> Result<()> {
    fs::write(path, adc_cube_bytes(cube))?;
    Ok(())
}

/// Read an ADC cube; the file stores only dims and samples, so the waveform
/// configuration is supplied by the caller and checked against the dims.
pub fn read_adc_cube(path: &Path, config: &RadarConfig) -> Result<AdcCube> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes, KIND_ADC)?;
    let n_rx = r.u32()? as usize;
    let n_chirps = r.u32()? as usize;
    let n_samples = r.u32()? as usize;
    if (n_rx, n_chirps, n_samples) != (config.n_rx, config.n_chirps, config.n_samples) {
        return Err(Error::Input(format!(
            "cube dims ({n_rx}, {n_chirps}, {n_samples}) do not match config ({}, {}, {})",
            config.n_rx, config.n_chirps, config.n_samples
        )));
    }
    let mut data = Array3::<Complex64>::zeros((n_rx, n_chirps, n_samples));
    for z in data.iter_mut() {
        let re = r.f32()? as f64;
        let im = r.f32()? as f64;
        *z = Complex64::new(re, im);
    }
    r.finish()?;
    AdcCube::from_parts(data, config.clone())
}

/// Serialize a spectrum with its axis-descriptor table.
pub fn spectrum_bytes(spec: &Spectrum) -> Vec<u8> {
    let mut w = Writer::new(KIND_SPECTRUM);
    w.u32(stage_code(spec.stage()));
    w.f64(spec.wavelength());
    let (dtype, _) = match spec.data() {
        SpectrumData::Complex(_) => (0u32, ()),
        SpectrumData::Real(_) => (1u32, ()),
    };
    w.u32(dtype);
    w.u32(spec.axes().len() as u32);
    for axis in spec.axes() {
        w.u32(axis_kind_code(axis.kind));
        w.u32(axis_unit_code(axis.unit));
        w.u32(axis.len as u32);
        w.f64(axis.step);
    }
    match spec.data() {
        SpectrumData::Complex(a) => {
            for z in a.iter() {
                w.f32(z.re as f32);
                w.f32(z.im as f32);
            }
        }
        SpectrumData::Real(a) => {
            for v in a.iter() {
                w.f32(*v as f32);
            }
        }
    }
    w.buf
}

pub fn write_spectrum(path: &Path, spec: &Spectrum) -> Result<()> {
    fs::write(path, spectrum_bytes(spec))?;
    Ok(())
}

pub fn read_spectrum(path: &Path) -> Result<Spectrum> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes, KIND_SPECTRUM)?;
    let stage = stage_from(r.u32()?)?;
    let wavelength = r.f64()?;
    let dtype = r.u32()?;
    let n_axes = r.u32()? as usize;
    let mut axes = Vec::with_capacity(n_axes);
    for _ in 0..n_axes {
        let kind = axis_kind_from(r.u32()?)?;
        let unit = axis_unit_from(r.u32()?)?;
        let len = r.u32()? as usize;
        let step = r.f64()?;
        axes.push(Axis { kind, len, step, unit });
    }
    let shape: Vec<usize> = axes.iter().map(|a| a.len).collect();
    let count: usize = shape.iter().product();
    let data = match dtype {
        0 => {
            let mut a = ArrayD::<Complex64>::zeros(IxDyn(&shape));
            for z in a.iter_mut() {
                let re = r.f32()? as f64;
                let im = r.f32()? as f64;
                *z = Complex64::new(re, im);
            }
            SpectrumData::Complex(a)
        }
        1 => {
            let mut v = Vec::with_capacity(count);
            for _ in 0..count {
                v.push(r.f32()? as f64);
            }
            SpectrumData::Real(
                ArrayD::from_shape_vec(IxDyn(&shape), v)
                    .map_err(|e| Error::Container(format!("shape error: {e}")))?,
            )
        }
        other => return Err(Error::Container(format!("unknown dtype code {other}"))),
    };
    r.finish()?;
    Spectrum::new(stage, wavelength, axes, data)
}

/// Serialize named tensor records (f64 payloads).
pub fn tensors_bytes(records: &[(String, ArrayD<f64>)]) -> Vec<u8> {
    let mut w = Writer::new(KIND_TENSORS);
    w.u32(records.len() as u32);
    for (name, tensor) in records {
        w.u32(name.len() as u32);
        w.bytes(name.as_bytes());
        w.u32(tensor.ndim() as u32);
        for dim in tensor.shape() {
            w.u32(*dim as u32);
        }
        for v in tensor.iter() {
            w.f64(*v);
        }
    }
    w.buf
}

pub fn write_tensors(path: &Path, records: &[(String, ArrayD<f64>)]) -> Result<()> {
    fs::write(path, tensors_bytes(records))?;
    Ok(())
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, ArrayD<f64>)>> {
    let bytes = fs::read(path)?;
    let mut r = Reader::new(&bytes, KIND_TENSORS)?;
    let count = r.u32()? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Container("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let count: usize = shape.iter().product();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            values.push(r.f64()?);
        }
        let tensor = ArrayD::from_shape_vec(IxDyn(&shape), values)
            .map_err(|e| Error::Container(format!("shape error: {e}")))?;
        records.push((name, tensor));
    }
    r.finish()?;
    Ok(records)
}
