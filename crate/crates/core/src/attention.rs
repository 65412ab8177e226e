//! Polar-aligned cross-attention: the column-wise image fusion and
//! range-wise radar fusion kernels, as a deterministic differentiable
//! forward/backward pair.
//!
//! The core is standard multi-head scaled dot-product attention,
//!
//! ```text
//! head_h = softmax(Q_h K_hᵀ / √head_dim) V_h
//! out    = concat(head_0..head_{H-1}) · W_o + b_o
//! ```
//!
//! with learned Q/K/V/output projections. Fusion wraps it with a residual
//! connection (`q + attention`) and sinusoidal positional encodings added to
//! the keys only — image column keys are encoded by their row index, radar
//! row keys by their chirp index — so zero feature maps leave the queries
//! unchanged.
//!
//! Geometry of the two passes:
//! - image fusion groups queries by azimuth bin; each group attends over
//!   the image column the pillar projects to (queries outside the camera
//!   frustum pass through untouched);
//! - radar fusion groups queries by range bin; each group attends over the
//!   radar feature row with the same range index.

use ndarray::{s, Array1, Array2, Array3, ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{column_of_query, CalibrationSet, PolarGrid};

/// Learned projections for one attention block. Projections act on row
/// vectors (`x · W + b`); head h owns columns `h·head_dim..(h+1)·head_dim`
/// of the projected space.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub n_heads: usize,
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub b_q: Array1<f64>,
    pub b_k: Array1<f64>,
    pub b_v: Array1<f64>,
    pub b_o: Array1<f64>,
}

impl AttentionParams {
    /// Seeded initialization: weights uniform in [-1/√d, 1/√d], biases zero.
    pub fn seeded(d: usize, n_heads: usize, seed: u64) -> Result<Self> {
        Self::check_dims(d, n_heads)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d as f64).sqrt();
        let mat = |rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((d, d), |_| rng.random_range(-bound..bound))
        };
        Ok(Self {
            n_heads,
            w_q: mat(&mut rng),
            w_k: mat(&mut rng),
            w_v: mat(&mut rng),
            w_o: mat(&mut rng),
            b_q: Array1::zeros(d),
            b_k: Array1::zeros(d),
            b_v: Array1::zeros(d),
            b_o: Array1::zeros(d),
        })
    }

    /// Identity projections, zero biases.
    pub fn identity(d: usize, n_heads: usize) -> Result<Self> {
        Self::check_dims(d, n_heads)?;
        Ok(Self {
            n_heads,
            w_q: Array2::eye(d),
            w_k: Array2::eye(d),
            w_v: Array2::eye(d),
            w_o: Array2::eye(d),
            b_q: Array1::zeros(d),
            b_k: Array1::zeros(d),
            b_v: Array1::zeros(d),
            b_o: Array1::zeros(d),
        })
    }

    fn check_dims(d: usize, n_heads: usize) -> Result<()> {
        if d == 0 || n_heads == 0 {
            return Err(Error::Config("d and n_heads must be nonzero".into()));
        }
        if !d.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "channel dim {d} is not divisible by {n_heads} heads"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.w_q.nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.n_heads
    }

    /// Flat parameter vector (w_q, w_k, w_v, w_o row-major, then
    /// b_q, b_k, b_v, b_o); the layout finite-difference checks perturb.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(4 * self.dim() * self.dim() + 4 * self.dim());
        for w in [&self.w_q, &self.w_k, &self.w_v, &self.w_o] {
            out.extend(w.iter());
        }
        for b in [&self.b_q, &self.b_k, &self.b_v, &self.b_o] {
            out.extend(b.iter());
        }
        out
    }

    /// Rebuild from a flat vector produced by [`flatten`](Self::flatten).
    pub fn from_flat(d: usize, n_heads: usize, flat: &[f64]) -> Result<Self> {
        Self::check_dims(d, n_heads)?;
        if flat.len() != 4 * d * d + 4 * d {
            return Err(Error::Contract(format!(
                "flat parameter vector has length {}, expected {}",
                flat.len(),
                4 * d * d + 4 * d
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("parameters must be finite".into()));
        }
        let mut pos = 0;
        let mat = |pos: &mut usize| {
            let m = Array2::from_shape_vec((d, d), flat[*pos..*pos + d * d].to_vec()).unwrap();
            *pos += d * d;
            m
        };
        let w_q = mat(&mut pos);
        let w_k = mat(&mut pos);
        let w_v = mat(&mut pos);
        let w_o = mat(&mut pos);
        let vec1 = |pos: &mut usize| {
            let v = Array1::from_vec(flat[*pos..*pos + d].to_vec());
            *pos += d;
            v
        };
        Ok(Self {
            n_heads,
            w_q,
            w_k,
            w_v,
            w_o,
            b_q: vec1(&mut pos),
            b_k: vec1(&mut pos),
            b_v: vec1(&mut pos),
            b_o: vec1(&mut pos),
        })
    }

    /// Named tensor records for the binary container.
    pub fn named_tensors(&self) -> Vec<(String, ArrayD<f64>)> {
        vec![
            ("w_q".into(), self.w_q.clone().into_dyn()),
            ("w_k".into(), self.w_k.clone().into_dyn()),
            ("w_v".into(), self.w_v.clone().into_dyn()),
            ("w_o".into(), self.w_o.clone().into_dyn()),
            ("b_q".into(), self.b_q.clone().into_dyn()),
            ("b_k".into(), self.b_k.clone().into_dyn()),
            ("b_v".into(), self.b_v.clone().into_dyn()),
            ("b_o".into(), self.b_o.clone().into_dyn()),
        ]
    }

    /// Rebuild from named tensor records.
    pub fn from_named_tensors(n_heads: usize, records: &[(String, ArrayD<f64>)]) -> Result<Self> {
        let find = |name: &str| -> Result<&ArrayD<f64>> {
            records
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Container(format!("missing tensor record `{name}`")))
        };
        let to2 = |t: &ArrayD<f64>| -> Result<Array2<f64>> {
            t.clone()
                .into_dimensionality()
                .map_err(|_| Error::Container("expected rank-2 tensor".into()))
        };
        let to1 = |t: &ArrayD<f64>| -> Result<Array1<f64>> {
            t.clone()
                .into_dimensionality()
                .map_err(|_| Error::Container("expected rank-1 tensor".into()))
        };
        let out = Self {
            n_heads,
            w_q: to2(find("w_q")?)?,
            w_k: to2(find("w_k")?)?,
            w_v: to2(find("w_v")?)?,
            w_o: to2(find("w_o")?)?,
            b_q: to1(find("b_q")?)?,
            b_k: to1(find("b_k")?)?,
            b_v: to1(find("b_v")?)?,
            b_o: to1(find("b_o")?)?,
        };
        Self::check_dims(out.dim(), n_heads)?;
        if out.flatten().iter().any(|v| !v.is_finite()) {
            return Err(Error::Container("parameters must be finite".into()));
        }
        Ok(out)
    }
}

/// Row-wise numerically-stable softmax.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Cached activations of one forward pass, consumed by
/// [`attention_backward`].
#[derive(Debug, Clone)]
pub struct AttentionCache {
    queries_in: Array2<f64>,
    keys_in: Array2<f64>,
    values_in: Array2<f64>,
    q_proj: Array2<f64>,
    k_proj: Array2<f64>,
    v_proj: Array2<f64>,
    /// Softmax weights per head, each (m × k).
    attn: Vec<Array2<f64>>,
    concat: Array2<f64>,
}

impl AttentionCache {
    /// Per-head softmax weight matrices (rows sum to 1).
    pub fn attention_weights(&self) -> &[Array2<f64>] {
        &self.attn
    }
}

/// Gradients of one attention backward pass.
#[derive(Debug, Clone)]
pub struct AttentionGradients {
    pub queries: Array2<f64>,
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
    pub params: AttentionParams,
}

impl AttentionGradients {
    /// Parameter gradients flattened in [`AttentionParams::flatten`] order.
    pub fn flatten_params(&self) -> Vec<f64> {
        self.params.flatten()
    }
}

fn check_forward_shapes(
    queries: &Array2<f64>,
    keys: &Array2<f64>,
    values: &Array2<f64>,
    params: &AttentionParams,
) -> Result<()> {
    let d = params.dim();
    if queries.ncols() != d || keys.ncols() != d || values.ncols() != d {
        return Err(Error::Contract(format!(
            "channel dims (q {}, k {}, v {}) must equal parameter dim {d}",
            queries.ncols(),
            keys.ncols(),
            values.ncols()
        )));
    }
    if keys.nrows() != values.nrows() {
        return Err(Error::Contract(format!(
            "key rows {} and value rows {} differ",
            keys.nrows(),
            values.nrows()
        )));
    }
    Ok(())
}

/// Forward pass with separate key and value inputs, returning the cache
/// needed for the backward pass. Requires at least one key.
pub fn cross_attention_forward(
    queries: &Array2<f64>,
    keys: &Array2<f64>,
    values: &Array2<f64>,
    params: &AttentionParams,
) -> Result<(Array2<f64>, AttentionCache)> {
    check_forward_shapes(queries, keys, values, params)?;
    if keys.nrows() == 0 {
        return Err(Error::Contract("attention needs at least one key".into()));
    }
    let d = params.dim();
    let hd = params.head_dim();
    let m = queries.nrows();

    let q_proj = queries.dot(&params.w_q) + &params.b_q;
    let k_proj = keys.dot(&params.w_k) + &params.b_k;
    let v_proj = values.dot(&params.w_v) + &params.b_v;

    let scale = 1.0 / (hd as f64).sqrt();
    let mut concat = Array2::<f64>::zeros((m, d));
    let mut attn = Vec::with_capacity(params.n_heads);
    for h in 0..params.n_heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let qh = q_proj.slice(cols);
        let kh = k_proj.slice(cols);
        let vh = v_proj.slice(cols);
        let logits = qh.dot(&kh.t()).mapv(|v| v * scale);
        let weights = softmax_rows(&logits);
        concat.slice_mut(cols).assign(&weights.dot(&vh));
        attn.push(weights);
    }
    let out = concat.dot(&params.w_o) + &params.b_o;

    Ok((
        out,
        AttentionCache {
            queries_in: queries.clone(),
            keys_in: keys.clone(),
            values_in: values.clone(),
            q_proj,
            k_proj,
            v_proj,
            attn,
            concat,
        },
    ))
}

/// Scaled dot-product cross-attention where one tensor serves as both keys
/// and values. An empty key set returns the queries unchanged (masked-query
/// identity fallback).
pub fn cross_attention(
    queries: &Array2<f64>,
    keys_values: &Array2<f64>,
    params: &AttentionParams,
) -> Result<Array2<f64>> {
    if keys_values.nrows() == 0 {
        return Ok(queries.clone());
    }
    cross_attention_forward(queries, keys_values, keys_values, params).map(|(out, _)| out)
}

/// Exact analytic gradients of [`cross_attention_forward`] with respect to
/// the query/key/value inputs and every parameter.
pub fn attention_backward(
    upstream: &Array2<f64>,
    cache: &AttentionCache,
    params: &AttentionParams,
) -> Result<AttentionGradients> {
    let d = params.dim();
    let hd = params.head_dim();
    let m = cache.queries_in.nrows();
    if upstream.dim() != (m, d) {
        return Err(Error::Contract(format!(
            "upstream gradient shape {:?} does not match output ({m}, {d})",
            upstream.dim()
        )));
    }

    // output projection
    let d_concat = upstream.dot(&params.w_o.t());
    let d_w_o = cache.concat.t().dot(upstream);
    let d_b_o = upstream.sum_axis(Axis(0));

    let scale = 1.0 / (hd as f64).sqrt();
    let mut d_q_proj = Array2::<f64>::zeros(cache.q_proj.dim());
    let mut d_k_proj = Array2::<f64>::zeros(cache.k_proj.dim());
    let mut d_v_proj = Array2::<f64>::zeros(cache.v_proj.dim());
    for h in 0..params.n_heads {
        let cols = s![.., h * hd..(h + 1) * hd];
        let qh = cache.q_proj.slice(cols);
        let kh = cache.k_proj.slice(cols);
        let vh = cache.v_proj.slice(cols);
        let weights = &cache.attn[h];
        let d_out_h = d_concat.slice(cols);

        let d_weights = d_out_h.dot(&vh.t());
        d_v_proj.slice_mut(cols).assign(&weights.t().dot(&d_out_h));

        // softmax backward: dS = P ⊙ (dP - rowsum(dP ⊙ P))
        let inner = (&d_weights * weights).sum_axis(Axis(1));
        let mut d_logits = d_weights.clone();
        for (mut row, &c) in d_logits.rows_mut().into_iter().zip(inner.iter()) {
            row.mapv_inplace(|v| v - c);
        }
        let d_logits = (&d_logits * weights).mapv(|v| v * scale);

        d_q_proj.slice_mut(cols).assign(&d_logits.dot(&kh));
        d_k_proj.slice_mut(cols).assign(&d_logits.t().dot(&qh));
    }

    let grads = AttentionGradients {
        queries: d_q_proj.dot(&params.w_q.t()),
        keys: d_k_proj.dot(&params.w_k.t()),
        values: d_v_proj.dot(&params.w_v.t()),
        params: AttentionParams {
            n_heads: params.n_heads,
            w_q: cache.queries_in.t().dot(&d_q_proj),
            w_k: cache.keys_in.t().dot(&d_k_proj),
            w_v: cache.values_in.t().dot(&d_v_proj),
            w_o: d_w_o,
            b_q: d_q_proj.sum_axis(Axis(0)),
            b_k: d_k_proj.sum_axis(Axis(0)),
            b_v: d_v_proj.sum_axis(Axis(0)),
            b_o: d_b_o,
        },
    };
    Ok(grads)
}

/// Sinusoidal positional encoding table, (len × d):
/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(...)`.
pub fn sinusoidal_encoding(len: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((len, d), |(pos, j)| {
        let pair = (j / 2) as f64;
        let rate = (10000.0_f64).powf(-2.0 * pair / d as f64);
        let angle = pos as f64 * rate;
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Fusion state of a BEV query tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueryState {
    Initial,
    ImageFused,
    RadarFused,
}

/// BEV query features over a polar grid, (n_range × n_azimuth × channels).
#[derive(Debug, Clone)]
pub struct QueryTensor {
    values: Array3<f64>,
    grid: PolarGrid,
    state: QueryState,
}

impl QueryTensor {
    pub fn initial(grid: PolarGrid, values: Array3<f64>) -> Result<Self> {
        grid.validate()?;
        let expect = (grid.n_range, grid.n_azimuth, grid.channels);
        if values.dim() != expect {
            return Err(Error::Contract(format!(
                "query tensor shape {:?} does not match grid {:?}",
                values.dim(),
                expect
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("query tensor has non-finite entries".into()));
        }
        Ok(Self { values, grid, state: QueryState::Initial })
    }

    /// Seeded uniform [-1, 1] initial queries.
    pub fn seeded(grid: PolarGrid, seed: u64) -> Result<Self> {
        grid.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = Array3::from_shape_fn(
            (grid.n_range, grid.n_azimuth, grid.channels),
            |_| rng.random_range(-1.0..1.0),
        );
        Self::initial(grid, values)
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn grid(&self) -> &PolarGrid {
        &self.grid
    }

    pub fn state(&self) -> QueryState {
        self.state
    }
}

/// How image columns are assigned to queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColumnMode {
    /// One column per azimuth bin, evaluated at the grid's mid range. Exact
    /// whenever the calibration satisfies the pillar-to-column condition
    /// with negligible translation.
    PerAzimuth,
    /// Every query projects its own pillar base; used when the calibration
    /// fails the column condition.
    PerQuery,
}

/// Options for the image fusion pass.
#[derive(Debug, Clone, Copy)]
pub struct FusionConfig {
    /// Reference height for pillar projection.
    pub z_ref: f64,
    pub column_mode: ColumnMode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { z_ref: 0.0, column_mode: ColumnMode::PerAzimuth }
    }
}

fn nearest_column(x: f64, width: usize) -> Option<usize> {
    let col = x.round();
    if col >= 0.0 && col < width as f64 {
        Some(col as usize)
    } else {
        None
    }
}

/// Column-wise image fusion: all queries of one azimuth bin attend over the
/// image column their pillar projects to; keys carry row-index positional
/// encodings; the update is residual. Image-invisible azimuths pass through
/// unchanged.
pub fn fuse_image_columns(
    q: &QueryTensor,
    image_features: &Array3<f64>,
    calib: &CalibrationSet,
    params: &AttentionParams,
    fusion: &FusionConfig,
) -> Result<QueryTensor> {
    if q.state() != QueryState::Initial {
        return Err(Error::Contract(format!(
            "image fusion expects initial queries, found {:?}",
            q.state()
        )));
    }
    let (height, width, d_img) = image_features.dim();
    let d = q.grid.channels;
    if d_img != d || params.dim() != d {
        return Err(Error::Contract(format!(
            "channel dims disagree: queries {d}, image {d_img}, params {}",
            params.dim()
        )));
    }
    if height == 0 || width == 0 {
        return Err(Error::Contract("image feature map is empty".into()));
    }
    if image_features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("image feature map has non-finite entries".into()));
    }

    let grid = &q.grid;
    let posenc = sinusoidal_encoding(height, d);
    let column_features = |w: usize| -> (Array2<f64>, Array2<f64>) {
        let col = image_features.slice(s![.., w, ..]).to_owned();
        let keys = &col + &posenc;
        (keys, col)
    };

    let mut out = q.values.clone();
    match fusion.column_mode {
        ColumnMode::PerAzimuth => {
            let r_mid = 0.5 * (grid.range_span.0 + grid.range_span.1);
            for a in 0..grid.n_azimuth {
                let phi = grid.azimuth_center(a);
                let col = column_of_query(r_mid, phi, fusion.z_ref, calib)
                    .and_then(|x| nearest_column(x, width));
                let Some(w) = col else { continue };
                let (keys, values) = column_features(w);
                let queries = q.values.slice(s![.., a, ..]).to_owned();
                let (update, _) = cross_attention_forward(&queries, &keys, &values, params)?;
                let blended = &queries + &update;
                out.slice_mut(s![.., a, ..]).assign(&blended);
            }
        }
        ColumnMode::PerQuery => {
            for r in 0..grid.n_range {
                for a in 0..grid.n_azimuth {
                    let col = column_of_query(
                        grid.range_center(r),
                        grid.azimuth_center(a),
                        fusion.z_ref,
                        calib,
                    )
                    .and_then(|x| nearest_column(x, width));
                    let Some(w) = col else { continue };
                    let (keys, values) = column_features(w);
                    let query = q.values.slice(s![r..r + 1, a, ..]).to_owned();
                    let (update, _) = cross_attention_forward(&query, &keys, &values, params)?;
                    let blended = &query + &update;
                    out.slice_mut(s![r..r + 1, a, ..]).assign(&blended);
                }
            }
        }
    }

    Ok(QueryTensor { values: out, grid: q.grid.clone(), state: QueryState::ImageFused })
}

/// Range-wise radar fusion: every query at range bin r attends over radar
/// feature row r (all its chirps); keys carry chirp-index positional
/// encodings; the update is residual.
pub fn fuse_radar_rows(
    q_hat: &QueryTensor,
    radar_features: &Array3<f64>,
    params: &AttentionParams,
) -> Result<QueryTensor> {
    if q_hat.state() != QueryState::ImageFused {
        return Err(Error::Contract(format!(
            "radar fusion expects image-fused queries, found {:?}",
            q_hat.state()
        )));
    }
    let (n_range, n_chirps, d_radar) = radar_features.dim();
    let grid = &q_hat.grid;
    if n_range != grid.n_range {
        return Err(Error::Contract(format!(
            "radar feature range length {n_range} does not match grid {}",
            grid.n_range
        )));
    }
    let d = grid.channels;
    if d_radar != d || params.dim() != d {
        return Err(Error::Contract(format!(
            "channel dims disagree: queries {d}, radar {d_radar}, params {}",
            params.dim()
        )));
    }
    if n_chirps == 0 {
        return Err(Error::Contract("radar feature map has no chirps".into()));
    }
    if radar_features.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("radar feature map has non-finite entries".into()));
    }

    let posenc = sinusoidal_encoding(n_chirps, d);
    let mut out = q_hat.values.clone();
    for r in 0..n_range {
        let row = radar_features.slice(s![r, .., ..]).to_owned();
        let keys = &row + &posenc;
        let queries = q_hat.values.slice(s![r, .., ..]).to_owned();
        let (update, _) = cross_attention_forward(&queries, &keys, &row, params)?;
        let blended = &queries + &update;
        out.slice_mut(s![r, .., ..]).assign(&blended);
    }

    Ok(QueryTensor { values: out, grid: q_hat.grid.clone(), state: QueryState::RadarFused })
}
