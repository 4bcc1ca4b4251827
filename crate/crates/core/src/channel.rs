//! Array channel forward model: steering vectors, scatter-point paths and
//! the noisy frequency response across tones and antenna elements.

use std::io::Write;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Point3, PointCloud, C0};
use crate::scene::{SceneSpec, FACADE, TREE};
use crate::{seed, Error};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveformConfig {
    pub fc: f64,
    pub bw: f64,
    pub n_tones: usize,
    pub tx_power_dbm: f64,
}

impl Default for WaveformConfig {
    fn default() -> Self {
        Self { fc: 28e9, bw: 1e9, n_tones: 1024, tx_power_dbm: 28.0 }
    }
}

impl WaveformConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.n_tones < 2 || !(self.bw > 0.0) || !(self.fc > 0.0) {
            return Err(Error::Config(format!(
                "waveform needs n_tones >= 2 and positive fc/bw, got {} tones, fc {}, bw {}",
                self.n_tones, self.fc, self.bw
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        self.bw / self.n_tones as f64
    }

    /// Offset of tone `k` from the carrier.
    pub fn baseband(&self, k: usize) -> f64 {
        (k as f64 - (self.n_tones / 2) as f64) * self.spacing()
    }

    /// Absolute frequency of tone `k`.
    pub fn tone(&self, k: usize) -> f64 {
        self.fc + self.baseband(k)
    }

    pub fn wavelength(&self) -> f64 {
        C0 / self.fc
    }
}

/// Uniform planar array in the y–z plane facing +x.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    /// Element positions, row-major (row along z, column along y).
    pub positions: Vec<Point3>,
}

impl ArrayGeometry {
    pub fn new(rows: usize, cols: usize, spacing: f64) -> Self {
        let mut positions = Vec::with_capacity(rows * cols);
        let (rc, cc) = ((rows as f64 - 1.0) / 2.0, (cols as f64 - 1.0) / 2.0);
        for r in 0..rows {
            for c in 0..cols {
                positions.push([0.0, (c as f64 - cc) * spacing, (r as f64 - rc) * spacing]);
            }
        }
        Self { rows, cols, spacing, positions }
    }

    /// 4×8 array with half-wavelength spacing at the carrier.
    pub fn standard(wf: &WaveformConfig) -> Self {
        Self::new(4, 8, wf.wavelength() / 2.0)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Unit direction for azimuth `theta` and elevation `phi`.
pub fn direction(theta: f64, phi: f64) -> Point3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [cp * ct, cp * st, sp]
}

/// Per-element propagation advance `⟨u, r_m⟩ / c` in seconds.
pub fn element_delays(theta: f64, phi: f64, geom: &ArrayGeometry) -> Vec<f64> {
    let u = direction(theta, phi);
    geom.positions.iter().map(|r| (u[0] * r[0] + u[1] * r[1] + u[2] * r[2]) / C0).collect()
}

/// `a_m = exp(j 2π f ⟨u, r_m⟩ / c)`.
pub fn steering_vector(theta: f64, phi: f64, geom: &ArrayGeometry, f: f64) -> Vec<Complex64> {
    element_delays(theta, phi, geom)
        .into_iter()
        .map(|rho| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * f * rho))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationPath {
    /// Round-trip delay (s).
    pub delay: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub amplitude: Complex64,
    /// Index of the originating scatter point.
    pub origin: Option<usize>,
}

/// Tone-major complex response: `data[k * n_elements + m]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexCir {
    pub n_tones: usize,
    pub n_elements: usize,
    pub data: Vec<Complex64>,
}

impl ComplexCir {
    pub fn zeros(n_tones: usize, n_elements: usize) -> Self {
        Self { n_tones, n_elements, data: vec![Complex64::new(0.0, 0.0); n_tones * n_elements] }
    }

    pub fn get(&self, k: usize, m: usize) -> Complex64 {
        self.data[k * self.n_elements + m]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Debug dump: `u32 n_tones, u32 n_elements`, then interleaved `f32`
    /// re/im in tone-major order, little-endian.
    pub fn write_binary(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&(self.n_tones as u32).to_le_bytes())?;
        w.write_all(&(self.n_elements as u32).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for z in &self.data {
            buf.extend_from_slice(&(z.re as f32).to_le_bytes());
            buf.extend_from_slice(&(z.im as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub waveform: WaveformConfig,
    pub rows: usize,
    pub cols: usize,
    pub n_paths: usize,
    /// Half-angle of the sensing sector in azimuth and elevation (degrees).
    pub sector_half_angle_deg: f64,
    /// Random candidate points drawn before strongest-first selection.
    pub candidate_pool: usize,
    pub facade_loss_db: [f64; 2],
    pub tree_loss_db: [f64; 2],
    pub snr_db: f64,
    /// Transmitter offset along y from the receive array (m).
    pub bistatic_offset: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            waveform: WaveformConfig::default(),
            rows: 4,
            cols: 8,
            n_paths: 40,
            sector_half_angle_deg: 45.0,
            candidate_pool: 120,
            facade_loss_db: [0.0, 6.0],
            tree_loss_db: [6.0, 20.0],
            snr_db: 20.0,
            bistatic_offset: 0.0,
        }
    }
}

impl ChannelConfig {
    /// The narrow 20° transmit coverage of the measurement hardware.
    pub fn strict() -> Self {
        Self { sector_half_angle_deg: 10.0, ..Self::default() }
    }

    pub fn geometry(&self) -> ArrayGeometry {
        ArrayGeometry::new(self.rows, self.cols, self.waveform.wavelength() / 2.0)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.waveform.validate()?;
        if self.rows == 0 || self.cols == 0 || self.n_paths == 0 {
            return Err(Error::Config("array and path counts must be positive".into()));
        }
        if !(self.sector_half_angle_deg > 0.0 && self.sector_half_angle_deg <= 90.0) {
            return Err(Error::Config(format!("sector half-angle {} outside (0, 90]", self.sector_half_angle_deg)));
        }
        Ok(())
    }
}

/// Delay and arrival angles of a single-bounce path through `p`.
pub fn path_geometry(p: &Point3, bistatic_offset: f64) -> (f64, f64, f64) {
    let d_rx = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    let dy = p[1] - bistatic_offset;
    let d_tx = (p[0] * p[0] + dy * dy + p[2] * p[2]).sqrt();
    let theta = p[1].atan2(p[0]);
    let phi = (p[2] / d_rx).asin();
    ((d_rx + d_tx) / C0, theta, phi)
}

/// Select `cfg.n_paths` scatter points and turn them into paths.
///
/// A random pool of in-sector candidates is ranked by `1/d²` spreading times
/// a per-surface reflection loss, and the strongest are kept. Sparse scenes
/// are padded by re-sampling the selected paths.
pub fn paths_from_scene(spec: &SceneSpec, cloud: &PointCloud, cfg: &ChannelConfig, seed: u64) -> Result<Vec<PropagationPath>, Error> {
    if cloud.is_empty() {
        return Err(Error::Contract("paths_from_scene needs a non-empty cloud".into()));
    }
    let mut rng = seed::rng(seed, "paths", 0);
    let sector = cfg.sector_half_angle_deg.to_radians();
    let default_kind = if spec.facades.is_empty() { TREE } else { FACADE };
    let candidates: Vec<usize> = (0..cloud.len())
        .filter(|&i| {
            let (tau, th, ph) = path_geometry(&cloud.points[i], cfg.bistatic_offset);
            tau > 0.0 && th.abs() <= sector && ph.abs() <= sector
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::Contract("no scatter point lies inside the sensing sector".into()));
    }
    let pool: Vec<usize> = if candidates.len() > cfg.candidate_pool {
        let mut picked: Vec<usize> = sample(&mut rng, candidates.len(), cfg.candidate_pool).into_iter().map(|j| candidates[j]).collect();
        picked.sort_unstable();
        picked
    } else {
        candidates
    };
    let mut ranked: Vec<(f64, usize, f64)> = pool
        .iter()
        .map(|&i| {
            let p = &cloud.points[i];
            let kind = cloud.labels.as_ref().map_or(default_kind, |l| l[i]);
            let range = if kind == TREE { cfg.tree_loss_db } else { cfg.facade_loss_db };
            let loss_db = if range[0] < range[1] { rng.gen_range(range[0]..range[1]) } else { range[0] };
            let d2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2];
            (10f64.powf(-loss_db / 10.0) / d2, i, loss_db)
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.truncate(cfg.n_paths);
    let mut paths: Vec<PropagationPath> = ranked
        .iter()
        .map(|&(_, i, loss_db)| {
            let p = &cloud.points[i];
            let (delay, azimuth, elevation) = path_geometry(p, cfg.bistatic_offset);
            let d = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
            let amplitude = Complex64::from_polar(10f64.powf(-loss_db / 20.0) / d, phase);
            PropagationPath { delay, azimuth, elevation, amplitude, origin: Some(i) }
        })
        .collect();
    let selected = paths.len();
    while paths.len() < cfg.n_paths {
        let j = rng.gen_range(0..selected);
        paths.push(paths[j].clone());
    }
    Ok(paths)
}

/// Noiseless response of `paths`.
pub fn synthesize_clean(paths: &[PropagationPath], wf: &WaveformConfig, geom: &ArrayGeometry) -> ComplexCir {
    let (nk, nm) = (wf.n_tones, geom.len());
    let mut cir = ComplexCir::zeros(nk, nm);
    let two_pi = 2.0 * std::f64::consts::PI;
    for p in paths {
        let rho = element_delays(p.azimuth, p.elevation, geom);
        for (m, r) in rho.iter().enumerate() {
            let t = r - p.delay;
            for k in 0..nk {
                cir.data[k * nm + m] += p.amplitude * Complex64::from_polar(1.0, two_pi * wf.tone(k) * t);
            }
        }
    }
    cir
}

/// `Y[k, m] = Σ α a_m(θ, φ, f_k) e^{-j2π f_k τ} + w` with circular Gaussian
/// noise at the requested total SNR. `snr_db = ∞` disables noise.
pub fn synthesize_cir(paths: &[PropagationPath], wf: &WaveformConfig, geom: &ArrayGeometry, snr_db: f64, seed: u64) -> Result<ComplexCir, Error> {
    if paths.is_empty() {
        return Err(Error::Contract("synthesize_cir needs at least one path".into()));
    }
    if snr_db < -20.0 {
        log::warn!("SNR {snr_db} dB is below -20 dB; estimation will be unreliable");
    }
    let mut cir = synthesize_clean(paths, wf, geom);
    if snr_db.is_finite() {
        let mean_power = cir.energy() / cir.data.len() as f64;
        let sigma = (mean_power / 10f64.powf(snr_db / 10.0) / 2.0).sqrt();
        let mut rng = seed::rng(seed, "noise", 0);
        for z in &mut cir.data {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *z += Complex64::new(re * sigma, im * sigma);
        }
    }
    Ok(cir)
}
