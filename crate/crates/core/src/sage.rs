//! SAGE multipath estimation: successive-cancellation initialisation followed
//! by coordinate-wise expectation-maximisation over delay, azimuth,
//! elevation and amplitude.
//!
//! Correlations use the exact wideband signature
//! `s[k, m] = exp(j2π f_k (ρ_m − τ))` with `ρ_m = ⟨u, r_m⟩ / c`. Angle searches
//! evaluate the per-element delay transform at `τ − ρ_m` through a fifth
//! order Taylor expansion around `τ`, which is accurate to ~1e-7 for the
//! aperture and bandwidth in use.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::channel::{direction, element_delays, ArrayGeometry, ComplexCir, WaveformConfig};
use crate::geometry::C0;
use crate::Error;

const TAYLOR_ORDER: usize = 5;
const GOLDEN_ITERS: usize = 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SageConfig {
    pub max_paths: usize,
    pub outer_iterations: usize,
    /// Zero-padding factor of the delay transform.
    pub delay_oversample: usize,
    pub coarse_step_deg: f64,
    pub fine_step_deg: f64,
    /// Half-width of the azimuth and elevation search grids (degrees).
    pub search_half_angle_deg: f64,
    /// Relative log-likelihood change that ends the iterations.
    pub tol: f64,
    /// Initialisation stops once a new path is this far below the first.
    pub init_stop_db: f64,
    pub dynamic_range_db: f64,
    pub max_distance_m: f64,
    /// Sensing sector half-angle used by the outlier filter (degrees).
    pub sector_half_angle_deg: f64,
    /// Power of padding rows relative to the strongest path (dB).
    pub pad_floor_db: f64,
}

impl Default for SageConfig {
    fn default() -> Self {
        Self {
            max_paths: 40,
            outer_iterations: 5,
            delay_oversample: 4,
            coarse_step_deg: 1.0,
            fine_step_deg: 0.1,
            search_half_angle_deg: 60.0,
            tol: 1e-4,
            init_stop_db: 35.0,
            dynamic_range_db: 25.0,
            max_distance_m: 60.0,
            sector_half_angle_deg: 45.0,
            pad_floor_db: -40.0,
        }
    }
}

impl SageConfig {
    pub fn validate(&self) -> Result<(), Error> {
        if self.max_paths == 0 || self.delay_oversample == 0 {
            return Err(Error::Config("max_paths and delay_oversample must be positive".into()));
        }
        if !(self.coarse_step_deg > 0.0 && self.fine_step_deg > 0.0 && self.search_half_angle_deg > 0.0) {
            return Err(Error::Config("angle grids must be non-empty".into()));
        }
        Ok(())
    }
}

/// One estimated path with its complex amplitude.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathEstimate {
    pub delay: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub amplitude: Complex64,
}

/// One row of a [`ChannelSnapshot`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    /// Delay in seconds.
    pub delay: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub power_db: f64,
}

impl PathComponent {
    /// Padding rows carry zero delay.
    pub fn is_sentinel(&self) -> bool {
        self.delay <= 0.0
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelSnapshot {
    pub components: Vec<PathComponent>,
}

impl ChannelSnapshot {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn sort_by_power(&mut self) {
        self.components.sort_by(|a, b| b.power_db.total_cmp(&a.power_db));
    }
}

fn cis(x: f64) -> Complex64 {
    Complex64::from_polar(1.0, x)
}

fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..GOLDEN_ITERS {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Taylor coefficients of every element's baseband delay transform.
struct DelayTaylor {
    tau: f64,
    coeffs: Vec<[Complex64; TAYLOR_ORDER + 1]>,
}

/// Estimator with precomputed grids for one waveform and array.
pub struct Sage {
    wf: WaveformConfig,
    geom: ArrayGeometry,
    cfg: SageConfig,
    nk: usize,
    nm: usize,
    fft: Arc<dyn Fft<f64>>,
    coarse_angles: Vec<f64>,
    /// `exp(−j2π f_c ρ_m)` for every coarse (elevation, azimuth) pair.
    table: Vec<Complex64>,
    /// Baseband tone offsets over half the bandwidth.
    nu: Vec<f64>,
    /// Elements sit on the regular planar grid.
    grid: bool,
}

impl Sage {
    pub fn new(wf: &WaveformConfig, geom: &ArrayGeometry, cfg: &SageConfig) -> Result<Self, Error> {
        wf.validate()?;
        cfg.validate()?;
        let nk = wf.n_tones;
        let nm = geom.len();
        let fft = FftPlanner::new().plan_fft_inverse(nk * cfg.delay_oversample);
        let n_steps = (cfg.search_half_angle_deg / cfg.coarse_step_deg).floor() as i64;
        let coarse_angles: Vec<f64> = (-n_steps..=n_steps).map(|i| (i as f64 * cfg.coarse_step_deg).to_radians()).collect();
        let mut table = Vec::with_capacity(coarse_angles.len() * coarse_angles.len() * nm);
        for &phi in &coarse_angles {
            for &theta in &coarse_angles {
                for rho in element_delays(theta, phi, geom) {
                    table.push(cis(-2.0 * PI * wf.fc * rho));
                }
            }
        }
        let nu = (0..nk).map(|k| wf.baseband(k) / (wf.bw / 2.0)).collect();
        let grid = geom.rows * geom.cols == nm
            && geom.cols > 0
            && ArrayGeometry::new(geom.rows, geom.cols, geom.spacing).positions == geom.positions;
        Ok(Self { wf: wf.clone(), geom: geom.clone(), cfg: cfg.clone(), nk, nm, fft, coarse_angles, table, nu, grid })
    }

    pub fn config(&self) -> &SageConfig {
        &self.cfg
    }

    fn delay_step(&self) -> f64 {
        1.0 / (self.wf.bw * self.cfg.delay_oversample as f64)
    }

    /// Element-major copy of the response.
    fn element_major(&self, cir: &ComplexCir) -> Vec<Complex64> {
        let mut x = vec![Complex64::new(0.0, 0.0); self.nk * self.nm];
        for k in 0..self.nk {
            for m in 0..self.nm {
                x[m * self.nk + k] = cir.get(k, m);
            }
        }
        x
    }

    fn f0(&self) -> f64 {
        self.wf.tone(0)
    }

    fn df(&self) -> f64 {
        self.wf.spacing()
    }

    /// Path signature `s[m][k]`, element-major.
    fn signature(&self, p: &PathEstimate) -> Vec<Complex64> {
        let rho = element_delays(p.azimuth, p.elevation, &self.geom);
        let mut s = Vec::with_capacity(self.nk * self.nm);
        for r in rho {
            let t = r - p.delay;
            let mut z = cis(2.0 * PI * self.f0() * t);
            let step = cis(2.0 * PI * self.df() * t);
            for _ in 0..self.nk {
                s.push(z);
                z *= step;
            }
        }
        s
    }

    /// `z_k = Σ_m x[m][k] exp(−j2π f_k ρ_m)`.
    fn beamform(&self, x: &[Complex64], theta: f64, phi: f64) -> Vec<Complex64> {
        let mut z = vec![Complex64::new(0.0, 0.0); self.nk];
        for (m, rho) in element_delays(theta, phi, &self.geom).into_iter().enumerate() {
            let mut w = cis(-2.0 * PI * self.f0() * rho);
            let step = cis(-2.0 * PI * self.df() * rho);
            for (zk, xk) in z.iter_mut().zip(&x[m * self.nk..(m + 1) * self.nk]) {
                *zk += xk * w;
                w *= step;
            }
        }
        z
    }

    /// `Σ_k z_k exp(j2π f_k τ)`.
    fn delay_correlation(&self, z: &[Complex64], tau: f64) -> Complex64 {
        let mut w = cis(2.0 * PI * self.f0() * tau);
        let step = cis(2.0 * PI * self.df() * tau);
        let mut acc = Complex64::new(0.0, 0.0);
        for zk in z {
            acc += zk * w;
            w *= step;
        }
        acc
    }

    /// `|Σ_k z_k exp(j2π k Δf τ_n)|²` on the zero-padded delay grid.
    fn delay_grid(&self, z: &[Complex64]) -> Vec<f64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft.len()];
        buf[..self.nk].copy_from_slice(z);
        self.fft.process(&mut buf);
        buf.iter().map(|v| v.norm_sqr()).collect()
    }

    /// Non-coherent delay profile summed over elements.
    fn delay_profile(&self, x: &[Complex64]) -> Vec<f64> {
        let mut power = vec![0.0; self.fft.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); self.fft.len()];
        for m in 0..self.nm {
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            buf[..self.nk].copy_from_slice(&x[m * self.nk..(m + 1) * self.nk]);
            self.fft.process(&mut buf);
            for (p, v) in power.iter_mut().zip(&buf) {
                *p += v.norm_sqr();
            }
        }
        power
    }

    fn taylor(&self, x: &[Complex64], tau: f64) -> DelayTaylor {
        let nu0 = self.wf.baseband(0);
        let mut coeffs = Vec::with_capacity(self.nm);
        for m in 0..self.nm {
            let mut acc = [Complex64::new(0.0, 0.0); TAYLOR_ORDER + 1];
            let mut w = cis(2.0 * PI * nu0 * tau);
            let step = cis(2.0 * PI * self.df() * tau);
            for (xk, &nu) in x[m * self.nk..(m + 1) * self.nk].iter().zip(&self.nu) {
                let mut e = xk * w;
                for a in acc.iter_mut() {
                    *a += e;
                    // e · jν
                    e = Complex64::new(-e.im * nu, e.re * nu);
                }
                w *= step;
            }
            coeffs.push(acc);
        }
        DelayTaylor { tau, coeffs }
    }

    /// `Σ_m exp(j2π f_c (τ − ρ_m)) B_m(τ − ρ_m)` from the Taylor expansion.
    fn angle_correlation(&self, t: &DelayTaylor, theta: f64, phi: f64) -> Complex64 {
        let scale = PI * self.wf.bw;
        let mut acc = Complex64::new(0.0, 0.0);
        let u = direction(theta, phi);
        let k = 2.0 * PI * self.wf.fc;
        let cols = self.geom.cols;
        // On the regular grid the carrier phase factorises over rows and columns.
        let (step_c, step_r) = if self.grid {
            let d = self.geom.spacing / C0;
            (cis(-k * u[1] * d), cis(-k * u[2] * d))
        } else {
            (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0))
        };
        let mut row_phase = Complex64::new(0.0, 0.0);
        let mut phase = Complex64::new(0.0, 0.0);
        for (m, (c, r)) in t.coeffs.iter().zip(&self.geom.positions).enumerate() {
            let rho = (u[0] * r[0] + u[1] * r[1] + u[2] * r[2]) / C0;
            let h = -rho * scale;
            let mut b = c[TAYLOR_ORDER];
            for n in (0..TAYLOR_ORDER).rev() {
                b = c[n] + b * (h / (n + 1) as f64);
            }
            if !self.grid {
                phase = cis(k * (t.tau - rho));
            } else if m == 0 {
                row_phase = cis(k * (t.tau - rho));
                phase = row_phase;
            } else if m % cols == 0 {
                row_phase *= step_r;
                phase = row_phase;
            } else {
                phase *= step_c;
            }
            acc += b * phase;
        }
        acc
    }

    /// Exact correlation `Σ conj(s) x`.
    fn correlation(&self, x: &[Complex64], p: &PathEstimate) -> Complex64 {
        let z = self.beamform(x, p.azimuth, p.elevation);
        self.delay_correlation(&z, p.delay)
    }

    fn norm_s(&self) -> f64 {
        (self.nk * self.nm) as f64
    }

    /// Refine one angle coordinate: coarse grid, local fine grid, then a
    /// golden-section polish. The current value is kept unless beaten.
    fn refine_angle(&self, current: f64, coarse: bool, objective: impl Fn(f64) -> f64) -> f64 {
        let mut best = (current, objective(current));
        let mut centre = current;
        if coarse {
            let (i, v) = argmax(self.coarse_angles.iter().map(|&a| objective(a)));
            centre = self.coarse_angles[i];
            if v > best.1 {
                best = (centre, v);
            }
        }
        let fine = self.cfg.fine_step_deg.to_radians();
        let half = (self.cfg.coarse_step_deg / self.cfg.fine_step_deg).round() as i64;
        let grid: Vec<f64> = (-half..=half).map(|i| centre + i as f64 * fine).collect();
        let (i, v) = argmax(grid.iter().map(|&a| objective(a)));
        let local = grid[i];
        if v > best.1 {
            best = (local, v);
        }
        let (g, gv) = golden_max(&objective, local - fine, local + fine);
        if gv > best.1 {
            best = (g, gv);
        }
        best.0
    }

    fn refine_delay(&self, x: &[Complex64], p: &PathEstimate, coarse: bool) -> f64 {
        let z = self.beamform(x, p.azimuth, p.elevation);
        let objective = |tau: f64| self.delay_correlation(&z, tau).norm_sqr();
        let mut best = (p.delay, objective(p.delay));
        let step = self.delay_step();
        let mut centre = p.delay;
        if coarse {
            let (i, _) = argmax(self.delay_grid(&z).into_iter());
            centre = i as f64 * step;
            let v = objective(centre);
            if v > best.1 {
                best = (centre, v);
            }
        }
        let (g, gv) = golden_max(&objective, centre - step, centre + step);
        if gv > best.1 {
            best = (g, gv);
        }
        best.0
    }

    /// Coordinate-wise M-step on the path's own signal `x`.
    fn m_step(&self, x: &[Complex64], p: &mut PathEstimate, coarse: bool) {
        p.delay = self.refine_delay(x, p, coarse);
        let t = self.taylor(x, p.delay);
        let phi = p.elevation;
        p.azimuth = self.refine_angle(p.azimuth, coarse, |a| self.angle_correlation(&t, a, phi).norm_sqr());
        let theta = p.azimuth;
        p.elevation = self.refine_angle(p.elevation, coarse, |e| self.angle_correlation(&t, theta, e).norm_sqr());
        p.amplitude = self.correlation(x, p) / self.norm_s();
    }

    fn subtract(&self, r: &mut [Complex64], p: &PathEstimate, sign: f64) {
        for (ri, si) in r.iter_mut().zip(self.signature(p)) {
            *ri -= sign * p.amplitude * si;
        }
    }

    /// Successive cancellation: strongest residual path first.
    fn initialise(&self, r: &mut [Complex64]) -> Vec<PathEstimate> {
        let mut paths: Vec<PathEstimate> = Vec::new();
        let mut strongest = 0.0;
        let n_ang = self.coarse_angles.len();
        let mut energy: f64 = r.iter().map(|v| v.norm_sqr()).sum();
        while paths.len() < self.cfg.max_paths && energy > 0.0 {
            let (i, peak) = argmax(self.delay_profile(r).into_iter());
            if peak <= 0.0 {
                break;
            }
            let tau = i as f64 * self.delay_step();
            let t = self.taylor(r, tau);
            let (g, _) = argmax((0..n_ang * n_ang).map(|g| {
                let w = &self.table[g * self.nm..(g + 1) * self.nm];
                t.coeffs.iter().zip(w).map(|(c, w)| c[0] * w).sum::<Complex64>().norm_sqr()
            }));
            let mut p = PathEstimate {
                delay: tau,
                azimuth: self.coarse_angles[g % n_ang],
                elevation: self.coarse_angles[g / n_ang],
                amplitude: Complex64::new(0.0, 0.0),
            };
            for _ in 0..2 {
                self.m_step(r, &mut p, false);
            }
            let power = p.amplitude.norm_sqr();
            if paths.is_empty() {
                strongest = power;
            }
            if power <= 0.0 || power < strongest * 10f64.powf(-self.cfg.init_stop_db / 10.0) {
                break;
            }
            self.subtract(r, &p, 1.0);
            let next: f64 = r.iter().map(|v| v.norm_sqr()).sum();
            debug_assert!(next <= energy * (1.0 + 1e-9), "residual energy grew during cancellation");
            energy = next;
            paths.push(p);
        }
        paths
    }

    /// Estimated paths with complex amplitudes, in detection order.
    pub fn estimate(&self, cir: &ComplexCir) -> Result<Vec<PathEstimate>, Error> {
        if cir.n_tones != self.nk || cir.n_elements != self.nm {
            return Err(Error::Contract(format!(
                "CIR is {}x{}, estimator expects {}x{}",
                cir.n_tones, cir.n_elements, self.nk, self.nm
            )));
        }
        let mut r = self.element_major(cir);
        let mut paths = self.initialise(&mut r);
        let mut ll = -r.iter().map(|v| v.norm_sqr()).sum::<f64>();
        for iter in 0..self.cfg.outer_iterations {
            if ll == 0.0 || paths.is_empty() {
                break;
            }
            for p in paths.iter_mut() {
                // E-step: this path's signal is the residual plus its own
                // reconstruction.
                self.subtract(&mut r, p, -1.0);
                self.m_step(&r, p, iter == 0);
                self.subtract(&mut r, p, 1.0);
            }
            let next = -r.iter().map(|v| v.norm_sqr()).sum::<f64>();
            let change = ((next - ll) / ll).abs();
            ll = next;
            if change < self.cfg.tol {
                break;
            }
        }
        Ok(paths)
    }

    /// SAGE estimate as a power-sorted snapshot.
    pub fn extract(&self, cir: &ComplexCir) -> Result<ChannelSnapshot, Error> {
        let mut snap = ChannelSnapshot {
            components: self
                .estimate(cir)?
                .into_iter()
                .map(|p| PathComponent {
                    delay: p.delay,
                    azimuth: p.azimuth,
                    elevation: p.elevation,
                    power_db: 20.0 * p.amplitude.norm().log10(),
                })
                .collect(),
        };
        snap.sort_by_power();
        Ok(snap)
    }
}

/// One-shot extraction; prefer [`Sage`] when processing many responses.
pub fn sage_extract(cir: &ComplexCir, wf: &WaveformConfig, geom: &ArrayGeometry, cfg: &SageConfig) -> Result<ChannelSnapshot, Error> {
    Sage::new(wf, geom, cfg)?.extract(cir)
}

/// Drop paths below the dynamic-range cut, outside `(0, max_distance]` or
/// outside the sensing sector.
pub fn filter_outliers(snapshot: &ChannelSnapshot, cfg: &SageConfig) -> ChannelSnapshot {
    let strongest = snapshot.components.iter().map(|c| c.power_db).fold(f64::NEG_INFINITY, f64::max);
    let sector = cfg.sector_half_angle_deg.to_radians();
    let components = snapshot
        .components
        .iter()
        .filter(|c| {
            let d = C0 * c.delay / 2.0;
            c.power_db >= strongest - cfg.dynamic_range_db
                && d > 0.0
                && d <= cfg.max_distance_m
                && c.azimuth.abs() <= sector
                && c.elevation.abs() <= sector
        })
        .copied()
        .collect();
    ChannelSnapshot { components }
}

/// Exactly `n` rows: strongest first, padded with zero-geometry rows at
/// `pad_floor_db` relative to the strongest path.
pub fn pad_snapshot(snapshot: &ChannelSnapshot, n: usize, pad_floor_db: f64) -> ChannelSnapshot {
    let mut out = snapshot.clone();
    out.sort_by_power();
    out.components.truncate(n);
    let top = out.components.first().map_or(0.0, |c| c.power_db);
    while out.components.len() < n {
        out.components.push(PathComponent { delay: 0.0, azimuth: 0.0, elevation: 0.0, power_db: top + pad_floor_db });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comp(delay_ns: f64, power_db: f64) -> PathComponent {
        PathComponent { delay: delay_ns * 1e-9, azimuth: 0.1, elevation: 0.0, power_db }
    }

    #[test]
    fn filter_removes_weak_far_and_negative() {
        let snap = ChannelSnapshot {
            components: vec![comp(100.0, -20.0), comp(120.0, -50.0), comp(500.0, -21.0), comp(-1.0, -20.0)],
        };
        let out = filter_outliers(&snap, &SageConfig::default());
        assert_eq!(out.components, vec![comp(100.0, -20.0)]);
    }

    #[test]
    fn filter_identity_when_all_pass() {
        let snap = ChannelSnapshot { components: vec![comp(100.0, -20.0), comp(150.0, -30.0)] };
        assert_eq!(filter_outliers(&snap, &SageConfig::default()), snap);
    }

    #[test]
    fn padding_and_truncation() {
        let snap = ChannelSnapshot { components: (0..35).map(|i| comp(50.0 + i as f64, -(i as f64))).collect() };
        let out = pad_snapshot(&snap, 40, -40.0);
        assert_eq!(out.len(), 40);
        assert!(out.components[35..].iter().all(|c| c.is_sentinel() && c.power_db == -40.0));
        let big = ChannelSnapshot { components: (0..50).map(|i| comp(50.0 + i as f64, -((i * 7 % 50) as f64))).collect() };
        let out = pad_snapshot(&big, 40, -40.0);
        let mut powers: Vec<f64> = big.components.iter().map(|c| c.power_db).collect();
        powers.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(out.components.iter().map(|c| c.power_db).collect::<Vec<_>>(), powers[..40].to_vec());
    }

    #[test]
    fn golden_finds_parabola_peak() {
        let (x, _) = golden_max(|x| -(x - 0.3) * (x - 0.3), 0.0, 1.0);
        assert!((x - 0.3).abs() < 1e-7);
    }
}
