//! Sample files and dataset manifests.
//!
//! Sample layout (little-endian): id `u64`, label `u8`, path count `u16`,
//! point count `u16`; center count `u8` and `f32` triples; point `f32`
//! triples; path count `u16` and per path `delay_ns, azimuth_rad,
//! elevation_rad, power_db` as `f32`.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::geometry::{Point3, PointCloud};
use crate::sage::{ChannelSnapshot, PathComponent};
use crate::scene::{SceneLabel, Split};
use crate::Error;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// One paired training record.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub label: SceneLabel,
    /// Cluster centers sorted by ascending x.
    pub centers: Vec<Point3>,
    pub cloud: PointCloud,
    pub snapshot: ChannelSnapshot,
}

fn read_array<const N: usize>(r: &mut impl Read) -> Result<[u8; N], Error> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated sample file: {e}")))?;
    Ok(b)
}

fn read_f32(r: &mut impl Read) -> Result<f64, Error> {
    Ok(f32::from_le_bytes(read_array(r)?) as f64)
}

fn read_triple(r: &mut impl Read) -> Result<Point3, Error> {
    Ok([read_f32(r)?, read_f32(r)?, read_f32(r)?])
}

fn put_f32s(buf: &mut Vec<u8>, vals: &[f64]) {
    for &v in vals {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn write_sample(w: &mut impl Write, s: &Sample) -> Result<(), Error> {
    let n_paths = u16::try_from(s.snapshot.len()).map_err(|_| Error::Format("too many paths".into()))?;
    let n_points = u16::try_from(s.cloud.len()).map_err(|_| Error::Format("too many points".into()))?;
    let n_centers = u8::try_from(s.centers.len()).map_err(|_| Error::Format("too many centers".into()))?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&s.id.to_le_bytes());
    buf.push(s.label as u8);
    buf.extend_from_slice(&n_paths.to_le_bytes());
    buf.extend_from_slice(&n_points.to_le_bytes());
    buf.push(n_centers);
    for c in &s.centers {
        put_f32s(&mut buf, c);
    }
    for p in &s.cloud.points {
        put_f32s(&mut buf, p);
    }
    buf.extend_from_slice(&n_paths.to_le_bytes());
    for c in &s.snapshot.components {
        put_f32s(&mut buf, &[c.delay * 1e9, c.azimuth, c.elevation, c.power_db]);
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_sample(r: &mut impl Read) -> Result<Sample, Error> {
    let id = u64::from_le_bytes(read_array(r)?);
    let label = SceneLabel::from_u8(read_array::<1>(r)?[0])?;
    let n_paths = u16::from_le_bytes(read_array(r)?);
    let n_points = u16::from_le_bytes(read_array(r)?);
    let n_centers = read_array::<1>(r)?[0];
    let centers = (0..n_centers).map(|_| read_triple(r)).collect::<Result<Vec<_>, _>>()?;
    let points = (0..n_points).map(|_| read_triple(r)).collect::<Result<Vec<_>, _>>()?;
    let block_paths = u16::from_le_bytes(read_array(r)?);
    if block_paths != n_paths {
        return Err(Error::Format(format!("header declares {n_paths} paths, snapshot block {block_paths}")));
    }
    let mut components = Vec::with_capacity(n_paths as usize);
    for _ in 0..n_paths {
        components.push(PathComponent {
            delay: read_f32(r)? * 1e-9,
            azimuth: read_f32(r)?,
            elevation: read_f32(r)?,
            power_db: read_f32(r)?,
        });
    }
    Ok(Sample { id, label, centers, cloud: PointCloud::new(points), snapshot: ChannelSnapshot { components } })
}

pub fn save_sample(path: &Path, s: &Sample) -> Result<(), Error> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_sample(&mut f, s)?;
    f.flush()?;
    Ok(())
}

pub fn load_sample(path: &Path) -> Result<Sample, Error> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_sample(&mut f).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn sample_file_name(id: u64) -> String {
    format!("sample_{id:06}.bin")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: u64,
    pub file: String,
    pub label: u8,
    pub split: Split,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub requested: usize,
    pub written: usize,
    pub skipped: usize,
    pub single: usize,
    pub mixed: usize,
    /// Mean number of non-padding paths per sample.
    pub mean_paths: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    pub samples: Vec<ManifestEntry>,
    pub stats: GenerationStats,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, Error> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("cannot read manifest {}: {e}", path.display())))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::Format(format!("manifest schema {} is not supported", m.schema_version)));
        }
        if m.config.hash() != m.config_hash {
            return Err(Error::Format("manifest config hash does not match its config".into()));
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<(), Error> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    /// SHA-256 of the manifest's JSON encoding.
    pub fn hash(&self) -> String {
        format!("{:x}", Sha256::digest(serde_json::to_vec(self).expect("manifest serialises")))
    }

    pub fn entries(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.samples.iter().filter(move |e| e.split == split)
    }

    pub fn paths(&self, dir: &Path, split: Split) -> Vec<PathBuf> {
        self.entries(split).map(|e| dir.join(&e.file)).collect()
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Plain-text point list, one `x y z` line per point.
pub fn write_xyz(path: &Path, points: &[Point3]) -> Result<(), Error> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in points {
        writeln!(f, "{} {} {}", p[0], p[1], p[2])?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_xyz(path: &Path) -> Result<Vec<Point3>, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<_, _>>()
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if v.len() < 3 {
            return Err(Error::Format(format!("{}:{}: expected three coordinates", path.display(), n + 1)));
        }
        out.push([v[0], v[1], v[2]]);
    }
    Ok(out)
}
