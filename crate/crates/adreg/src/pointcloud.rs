//! Point-cloud container, normalization, batch sampling, and file IO.
//!
//! Clouds are plain lists of finite 3D points. [`PointCloud::normalize`]
//! recenters a cloud on its centroid and rescales it to unit RMS radius,
//! returning the [`NormalizationRecord`] needed to map results back to the
//! original coordinates. Supported file formats are PLY (ascii and
//! binary little-endian) and whitespace-separated XYZ text.

use std::fmt;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};

mod ply;
mod xyz;

/// Spread below which a cloud counts as a single repeated point and
/// normalization refuses to divide by its scale.
pub const DEGENERATE_SCALE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
}

/// Centroid/scale pair taken from one cloud, used to undo normalization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationRecord {
    pub centroid: Vec3,
    pub scale: f64,
}

/// On-disk formats accepted by [`PointCloud::load`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Ply,
    Xyz,
}

impl FileFormat {
    /// Guess from the file extension; defaults to PLY.
    pub fn from_path(path: &Path) -> FileFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("xyz") || e.eq_ignore_ascii_case("txt") => {
                FileFormat::Xyz
            }
            _ => FileFormat::Ply,
        }
    }
}

impl fmt::Display for FileFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FileFormat::Ply => write!(f, "ply"),
            FileFormat::Xyz => write!(f, "xyz"),
        }
    }
}

/// Encodings accepted by [`PointCloud::write`]. Both PLY variants store
/// coordinates as 64-bit floats so write/read round-trips are bit-exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteFormat {
    PlyAscii,
    PlyBinaryLe,
    Xyz,
}

impl PointCloud {
    /// Wrap a list of points, rejecting NaN or infinite coordinates.
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::NonFinite("point coordinates"));
        }
        Ok(PointCloud { points })
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Result<Vec3> {
        if self.points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let sum: Vec3 = self.points.iter().sum();
        Ok(sum / self.points.len() as f64)
    }

    /// Root-mean-square distance from the centroid; the isotropic scale
    /// used for normalization.
    pub fn rms_scale(&self) -> Result<f64> {
        let c = self.centroid()?;
        let mean_sq = self
            .points
            .iter()
            .map(|p| (p - c).norm_squared())
            .sum::<f64>()
            / self.points.len() as f64;
        Ok(mean_sq.sqrt())
    }

    /// Recenter on the centroid and divide by the RMS scale. The returned
    /// cloud has centroid ~0 and RMS radius ~1.
    pub fn normalize(&self) -> Result<(PointCloud, NormalizationRecord)> {
        let centroid = self.centroid()?;
        let scale = self.rms_scale()?;
        if scale <= DEGENERATE_SCALE {
            return Err(Error::DegenerateCloud(format!(
                "all {} points coincide (spread {scale:.3e})",
                self.points.len()
            )));
        }
        let record = NormalizationRecord { centroid, scale };
        let points = self
            .points
            .iter()
            .map(|p| record.normalize_point(p))
            .collect();
        Ok((PointCloud { points }, record))
    }

    /// Draw `n` points uniformly with replacement.
    pub fn sample_batch(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<Vec3>> {
        if self.points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if n == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok((0..n)
            .map(|_| self.points[rng.random_range(0..self.points.len())])
            .collect())
    }

    /// Apply a rigid transform to every point.
    pub fn transformed(&self, t: &RigidTransform) -> PointCloud {
        let r = t.rotation_matrix().expect("finite transform");
        PointCloud {
            points: self.points.iter().map(|p| r * p + t.translation).collect(),
        }
    }

    pub fn load(path: &Path, format: FileFormat) -> Result<PointCloud> {
        let points = match format {
            FileFormat::Ply => ply::read(path)?,
            FileFormat::Xyz => xyz::read(path)?,
        };
        if points.is_empty() {
            return Err(Error::NoPoints {
                path: path.to_path_buf(),
            });
        }
        PointCloud::new(points)
    }

    pub fn write(&self, path: &Path, format: WriteFormat) -> Result<()> {
        match format {
            WriteFormat::PlyAscii => ply::write_ascii(path, &self.points),
            WriteFormat::PlyBinaryLe => ply::write_binary_le(path, &self.points),
            WriteFormat::Xyz => xyz::write(path, &self.points),
        }
    }
}

impl NormalizationRecord {
    /// Record that maps a cloud to itself.
    pub fn identity() -> Self {
        NormalizationRecord {
            centroid: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn normalize_point(&self, p: &Vec3) -> Vec3 {
        (p - self.centroid) / self.scale
    }

    pub fn denormalize_point(&self, p: &Vec3) -> Vec3 {
        p * self.scale + self.centroid
    }

    pub fn denormalize(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud {
            points: cloud
                .points
                .iter()
                .map(|p| self.denormalize_point(p))
                .collect(),
        }
    }
}

pub(crate) fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn malformed(path: &Path, format: &'static str, detail: impl Into<String>) -> Error {
    Error::Malformed {
        path: path.to_path_buf(),
        format,
        detail: detail.into(),
    }
}

pub(crate) fn unsupported(path: &Path, detail: impl Into<String>) -> Error {
    Error::Unsupported {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}
