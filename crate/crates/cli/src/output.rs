//! Artifact writing: CSV tables, JSON documents, SVG polylines and the
//! manifest that versions them.
//!
//! Everything written here is a pure function of its inputs. Floats in CSV use
//! 17 significant digits, JSON uses the shortest round-trip form, and the
//! manifest is ordered by file name.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_SCHEMA: &str = "lorentz-lens/manifest@1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub schema: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub files: BTreeMap<String, ManifestEntry>,
}

/// Output directory plus the manifest entries of every file written to it.
pub struct OutDir {
    root: PathBuf,
    manifest: Manifest,
}

pub fn float(x: f64) -> String {
    format!("{x:.16e}")
}

impl OutDir {
    /// Opens (and creates) the directory, keeping entries of earlier runs
    /// whose files still exist.
    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        let mut manifest = Manifest {
            schema: MANIFEST_SCHEMA.into(),
            files: BTreeMap::new(),
        };
        if let Ok(text) = fs::read_to_string(root.join(MANIFEST_FILE)) {
            if let Ok(old) = serde_json::from_str::<Manifest>(&text) {
                manifest.files = old
                    .files
                    .into_iter()
                    .filter(|(name, _)| root.join(name).exists())
                    .collect();
            }
        }
        Ok(OutDir {
            root: root.to_path_buf(),
            manifest,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, schema: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        let digest = Sha256::digest(bytes);
        let sha256 = digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        self.manifest.files.insert(
            name.into(),
            ManifestEntry {
                schema: schema.into(),
                sha256,
                bytes: bytes.len(),
            },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, schema: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, schema, text.as_bytes())
    }

    pub fn write_csv(
        &mut self,
        name: &str,
        schema: &str,
        header: &[String],
        rows: &[Vec<String>],
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| anyhow::anyhow!("csv buffer: {e}"))?;
        self.write(name, schema, &bytes)
    }

    pub fn finish(self) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.manifest)?;
        text.push('\n');
        fs::write(self.root.join(MANIFEST_FILE), text).context("writing manifest")?;
        Ok(())
    }
}

/// Column names `prefix0 … prefix{n-1}`.
pub fn columns(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn floats(v: &[f64]) -> impl Iterator<Item = String> + '_ {
    v.iter().map(|x| float(*x))
}

/// Minimal SVG canvas: polylines in data coordinates mapped onto a fixed
/// viewport, with the y axis pointing up.
pub struct Svg {
    lo: [f64; 2],
    hi: [f64; 2],
    size: f64,
    body: String,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

impl Svg {
    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Self {
        Svg {
            lo,
            hi,
            size: 600.0,
            body: String::new(),
        }
    }

    /// Bounding box of all points, padded by 5%.
    pub fn fitted(points: impl Iterator<Item = [f64; 2]>) -> Self {
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        if !lo[0].is_finite() {
            return Svg::new([0.0, 0.0], [1.0, 1.0]);
        }
        for k in 0..2 {
            let pad = 0.05 * (hi[k] - lo[k]).max(1e-9);
            lo[k] -= pad;
            hi[k] += pad;
        }
        Svg::new(lo, hi)
    }

    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        let sx = (p[0] - self.lo[0]) / (self.hi[0] - self.lo[0]);
        let sy = (p[1] - self.lo[1]) / (self.hi[1] - self.lo[1]);
        (sx * self.size, (1.0 - sy) * self.size)
    }

    pub fn polyline(&mut self, points: &[[f64; 2]], color: usize) {
        if points.len() < 2 {
            return;
        }
        let mut d = String::new();
        for p in points {
            let (x, y) = self.map(*p);
            let _ = write!(d, "{x:.3},{y:.3} ");
        }
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{}" stroke-width="1" points="{}"/>"#,
            PALETTE[color % PALETTE.len()],
            d.trim_end()
        );
    }

    /// Polyline split wherever consecutive points jump by more than `gap`
    /// (used for wrapped angles).
    pub fn broken_polyline(&mut self, points: &[[f64; 2]], gap: f64, color: usize) {
        let mut start = 0;
        for i in 1..=points.len() {
            let split = i == points.len()
                || (points[i][0] - points[i - 1][0]).abs() > gap
                || (points[i][1] - points[i - 1][1]).abs() > gap;
            if split {
                self.polyline(&points[start..i], color);
                start = i;
            }
        }
    }

    pub fn dot(&mut self, p: [f64; 2], color: usize) {
        let (x, y) = self.map(p);
        let _ = writeln!(
            self.body,
            r#"<circle cx="{x:.3}" cy="{y:.3}" r="2" fill="{}"/>"#,
            PALETTE[color % PALETTE.len()]
        );
    }

    pub fn render(&self, title: &str) -> String {
        let s = self.size;
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{s}\" height=\"{s}\" viewBox=\"0 0 {s} {s}\">\n<title>{title}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_keep_seventeen_digits() {
        assert_eq!(float(0.1), "1.0000000000000001e-1");
        assert_eq!(float(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn wrapped_polyline_is_split() {
        let mut svg = Svg::new([0.0, 0.0], [10.0, 10.0]);
        svg.broken_polyline(&[[0.0, 0.0], [1.0, 1.0], [9.0, 1.0], [9.5, 2.0]], 3.0, 0);
        assert_eq!(svg.render("t").matches("<polyline").count(), 2);
    }
}
