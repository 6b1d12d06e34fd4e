use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use mkv_fbsde::fixed_point::SolutionBundle;
use mkv_fbsde::measure::io::fmt_f64;
use mkv_fbsde::measure::w2_to_gaussian_1d;
use mkv_fbsde::problems::ReferenceSolution;
use mkv_fbsde::Result;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub run_id: String,
    pub problem: String,
    pub params: BTreeMap<String, f64>,
    pub settings: BTreeMap<String, String>,
    pub config: serde_json::Value,
    pub threads: usize,
    pub status: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    pub timings_ms: BTreeMap<String, f64>,
    pub result: serde_json::Value,
    pub files: Vec<FileEntry>,
}

/// Output directory that records every file it writes.
pub struct RunDir {
    root: PathBuf,
    files: Vec<FileEntry>,
    timings: BTreeMap<String, f64>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
            timings: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes `name` through a temporary file so readers never see a
    /// partial result.
    pub fn write<F>(&mut self, name: &str, description: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let target = self.path(name);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent)?;
        }
        let tmp = self.path(&format!("{name}.tmp"));
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            body(&mut w)?;
            w.flush()?;
        }
        fs::rename(&tmp, &target)?;
        self.files.retain(|f| f.name != name);
        self.files.push(FileEntry {
            name: name.to_string(),
            description: description.to_string(),
        });
        Ok(())
    }

    pub fn time<T>(&mut self, phase: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        let start = Instant::now();
        let out = f(self);
        *self.timings.entry(phase.to_string()).or_default() += start.elapsed().as_secs_f64() * 1e3;
        out
    }

    /// Writes `manifest.json` last, listing every other file.
    pub fn finish(mut self, mut manifest: RunManifest) -> Result<RunManifest> {
        manifest.files = std::mem::take(&mut self.files);
        manifest.timings_ms = std::mem::take(&mut self.timings);
        let text = serde_json::to_string_pretty(&manifest)?;
        let tmp = self.path("manifest.json.tmp");
        fs::write(&tmp, text + "\n")?;
        fs::rename(&tmp, self.path("manifest.json"))?;
        Ok(manifest)
    }
}

/// First 12 hex digits of the SHA-256 of the canonical run description.
pub fn run_id(value: &serde_json::Value) -> String {
    let digest = Sha256::digest(value.to_string().as_bytes());
    hex::encode(digest)[..12].to_string()
}

/// `t,mean_x_1..,mean_y_1..,ref_x_1..,ref_y_1..,w2_to_ref`. Reference cells
/// are empty when the problem has no reference, and `w2_to_ref` is empty
/// unless the reference law of X is a known 1D Gaussian.
pub fn write_plot_csv<W: Write>(
    bundle: &SolutionBundle,
    reference: Option<&ReferenceSolution>,
    out: W,
) -> Result<()> {
    let d = bundle.paths.dims.d;
    let p = bundle.paths.dims.p;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|j| format!("mean_x_{j}")));
    header.extend((1..=p).map(|j| format!("mean_y_{j}")));
    header.extend((1..=d).map(|j| format!("ref_x_{j}")));
    header.extend((1..=p).map(|j| format!("ref_y_{j}")));
    header.push("w2_to_ref".into());
    w.write_record(&header)?;
    for (k, &t) in bundle.flow.times().iter().enumerate() {
        let mut row = vec![fmt_f64(t)];
        row.extend(bundle.mean_x(k).into_iter().map(fmt_f64));
        row.extend(bundle.mean_y(k).into_iter().map(fmt_f64));
        match reference {
            Some(r) => {
                row.extend(r.mean_x(t).into_iter().map(fmt_f64));
                row.extend(r.mean_y(t).into_iter().map(fmt_f64));
            }
            None => row.extend(std::iter::repeat_n(String::new(), d + p)),
        }
        let w2 = match reference.and_then(|r| r.gaussian_x(t)) {
            Some((mean, sd)) if d == 1 => fmt_f64(w2_to_gaussian_1d(bundle.flow.at(k), mean, sd)?),
            _ => String::new(),
        };
        row.push(w2);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Largest deviation of the solution means from the reference means over
/// the grid times, for X and Y.
pub fn reference_errors(bundle: &SolutionBundle, reference: &ReferenceSolution) -> (f64, f64) {
    let mut ex = 0.0f64;
    let mut ey = 0.0f64;
    for (k, &t) in bundle.flow.times().iter().enumerate() {
        for (a, b) in bundle.mean_x(k).iter().zip(reference.mean_x(t)) {
            ex = ex.max((a - b).abs());
        }
        for (a, b) in bundle.mean_y(k).iter().zip(reference.mean_y(t)) {
            ey = ey.max((a - b).abs());
        }
    }
    (ex, ey)
}
