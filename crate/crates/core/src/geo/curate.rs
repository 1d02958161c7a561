use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{extract_oriented_slice, EgoPose, GeoMosaic, SliceGeometry, GROUND_RESOLUTION_M};
use crate::error::{Error, Result};

/// One line of a pose file. `token` names the output files; when absent
/// the line index is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    pub timestamp: f64,
    pub lat: f64,
    pub lon: f64,
    pub yaw: f64,
}

impl PoseRecord {
    pub fn from_pose(token: impl Into<String>, pose: &EgoPose) -> Self {
        Self {
            token: Some(token.into()),
            timestamp: pose.timestamp,
            lat: pose.lat,
            lon: pose.lon,
            yaw: pose.yaw,
        }
    }

    pub fn token_or(&self, index: usize) -> String {
        self.token.clone().unwrap_or_else(|| format!("pose_{index:06}"))
    }

    pub fn pose(&self) -> Result<EgoPose> {
        EgoPose::new(self.timestamp, self.lat, self.lon, self.yaw)
    }
}

/// Reads JSON-lines poses; blank lines are skipped.
pub fn read_poses(path: &Path) -> Result<Vec<PoseRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// JSON written next to each slice image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSidecar {
    pub timestamp: f64,
    pub lat: f64,
    pub lon: f64,
    pub yaw_rad: f64,
    pub ground_resolution_m: f64,
    pub footprint_mercator: [[f64; 2]; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub token: String,
    pub status: EntryStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn ok_count(&self) -> usize {
        self.entries.iter().filter(|e| e.status == EntryStatus::Ok).count()
    }

    pub fn failure_count(&self) -> usize {
        self.entries.len() - self.ok_count()
    }
}

fn curate_one(mosaic: &GeoMosaic, rec: &PoseRecord, token: &str, out_dir: &Path) -> Result<()> {
    let pose = rec.pose()?;
    let slice = extract_oriented_slice(mosaic, &pose)?;
    let geom = SliceGeometry::new(&pose)?;
    let png = out_dir.join(format!("{token}.png"));
    slice
        .pixels
        .save(&png)
        .map_err(|source| Error::Image { path: png, source })?;
    let sidecar = SliceSidecar {
        timestamp: pose.timestamp,
        lat: pose.lat,
        lon: pose.lon,
        yaw_rad: pose.yaw,
        ground_resolution_m: GROUND_RESOLUTION_M,
        footprint_mercator: geom.footprint_mercator(),
    };
    let json = out_dir.join(format!("{token}.json"));
    let text = serde_json::to_string_pretty(&sidecar)
        .map_err(|source| Error::Json { path: json.clone(), source })?;
    fs::write(&json, text).map_err(|e| Error::io(json, e))
}

/// Extracts one slice per pose into `out_dir` and writes `manifest.json`.
///
/// Per-pose failures are recorded in the manifest; only I/O errors on the
/// output directory or the manifest itself abort the run.
pub fn curate(poses: &[PoseRecord], mosaic: &GeoMosaic, out_dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = poses
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let token = rec.token_or(i);
            match curate_one(mosaic, rec, &token, out_dir) {
                Ok(()) => ManifestEntry { token, status: EntryStatus::Ok, error_kind: None, message: None },
                Err(e) => ManifestEntry {
                    token,
                    status: EntryStatus::Error,
                    error_kind: Some(e.kind().to_string()),
                    message: Some(e.to_string()),
                },
            }
        })
        .collect();
    let manifest = Manifest { entries };
    let path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|source| Error::Json { path: path.clone(), source })?;
    fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    Ok(manifest)
}
