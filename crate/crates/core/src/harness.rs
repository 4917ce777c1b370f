//! Variant sweeps over a benchmark and Table-1-style reporting.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::degradation::BenchmarkManifest;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::format_db;
use crate::models::{Checkpoint, Gup, Network};
use crate::seed::{derive_seed, sha256_hex};
use crate::tta::{adapt, AdaptationConfig};

pub const RESULTS_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_BASELINE: &str = "frozen";

/// A named JSON delta over the base adaptation config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    #[serde(default)]
    pub delta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantMatrix {
    pub variants: Vec<Variant>,
}

impl VariantMatrix {
    /// The five rows of the ablation: frozen baseline, the bicubic-pair
    /// recipe, learned degrader without and with the adversarial loss, and
    /// the full dual-cycle configuration.
    pub fn standard() -> Self {
        let v = |name: &str, delta: serde_json::Value| Variant {
            name: name.into(),
            delta,
        };
        VariantMatrix {
            variants: vec![
                v("frozen", json!({"dry_run": true})),
                v(
                    "step1-bicubic",
                    json!({
                        "degrader_mode": "bicubic",
                        "stage_a": {"losses": []},
                        "stage_b": {"losses": ["down_up"]}
                    }),
                ),
                v(
                    "step2-learned-nogan",
                    json!({
                        "degrader_mode": "learned",
                        "stage_a": {"losses": ["bwd_cycle"]},
                        "stage_b": {"losses": ["down_up"]}
                    }),
                ),
                v(
                    "step2-learned-gan",
                    json!({
                        "degrader_mode": "learned",
                        "stage_a": {"losses": ["bwd_cycle", "gan"]},
                        "stage_b": {"losses": ["down_up"]}
                    }),
                ),
                v(
                    "step3-full",
                    json!({
                        "degrader_mode": "learned",
                        "stage_a": {"losses": ["bwd_cycle", "fwd_cycle", "gan"]},
                        "stage_b": {"losses": ["down_up", "up_down"]}
                    }),
                ),
            ],
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| not_found_or_io("variants file", path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Keeps only the named variants, in the given order.
    pub fn select(&self, names: &[String]) -> Result<Self> {
        let variants = names
            .iter()
            .map(|n| {
                self.variants
                    .iter()
                    .find(|v| &v.name == n)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("unknown variant `{n}`")))
            })
            .collect::<Result<_>>()?;
        Ok(VariantMatrix { variants })
    }

    /// Applies every delta to `base`, checking names are unique and every
    /// resulting config validates.
    pub fn resolve(&self, base: &AdaptationConfig) -> Result<Vec<(String, AdaptationConfig)>> {
        let mut out: Vec<(String, AdaptationConfig)> = Vec::with_capacity(self.variants.len());
        for v in &self.variants {
            if v.name.is_empty() {
                return Err(Error::Config("variant name must not be empty".into()));
            }
            if out.iter().any(|(n, _)| n == &v.name) {
                return Err(Error::Config(format!("duplicate variant `{}`", v.name)));
            }
            let cfg = base
                .with_delta(&v.delta)
                .map_err(|e| e.context(format!("variant `{}`", v.name)))?;
            out.push((v.name.clone(), cfg));
        }
        Ok(out)
    }
}

pub(crate) fn not_found_or_io(what: &'static str, path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::NotFound {
            what,
            path: path.to_path_buf(),
        }
    } else {
        Error::io(path, e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: String,
    pub image: String,
    pub psnr: f64,
    pub ssim: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub name: String,
    pub label: String,
    pub config_hash: String,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub format_version: u32,
    pub manifest_hash: String,
    pub checkpoint_hash: String,
    pub global_seed: u64,
    pub images: Vec<String>,
    pub variants: Vec<VariantSummary>,
    /// Variant-major, images in manifest order.
    pub rows: Vec<ResultRow>,
}

/// Escapes pipes so a value fits in one markdown table cell.
fn md_cell(s: &str) -> String {
    s.replace('|', "\\|")
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    Serial,
    Parallel,
}

/// Runs every variant on every manifest entry.
///
/// Each `(image, variant)` run is seeded with
/// `hash(global_seed, image_id, variant_name)`, so results do not depend on
/// scheduling. The first failure aborts the sweep and names the pair.
pub fn eval_sweep(
    manifest: &BenchmarkManifest,
    ckpt: &Checkpoint,
    base: &AdaptationConfig,
    matrix: &VariantMatrix,
    global_seed: u64,
    schedule: Schedule,
) -> Result<ResultsTable> {
    let variants = matrix.resolve(base)?;
    if manifest.entries.is_empty() {
        return Err(Error::Config("manifest has no entries".into()));
    }
    let gup: Gup<f32> = ckpt.to_network()?;
    let pairs: Vec<(String, Image, Image)> = manifest
        .entries
        .iter()
        .map(|e| {
            let (lr, hr) = manifest
                .load_pair(e)
                .map_err(|err| err.context(format!("image `{}`", e.id)))?;
            Ok((e.id.clone(), lr, hr))
        })
        .collect::<Result<_>>()?;

    let run_image = |(id, lr, hr): &(String, Image, Image)| -> Result<Vec<ResultRow>> {
        variants
            .iter()
            .map(|(name, cfg)| {
                let mut cfg = cfg.clone();
                cfg.seed = derive_seed(global_seed, &[id, name]);
                let out = adapt(lr, ckpt, &cfg, Some(hr))
                    .map_err(|e| e.context(format!("variant `{name}` on image `{id}`")))?;
                let m = out.report.final_metrics.expect("ground truth supplied");
                Ok(ResultRow {
                    variant: name.clone(),
                    image: id.clone(),
                    psnr: m.psnr,
                    ssim: m.ssim,
                    seed: cfg.seed,
                })
            })
            .collect()
    };
    let per_image: Vec<Vec<ResultRow>> = match schedule {
        Schedule::Serial => pairs.iter().map(run_image).collect::<Result<_>>()?,
        Schedule::Parallel => pairs.par_iter().map(run_image).collect::<Result<_>>()?,
    };

    let mut rows = Vec::with_capacity(variants.len() * pairs.len());
    let mut summaries = Vec::with_capacity(variants.len());
    for (vi, (name, cfg)) in variants.iter().enumerate() {
        let vrows: Vec<ResultRow> = per_image.iter().map(|r| r[vi].clone()).collect();
        summaries.push(VariantSummary {
            name: name.clone(),
            label: cfg.label(),
            config_hash: cfg.hash(),
            mean_psnr: mean(vrows.iter().map(|r| r.psnr)),
            mean_ssim: mean(vrows.iter().map(|r| r.ssim)),
        });
        rows.extend(vrows);
    }
    Ok(ResultsTable {
        format_version: RESULTS_FORMAT_VERSION,
        manifest_hash: manifest.hash()?,
        checkpoint_hash: gup.checksum(),
        global_seed,
        images: pairs.iter().map(|p| p.0.clone()).collect(),
        variants: summaries,
        rows,
    })
}

impl ResultsTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| not_found_or_io("results file", path, e))?;
        let t: ResultsTable = serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if t.format_version != RESULTS_FORMAT_VERSION {
            return Err(Error::Version {
                found: t.format_version,
                expected: RESULTS_FORMAT_VERSION,
            });
        }
        Ok(t)
    }

    pub fn variant(&self, name: &str) -> Option<&VariantSummary> {
        self.variants.iter().find(|v| v.name == name)
    }

    /// RFC-4180 CSV: one row per (variant, image), then one `mean` row per
    /// variant.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Parameter(format!("CSV encoding: {e}"));
        w.write_record(["variant", "label", "image", "psnr", "ssim"])
            .map_err(csv_err)?;
        for v in &self.variants {
            for r in self.rows.iter().filter(|r| r.variant == v.name) {
                w.write_record([
                    v.name.as_str(),
                    v.label.as_str(),
                    r.image.as_str(),
                    &format_db(r.psnr),
                    &format!("{:.6}", r.ssim),
                ])
                .map_err(csv_err)?;
            }
        }
        for v in &self.variants {
            w.write_record([
                v.name.as_str(),
                v.label.as_str(),
                "mean",
                &format_db(v.mean_psnr),
                &format!("{:.6}", v.mean_ssim),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Parameter(format!("CSV encoding: {e}")))?;
        Ok(String::from_utf8(bytes).expect("CSV is UTF-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Markdown table with one row per variant.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| variant | losses | PSNR (dB) | SSIM |\n|---|---|---:|---:|\n");
        for v in &self.variants {
            s.push_str(&format!(
                "| {} | {} | {} | {:.6} |\n",
                md_cell(&v.name),
                md_cell(&v.label),
                format_db(v.mean_psnr),
                v.mean_ssim
            ));
        }
        s
    }

    /// Writes `results.csv`, `results.json` and `table.md` into `dir`.
    ///
    /// Files are written under temporary names and renamed at the end, so a
    /// failure leaves no partial outputs.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            ("results.csv", self.to_csv()?),
            ("results.json", self.to_json()?),
            ("table.md", self.to_markdown()),
        ];
        let mut written = Vec::new();
        let mut staged = Vec::new();
        let result = (|| -> Result<()> {
            for (name, body) in &files {
                let tmp = dir.join(format!(".{name}.partial"));
                staged.push(tmp.clone());
                fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
            }
            for ((name, _), tmp) in files.iter().zip(&staged) {
                let dst = dir.join(name);
                fs::rename(tmp, &dst).map_err(|e| Error::io(&dst, e))?;
                written.push(dst);
            }
            Ok(())
        })();
        if let Err(e) = result {
            for p in staged.iter().chain(&written) {
                let _ = fs::remove_file(p);
            }
            return Err(e);
        }
        Ok(written)
    }
}

/// Outcome of merging results files against a baseline row.
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub merged: ResultsTable,
    pub markdown: String,
    /// Variants whose mean PSNR fell more than the tolerance below baseline.
    pub regressions: Vec<String>,
}

/// Merges result tables (which must share a benchmark) and compares each
/// variant's mean PSNR with `baseline`.
pub fn compare(tables: &[ResultsTable], baseline: &str, tolerance: f64) -> Result<Comparison> {
    let first = tables
        .first()
        .ok_or_else(|| Error::Config("no results files given".into()))?;
    if !(tolerance.is_finite() && tolerance >= 0.0) {
        return Err(Error::Config(format!("tolerance {tolerance} must be non-negative")));
    }
    let mut merged = first.clone();
    for t in &tables[1..] {
        if t.manifest_hash != first.manifest_hash {
            return Err(Error::Config(format!(
                "refusing to merge results from different benchmarks ({} vs {})",
                first.manifest_hash, t.manifest_hash
            )));
        }
        for v in &t.variants {
            if merged.variant(&v.name).is_some() {
                return Err(Error::Config(format!(
                    "variant `{}` appears in more than one results file",
                    v.name
                )));
            }
            merged.variants.push(v.clone());
            merged
                .rows
                .extend(t.rows.iter().filter(|r| r.variant == v.name).cloned());
        }
    }
    let base = merged
        .variant(baseline)
        .ok_or_else(|| Error::Config(format!("baseline variant not found: `{baseline}`")))?
        .clone();
    let mut md = merged.to_markdown();
    md.push_str(&format!(
        "\nΔ vs `{baseline}` (tolerance {tolerance} dB):\n\n| variant | ΔPSNR (dB) | ΔSSIM | status |\n|---|---:|---:|---|\n"
    ));
    let mut regressions = Vec::new();
    for v in &merged.variants {
        let dp = v.mean_psnr - base.mean_psnr;
        let ds = v.mean_ssim - base.mean_ssim;
        let status = if dp < -tolerance {
            regressions.push(v.name.clone());
            "REGRESSION"
        } else {
            "ok"
        };
        md.push_str(&format!(
            "| {} | {:+.6} | {:+.6} | {} |\n",
            md_cell(&v.name), dp, ds, status
        ));
    }
    md.push_str(&format!(
        "\nbenchmark `{}`, checkpoint `{}`\n",
        merged.manifest_hash, merged.checkpoint_hash
    ));
    Ok(Comparison {
        merged,
        markdown: md,
        regressions,
    })
}

/// Stable digest of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| not_found_or_io("file", path, e))?;
    Ok(sha256_hex(&bytes))
}
