use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tfr_core::data::{save_bundle, save_ground_truth, save_target_set};
use tfr_micronet::dataset::GeneratorSpec;
use tfr_micronet::presets;
use tfr_micronet::zoo::{make_micro_zoo, SourceSpec, ZooConfig};

use crate::config::SynthSection;
use crate::error::CliError;
use crate::io::{sha256_file, sha256_hex, write_json};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MIN_SOURCES: usize = 3;

/// Everything needed to regenerate the zoo.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub sources: Vec<SourceSpec>,
    pub targets: Vec<GeneratorSpec>,
    pub zoo: ZooConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub seed: u64,
    /// SHA-256 of `spec.json`.
    pub config_sha256: String,
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    /// Path relative to the manifest -> SHA-256 of the file.
    pub files: BTreeMap<String, String>,
}

fn pick<T: Clone>(
    all: &[T],
    wanted: &[String],
    id: impl Fn(&T) -> &str,
    what: &str,
) -> Result<Vec<T>, CliError> {
    wanted
        .iter()
        .map(|w| {
            all.iter().find(|x| id(x) == w).cloned().ok_or_else(|| {
                let known: Vec<&str> = all.iter().map(&id).collect();
                CliError::Validation(format!(
                    "unknown {what} `{w}` (known: {})",
                    known.join(", ")
                ))
            })
        })
        .collect()
}

pub fn resolve(section: &SynthSection, seed: u64) -> Result<SynthSpec, CliError> {
    if section.sources.len() < MIN_SOURCES {
        return Err(CliError::Validation(format!(
            "synth: {} sources requested, need at least {MIN_SOURCES}",
            section.sources.len()
        )));
    }
    if section.targets.is_empty() {
        return Err(CliError::Validation("synth: no targets requested".into()));
    }
    Ok(SynthSpec {
        seed,
        sources: pick(
            &presets::sources(),
            &section.sources,
            |s| s.id.as_str(),
            "source",
        )?,
        targets: pick(
            &presets::targets(),
            &section.targets,
            |t| t.name.as_str(),
            "target",
        )?,
        zoo: section.zoo.clone(),
    })
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Writes `<out>/spec.json`, `<out>/ground_truth.csv`,
/// `<out>/<target>/target.tfrb`, `<out>/<target>/bundles/<source>.tfrb` (each
/// with its `.meta.json` sidecar) and `<out>/manifest.json`.
pub fn run(section: &SynthSection, seed: u64) -> Result<Manifest, CliError> {
    let spec = resolve(section, seed)?;
    let out = section.out.clone().unwrap_or_else(|| PathBuf::from("zoo"));
    let zoo = make_micro_zoo(&spec.sources, &spec.targets, &spec.zoo, seed)?;

    let mut written: Vec<PathBuf> = Vec::new();
    let spec_path = out.join("spec.json");
    write_json(&spec_path, &spec)?;
    written.push(spec_path.clone());
    for tb in &zoo.targets {
        let dir = out.join(&tb.target.name);
        let target_path = dir.join("target.tfrb");
        std::fs::create_dir_all(dir.join("bundles")).map_err(|e| CliError::io(&dir, e))?;
        save_target_set(&tb.target, &target_path)?;
        written.push(target_path.clone());
        written.push(tfr_core::data::sidecar_path(&target_path));
        for b in &tb.bundles {
            let p = dir.join("bundles").join(format!("{}.tfrb", b.model_id));
            save_bundle(b, &p)?;
            written.push(p.clone());
            written.push(tfr_core::data::sidecar_path(&p));
        }
    }
    let gt_path = out.join("ground_truth.csv");
    save_ground_truth(&zoo.ground_truth, &gt_path)?;
    written.push(gt_path);

    let mut files = BTreeMap::new();
    for p in &written {
        files.insert(relative(&out, p), sha256_file(p)?);
    }
    let manifest = Manifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        seed,
        config_sha256: sha256_hex(
            &std::fs::read(&spec_path).map_err(|e| CliError::io(&spec_path, e))?,
        ),
        sources: spec.sources.iter().map(|s| s.id.clone()).collect(),
        targets: spec.targets.iter().map(|t| t.name.clone()).collect(),
        files,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    for (t, name) in zoo.ground_truth.columns.iter().enumerate() {
        let best = zoo
            .ground_truth
            .values
            .iter()
            .zip(&zoo.ground_truth.rows)
            .filter_map(|(row, id)| row[t].map(|v| (id, v)))
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((id, v)) = best {
            println!("{name}: best fine-tuned source {id} (AUC {v:.2})");
        }
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sources_rejected() {
        let section = SynthSection {
            sources: vec!["near-texture".into(), "shapes".into()],
            ..Default::default()
        };
        assert!(matches!(resolve(&section, 0), Err(CliError::Validation(_))));
    }

    #[test]
    fn unknown_preset_rejected() {
        let mut section = SynthSection::default();
        section.targets = vec!["nope".into()];
        let err = resolve(&section, 0).unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn defaults_resolve() {
        let spec = resolve(&SynthSection::default(), 3).unwrap();
        assert_eq!((spec.sources.len(), spec.targets.len()), (5, 1));
    }
}
