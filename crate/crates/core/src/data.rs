//! Dataset containers, JSONL IO, and split protocols.
//!
//! Datasets are newline-delimited JSON, one architecture document per
//! line. The family label rides in the sample name as `family/index`;
//! platforms live in a separate JSON array file referenced by
//! `platform_id`.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::embed::{
    render_node_template, render_platform_template, PlatformRecord, Precision, TemplateString,
    Vocabulary,
};
use crate::error::{Error, Result};
use crate::graph::{parse_architecture, ArchDoc, ArchGraph, NodeDoc, OpRegistry, TargetsDoc};
use crate::model::{PredictionTarget, TaskKind};

#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    pub family: String,
    pub graph: ArchGraph,
    pub platform: PlatformRecord,
    pub target: PredictionTarget,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct family labels, sorted.
    pub fn families(&self) -> Vec<String> {
        let mut f: Vec<String> = self.samples.iter().map(|s| s.family.clone()).collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    /// Distinct (platform_id, precision) pairs, sorted.
    pub fn platform_pairs(&self) -> Vec<(String, Precision)> {
        let mut p: Vec<(String, Precision)> = self
            .samples
            .iter()
            .map(|s| (s.platform.platform_id.clone(), s.platform.precision))
            .collect();
        p.sort();
        p.dedup();
        p
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut f =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        for s in &self.samples {
            let doc = ArchDoc {
                name: s.name.clone(),
                nodes: s
                    .graph
                    .nodes()
                    .iter()
                    .map(|n| NodeDoc {
                        id: n.id,
                        op: n.op_name.clone(),
                        category: n.category,
                        attrs: n.attrs.clone(),
                    })
                    .collect(),
                edges: s.graph.edges().iter().map(|&(a, b)| [a, b]).collect(),
                targets: match s.target.kind {
                    TaskKind::Latency => TargetsDoc {
                        latency_ms: Some(s.target.value),
                        accuracy: None,
                    },
                    TaskKind::Accuracy => TargetsDoc {
                        latency_ms: None,
                        accuracy: Some(s.target.value),
                    },
                },
                platform_id: Some(s.platform.platform_id.clone()),
            };
            let line = serde_json::to_string(&doc)?;
            writeln!(f, "{line}").map_err(|e| Error::io(path.display().to_string(), e))?;
        }
        Ok(())
    }

    /// Load a JSONL dataset. Platform ids resolve against `platforms`;
    /// accuracy samples may omit the platform (the pseudo record is
    /// substituted).
    pub fn load_jsonl(
        path: &Path,
        platforms: &[PlatformRecord],
        registry: &OpRegistry,
        task: TaskKind,
    ) -> Result<Dataset> {
        let by_id: BTreeMap<&str, &PlatformRecord> =
            platforms.iter().map(|p| (p.platform_id.as_str(), p)).collect();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut samples = Vec::new();
        for (lineno, line) in std::io::BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let doc: ArchDoc = serde_json::from_str(&line)
                .map_err(|e| Error::Schema(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
            let graph = parse_architecture(&doc, registry)?;
            let target = match task {
                TaskKind::Latency => PredictionTarget::latency_ms(
                    doc.targets.latency_ms.ok_or_else(|| {
                        Error::Schema(format!("{}: missing latency_ms", doc.name))
                    })?,
                ),
                TaskKind::Accuracy => PredictionTarget::accuracy(
                    doc.targets.accuracy.ok_or_else(|| {
                        Error::Schema(format!("{}: missing accuracy", doc.name))
                    })?,
                ),
            };
            target.validate()?;
            let platform = match (&doc.platform_id, task) {
                (Some(id), _) => (*by_id
                    .get(id.as_str())
                    .ok_or_else(|| Error::Key(format!("platform_id {id:?}")))?)
                .clone(),
                (None, TaskKind::Accuracy) => PlatformRecord::pseudo_for_accuracy(),
                (None, TaskKind::Latency) => {
                    return Err(Error::Schema(format!("{}: missing platform_id", doc.name)))
                }
            };
            let family = doc.name.split('/').next().unwrap_or("default").to_string();
            samples.push(Sample { name: doc.name, family, graph, platform, target });
        }
        if samples.is_empty() {
            return Err(Error::Schema(format!("{}: empty dataset", path.display())));
        }
        Ok(Dataset { samples })
    }
}

/// JSON array of platform records.
pub fn load_platforms(path: &Path) -> Result<Vec<PlatformRecord>> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let platforms: Vec<PlatformRecord> = serde_json::from_str(&raw)?;
    if platforms.is_empty() {
        return Err(Error::Schema(format!("{}: no platforms", path.display())));
    }
    Ok(platforms)
}

pub fn save_platforms(path: &Path, platforms: &[PlatformRecord]) -> Result<()> {
    let json = serde_json::to_string_pretty(platforms)?;
    std::fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Test set = every sample of `family`; train = the rest.
pub fn split_leave_one_family_out(ds: &Dataset, family: &str) -> Result<(Dataset, Dataset)> {
    if !ds.samples.iter().any(|s| s.family == family) {
        return Err(Error::Key(format!("family {family:?} not in dataset")));
    }
    let (test, train): (Vec<Sample>, Vec<Sample>) =
        ds.samples.iter().cloned().partition(|s| s.family == family);
    Ok((Dataset { samples: train }, Dataset { samples: test }))
}

/// Test set = every sample of the held-out (platform, precision) pair;
/// train = all other pairs.
pub fn split_platform_zero_shot(
    ds: &Dataset,
    platform_id: &str,
    precision: Precision,
) -> Result<(Dataset, Dataset)> {
    let hit = |s: &Sample| s.platform.platform_id == platform_id && s.platform.precision == precision;
    if !ds.samples.iter().any(&hit) {
        return Err(Error::Key(format!("pair ({platform_id:?}, {precision}) not in dataset")));
    }
    let (test, train): (Vec<Sample>, Vec<Sample>) = ds.samples.iter().cloned().partition(hit);
    Ok((Dataset { samples: train }, Dataset { samples: test }))
}

/// Vocabulary over the dataset's node templates plus the platform file's
/// templates (platform spec sheets are known upfront; their latency
/// samples are not).
pub fn vocabulary_for(
    ds: &Dataset,
    platforms: &[PlatformRecord],
    registry: &OpRegistry,
) -> Result<Vocabulary> {
    let mut corpus: Vec<TemplateString> = Vec::new();
    for s in &ds.samples {
        for node in s.graph.nodes() {
            corpus.push(render_node_template(node, registry)?);
        }
        corpus.push(render_platform_template(&s.platform)?);
    }
    for p in platforms {
        corpus.push(render_platform_template(p)?);
    }
    Ok(Vocabulary::build(&corpus))
}
