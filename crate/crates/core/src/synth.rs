//! Synthetic dataset generation with a closed-form latency oracle.
//!
//! Ground truth is additive over nodes: each op has a base cost scaled
//! by its attributes (product of attr / reference-attr ratios), the
//! graph cost is the sum over nodes, and a platform factor
//! `reference_tflops / throughput * precision_multiplier` scales the
//! whole graph. Optional multiplicative log-normal noise sits on top.
//! The oracle is linear enough to be learnable at desk scale and
//! platform-factorized so cross-platform transfer is testable.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Sample};
use crate::embed::{PlatformRecord, Precision};
use crate::error::{Error, Result};
use crate::graph::{ArchGraph, NodeRecord, OpCategory, OpRegistry};
use crate::model::{PredictionTarget, TaskKind};
use crate::rng::Rng;

// ── Oracle ──────────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Milliseconds per op at its reference attributes, platform factor 1.
    pub base_costs: BTreeMap<String, f64>,
    pub reference_tflops: f64,
    pub precision_multipliers: BTreeMap<Precision, f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl OracleConfig {
    pub fn standard(noise_sigma: f64, seed: u64) -> Self {
        let base_costs = BTreeMap::from(
            [
                ("Conv", 1.0),
                ("DWConv", 0.3),
                ("FC", 0.6),
                ("BN", 0.12),
                ("ReLU", 0.05),
                ("Swish", 0.08),
                ("Add", 0.04),
                ("Concat", 0.05),
                ("Pool", 0.15),
                ("GlobalPool", 0.1),
            ]
            .map(|(k, v)| (k.to_string(), v)),
        );
        let precision_multipliers = BTreeMap::from([
            (Precision::Fp32, 1.0),
            (Precision::Fp16, 0.6),
            (Precision::Int8, 0.35),
        ]);
        OracleConfig {
            base_costs,
            reference_tflops: 8.0,
            precision_multipliers,
            noise_sigma,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_costs.values().any(|c| !c.is_finite() || *c <= 0.0) {
            return Err(Error::Contract("oracle: nonpositive base cost".into()));
        }
        if !self.reference_tflops.is_finite() || self.reference_tflops <= 0.0 {
            return Err(Error::Contract("oracle: nonpositive reference throughput".into()));
        }
        if self.precision_multipliers.values().any(|m| !m.is_finite() || *m <= 0.0) {
            return Err(Error::Contract("oracle: nonpositive precision multiplier".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Contract("oracle: negative noise sigma".into()));
        }
        Ok(())
    }

    /// Base cost scaled by the product of attr/reference ratios.
    pub fn node_cost(&self, node: &NodeRecord, registry: &OpRegistry) -> Result<f64> {
        let base = self
            .base_costs
            .get(&node.op_name)
            .ok_or_else(|| Error::Key(format!("no base cost for op '{}'", node.op_name)))?;
        let info = registry
            .get(&node.op_name)
            .ok_or_else(|| Error::Vocabulary(format!("unregistered op '{}'", node.op_name)))?;
        let mut scale = 1.0;
        for (attr, reference) in node.attrs.iter().zip(&info.ref_attrs) {
            scale *= *attr as f64 / *reference as f64;
        }
        Ok(base * scale)
    }

    pub fn graph_cost(&self, g: &ArchGraph, registry: &OpRegistry) -> Result<f64> {
        g.nodes().iter().map(|n| self.node_cost(n, registry)).sum()
    }

    pub fn platform_factor(&self, p: &PlatformRecord) -> Result<f64> {
        let mult = self
            .precision_multipliers
            .get(&p.precision)
            .ok_or_else(|| Error::Key(format!("no multiplier for {}", p.precision)))?;
        if !p.throughput_tflops.is_finite() || p.throughput_tflops <= 0.0 {
            return Err(Error::Contract(format!(
                "platform {}: nonpositive throughput",
                p.platform_id
            )));
        }
        Ok(self.reference_tflops / p.throughput_tflops * mult)
    }

    /// Latency before noise: `platform_factor * sum(node costs)`.
    pub fn noiseless_latency(
        &self,
        g: &ArchGraph,
        p: &PlatformRecord,
        registry: &OpRegistry,
    ) -> Result<f64> {
        Ok(self.platform_factor(p)? * self.graph_cost(g, registry)?)
    }
}

/// The four stock platforms: two devices, each at FP32 and INT8.
pub fn default_platforms() -> Vec<PlatformRecord> {
    let mk = |id: &str, vendor: &str, class: &str, precision, thr: f64, arch: &str, tdp: f64| {
        PlatformRecord {
            platform_id: id.into(),
            vendor: vendor.into(),
            device_class: class.into(),
            precision,
            throughput_tflops: thr,
            microarch: arch.into(),
            tdp_watts: tdp,
        }
    };
    vec![
        mk("syn_gpu_a_fp32", "SynA", "GPU", Precision::Fp32, 8.0, "ArchG1", 75.0),
        mk("syn_gpu_a_int8", "SynA", "GPU", Precision::Int8, 32.0, "ArchG1", 75.0),
        mk("syn_npu_b_fp32", "SynB", "NPU", Precision::Fp32, 4.0, "ArchN1", 15.0),
        mk("syn_npu_b_int8", "SynB", "NPU", Precision::Int8, 16.0, "ArchN1", 15.0),
    ]
}

// ── Families ────────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    ChainHeavy,
    Branchy,
    CellLike,
}

/// One architecture family: a structural pattern plus its palettes.
/// Graphs within a family share stem/head structure and differ in body
/// depth and sampled attributes, so node composition ratios identify
/// both the family and the depth.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FamilySpec {
    pub name: String,
    pub pattern: PatternKind,
    /// Conv / DWConv kernel palette.
    pub kernels: Vec<i64>,
    /// FC width palette (input and output drawn independently).
    pub fc_dims: Vec<i64>,
    /// Inclusive range of body blocks (or cells).
    pub blocks: (usize, usize),
    /// ChainHeavy: depthwise blocks instead of plain conv blocks.
    pub depthwise: bool,
    /// Branchy / CellLike: the merge op ("Add" or "Concat").
    pub merge_op: String,
}

pub fn default_families() -> Vec<FamilySpec> {
    let fam = |name: &str,
               pattern: PatternKind,
               kernels: &[i64],
               fc_dims: &[i64],
               blocks: (usize, usize),
               depthwise: bool,
               merge_op: &str| FamilySpec {
        name: name.into(),
        pattern,
        kernels: kernels.to_vec(),
        fc_dims: fc_dims.to_vec(),
        blocks,
        depthwise,
        merge_op: merge_op.into(),
    };
    vec![
        fam("plain_a", PatternKind::ChainHeavy, &[3], &[64, 128], (1, 5), false, "Add"),
        fam("vgg_like", PatternKind::ChainHeavy, &[3, 5], &[256, 512], (1, 5), false, "Add"),
        fam("mobile_like", PatternKind::ChainHeavy, &[3], &[128], (1, 4), true, "Add"),
        fam("deep_narrow", PatternKind::ChainHeavy, &[1, 3], &[64], (2, 5), false, "Add"),
        fam("res_like", PatternKind::Branchy, &[3], &[128, 256], (1, 3), false, "Add"),
        fam("incep_like", PatternKind::Branchy, &[1, 5], &[256], (1, 3), false, "Concat"),
        fam("cell_a", PatternKind::CellLike, &[3], &[64, 128], (1, 2), false, "Concat"),
        fam("cell_b", PatternKind::CellLike, &[5], &[128, 256], (1, 2), true, "Add"),
    ]
}

struct GraphBuilder {
    nodes: Vec<NodeRecord>,
    edges: Vec<(usize, usize)>,
}

impl GraphBuilder {
    fn new() -> Self {
        GraphBuilder { nodes: Vec::new(), edges: Vec::new() }
    }

    fn push(&mut self, op: &str, category: OpCategory, attrs: Vec<i64>, parents: &[usize]) -> usize {
        let id = self.nodes.len();
        self.nodes.push(NodeRecord { id, category, op_name: op.into(), attrs });
        for &p in parents {
            self.edges.push((p, id));
        }
        id
    }
}

/// Build one random graph for a family. Edges always point from lower
/// to higher id, so the result is acyclic by construction.
pub fn build_family_graph(
    fam: &FamilySpec,
    registry: &OpRegistry,
    rng: &mut Rng,
) -> Result<ArchGraph> {
    let mut b = GraphBuilder::new();
    let blocks = fam.blocks.0 + rng.next_usize(fam.blocks.1 - fam.blocks.0 + 1);
    let kernel = |rng: &mut Rng, fam: &FamilySpec| *rng.choose(&fam.kernels);

    let stem = b.push("Conv", OpCategory::ParamL, vec![kernel(rng, fam)], &[]);
    let mut prev = stem;
    match fam.pattern {
        PatternKind::ChainHeavy => {
            for _ in 0..blocks {
                if fam.depthwise {
                    let dw = b.push("DWConv", OpCategory::ParamL, vec![kernel(rng, fam)], &[prev]);
                    let pw = b.push("Conv", OpCategory::ParamL, vec![1], &[dw]);
                    let bn = b.push("BN", OpCategory::ParamL, vec![], &[pw]);
                    prev = b.push("Swish", OpCategory::ParamN, vec![], &[bn]);
                } else {
                    let cv = b.push("Conv", OpCategory::ParamL, vec![kernel(rng, fam)], &[prev]);
                    let bn = b.push("BN", OpCategory::ParamL, vec![], &[cv]);
                    prev = b.push("ReLU", OpCategory::ParamN, vec![], &[bn]);
                }
            }
        }
        PatternKind::Branchy => {
            for _ in 0..blocks {
                let left = b.push("Conv", OpCategory::ParamL, vec![kernel(rng, fam)], &[prev]);
                let left = b.push("BN", OpCategory::ParamL, vec![], &[left]);
                let right = if rng.next_f64() < 0.5 {
                    b.push("DWConv", OpCategory::ParamL, vec![kernel(rng, fam)], &[prev])
                } else {
                    b.push("Pool", OpCategory::ParamN, vec![2], &[prev])
                };
                prev = b.push(&fam.merge_op, OpCategory::ParamN, vec![], &[left, right]);
            }
        }
        PatternKind::CellLike => {
            for _ in 0..blocks {
                let cell_input = prev;
                let n_ops = 4 + rng.next_usize(3); // 4..=6
                let mut members = vec![cell_input];
                for _ in 0..n_ops {
                    let parents = {
                        let k = 1 + rng.next_usize(2.min(members.len()));
                        let mut picked = std::collections::BTreeSet::new();
                        while picked.len() < k {
                            picked.insert(members[rng.next_usize(members.len())]);
                        }
                        picked.into_iter().collect::<Vec<_>>()
                    };
                    let id = match rng.next_usize(4) {
                        0 => b.push("Conv", OpCategory::ParamL, vec![kernel(rng, fam)], &parents),
                        1 if fam.depthwise => {
                            b.push("DWConv", OpCategory::ParamL, vec![kernel(rng, fam)], &parents)
                        }
                        1 => b.push("Pool", OpCategory::ParamN, vec![2], &parents),
                        2 => b.push("ReLU", OpCategory::ParamN, vec![], &parents),
                        _ => b.push("Swish", OpCategory::ParamN, vec![], &parents),
                    };
                    members.push(id);
                }
                // Close the cell over its sinks (members nothing points at).
                let sinks: Vec<usize> = members
                    .iter()
                    .copied()
                    .filter(|&m| !b.edges.iter().any(|&(s, _)| s == m))
                    .collect();
                prev = b.push(&fam.merge_op, OpCategory::ParamN, vec![], &sinks);
            }
        }
    }
    let pool = b.push("GlobalPool", OpCategory::ParamN, vec![], &[prev]);
    let fc_in = *rng.choose(&fam.fc_dims);
    let fc_out = *rng.choose(&fam.fc_dims);
    b.push("FC", OpCategory::ParamL, vec![fc_in, fc_out], &[pool]);

    ArchGraph::new(b.nodes, b.edges, registry)
}

// ── Generation ──────────────────────────────────────────────────────

/// Deterministic synthetic dataset: families and platforms interleaved
/// round-robin, one graph per sample, targets from the oracle.
pub fn generate_synthetic(
    cfg: &OracleConfig,
    platforms: &[PlatformRecord],
    n_samples: usize,
    families: &[FamilySpec],
    task: TaskKind,
    registry: &OpRegistry,
) -> Result<Dataset> {
    cfg.validate()?;
    if n_samples == 0 {
        return Err(Error::Contract("generate_synthetic: n_samples must be positive".into()));
    }
    if families.is_empty() {
        return Err(Error::Contract("generate_synthetic: empty family spec".into()));
    }
    if task == TaskKind::Latency && platforms.is_empty() {
        return Err(Error::Contract("generate_synthetic: no platforms".into()));
    }
    let pseudo = PlatformRecord::pseudo_for_accuracy();
    let mut rng = Rng::from_seed(cfg.seed);
    let mut samples = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let fam = &families[i % families.len()];
        let platform = match task {
            TaskKind::Latency => platforms[(i / families.len()) % platforms.len()].clone(),
            TaskKind::Accuracy => pseudo.clone(),
        };
        let graph = build_family_graph(fam, registry, &mut rng)?;
        let z = rng.normal();
        let noise = (cfg.noise_sigma * z).exp();
        let target = match task {
            TaskKind::Latency => {
                PredictionTarget::latency_ms(cfg.noiseless_latency(&graph, &platform, registry)? * noise)
            }
            TaskKind::Accuracy => {
                // Harder (costlier) graphs score higher, squashed to (0, 1).
                let c = cfg.graph_cost(&graph, registry)?.ln();
                let logit = (c - 1.2) / 0.9 + cfg.noise_sigma * z;
                PredictionTarget::accuracy(1.0 / (1.0 + (-logit).exp()))
            }
        };
        samples.push(Sample {
            name: format!("{}/{i:05}", fam.name),
            family: fam.name.clone(),
            graph,
            platform,
            target,
        });
    }
    Ok(Dataset { samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::validate_dag;

    fn identity_platform() -> PlatformRecord {
        PlatformRecord {
            platform_id: "ref".into(),
            vendor: "Syn".into(),
            device_class: "GPU".into(),
            precision: Precision::Fp32,
            throughput_tflops: 8.0,
            microarch: "ArchG1".into(),
            tdp_watts: 10.0,
        }
    }

    #[test]
    fn single_conv_with_base_cost_two_gives_two_ms() {
        let registry = OpRegistry::standard();
        let mut cfg = OracleConfig::standard(0.0, 0);
        cfg.base_costs.insert("Conv".into(), 2.0);
        let g = ArchGraph::new(
            vec![NodeRecord {
                id: 0,
                category: OpCategory::ParamL,
                op_name: "Conv".into(),
                attrs: vec![3], // reference kernel: attr scale 1
            }],
            vec![],
            &registry,
        )
        .unwrap();
        // Platform factor 8 / 8 * 1.0 = 1.
        let lat = cfg.noiseless_latency(&g, &identity_platform(), &registry).unwrap();
        assert_eq!(lat, 2.0);
    }

    #[test]
    fn attr_scaling_is_a_ratio_product() {
        let registry = OpRegistry::standard();
        let cfg = OracleConfig::standard(0.0, 0);
        let conv5 = NodeRecord {
            id: 0,
            category: OpCategory::ParamL,
            op_name: "Conv".into(),
            attrs: vec![5],
        };
        assert!((cfg.node_cost(&conv5, &registry).unwrap() - 5.0 / 3.0).abs() < 1e-15);
        let fc = NodeRecord {
            id: 0,
            category: OpCategory::ParamL,
            op_name: "FC".into(),
            attrs: vec![512, 256],
        };
        let want = 0.6 * (512.0 / 256.0) * (256.0 / 128.0);
        assert!((cfg.node_cost(&fc, &registry).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn halved_throughput_doubles_every_noiseless_latency() {
        let registry = OpRegistry::standard();
        let cfg = OracleConfig::standard(0.0, 3);
        let fast = identity_platform();
        let mut slow = identity_platform();
        slow.platform_id = "slow".into();
        slow.throughput_tflops = 4.0;
        let mut rng = Rng::from_seed(10);
        for fam in default_families() {
            let g = build_family_graph(&fam, &registry, &mut rng).unwrap();
            let a = cfg.noiseless_latency(&g, &fast, &registry).unwrap();
            let b = cfg.noiseless_latency(&g, &slow, &registry).unwrap();
            assert!((b - 2.0 * a).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn same_seed_gives_identical_datasets() {
        let registry = OpRegistry::standard();
        let cfg = OracleConfig::standard(0.05, 42);
        let platforms = default_platforms();
        let families = default_families();
        let a = generate_synthetic(&cfg, &platforms, 64, &families, TaskKind::Latency, &registry)
            .unwrap();
        let b = generate_synthetic(&cfg, &platforms, 64, &families, TaskKind::Latency, &registry)
            .unwrap();
        assert_eq!(a.samples.len(), b.samples.len());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.graph, y.graph);
            assert_eq!(x.platform, y.platform);
            assert_eq!(x.target.value.to_bits(), y.target.value.to_bits());
        }
    }

    #[test]
    fn generated_graphs_are_valid_dags_with_bounded_size() {
        let registry = OpRegistry::standard();
        let families = default_families();
        for seed in 0..1000u64 {
            let mut rng = Rng::from_seed(seed);
            let fam = &families[(seed as usize) % families.len()];
            let g = build_family_graph(fam, &registry, &mut rng).unwrap();
            assert!(validate_dag(g.node_count(), g.edges()).is_ok());
            assert!(
                (4..=20).contains(&g.node_count()),
                "family {} produced {} nodes",
                fam.name,
                g.node_count()
            );
        }
    }

    #[test]
    fn family_and_platform_interleaving_is_balanced() {
        let registry = OpRegistry::standard();
        let cfg = OracleConfig::standard(0.0, 7);
        let platforms = default_platforms();
        let families = default_families();
        let n = 8 * 4 * 3;
        let ds = generate_synthetic(&cfg, &platforms, n, &families, TaskKind::Latency, &registry)
            .unwrap();
        for fam in &families {
            let count = ds.samples.iter().filter(|s| s.family == fam.name).count();
            assert_eq!(count, n / families.len());
        }
        for p in &platforms {
            let count =
                ds.samples.iter().filter(|s| s.platform.platform_id == p.platform_id).count();
            assert_eq!(count, n / platforms.len());
        }
    }

    #[test]
    fn accuracy_task_uses_pseudo_platform_and_unit_interval() {
        let registry = OpRegistry::standard();
        let cfg = OracleConfig::standard(0.05, 9);
        let ds = generate_synthetic(
            &cfg,
            &[],
            32,
            &default_families(),
            TaskKind::Accuracy,
            &registry,
        )
        .unwrap();
        for s in &ds.samples {
            assert_eq!(s.platform.vendor, "None");
            assert!(s.target.value > 0.0 && s.target.value < 1.0);
            assert_eq!(s.target.kind, TaskKind::Accuracy);
        }
    }

    #[test]
    fn empty_family_spec_is_a_contract_error() {
        let registry = OpRegistry::standard();
        let cfg = OracleConfig::standard(0.0, 0);
        assert!(matches!(
            generate_synthetic(&cfg, &default_platforms(), 4, &[], TaskKind::Latency, &registry),
            Err(Error::Contract(_))
        ));
    }
}
