//! Application presets.
//!
//! Stage structure and package counts follow the four benchmark
//! applications (video processing, log analysis, document conversion, ML
//! inference). Rates, sizes, compute means and SLA thresholds are chosen
//! values, not measurements.

use serde::{Deserialize, Serialize};

use crate::model::{
    Catalog, ComputeDist, FunctionSpec, SizeDist, StageRef, StageSpec, WorkflowSpec,
};
use crate::sim::ClusterConfig;

use super::{AppMix, ArrivalProcess, WorkloadConfig};

const MB: f64 = 1e6;
const GB: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub functions: Vec<FunctionSpec>,
    pub workflows: Vec<WorkflowSpec>,
    pub workload: WorkloadConfig,
    pub cluster: ClusterConfig,
}

impl Scenario {
    pub fn catalog(&self) -> Catalog {
        Catalog::new(self.functions.clone(), self.workflows.clone())
    }
}

fn deps(names: &[&str], extra: usize, prefix: &str) -> Vec<String> {
    names
        .iter()
        .map(|s| s.to_string())
        .chain((0..extra).map(|i| format!("{prefix}-{i:02}")))
        .collect()
}

struct Fn<'a> {
    id: &'a str,
    deps: Vec<String>,
    compute_ms: f64,
    cv: f64,
    input: SizeDist,
    theta_ms: f64,
}

fn function(workflow: &str, stage: usize, f: Fn<'_>) -> FunctionSpec {
    FunctionSpec {
        id: f.id.into(),
        deps: f.deps,
        base_compute: ComputeDist {
            mean_ms: f.compute_ms,
            cv: f.cv,
        },
        input_size: f.input,
        sla_theta_ms: f.theta_ms,
        stage: Some(StageRef {
            workflow: workflow.into(),
            stage,
        }),
    }
}

fn stage(f: &str, fan_out: u32, preds: &[usize], ratio: f64) -> StageSpec {
    StageSpec {
        function: f.into(),
        fan_out,
        predecessors: preds.to_vec(),
        output_ratio: ratio,
    }
}

fn small(median: f64) -> SizeDist {
    SizeDist {
        median_bytes: median,
        sigma: 0.5,
        max_bytes: median * 4.0,
    }
}

fn video_app() -> (Vec<FunctionSpec>, WorkflowSpec) {
    let w = "video";
    let fns = vec![
        function(
            w,
            0,
            Fn {
                id: "video-split",
                deps: deps(&["ffmpeg", "numpy", "boto3", "av", "pillow"], 0, ""),
                compute_ms: 400.0,
                cv: 0.2,
                input: SizeDist {
                    median_bytes: 300.0 * MB,
                    sigma: 0.6,
                    max_bytes: 1.2 * GB,
                },
                theta_ms: 40_000.0,
            },
        ),
        function(
            w,
            1,
            Fn {
                id: "video-transcode",
                deps: deps(&["ffmpeg", "numpy", "av", "x264"], 0, ""),
                compute_ms: 1200.0,
                cv: 0.2,
                input: small(75.0 * MB),
                theta_ms: 15_000.0,
            },
        ),
        function(
            w,
            2,
            Fn {
                id: "video-merge",
                deps: deps(&["ffmpeg", "numpy", "boto3", "av"], 0, ""),
                compute_ms: 500.0,
                cv: 0.2,
                input: small(150.0 * MB),
                theta_ms: 15_000.0,
            },
        ),
    ];
    let wf = WorkflowSpec {
        id: w.into(),
        stages: vec![
            stage("video-split", 1, &[], 1.0),
            stage("video-transcode", 4, &[0], 0.5),
            stage("video-merge", 1, &[1], 1.0),
        ],
    };
    (fns, wf)
}

fn log_app() -> (Vec<FunctionSpec>, WorkflowSpec) {
    let w = "log";
    let fns = vec![
        function(
            w,
            0,
            Fn {
                id: "log-split",
                deps: vec![],
                compute_ms: 300.0,
                cv: 0.2,
                input: SizeDist {
                    median_bytes: 250.0 * MB,
                    sigma: 0.6,
                    max_bytes: 1.0 * GB,
                },
                theta_ms: 30_000.0,
            },
        ),
        function(
            w,
            1,
            Fn {
                id: "log-analyze",
                deps: deps(&["regex", "pandas", "geoip"], 0, ""),
                compute_ms: 800.0,
                cv: 0.2,
                input: small(60.0 * MB),
                theta_ms: 12_000.0,
            },
        ),
        function(
            w,
            2,
            Fn {
                id: "log-merge",
                deps: deps(&["pandas", "boto3"], 0, ""),
                compute_ms: 200.0,
                cv: 0.2,
                input: small(25.0 * MB),
                theta_ms: 8_000.0,
            },
        ),
    ];
    let wf = WorkflowSpec {
        id: w.into(),
        stages: vec![
            stage("log-split", 1, &[], 1.0),
            stage("log-analyze", 4, &[0], 0.1),
            stage("log-merge", 1, &[1], 1.0),
        ],
    };
    (fns, wf)
}

fn doc_app() -> (Vec<FunctionSpec>, WorkflowSpec) {
    let w = "doc";
    let fns = vec![
        function(
            w,
            0,
            Fn {
                id: "any2md-validate",
                deps: deps(&["python-magic", "chardet"], 0, ""),
                compute_ms: 200.0,
                cv: 0.2,
                input: small(2.0 * MB),
                theta_ms: 3_000.0,
            },
        ),
        function(
            w,
            1,
            Fn {
                id: "any2md-process",
                deps: deps(&["pandoc", "markdown", "chardet", "lxml"], 30, "doc-lib"),
                compute_ms: 1500.0,
                cv: 0.2,
                input: small(2.0 * MB),
                theta_ms: 8_500.0,
            },
        ),
    ];
    let wf = WorkflowSpec {
        id: w.into(),
        stages: vec![
            stage("any2md-validate", 1, &[], 1.0),
            stage("any2md-process", 1, &[0], 1.0),
        ],
    };
    (fns, wf)
}

fn ml_app() -> (Vec<FunctionSpec>, WorkflowSpec) {
    let w = "ml";
    let fns = vec![
        function(
            w,
            0,
            Fn {
                id: "ml-normalize",
                deps: deps(&["numpy", "pandas", "scipy", "boto3"], 0, ""),
                compute_ms: 300.0,
                cv: 0.2,
                input: small(5.0 * MB),
                theta_ms: 4_000.0,
            },
        ),
        function(
            w,
            1,
            Fn {
                id: "ml-process",
                deps: deps(&["numpy", "scipy", "onnxruntime", "sklearn"], 13, "ml-lib"),
                compute_ms: 800.0,
                cv: 0.2,
                input: small(5.0 * MB),
                theta_ms: 5_500.0,
            },
        ),
    ];
    let wf = WorkflowSpec {
        id: w.into(),
        stages: vec![
            stage("ml-normalize", 1, &[], 1.0),
            stage("ml-process", 1, &[0], 1.0),
        ],
    };
    (fns, wf)
}

/// Single-stage application used as the function unseen by the predictor.
fn resize_app() -> (Vec<FunctionSpec>, WorkflowSpec) {
    let w = "resize";
    let fns = vec![function(
        w,
        0,
        Fn {
            id: "image-resize",
            deps: deps(&["pillow", "numpy"], 0, ""),
            compute_ms: 900.0,
            cv: 0.05,
            input: small(2.0 * MB),
            theta_ms: 6_000.0,
        },
    )];
    let wf = WorkflowSpec {
        id: w.into(),
        stages: vec![stage("image-resize", 1, &[], 1.0)],
    };
    (fns, wf)
}

fn workload(apps: &[&str], rate_rps: f64, duration_ms: f64, seed: u64) -> WorkloadConfig {
    WorkloadConfig {
        duration_ms,
        arrival: ArrivalProcess::poisson(rate_rps),
        popularity_exponent: 1.0,
        apps: apps.iter().map(|a| AppMix::new(a)).collect(),
        concurrency_level: 1,
        executions_per_app: None,
        compute_cap_cvs: 4.0,
        seed,
    }
}

fn single(
    name: &str,
    description: &str,
    app: (Vec<FunctionSpec>, WorkflowSpec),
    w: WorkloadConfig,
    cluster: ClusterConfig,
) -> Scenario {
    let (functions, wf) = app;
    Scenario {
        name: name.into(),
        description: description.into(),
        functions,
        workflows: vec![wf],
        workload: w,
        cluster,
    }
}

/// Cluster for the dependency-heavy presets: containers and package caches
/// age out, so infrastructure locality is a scarce resource.
fn dependency_heavy_cluster() -> ClusterConfig {
    let mut c = ClusterConfig::default();
    c.latency.warm_ttl_ms = 20_000.0;
    c.latency.dep_cache_ttl_ms = Some(20_000.0);
    c
}

pub fn scenario_presets() -> Vec<Scenario> {
    let video = single(
        "video",
        "split, 4-way parallel transcode, merge; inputs of hundreds of MB",
        video_app(),
        workload(&["video"], 2.0, 120_000.0, 11),
        ClusterConfig::default(),
    );
    let log = single(
        "log",
        "split, 4-way parallel analyze, merge; inputs of hundreds of MB",
        log_app(),
        workload(&["log"], 2.5, 120_000.0, 12),
        ClusterConfig::default(),
    );
    let doc = single(
        "doc",
        "validate then convert; 34 packages on the conversion stage",
        doc_app(),
        workload(&["doc"], 0.5, 120_000.0, 13),
        dependency_heavy_cluster(),
    );
    let ml = single(
        "ml",
        "normalize then predict; 17 packages on the prediction stage",
        ml_app(),
        workload(&["ml"], 0.5, 120_000.0, 14),
        dependency_heavy_cluster(),
    );

    let mut functions = Vec::new();
    let mut workflows = Vec::new();
    for (f, w) in [video_app(), log_app(), doc_app(), ml_app()] {
        functions.extend(f);
        workflows.push(w);
    }
    let mut ew = workload(&["video", "log", "doc", "ml"], 3.0, 0.0, 15);
    ew.executions_per_app = Some(100);
    let empirical = Scenario {
        name: "empirical".into(),
        description: "all four applications, 100 workflow executions each".into(),
        functions,
        workflows,
        workload: ew,
        cluster: dependency_heavy_cluster(),
    };

    let mut functions = Vec::new();
    let mut workflows = Vec::new();
    for (f, w) in [resize_app(), log_app(), ml_app()] {
        functions.extend(f);
        workflows.push(w);
    }
    let mut rw = workload(&["resize", "log", "ml"], 2.0, 240_000.0, 16);
    rw.apps[0].available_from_ms = 60_000.0;
    let recovery = Scenario {
        name: "recovery".into(),
        description: "log and ml traffic; a function unseen in warm-up appears at 60 s".into(),
        functions,
        workflows,
        workload: rw,
        cluster: ClusterConfig::default(),
    };
    vec![video, log, doc, ml, empirical, recovery]
}

pub fn preset(name: &str) -> Option<Scenario> {
    scenario_presets().into_iter().find(|s| s.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_structure() {
        let v = preset("video").unwrap();
        assert_eq!(v.workflows[0].stages.len(), 3);
        assert_eq!(v.workflows[0].stages[1].fan_out, 4);
        assert!(v.functions[0].input_size.median_bytes >= 10.0 * MB);
        let doc = preset("doc").unwrap();
        assert_eq!(doc.workflows[0].stages.len(), 2);
        assert_eq!(
            doc.catalog()
                .function(&"any2md-process".into())
                .unwrap()
                .dep_count(),
            34
        );
        let ml = preset("ml").unwrap();
        assert_eq!(
            ml.catalog()
                .function(&"ml-process".into())
                .unwrap()
                .dep_count(),
            17
        );
        let log = preset("log").unwrap();
        assert_eq!(
            log.catalog()
                .function(&"log-split".into())
                .unwrap()
                .dep_count(),
            0
        );
        assert!(preset("nope").is_none());
    }
}
