//! Static vocabulary shared by the simulator, the schedulers and the
//! experiment driver: functions, workflows, invocations and SLA outcomes.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Simulated wall-clock time and durations, in milliseconds.
pub type Millis = f64;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FunctionId(pub String);

impl FunctionId {
    pub fn new(id: impl Into<String>) -> Self {
        FunctionId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for FunctionId {
    fn from(s: &str) -> Self {
        FunctionId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WorkflowId(pub String);

impl fmt::Display for WorkflowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for WorkflowId {
    fn from(s: &str) -> Self {
        WorkflowId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InvocationId(pub u64);

impl fmt::Display for InvocationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "i{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DataId(pub u64);

/// Gamma-distributed pure compute time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeDist {
    pub mean_ms: f64,
    /// Coefficient of variation; 0 makes the compute time deterministic.
    pub cv: f64,
}

/// Log-normal input size, truncated at `max_bytes`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeDist {
    pub median_bytes: f64,
    pub sigma: f64,
    pub max_bytes: f64,
}

impl SizeDist {
    pub fn fixed(bytes: f64) -> Self {
        SizeDist {
            median_bytes: bytes,
            sigma: 0.0,
            max_bytes: bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRef {
    pub workflow: WorkflowId,
    pub stage: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionSpec {
    pub id: FunctionId,
    /// Opaque package identifiers the function imports.
    #[serde(default)]
    pub deps: Vec<String>,
    pub base_compute: ComputeDist,
    pub input_size: SizeDist,
    /// SLA threshold on end-to-end time.
    pub sla_theta_ms: Millis,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<StageRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("function {0}: sla_theta_ms must be positive")]
    NonPositiveSla(FunctionId),
    #[error("function {0}: base compute mean must be positive")]
    NonPositiveCompute(FunctionId),
    #[error("function {0}: invalid distribution parameters ({1})")]
    BadDistribution(FunctionId, &'static str),
    #[error("function {0}: duplicate dependency {1}")]
    DuplicateDep(FunctionId, String),
}

impl FunctionSpec {
    pub fn dep_count(&self) -> usize {
        self.deps.len()
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        if !finite_pos(self.sla_theta_ms) {
            return Err(SpecError::NonPositiveSla(self.id.clone()));
        }
        if !finite_pos(self.base_compute.mean_ms) {
            return Err(SpecError::NonPositiveCompute(self.id.clone()));
        }
        if !(self.base_compute.cv.is_finite() && self.base_compute.cv >= 0.0) {
            return Err(SpecError::BadDistribution(self.id.clone(), "compute cv"));
        }
        let s = &self.input_size;
        if !(s.median_bytes.is_finite() && s.median_bytes >= 0.0)
            || !(s.sigma.is_finite() && s.sigma >= 0.0)
            || !(s.max_bytes.is_finite() && s.max_bytes >= s.median_bytes)
        {
            return Err(SpecError::BadDistribution(self.id.clone(), "input size"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for d in &self.deps {
            if !seen.insert(d) {
                return Err(SpecError::DuplicateDep(self.id.clone(), d.clone()));
            }
        }
        Ok(())
    }
}

fn default_fan_out() -> u32 {
    1
}

fn default_output_ratio() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub function: FunctionId,
    #[serde(default = "default_fan_out")]
    pub fan_out: u32,
    /// Indices of earlier stages whose outputs this stage consumes.
    #[serde(default)]
    pub predecessors: Vec<usize>,
    /// Total output bytes of one instance relative to its input bytes.
    #[serde(default = "default_output_ratio")]
    pub output_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowSpec {
    pub id: WorkflowId,
    pub stages: Vec<StageSpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkflowError {
    #[error("workflow {0}: empty stage list")]
    Empty(WorkflowId),
    #[error("workflow {workflow}: stage {stage} has fan_out 0")]
    ZeroFanOut { workflow: WorkflowId, stage: usize },
    #[error("workflow {workflow}: stage {stage} references unknown stage {predecessor}")]
    UnknownStage {
        workflow: WorkflowId,
        stage: usize,
        predecessor: usize,
    },
    #[error("workflow {workflow}: cycle detected through stage {stage}")]
    Cycle { workflow: WorkflowId, stage: usize },
    #[error("workflow {workflow}: forward reference from stage {stage} to stage {predecessor}")]
    ForwardReference {
        workflow: WorkflowId,
        stage: usize,
        predecessor: usize,
    },
    #[error("workflow {workflow}: stage {stage} has negative or non-finite output ratio")]
    BadOutputRatio { workflow: WorkflowId, stage: usize },
}

/// Checks the structural invariants of a workflow: non-empty, every fan-out
/// at least one, predecessor graph acyclic and pointing strictly backwards.
pub fn validate_workflow(spec: &WorkflowSpec) -> Result<(), WorkflowError> {
    let wf = || spec.id.clone();
    if spec.stages.is_empty() {
        return Err(WorkflowError::Empty(wf()));
    }
    let n = spec.stages.len();
    for (i, st) in spec.stages.iter().enumerate() {
        if st.fan_out == 0 {
            return Err(WorkflowError::ZeroFanOut {
                workflow: wf(),
                stage: i,
            });
        }
        if !(st.output_ratio.is_finite() && st.output_ratio >= 0.0) {
            return Err(WorkflowError::BadOutputRatio {
                workflow: wf(),
                stage: i,
            });
        }
        if let Some(&p) = st.predecessors.iter().find(|&&p| p >= n) {
            return Err(WorkflowError::UnknownStage {
                workflow: wf(),
                stage: i,
                predecessor: p,
            });
        }
    }

    // Three-colour DFS over stage -> predecessor edges.
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Grey,
        Black,
    }
    let mut mark = vec![Mark::White; n];
    for root in 0..n {
        if mark[root] != Mark::White {
            continue;
        }
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Grey;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            let preds = &spec.stages[node].predecessors;
            if *next < preds.len() {
                let p = preds[*next];
                *next += 1;
                match mark[p] {
                    Mark::Grey => {
                        return Err(WorkflowError::Cycle {
                            workflow: wf(),
                            stage: p,
                        })
                    }
                    Mark::White => {
                        mark[p] = Mark::Grey;
                        stack.push((p, 0));
                    }
                    Mark::Black => {}
                }
            } else {
                mark[node] = Mark::Black;
                stack.pop();
            }
        }
    }

    for (i, st) in spec.stages.iter().enumerate() {
        if let Some(&p) = st.predecessors.iter().find(|&&p| p > i) {
            return Err(WorkflowError::ForwardReference {
                workflow: wf(),
                stage: i,
                predecessor: p,
            });
        }
    }
    Ok(())
}

impl WorkflowSpec {
    /// Stages that list `stage` as a predecessor.
    pub fn successors(&self, stage: usize) -> impl Iterator<Item = usize> + '_ {
        self.stages
            .iter()
            .enumerate()
            .filter(move |(_, s)| s.predecessors.contains(&stage))
            .map(|(i, _)| i)
    }
}

/// A predecessor output (or external input object) consumed by an invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRef {
    pub data: DataId,
    pub size: u64,
    /// Node holding the object; `None` means external object storage, which is
    /// always remote.
    pub producer: Option<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Origin {
    pub instance: u64,
    pub workflow: WorkflowId,
    pub stage: usize,
    pub index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub id: InvocationId,
    pub function: FunctionId,
    pub arrival_ms: Millis,
    pub input_size: u64,
    pub predecessor_outputs: Vec<DataRef>,
    pub deadline_ms: Millis,
    /// Pure compute time drawn when the workload was generated. Hidden from
    /// predictors; only the ground-truth latency model reads it.
    pub compute_draw_ms: Millis,
    pub origin: Option<Origin>,
}

impl Invocation {
    pub fn new(
        id: InvocationId,
        spec: &FunctionSpec,
        arrival_ms: Millis,
        input_size: u64,
        predecessor_outputs: Vec<DataRef>,
        compute_draw_ms: Millis,
    ) -> Self {
        Invocation {
            id,
            function: spec.id.clone(),
            arrival_ms,
            input_size,
            predecessor_outputs,
            deadline_ms: arrival_ms + spec.sla_theta_ms,
            compute_draw_ms,
            origin: None,
        }
    }

    pub fn with_origin(mut self, origin: Origin) -> Self {
        self.origin = Some(origin);
        self
    }

    pub fn predecessor_bytes(&self) -> u64 {
        self.predecessor_outputs.iter().map(|d| d.size).sum()
    }

    pub fn sla_theta_ms(&self) -> Millis {
        self.deadline_ms - self.arrival_ms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlaOutcome {
    pub invocation: InvocationId,
    pub end_to_end_ms: Millis,
    pub violated: bool,
}

impl SlaOutcome {
    pub fn new(invocation: InvocationId, end_to_end_ms: Millis, sla_theta_ms: Millis) -> Self {
        SlaOutcome {
            invocation,
            end_to_end_ms,
            violated: end_to_end_ms > sla_theta_ms,
        }
    }
}

/// Function and workflow definitions, keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub functions: BTreeMap<FunctionId, FunctionSpec>,
    pub workflows: BTreeMap<WorkflowId, WorkflowSpec>,
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error("workflow {0} stage {1} names unknown function {2}")]
    UnknownFunction(WorkflowId, usize, FunctionId),
}

impl Catalog {
    pub fn new(functions: Vec<FunctionSpec>, workflows: Vec<WorkflowSpec>) -> Self {
        Catalog {
            functions: functions.into_iter().map(|f| (f.id.clone(), f)).collect(),
            workflows: workflows.into_iter().map(|w| (w.id.clone(), w)).collect(),
        }
    }

    pub fn function(&self, id: &FunctionId) -> Option<&FunctionSpec> {
        self.functions.get(id)
    }

    pub fn workflow(&self, id: &WorkflowId) -> Option<&WorkflowSpec> {
        self.workflows.get(id)
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        for f in self.functions.values() {
            f.validate()?;
        }
        for w in self.workflows.values() {
            validate_workflow(w)?;
            for (i, st) in w.stages.iter().enumerate() {
                if !self.functions.contains_key(&st.function) {
                    return Err(CatalogError::UnknownFunction(
                        w.id.clone(),
                        i,
                        st.function.clone(),
                    ));
                }
            }
        }
        Ok(())
    }
}
