//! JSON problem files.
//!
//! ```text
//! {
//!   "dims": {"n": 1, "m": 1, "horizon": 2},
//!   "mode": "finite",
//!   "stages": [{"f": [0.0], "A": [[1.0]], "B": [[1.0]], "sigma_w": [[0.1]]}, ...],
//!   "costs": [[[0, 0, 0], [0, 1, 0], [0, 0, 1]], ...],
//!   "constraints": [{"stage": "all", "H": [[...]]}],
//!   "initial": {"sigma11": 1.0, "sigma12": [2.0], "Sigma22": [[4.5]]},
//!   "excitation": {"stage": 0, "level": 0.5}
//! }
//! ```
//!
//! `mode` is `finite`, `stationary` or `stationary_tail` (the last needs
//! `gamma`). `constraints` and `excitation` are optional. Matrices are
//! row-major nested arrays.

use std::fmt;

use momsynth::model::{
    Dimensions, QuadraticForm, StageConstraint, StageSelector, SynthesisMode, SynthesisProblem,
    SystemStage,
};
use momsynth::moments::StateMoment;
use momsynth::synthesis::Excitation;
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsSpec {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Finite,
    Stationary,
    StationaryTail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub f: Vec<f64>,
    #[serde(rename = "A")]
    pub a: Matrix,
    #[serde(rename = "B")]
    pub b: Matrix,
    pub sigma_w: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AllStages {
    #[serde(rename = "all")]
    All,
}

/// A stage index or the string `"all"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StageRef {
    Index(usize),
    All(AllStages),
}

impl From<StageRef> for StageSelector {
    fn from(s: StageRef) -> Self {
        match s {
            StageRef::Index(t) => StageSelector::At(t),
            StageRef::All(_) => StageSelector::All,
        }
    }
}

impl From<StageSelector> for StageRef {
    fn from(s: StageSelector) -> Self {
        match s {
            StageSelector::At(t) => StageRef::Index(t),
            StageSelector::All => StageRef::All(AllStages::All),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub stage: StageRef,
    #[serde(rename = "H")]
    pub h: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub sigma11: f64,
    pub sigma12: Vec<f64>,
    #[serde(rename = "Sigma22")]
    pub sigma22: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExcitationSpec {
    pub stage: StageRef,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub dims: DimsSpec,
    pub mode: ModeName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub stages: Vec<StageSpec>,
    pub costs: Vec<Matrix>,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    pub initial: InitialSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excitation: Option<ExcitationSpec>,
}

/// A schema or dimension violation, located by field path and, when the
/// source text is known, by line and column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchemaError {
    pub path: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for SchemaError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = if self.path.is_empty() {
            "<root>"
        } else {
            &self.path
        };
        write!(f, "schema error at {path}")?;
        if let (Some(l), Some(c)) = (self.line, self.column) {
            write!(f, " (line {l}, column {c})")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for SchemaError {}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Seg {
    Key(&'static str),
    Index(usize),
}

fn path_string(path: &[Seg]) -> String {
    let mut s = String::new();
    for seg in path {
        match seg {
            Seg::Key(k) => {
                if !s.is_empty() {
                    s.push('.');
                }
                s.push_str(k);
            }
            Seg::Index(i) => s.push_str(&format!("[{i}]")),
        }
    }
    s
}

struct Located {
    path: Vec<Seg>,
    message: String,
}

fn err(path: Vec<Seg>, message: impl Into<String>) -> Located {
    Located {
        path,
        message: message.into(),
    }
}

/// Deserializes `text`, reporting the failing field path with line and column.
pub fn parse<T: DeserializeOwned>(text: &str) -> Result<T, SchemaError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        SchemaError {
            path: if path == "." { String::new() } else { path },
            line: Some(inner.line()),
            column: Some(inner.column()),
            message: inner.to_string(),
        }
    })
}

fn matrix(rows: &Matrix, r: usize, c: usize, path: Vec<Seg>) -> Result<DMatrix<f64>, Located> {
    if rows.len() != r {
        return Err(err(
            path,
            format!("expected {r} rows, found {}", rows.len()),
        ));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != c {
            let mut p = path.clone();
            p.push(Seg::Index(i));
            return Err(err(p, format!("expected {c} columns, found {}", row.len())));
        }
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn vector(v: &[f64], len: usize, path: Vec<Seg>) -> Result<DVector<f64>, Located> {
    if v.len() != len {
        return Err(err(
            path,
            format!("expected {len} entries, found {}", v.len()),
        ));
    }
    Ok(DVector::from_column_slice(v))
}

pub fn rows_of(m: &DMatrix<f64>) -> Matrix {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

impl ProblemFile {
    pub fn from_problem(problem: &SynthesisProblem, excitation: Option<&Excitation>) -> Self {
        let (mode, gamma) = match problem.mode {
            SynthesisMode::Finite => (ModeName::Finite, None),
            SynthesisMode::Stationary => (ModeName::Stationary, None),
            SynthesisMode::StationaryTail { gamma } => (ModeName::StationaryTail, Some(gamma)),
        };
        Self {
            dims: DimsSpec {
                n: problem.dims.n,
                m: problem.dims.m,
                horizon: problem.dims.horizon,
            },
            mode,
            gamma,
            stages: problem
                .stages
                .iter()
                .map(|s| StageSpec {
                    f: s.f.iter().copied().collect(),
                    a: rows_of(&s.a),
                    b: rows_of(&s.b),
                    sigma_w: rows_of(&s.sigma_w),
                })
                .collect(),
            costs: problem.costs.iter().map(|c| rows_of(c.matrix())).collect(),
            constraints: problem
                .constraints
                .iter()
                .map(|c| ConstraintSpec {
                    stage: c.stage.into(),
                    h: rows_of(c.form.matrix()),
                })
                .collect(),
            initial: InitialSpec {
                sigma11: problem.initial.sigma11(),
                sigma12: problem.initial.sigma12().iter().copied().collect(),
                sigma22: rows_of(&problem.initial.sigma22()),
            },
            excitation: excitation.map(|e| ExcitationSpec {
                stage: e.stages.into(),
                level: e.level,
            }),
        }
    }

    pub fn excitation(&self) -> Option<Excitation> {
        self.excitation.as_ref().map(|e| Excitation {
            stages: e.stage.into(),
            level: e.level,
        })
    }

    /// Dimension-checks every field and assembles the problem; `text` is the
    /// source used to attach line numbers to errors.
    pub fn to_problem(&self, text: Option<&str>) -> Result<SynthesisProblem, SchemaError> {
        self.build().map_err(|e| {
            let (line, column) = text.and_then(|t| locate(t, &e.path)).unzip();
            SchemaError {
                path: path_string(&e.path),
                line,
                column,
                message: e.message,
            }
        })
    }

    fn build(&self) -> Result<SynthesisProblem, Located> {
        use Seg::{Index, Key};
        let DimsSpec { n, m, horizon } = self.dims;
        let dims =
            Dimensions::new(n, m, horizon).map_err(|e| err(vec![Key("dims")], e.to_string()))?;
        let d = dims.moment_dim();
        let mode = match (self.mode, self.gamma) {
            (ModeName::Finite, None) => SynthesisMode::Finite,
            (ModeName::Stationary, None) => SynthesisMode::Stationary,
            (ModeName::StationaryTail, Some(gamma)) => SynthesisMode::StationaryTail { gamma },
            (ModeName::StationaryTail, None) => {
                return Err(err(vec![Key("gamma")], "required for stationary_tail"))
            }
            (_, Some(_)) => {
                return Err(err(vec![Key("gamma")], "only allowed for stationary_tail"))
            }
        };
        let mut stages = Vec::with_capacity(self.stages.len());
        for (t, s) in self.stages.iter().enumerate() {
            let at = |k| vec![Key("stages"), Index(t), Key(k)];
            let stage = SystemStage::new(
                vector(&s.f, n, at("f"))?,
                matrix(&s.a, n, n, at("A"))?,
                matrix(&s.b, n, m, at("B"))?,
                matrix(&s.sigma_w, n, n, at("sigma_w"))?,
            )
            .map_err(|e| err(vec![Key("stages"), Index(t)], e.to_string()))?;
            stages.push(stage);
        }
        let costs = self
            .costs
            .iter()
            .enumerate()
            .map(|(t, c)| {
                let path = vec![Key("costs"), Index(t)];
                QuadraticForm::cost(matrix(c, d, d, path.clone())?)
                    .map_err(|e| err(path, e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let constraints = self
            .constraints
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let path = vec![Key("constraints"), Index(i), Key("H")];
                Ok(StageConstraint {
                    stage: c.stage.into(),
                    form: QuadraticForm::leq_zero(matrix(&c.h, d, d, path.clone())?)
                        .map_err(|e| err(path, e.to_string()))?,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let init = &self.initial;
        let initial = StateMoment::from_blocks(
            init.sigma11,
            &vector(&init.sigma12, n, vec![Key("initial"), Key("sigma12")])?,
            &matrix(&init.sigma22, n, n, vec![Key("initial"), Key("Sigma22")])?,
        )
        .map_err(|e| err(vec![Key("initial")], e.to_string()))?;
        if let Some(ex) = &self.excitation {
            if !(ex.level >= 0.0 && ex.level.is_finite()) {
                return Err(err(
                    vec![Key("excitation"), Key("level")],
                    "must be finite and nonnegative",
                ));
            }
        }

        let (stage_count, cost_count) = match mode {
            SynthesisMode::Finite => (vec![horizon], horizon + 1),
            SynthesisMode::Stationary => (vec![1], 1),
            SynthesisMode::StationaryTail { .. } => (vec![horizon + 1, 1], 1),
        };
        if matches!(mode, SynthesisMode::Stationary) && horizon != 0 {
            return Err(err(
                vec![Key("dims"), Key("horizon")],
                "stationary problems have horizon 0",
            ));
        }
        if !stage_count.contains(&stages.len()) {
            return Err(err(
                vec![Key("stages")],
                format!(
                    "expected {} stages, found {}",
                    stage_count
                        .iter()
                        .map(|c| c.to_string())
                        .collect::<Vec<_>>()
                        .join(" or "),
                    stages.len()
                ),
            ));
        }
        if costs.len() != cost_count {
            return Err(err(
                vec![Key("costs")],
                format!("expected {cost_count} cost matrices, found {}", costs.len()),
            ));
        }
        let last = if matches!(mode, SynthesisMode::Stationary) {
            0
        } else {
            horizon
        };
        for (i, c) in self.constraints.iter().enumerate() {
            if let StageRef::Index(t) = c.stage {
                if t > last {
                    return Err(err(
                        vec![Key("constraints"), Index(i), Key("stage")],
                        format!("stage {t} beyond last stage {last}"),
                    ));
                }
            }
        }
        SynthesisProblem::new(dims, stages, costs, constraints, initial, mode)
            .map_err(|e| err(Vec::new(), e.to_string()))
    }
}

/// Reads and assembles a problem file.
pub fn load_problem(text: &str) -> Result<(ProblemFile, SynthesisProblem), SchemaError> {
    let file: ProblemFile = parse(text)?;
    let problem = file.to_problem(Some(text))?;
    Ok((file, problem))
}

// Minimal scanner over already-valid JSON, used only to find where a field
// starts. Returns 1-based line and column.
fn locate(text: &str, path: &[Seg]) -> Option<(usize, usize)> {
    let b = text.as_bytes();
    let mut pos = skip_ws(b, 0);
    for seg in path {
        match seg {
            Seg::Key(key) => {
                if b.get(pos) != Some(&b'{') {
                    return None;
                }
                pos += 1;
                loop {
                    pos = skip_ws(b, pos);
                    if b.get(pos) != Some(&b'"') {
                        return None;
                    }
                    let end = skip_string(b, pos)?;
                    let name = &text[pos + 1..end - 1];
                    pos = skip_ws(b, end);
                    if b.get(pos) != Some(&b':') {
                        return None;
                    }
                    pos = skip_ws(b, pos + 1);
                    if name == *key {
                        break;
                    }
                    pos = skip_ws(b, skip_value(b, pos)?);
                    if b.get(pos) != Some(&b',') {
                        return None;
                    }
                    pos += 1;
                }
            }
            Seg::Index(i) => {
                if b.get(pos) != Some(&b'[') {
                    return None;
                }
                pos = skip_ws(b, pos + 1);
                for _ in 0..*i {
                    pos = skip_ws(b, skip_value(b, pos)?);
                    if b.get(pos) != Some(&b',') {
                        return None;
                    }
                    pos = skip_ws(b, pos + 1);
                }
            }
        }
    }
    let before = &text[..pos];
    let line = before.matches('\n').count() + 1;
    let column = pos - before.rfind('\n').map_or(0, |i| i + 1) + 1;
    Some((line, column))
}

fn skip_ws(b: &[u8], mut pos: usize) -> usize {
    while pos < b.len() && b[pos].is_ascii_whitespace() {
        pos += 1;
    }
    pos
}

fn skip_string(b: &[u8], mut pos: usize) -> Option<usize> {
    pos += 1;
    while pos < b.len() {
        match b[pos] {
            b'\\' => pos += 2,
            b'"' => return Some(pos + 1),
            _ => pos += 1,
        }
    }
    None
}

fn skip_value(b: &[u8], mut pos: usize) -> Option<usize> {
    match *b.get(pos)? {
        b'"' => skip_string(b, pos),
        b'{' | b'[' => {
            let mut depth = 0usize;
            while pos < b.len() {
                match b[pos] {
                    b'"' => {
                        pos = skip_string(b, pos)?;
                        continue;
                    }
                    b'{' | b'[' => depth += 1,
                    b'}' | b']' => {
                        depth -= 1;
                        if depth == 0 {
                            return Some(pos + 1);
                        }
                    }
                    _ => {}
                }
                pos += 1;
            }
            None
        }
        _ => {
            while pos < b.len()
                && !matches!(b[pos], b',' | b']' | b'}')
                && !b[pos].is_ascii_whitespace()
            {
                pos += 1;
            }
            Some(pos)
        }
    }
}
