//! List-function mini-DSL, its interpreter and the ranked function registry.
//!
//! A program is a pipeline of primitives joined by `|`, read left to right:
//!
//! ```text
//! id | reverse | sort [desc] | dedup | head | tail | count [PRED]
//! take N | drop N | index N | append N | filter PRED | map ARITH
//! PRED  := even | odd | gt N | lt N | eq N | ne N | mod M R
//! ARITH := add N | sub N | mul N | div N | mod N
//! ```
//!
//! Degenerate inputs never fail: `head`, `tail` and `index` past the end
//! yield `[]`, `take`/`drop` clamp to the list length, `count` of `[]` is
//! `[0]`. `div` and `mod` floor toward negative infinity and require a
//! positive divisor, checked when the program is parsed.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset;
use crate::model::{
    DatasetKind, Demo, Difficulty, IclInstance, TaskBody, TaskFormat, TaskInstance,
};
use crate::seeding;

pub const REGISTRY_SIZE: usize = 250;
pub const MAX_INPUT_LEN: usize = 16;
pub const MAX_ELEMENT: i64 = 99;

static BUNDLED: &str = include_str!("../data/listfn_registry.tsv");

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ListFnError {
    #[error("cannot parse `{0}`: {1}")]
    Parse(String, String),
    #[error("registry line {line}: {msg}")]
    Registry { line: usize, msg: String },
    #[error("no registry function with id {0}")]
    UnknownId(u32),
    #[error("cannot parse list `{0}`")]
    List(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pred {
    Even,
    Odd,
    Gt(i64),
    Lt(i64),
    Eq(i64),
    Ne(i64),
    Mod(i64, i64),
}

impl Pred {
    pub fn test(self, x: i64) -> bool {
        match self {
            Pred::Even => x.rem_euclid(2) == 0,
            Pred::Odd => x.rem_euclid(2) == 1,
            Pred::Gt(n) => x > n,
            Pred::Lt(n) => x < n,
            Pred::Eq(n) => x == n,
            Pred::Ne(n) => x != n,
            Pred::Mod(m, r) => x.rem_euclid(m) == r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arith {
    Add(i64),
    Sub(i64),
    Mul(i64),
    Div(i64),
    Mod(i64),
}

impl Arith {
    pub fn apply(self, x: i64) -> i64 {
        match self {
            Arith::Add(n) => x.saturating_add(n),
            Arith::Sub(n) => x.saturating_sub(n),
            Arith::Mul(n) => x.saturating_mul(n),
            Arith::Div(n) => x.div_euclid(n),
            Arith::Mod(n) => x.rem_euclid(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prim {
    Id,
    Reverse,
    Sort { desc: bool },
    Dedup,
    Head,
    Tail,
    Count(Option<Pred>),
    Take(usize),
    Drop(usize),
    Index(usize),
    Append(i64),
    Filter(Pred),
    Map(Arith),
}

impl Prim {
    pub fn apply(self, xs: Vec<i64>) -> Vec<i64> {
        match self {
            Prim::Id => xs,
            Prim::Reverse => xs.into_iter().rev().collect(),
            Prim::Sort { desc } => {
                let mut xs = xs;
                xs.sort_unstable();
                if desc {
                    xs.reverse();
                }
                xs
            }
            Prim::Dedup => {
                let mut seen = BTreeSet::new();
                xs.into_iter().filter(|x| seen.insert(*x)).collect()
            }
            Prim::Head => xs.into_iter().take(1).collect(),
            Prim::Tail => xs.into_iter().skip(1).collect(),
            Prim::Count(None) => vec![xs.len() as i64],
            Prim::Count(Some(p)) => vec![xs.iter().filter(|&&x| p.test(x)).count() as i64],
            Prim::Take(n) => xs.into_iter().take(n).collect(),
            Prim::Drop(n) => xs.into_iter().skip(n).collect(),
            Prim::Index(i) => xs.get(i).map(|&x| vec![x]).unwrap_or_default(),
            Prim::Append(n) => {
                let mut xs = xs;
                xs.push(n);
                xs
            }
            Prim::Filter(p) => xs.into_iter().filter(|&x| p.test(x)).collect(),
            Prim::Map(a) => xs.into_iter().map(|x| a.apply(x)).collect(),
        }
    }
}

/// A parsed program; `Display` yields the canonical source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Program {
    stages: Vec<Prim>,
    source: String,
}

fn parse_err(src: &str, msg: impl Into<String>) -> ListFnError {
    ListFnError::Parse(src.to_string(), msg.into())
}

fn int(src: &str, tok: Option<&&str>) -> Result<i64, ListFnError> {
    let tok = tok.ok_or_else(|| parse_err(src, "missing number"))?;
    tok.parse()
        .map_err(|_| parse_err(src, format!("`{tok}` is not an integer")))
}

fn index_arg(src: &str, tok: Option<&&str>) -> Result<usize, ListFnError> {
    let n = int(src, tok)?;
    usize::try_from(n).map_err(|_| parse_err(src, "count must be non-negative"))
}

fn positive(src: &str, n: i64) -> Result<i64, ListFnError> {
    if n > 0 {
        Ok(n)
    } else {
        Err(parse_err(src, "divisor must be positive"))
    }
}

fn parse_pred(src: &str, toks: &[&str]) -> Result<Pred, ListFnError> {
    let (op, rest) = toks
        .split_first()
        .ok_or_else(|| parse_err(src, "missing predicate"))?;
    let p = match *op {
        "even" => Pred::Even,
        "odd" => Pred::Odd,
        "gt" => Pred::Gt(int(src, rest.first())?),
        "lt" => Pred::Lt(int(src, rest.first())?),
        "eq" => Pred::Eq(int(src, rest.first())?),
        "ne" => Pred::Ne(int(src, rest.first())?),
        "mod" => {
            let m = positive(src, int(src, rest.first())?)?;
            let r = int(src, rest.get(1))?;
            if !(0..m).contains(&r) {
                return Err(parse_err(src, "remainder out of range"));
            }
            Pred::Mod(m, r)
        }
        other => return Err(parse_err(src, format!("unknown predicate `{other}`"))),
    };
    let arity = match p {
        Pred::Even | Pred::Odd => 0,
        Pred::Mod(..) => 2,
        _ => 1,
    };
    if rest.len() != arity {
        return Err(parse_err(src, "wrong number of predicate arguments"));
    }
    Ok(p)
}

fn parse_arith(src: &str, toks: &[&str]) -> Result<Arith, ListFnError> {
    if toks.len() != 2 {
        return Err(parse_err(src, "map takes an operator and a number"));
    }
    let n = int(src, toks.get(1))?;
    Ok(match toks[0] {
        "add" => Arith::Add(n),
        "sub" => Arith::Sub(n),
        "mul" => Arith::Mul(n),
        "div" => Arith::Div(positive(src, n)?),
        "mod" => Arith::Mod(positive(src, n)?),
        other => return Err(parse_err(src, format!("unknown operator `{other}`"))),
    })
}

fn parse_stage(src: &str) -> Result<Prim, ListFnError> {
    let toks: Vec<&str> = src.split_whitespace().collect();
    let (head, rest) = toks
        .split_first()
        .ok_or_else(|| parse_err(src, "empty stage"))?;
    let nullary = |p: Prim| {
        if rest.is_empty() {
            Ok(p)
        } else {
            Err(parse_err(src, "unexpected arguments"))
        }
    };
    let unary = |f: fn(usize) -> Prim| {
        if rest.len() == 1 {
            Ok(f(index_arg(src, rest.first())?))
        } else {
            Err(parse_err(src, "expected one argument"))
        }
    };
    match *head {
        "id" => nullary(Prim::Id),
        "reverse" => nullary(Prim::Reverse),
        "dedup" => nullary(Prim::Dedup),
        "head" => nullary(Prim::Head),
        "tail" => nullary(Prim::Tail),
        "sort" => match rest {
            [] => Ok(Prim::Sort { desc: false }),
            ["desc"] => Ok(Prim::Sort { desc: true }),
            _ => Err(parse_err(src, "sort takes an optional `desc`")),
        },
        "count" if rest.is_empty() => Ok(Prim::Count(None)),
        "count" => Ok(Prim::Count(Some(parse_pred(src, rest)?))),
        "take" => unary(Prim::Take),
        "drop" => unary(Prim::Drop),
        "index" => unary(Prim::Index),
        "append" if rest.len() == 1 => Ok(Prim::Append(int(src, rest.first())?)),
        "filter" => Ok(Prim::Filter(parse_pred(src, rest)?)),
        "map" => Ok(Prim::Map(parse_arith(src, rest)?)),
        other => Err(parse_err(src, format!("unknown primitive `{other}`"))),
    }
}

impl FromStr for Program {
    type Err = ListFnError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('|').map(str::trim).collect();
        let stages = parts
            .iter()
            .map(|p| parse_stage(p))
            .collect::<Result<Vec<_>, _>>()?;
        let source = parts
            .iter()
            .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join(" | ");
        Ok(Program { stages, source })
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Program {
    pub fn stages(&self) -> &[Prim] {
        &self.stages
    }

    pub fn eval(&self, input: &[i64]) -> Vec<i64> {
        self.stages.iter().fold(input.to_vec(), |xs, p| p.apply(xs))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    /// Re-encodes an upstream benchmark concept.
    Upstream,
    /// Same-rank stand-in for a concept the DSL cannot express.
    Surrogate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ListFn {
    pub id: u32,
    pub rank: u32,
    pub program: Program,
    pub origin: Origin,
}

pub fn eval_fn(f: &ListFn, input: &[i64]) -> Vec<i64> {
    f.program.eval(input)
}

pub fn classify_listfn_difficulty(rank: u32) -> Difficulty {
    match rank {
        0..=84 => Difficulty::Easy,
        85..=169 => Difficulty::Medium,
        _ => Difficulty::Hard,
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    id: u32,
    rank: u32,
    program: String,
    origin: Origin,
}

#[derive(Debug, Clone)]
pub struct Registry {
    fns: Vec<ListFn>,
}

impl Registry {
    pub fn bundled() -> &'static Registry {
        static REG: std::sync::OnceLock<Registry> = std::sync::OnceLock::new();
        REG.get_or_init(|| Registry::from_tsv(BUNDLED).expect("bundled registry is valid"))
    }

    /// Parses a tab-separated `id rank program origin` file, rejecting
    /// malformed programs and duplicate ids.
    pub fn from_tsv(text: &str) -> Result<Registry, ListFnError> {
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(b'\t')
            .from_reader(text.as_bytes());
        let mut fns = Vec::new();
        let mut ids = BTreeSet::new();
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| ListFnError::Registry {
                line,
                msg: e.to_string(),
            })?;
            if row.rank == 0 {
                return Err(ListFnError::Registry {
                    line,
                    msg: "rank must be at least 1".into(),
                });
            }
            let program = row
                .program
                .parse()
                .map_err(|e: ListFnError| ListFnError::Registry {
                    line,
                    msg: e.to_string(),
                })?;
            if !ids.insert(row.id) {
                return Err(ListFnError::Registry {
                    line,
                    msg: format!("duplicate id {}", row.id),
                });
            }
            fns.push(ListFn {
                id: row.id,
                rank: row.rank,
                program,
                origin: row.origin,
            });
        }
        Ok(Registry { fns })
    }

    pub fn get(&self, id: u32) -> Result<&ListFn, ListFnError> {
        self.fns
            .iter()
            .find(|f| f.id == id)
            .ok_or(ListFnError::UnknownId(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &ListFn> {
        self.fns.iter()
    }

    pub fn len(&self) -> usize {
        self.fns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fns.is_empty()
    }
}

pub fn render_list(xs: &[i64]) -> String {
    let items: Vec<String> = xs.iter().map(i64::to_string).collect();
    format!("[{}]", items.join(", "))
}

/// Reads `[1, 2, 3]`, `1 2 3` or `1,2,3`.
pub fn parse_list(s: &str) -> Result<Vec<i64>, ListFnError> {
    let inner = s
        .trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .trim();
    if inner.is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| ListFnError::List(s.to_string())))
        .collect()
}

pub fn random_input<R: Rng>(rng: &mut R) -> Vec<i64> {
    let len = rng.gen_range(3..=8);
    (0..len).map(|_| rng.gen_range(0..=MAX_ELEMENT)).collect()
}

/// Builds an ICL instance with `n_shots` distinct demo inputs and a distinct
/// test input. MCQ distractors are other registry functions' outputs on the
/// test input.
pub fn make_instance(
    f: &ListFn,
    n_shots: usize,
    seed: u64,
    id: &str,
    format: TaskFormat,
) -> TaskInstance {
    assert!(n_shots >= 1, "at least one demonstration");
    let mut rng = seeding::rng_for(seed, &["listfn", id, &f.id.to_string()]);
    let mut inputs: Vec<Vec<i64>> = Vec::with_capacity(n_shots + 1);
    while inputs.len() < n_shots + 1 {
        let xs = random_input(&mut rng);
        if !inputs.contains(&xs) {
            inputs.push(xs);
        }
    }
    let test_input = inputs.pop().expect("n_shots + 1 inputs");
    let gold = eval_fn(f, &test_input);
    let ftg = TaskInstance {
        id: id.to_string(),
        dataset: DatasetKind::Listfn,
        modality: DatasetKind::Listfn.modality(),
        difficulty: classify_listfn_difficulty(f.rank),
        format: TaskFormat::Ftg,
        body: TaskBody::Icl(IclInstance {
            demos: inputs
                .iter()
                .map(|xs| Demo {
                    input: render_list(xs),
                    output: render_list(&eval_fn(f, xs)),
                })
                .collect(),
            test_input: render_list(&test_input),
            gold_output: render_list(&gold),
            function_id: f.id.to_string(),
            candidates: None,
        }),
    };
    match format {
        TaskFormat::Ftg => ftg,
        TaskFormat::Mcq => {
            let mut seen = BTreeSet::from([gold.clone()]);
            let mut distractors = Vec::new();
            let reg = Registry::bundled();
            let start = rng.gen_range(0..reg.len());
            for k in 0..reg.len() {
                let other = &reg.fns[(start + k) % reg.len()];
                let out = eval_fn(other, &test_input);
                if seen.insert(out.clone()) {
                    distractors.push(render_list(&out));
                    if distractors.len() == 3 {
                        break;
                    }
                }
            }
            dataset::project_mcq(&ftg, &distractors, seed).expect("distractors differ from gold")
        }
    }
}

/// Cycles through the registry: instance `i` uses function `i mod 250 + 1`.
pub fn generate_batch(
    registry: &Registry,
    count: usize,
    n_shots: usize,
    seed: u64,
    format: TaskFormat,
) -> Vec<TaskInstance> {
    (0..count)
        .map(|i| {
            let f = &registry.fns[i % registry.len()];
            make_instance(f, n_shots, seed, &format!("listfn-{i:05}"), format)
        })
        .collect()
}

/// Default sandbox for executing abduced hypotheses: only mini-DSL text is
/// accepted, so no model output ever reaches a host interpreter.
pub trait HypothesisExecutor: Send + Sync {
    fn execute(&self, hypothesis: &str, input: &[i64]) -> Option<Vec<i64>>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct DslExecutor;

impl HypothesisExecutor for DslExecutor {
    fn execute(&self, hypothesis: &str, input: &[i64]) -> Option<Vec<i64>> {
        let p: Program = hypothesis.trim().parse().ok()?;
        Some(p.eval(input))
    }
}

/// A hypothesis is correct iff it reproduces the oracle on every held-out
/// input.
pub fn hypothesis_reproduces(
    exec: &dyn HypothesisExecutor,
    hypothesis: &str,
    f: &ListFn,
    held_out: &[Vec<i64>],
) -> bool {
    held_out
        .iter()
        .all(|xs| exec.execute(hypothesis, xs).as_deref() == Some(&eval_fn(f, xs)[..]))
}
