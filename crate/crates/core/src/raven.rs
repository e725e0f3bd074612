//! RAVEN-style symbolic matrices in abstracted vector form.
//!
//! A panel is a set of entities, each placed at a position inside one of the
//! configuration's component groups and carrying `(type, size, color)`.
//! Within a generated panel every entity of a group shares its attributes, so
//! each (group, attribute) pair reduces to one scalar per panel and row rules
//! operate on those scalars.
//!
//! Grid groups (`distribute_four`, `distribute_nine`, ...) carry a combined
//! number/position rule: a `number` rule places entities on the lowest free
//! positions, a `position` rule keeps the count fixed and moves the occupied
//! set. Exactly one of the two appears per grid group.

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AnalogyInstance, DatasetKind, Difficulty, TaskBody, TaskFormat, TaskInstance};
use crate::seeding;

/// Entity types: triangle, square, pentagon, hexagon, circle.
pub const TYPE_VALUES: u8 = 5;
pub const SIZE_VALUES: u8 = 6;
pub const COLOR_VALUES: u8 = 10;
pub const CANDIDATES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Configuration {
    CenterSingle,
    DistributeFour,
    DistributeNine,
    InCenterSingleOutCenterSingle,
    InDistributeFourOutCenterSingle,
    UpCenterSingleDownCenterSingle,
    LeftCenterSingleRightCenterSingle,
}

impl Configuration {
    pub const ALL: [Configuration; 7] = [
        Configuration::CenterSingle,
        Configuration::DistributeFour,
        Configuration::DistributeNine,
        Configuration::InCenterSingleOutCenterSingle,
        Configuration::InDistributeFourOutCenterSingle,
        Configuration::UpCenterSingleDownCenterSingle,
        Configuration::LeftCenterSingleRightCenterSingle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Configuration::CenterSingle => "center_single",
            Configuration::DistributeFour => "distribute_four",
            Configuration::DistributeNine => "distribute_nine",
            Configuration::InCenterSingleOutCenterSingle => "in_center_single_out_center_single",
            Configuration::InDistributeFourOutCenterSingle => {
                "in_distribute_four_out_center_single"
            }
            Configuration::UpCenterSingleDownCenterSingle => "up_center_single_down_center_single",
            Configuration::LeftCenterSingleRightCenterSingle => {
                "left_center_single_right_center_single"
            }
        }
    }

    /// Position count of each component group.
    pub fn groups(self) -> &'static [u8] {
        match self {
            Configuration::CenterSingle => &[1],
            Configuration::DistributeFour => &[4],
            Configuration::DistributeNine => &[9],
            Configuration::InCenterSingleOutCenterSingle => &[1, 1],
            Configuration::InDistributeFourOutCenterSingle => &[1, 4],
            Configuration::UpCenterSingleDownCenterSingle => &[1, 1],
            Configuration::LeftCenterSingleRightCenterSingle => &[1, 1],
        }
    }

    /// Largest achievable number of non-constant rules.
    pub fn max_transitions(self) -> usize {
        self.groups()
            .iter()
            .map(|&p| transition_slots(p).len())
            .sum()
    }

    /// Upper bounds (inclusive) of the easy and medium tiers.
    fn thresholds(self) -> (usize, usize) {
        match self {
            Configuration::CenterSingle => (1, 2),
            Configuration::DistributeFour | Configuration::DistributeNine => (2, 3),
            Configuration::InCenterSingleOutCenterSingle
            | Configuration::InDistributeFourOutCenterSingle
            | Configuration::UpCenterSingleDownCenterSingle => (3, 4),
            Configuration::LeftCenterSingleRightCenterSingle => (4, 5),
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Configuration {
    type Err = RavenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Configuration::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| RavenError::UnknownConfig(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    Number,
    Position,
    Type,
    Size,
    Color,
}

impl Attribute {
    fn domain(self) -> u8 {
        match self {
            Attribute::Type => TYPE_VALUES,
            Attribute::Size => SIZE_VALUES,
            Attribute::Color => COLOR_VALUES,
            Attribute::Number | Attribute::Position => 0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Attribute::Number => "number",
            Attribute::Position => "position",
            Attribute::Type => "type",
            Attribute::Size => "size",
            Attribute::Color => "color",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "step", rename_all = "snake_case")]
pub enum Rule {
    Constant,
    Progression(i8),
    Arithmetic,
    DistributeThree,
}

impl Rule {
    fn describe(self) -> String {
        match self {
            Rule::Constant => "constant".into(),
            Rule::Progression(s) => format!("progression({s:+})"),
            Rule::Arithmetic => "arithmetic".into(),
            Rule::DistributeThree => "distribute_three".into(),
        }
    }
}

pub const PROGRESSION_STEPS: [i8; 4] = [-2, -1, 1, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributeRule {
    pub group: u8,
    pub attribute: Attribute,
    pub rule: Rule,
}

/// Number of rules that are not `constant`.
pub fn count_transitions(rules: &[AttributeRule]) -> usize {
    rules.iter().filter(|r| r.rule != Rule::Constant).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    pub group: u8,
    pub position: u8,
    pub kind: u8,
    pub size: u8,
    pub color: u8,
}

/// One matrix cell. Entities are kept sorted by `(group, position)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Panel {
    entities: Vec<Entity>,
}

impl Panel {
    pub fn new(mut entities: Vec<Entity>) -> Self {
        entities.sort();
        Panel { entities }
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    fn group(&self, g: u8) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(move |e| e.group == g)
    }

    /// Scalar reading of `attr` for group `g`; `None` if the group's
    /// entities disagree on it (or the group is empty).
    fn value(&self, g: u8, attr: Attribute) -> Option<u16> {
        let mut it = self.group(g).peekable();
        match attr {
            Attribute::Number => Some(self.group(g).count() as u16),
            Attribute::Position => {
                if self.group(g).any(|e| e.position >= 16) {
                    return None;
                }
                Some(self.group(g).fold(0u16, |m, e| m | (1 << e.position)))
            }
            _ => {
                let pick = |e: &Entity| match attr {
                    Attribute::Type => e.kind,
                    Attribute::Size => e.size,
                    _ => e.color,
                };
                let first = pick(it.peek()?);
                it.all(|e| pick(e) == first).then_some(first as u16)
            }
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RavenError {
    #[error("unknown configuration `{0}`")]
    UnknownConfig(String),
    #[error("{config} supports 1..={max} transitions, got {requested}")]
    Infeasible {
        config: Configuration,
        requested: usize,
        max: usize,
    },
    #[error("only {found} distinct distractors exist, {wanted} requested")]
    DistractorSpace { wanted: usize, found: usize },
    #[error("malformed panel text at byte {at}: {message}")]
    Parse { at: usize, message: String },
}

/// Serializes a panel as `[g.p:(type,size,color) ...]`.
pub fn serialize_symbolic(panel: &Panel) -> String {
    let body: Vec<String> = panel
        .entities
        .iter()
        .map(|e| {
            format!(
                "{}.{}:({},{},{})",
                e.group, e.position, e.kind, e.size, e.color
            )
        })
        .collect();
    format!("[{}]", body.join(" "))
}

pub fn parse_symbolic(text: &str) -> Result<Panel, RavenError> {
    let err = |at: usize, message: &str| RavenError::Parse {
        at,
        message: message.to_string(),
    };
    let t = text.trim();
    let inner = t
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| err(0, "expected [ ... ]"))?;
    let mut entities = Vec::new();
    for tok in inner.split_whitespace() {
        let (slot, attrs) = tok.split_once(':').ok_or_else(|| err(0, "missing `:`"))?;
        let (g, p) = slot
            .split_once('.')
            .ok_or_else(|| err(0, "slot must be group.position"))?;
        let attrs = attrs
            .strip_prefix('(')
            .and_then(|s| s.strip_suffix(')'))
            .ok_or_else(|| err(0, "attributes must be parenthesised"))?;
        let nums: Vec<u8> = attrs
            .split(',')
            .map(|v| v.trim().parse::<u8>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(0, "attribute is not a small integer"))?;
        if nums.len() != 3 {
            return Err(err(0, "expected (type,size,color)"));
        }
        entities.push(Entity {
            group: g.parse().map_err(|_| err(0, "bad group"))?,
            position: p.parse().map_err(|_| err(0, "bad position"))?,
            kind: nums[0],
            size: nums[1],
            color: nums[2],
        });
    }
    let panel = Panel::new(entities);
    let unique: BTreeSet<(u8, u8)> = panel
        .entities
        .iter()
        .map(|e| (e.group, e.position))
        .collect();
    if unique.len() != panel.entities.len() {
        return Err(err(0, "two entities share a slot"));
    }
    Ok(panel)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RavenPuzzle {
    pub config: Configuration,
    pub rules: Vec<AttributeRule>,
    /// The eight context panels in row-major order; the ninth is blank.
    pub context: Vec<Panel>,
    pub candidates: Vec<Panel>,
    pub gold_index: usize,
    pub n_transitions: usize,
}

impl RavenPuzzle {
    pub fn gold(&self) -> &Panel {
        &self.candidates[self.gold_index]
    }

    /// The full 3×3 grid with `answer` in the blank cell.
    pub fn grid_with(&self, answer: &Panel) -> [[Panel; 3]; 3] {
        let c = &self.context;
        [
            [c[0].clone(), c[1].clone(), c[2].clone()],
            [c[3].clone(), c[4].clone(), c[5].clone()],
            [c[6].clone(), c[7].clone(), answer.clone()],
        ]
    }

    pub fn difficulty(&self) -> Difficulty {
        classify_raven_difficulty(self.config, self.n_transitions)
    }

    pub fn describe_rules(&self) -> String {
        self.rules
            .iter()
            .map(|r| {
                format!(
                    "component {} {}: {}",
                    r.group,
                    r.attribute.name(),
                    r.rule.describe()
                )
            })
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn to_instance(&self, id: &str, format: TaskFormat) -> TaskInstance {
        let row = |r: usize| {
            self.context[r * 3..r * 3 + 3]
                .iter()
                .map(serialize_symbolic)
                .collect::<Vec<_>>()
                .join(", ")
        };
        let row3 = self.context[6..8]
            .iter()
            .map(serialize_symbolic)
            .collect::<Vec<_>>()
            .join(", ");
        let candidates = match format {
            TaskFormat::Mcq => Some(self.candidates.iter().map(serialize_symbolic).collect()),
            TaskFormat::Ftg => None,
        };
        TaskInstance {
            id: id.to_string(),
            dataset: DatasetKind::Raven,
            modality: DatasetKind::Raven.modality(),
            difficulty: self.difficulty(),
            format,
            body: TaskBody::Analogy(AnalogyInstance {
                source: (row(0), row(1)),
                target: row3,
                gold: serialize_symbolic(self.gold()),
                candidates,
                pattern_gold: Some(self.describe_rules()),
            }),
        }
    }
}

/// Puzzle `i` uses layout `configs[i % n]` and cycles its transition count
/// through every feasible value, so each layout covers all its tiers.
pub fn generate_batch(
    configs: &[Configuration],
    count: usize,
    seed: u64,
) -> Result<Vec<RavenPuzzle>, RavenError> {
    assert!(!configs.is_empty(), "at least one configuration");
    (0..count)
        .into_par_iter()
        .map(|i| {
            let config = configs[i % configs.len()];
            let target = 1 + (i / configs.len()) % config.max_transitions();
            generate_matrix(
                config,
                target,
                seeding::derive_seed(seed, &["raven-batch", &i.to_string()]),
            )
        })
        .collect()
}

pub fn classify_raven_difficulty(config: Configuration, n_transitions: usize) -> Difficulty {
    let (easy_max, medium_max) = config.thresholds();
    if n_transitions <= easy_max {
        Difficulty::Easy
    } else if n_transitions <= medium_max {
        Difficulty::Medium
    } else {
        Difficulty::Hard
    }
}

/// Checks one rule against a full 3×3 grid.
pub fn rule_holds(grid: &[[Panel; 3]; 3], rule: &AttributeRule, positions: u8) -> bool {
    (0..3).all(|r| {
        let v: Option<Vec<u16>> = (0..3)
            .map(|c| grid[r][c].value(rule.group, rule.attribute))
            .collect();
        let Some(v) = v else { return false };
        if rule.attribute == Attribute::Number || rule.attribute == Attribute::Position {
            // Each panel of the group must be non-empty and within the grid.
            if (0..3).any(|c| {
                let ents: Vec<_> = grid[r][c].group(rule.group).collect();
                ents.is_empty() || ents.iter().any(|e| e.position >= positions)
            }) {
                return false;
            }
        }
        if rule.attribute == Attribute::Number {
            // Number rules fix the layout to the lowest positions.
            let canonical = (0..3).all(|c| {
                v[c] < 16
                    && grid[r][c].value(rule.group, Attribute::Position) == Some((1u16 << v[c]) - 1)
            });
            if !canonical {
                return false;
            }
        }
        match rule.rule {
            Rule::Constant => v[0] == v[1] && v[1] == v[2],
            Rule::Progression(s) => {
                if rule.attribute == Attribute::Position {
                    rotate(v[0], s, positions) == v[1] && rotate(v[1], s, positions) == v[2]
                } else {
                    let s = s as i32;
                    v[1] as i32 == v[0] as i32 + s && v[2] as i32 == v[1] as i32 + s
                }
            }
            Rule::Arithmetic => v[2] == v[0] + v[1],
            Rule::DistributeThree => {
                let row0: BTreeSet<u16> = (0..3)
                    .filter_map(|c| grid[0][c].value(rule.group, rule.attribute))
                    .collect();
                let this: BTreeSet<u16> = v.iter().copied().collect();
                this.len() == 3 && this == row0
            }
        }
    })
}

fn rotate(mask: u16, step: i8, positions: u8) -> u16 {
    let p = positions as i32;
    (0..positions).fold(0u16, |out, i| {
        if mask & (1 << i) != 0 {
            let j = ((i as i32 + step as i32) % p + p) % p;
            out | (1 << j)
        } else {
            out
        }
    })
}

/// Whether a candidate in the blank cell satisfies every rule of the puzzle.
pub fn satisfies_all(puzzle: &RavenPuzzle, answer: &Panel) -> bool {
    let grid = puzzle.grid_with(answer);
    let groups = puzzle.config.groups();
    // Entities outside the configuration's groups are never consistent.
    if answer
        .entities
        .iter()
        .any(|e| e.group as usize >= groups.len())
    {
        return false;
    }
    puzzle
        .rules
        .iter()
        .all(|r| rule_holds(&grid, r, groups[r.group as usize]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    NumPos,
    Attr(Attribute),
}

fn transition_slots(positions: u8) -> Vec<Slot> {
    let mut v = Vec::new();
    if positions > 1 {
        v.push(Slot::NumPos);
    }
    v.extend([
        Slot::Attr(Attribute::Type),
        Slot::Attr(Attribute::Size),
        Slot::Attr(Attribute::Color),
    ]);
    v
}

/// Three rows of three scalars for one (group, attribute).
type RowValues = [[u16; 3]; 3];

fn sample_scalar_rows(rule: Rule, lo: u16, hi: u16, rng: &mut ChaCha8Rng) -> Option<RowValues> {
    // Values live in lo..=hi.
    let mut rows = [[0u16; 3]; 3];
    match rule {
        Rule::Constant => {
            for row in &mut rows {
                let v = rng.gen_range(lo..=hi);
                *row = [v, v, v];
            }
        }
        Rule::Progression(s) => {
            let s = s as i32;
            let (min_start, max_start) = if s > 0 {
                (lo as i32, hi as i32 - 2 * s)
            } else {
                (lo as i32 - 2 * s, hi as i32)
            };
            if min_start > max_start {
                return None;
            }
            for row in &mut rows {
                let a = rng.gen_range(min_start..=max_start);
                *row = [a as u16, (a + s) as u16, (a + 2 * s) as u16];
            }
        }
        Rule::Arithmetic => {
            // v3 = v1 + v2 with v2 >= 1 so the row actually changes.
            let b_min = lo.max(1);
            if hi < lo + b_min {
                return None;
            }
            for row in &mut rows {
                let a = rng.gen_range(lo..=hi - b_min);
                let b = rng.gen_range(b_min..=hi - a);
                *row = [a, b, a + b];
            }
        }
        Rule::DistributeThree => {
            if hi - lo < 2 {
                return None;
            }
            let mut pool: Vec<u16> = (lo..=hi).collect();
            pool.shuffle(rng);
            let (x, y, z) = (pool[0], pool[1], pool[2]);
            rows = [[x, y, z], [y, z, x], [z, x, y]];
        }
    }
    Some(rows)
}

fn random_mask(k: u8, positions: u8, rng: &mut ChaCha8Rng) -> u16 {
    let mut idx: Vec<u8> = (0..positions).collect();
    idx.shuffle(rng);
    idx[..k as usize].iter().fold(0u16, |m, &i| m | (1 << i))
}

fn sample_position_rows(rule: Rule, positions: u8, rng: &mut ChaCha8Rng) -> Option<RowValues> {
    let k = rng.gen_range(1..positions);
    let mut rows = [[0u16; 3]; 3];
    match rule {
        Rule::Constant => {
            for row in &mut rows {
                let m = random_mask(k, positions, rng);
                *row = [m, m, m];
            }
        }
        Rule::Progression(s) => {
            for row in &mut rows {
                let mut tries = 0;
                loop {
                    let m = random_mask(k, positions, rng);
                    let m1 = rotate(m, s, positions);
                    let m2 = rotate(m1, s, positions);
                    if m != m1 && m1 != m2 && m != m2 {
                        *row = [m, m1, m2];
                        break;
                    }
                    tries += 1;
                    if tries > 64 {
                        return None;
                    }
                }
            }
        }
        Rule::Arithmetic => return None,
        Rule::DistributeThree => {
            let mut set = BTreeSet::new();
            let mut tries = 0;
            while set.len() < 3 {
                set.insert(random_mask(k, positions, rng));
                tries += 1;
                if tries > 64 {
                    return None;
                }
            }
            let mut v: Vec<u16> = set.into_iter().collect();
            v.shuffle(rng);
            rows = [[v[0], v[1], v[2]], [v[1], v[2], v[0]], [v[2], v[0], v[1]]];
        }
    }
    Some(rows)
}

fn non_constant_rules(attr: Attribute) -> Vec<Rule> {
    let mut v: Vec<Rule> = PROGRESSION_STEPS
        .iter()
        .map(|&s| Rule::Progression(s))
        .collect();
    if !matches!(attr, Attribute::Type | Attribute::Position) {
        v.push(Rule::Arithmetic);
    }
    v.push(Rule::DistributeThree);
    v
}

struct GroupPlan {
    layout: RowValues,
    kind: RowValues,
    size: RowValues,
    color: RowValues,
}

fn plan_attr(
    group: u8,
    attr: Attribute,
    active: bool,
    lo: u16,
    hi: u16,
    rng: &mut ChaCha8Rng,
) -> (AttributeRule, RowValues) {
    loop {
        let rule = if active {
            *non_constant_rules(attr).choose(rng).expect("non-empty")
        } else {
            Rule::Constant
        };
        if let Some(rows) = sample_scalar_rows(rule, lo, hi, rng) {
            return (
                AttributeRule {
                    group,
                    attribute: attr,
                    rule,
                },
                rows,
            );
        }
    }
}

/// Generates a puzzle with exactly `n_transitions_target` non-constant rules.
pub fn generate_matrix(
    config: Configuration,
    n_transitions_target: usize,
    seed: u64,
) -> Result<RavenPuzzle, RavenError> {
    let max = config.max_transitions();
    if n_transitions_target < 1 || n_transitions_target > max {
        return Err(RavenError::Infeasible {
            config,
            requested: n_transitions_target,
            max,
        });
    }
    let mut rng = seeding::rng_for(
        seed,
        &["raven", config.name(), &n_transitions_target.to_string()],
    );

    let slots: Vec<(u8, Slot)> = config
        .groups()
        .iter()
        .enumerate()
        .flat_map(|(g, &p)| transition_slots(p).into_iter().map(move |s| (g as u8, s)))
        .collect();
    let mut chosen: Vec<usize> = (0..slots.len()).collect();
    chosen.shuffle(&mut rng);
    let active: BTreeSet<usize> = chosen.into_iter().take(n_transitions_target).collect();
    let is_active = |g: u8, s: Slot| {
        slots
            .iter()
            .position(|&x| x == (g, s))
            .is_some_and(|i| active.contains(&i))
    };

    let mut rules = Vec::new();
    let mut plans = Vec::new();
    for (g, &positions) in config.groups().iter().enumerate() {
        let g = g as u8;
        let (layout_rule, layout) = if positions > 1 {
            let numpos_active = is_active(g, Slot::NumPos);
            let use_position = numpos_active && rng.gen_bool(0.5);
            if use_position {
                loop {
                    let rule = *non_constant_rules(Attribute::Position)
                        .choose(&mut rng)
                        .expect("non-empty");
                    if let Some(rows) = sample_position_rows(rule, positions, &mut rng) {
                        break (
                            Some(AttributeRule {
                                group: g,
                                attribute: Attribute::Position,
                                rule,
                            }),
                            rows,
                        );
                    }
                }
            } else {
                let (r, counts) = plan_attr(
                    g,
                    Attribute::Number,
                    numpos_active,
                    1,
                    positions as u16,
                    &mut rng,
                );
                let masks = counts.map(|row| row.map(|n| (1u16 << n) - 1));
                (Some(r), masks)
            }
        } else {
            (None, [[1u16; 3]; 3])
        };
        let (kr, kind) = plan_attr(
            g,
            Attribute::Type,
            is_active(g, Slot::Attr(Attribute::Type)),
            0,
            Attribute::Type.domain() as u16 - 1,
            &mut rng,
        );
        let (sr, size) = plan_attr(
            g,
            Attribute::Size,
            is_active(g, Slot::Attr(Attribute::Size)),
            0,
            Attribute::Size.domain() as u16 - 1,
            &mut rng,
        );
        let (cr, color) = plan_attr(
            g,
            Attribute::Color,
            is_active(g, Slot::Attr(Attribute::Color)),
            0,
            Attribute::Color.domain() as u16 - 1,
            &mut rng,
        );
        rules.extend(layout_rule);
        rules.extend([kr, sr, cr]);
        plans.push(GroupPlan {
            layout,
            kind,
            size,
            color,
        });
    }

    let panel_at = |r: usize, c: usize| {
        let mut ents = Vec::new();
        for (g, plan) in plans.iter().enumerate() {
            let mask = plan.layout[r][c];
            for p in 0..16u8 {
                if mask & (1 << p) != 0 {
                    ents.push(Entity {
                        group: g as u8,
                        position: p,
                        kind: plan.kind[r][c] as u8,
                        size: plan.size[r][c] as u8,
                        color: plan.color[r][c] as u8,
                    });
                }
            }
        }
        Panel::new(ents)
    };
    let context: Vec<Panel> = (0..8).map(|i| panel_at(i / 3, i % 3)).collect();
    let gold = panel_at(2, 2);

    let mut puzzle = RavenPuzzle {
        config,
        n_transitions: count_transitions(&rules),
        rules,
        context,
        candidates: vec![gold.clone()],
        gold_index: 0,
    };
    debug_assert!(satisfies_all(&puzzle, &gold));

    let distractors = make_distractors(&puzzle, CANDIDATES - 1, seed)?;
    let mut candidates = distractors;
    candidates.push(gold.clone());
    let mut order_rng = seeding::rng_for(seed, &["raven-order", config.name()]);
    candidates.shuffle(&mut order_rng);
    puzzle.gold_index = candidates
        .iter()
        .position(|p| *p == gold)
        .expect("gold was inserted");
    puzzle.candidates = candidates;
    Ok(puzzle)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Perturbation {
    Kind(u8, u8),
    Size(u8, u8),
    Color(u8, u8),
    /// Add an entity at the lowest free position of the group.
    Grow(u8),
    /// Remove the highest-positioned entity of the group.
    Shrink(u8),
    /// Move the entity at `from` to `to`.
    Move(u8, u8, u8),
}

impl Perturbation {
    fn attribute(self) -> (u8, u8) {
        match self {
            Perturbation::Kind(g, _) => (g, 0),
            Perturbation::Size(g, _) => (g, 1),
            Perturbation::Color(g, _) => (g, 2),
            Perturbation::Grow(g) | Perturbation::Shrink(g) | Perturbation::Move(g, _, _) => (g, 3),
        }
    }

    fn apply(self, panel: &Panel, config: Configuration) -> Option<Panel> {
        let mut ents = panel.entities.clone();
        match self {
            Perturbation::Kind(g, v) => ents
                .iter_mut()
                .filter(|e| e.group == g)
                .for_each(|e| e.kind = v),
            Perturbation::Size(g, v) => ents
                .iter_mut()
                .filter(|e| e.group == g)
                .for_each(|e| e.size = v),
            Perturbation::Color(g, v) => ents
                .iter_mut()
                .filter(|e| e.group == g)
                .for_each(|e| e.color = v),
            Perturbation::Grow(g) => {
                let positions = config.groups()[g as usize];
                let template = *ents.iter().find(|e| e.group == g)?;
                let free = (0..positions)
                    .find(|p| !ents.iter().any(|e| e.group == g && e.position == *p))?;
                ents.push(Entity {
                    position: free,
                    ..template
                });
            }
            Perturbation::Shrink(g) => {
                if ents.iter().filter(|e| e.group == g).count() < 2 {
                    return None;
                }
                let idx = ents.iter().rposition(|e| e.group == g)?;
                ents.remove(idx);
            }
            Perturbation::Move(g, from, to) => {
                let e = ents
                    .iter_mut()
                    .find(|e| e.group == g && e.position == from)?;
                e.position = to;
            }
        }
        Some(Panel::new(ents))
    }
}

fn single_perturbations(gold: &Panel, config: Configuration) -> Vec<Perturbation> {
    let mut out = Vec::new();
    for (g, &positions) in config.groups().iter().enumerate() {
        let g = g as u8;
        let Some(first) = gold.group(g).next().copied() else {
            continue;
        };
        out.extend(
            (0..TYPE_VALUES)
                .filter(|&v| v != first.kind)
                .map(|v| Perturbation::Kind(g, v)),
        );
        out.extend(
            (0..SIZE_VALUES)
                .filter(|&v| v != first.size)
                .map(|v| Perturbation::Size(g, v)),
        );
        out.extend(
            (0..COLOR_VALUES)
                .filter(|&v| v != first.color)
                .map(|v| Perturbation::Color(g, v)),
        );
        if positions > 1 {
            out.push(Perturbation::Grow(g));
            out.push(Perturbation::Shrink(g));
            let occupied: Vec<u8> = gold.group(g).map(|e| e.position).collect();
            for &from in &occupied {
                for to in (0..positions).filter(|p| !occupied.contains(p)) {
                    out.push(Perturbation::Move(g, from, to));
                }
            }
        }
    }
    out
}

/// Builds `k` distinct wrong answers by perturbing one or two attributes of
/// the gold panel, rejecting anything the rule oracle accepts.
pub fn make_distractors(
    puzzle: &RavenPuzzle,
    k: usize,
    seed: u64,
) -> Result<Vec<Panel>, RavenError> {
    let gold = puzzle.gold();
    let singles = single_perturbations(gold, puzzle.config);
    let mut pool: Vec<Panel> = singles
        .iter()
        .filter_map(|p| p.apply(gold, puzzle.config))
        .collect();
    for (i, a) in singles.iter().enumerate() {
        for b in &singles[i + 1..] {
            if a.attribute() == b.attribute() {
                continue;
            }
            if let Some(p) = a
                .apply(gold, puzzle.config)
                .and_then(|p| b.apply(&p, puzzle.config))
            {
                pool.push(p);
            }
        }
    }
    let mut rng = seeding::rng_for(seed, &["raven-distractors", &serialize_symbolic(gold)]);
    pool.shuffle(&mut rng);

    let mut seen = BTreeSet::new();
    seen.insert(serialize_symbolic(gold));
    let mut out = Vec::with_capacity(k);
    for p in pool {
        if out.len() == k {
            break;
        }
        if !seen.insert(serialize_symbolic(&p)) || satisfies_all(puzzle, &p) {
            continue;
        }
        out.push(p);
    }
    if out.len() < k {
        return Err(RavenError::DistractorSpace {
            wanted: k,
            found: out.len(),
        });
    }
    Ok(out)
}

/// Renders the incomplete matrix for prompts, one row per line.
pub fn render_incomplete(source: &(String, String), target: &str) -> String {
    format!(
        "\nrow 1: {}\nrow 2: {}\nrow 3: {}, ?",
        source.0, source.1, target
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(group: u8, position: u8, kind: u8, size: u8, color: u8) -> Entity {
        Entity {
            group,
            position,
            kind,
            size,
            color,
        }
    }

    #[test]
    fn center_single_easy_has_one_transition() {
        let p = generate_matrix(Configuration::CenterSingle, 1, 7).unwrap();
        assert_eq!(count_transitions(&p.rules), 1);
        assert_eq!(p.n_transitions, 1);
        assert_eq!(p.difficulty(), Difficulty::Easy);
        assert_eq!(p.candidates.len(), CANDIDATES);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_matrix(Configuration::DistributeNine, 3, 42).unwrap();
        let b = generate_matrix(Configuration::DistributeNine, 3, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_target_reports_range() {
        assert_eq!(
            generate_matrix(Configuration::CenterSingle, 99, 1),
            Err(RavenError::Infeasible {
                config: Configuration::CenterSingle,
                requested: 99,
                max: 3
            })
        );
        assert!(generate_matrix(Configuration::CenterSingle, 0, 1).is_err());
    }

    #[test]
    fn count_transitions_by_definition() {
        let r = |attribute, rule| AttributeRule {
            group: 0,
            attribute,
            rule,
        };
        assert_eq!(
            count_transitions(&[
                r(Attribute::Type, Rule::Constant),
                r(Attribute::Size, Rule::Constant)
            ]),
            0
        );
        assert_eq!(
            count_transitions(&[
                r(Attribute::Type, Rule::Progression(1)),
                r(Attribute::Size, Rule::Constant),
                r(Attribute::Color, Rule::DistributeThree),
            ]),
            2
        );
    }

    #[test]
    fn table_thresholds() {
        use Configuration::*;
        assert_eq!(
            classify_raven_difficulty(CenterSingle, 2),
            Difficulty::Medium
        );
        assert_eq!(
            classify_raven_difficulty(DistributeFour, 3),
            Difficulty::Medium
        );
        assert_eq!(
            classify_raven_difficulty(LeftCenterSingleRightCenterSingle, 6),
            Difficulty::Hard
        );
        assert_eq!(
            classify_raven_difficulty(LeftCenterSingleRightCenterSingle, 4),
            Difficulty::Easy
        );
        assert_eq!(
            classify_raven_difficulty(UpCenterSingleDownCenterSingle, 5),
            Difficulty::Hard
        );
    }

    #[test]
    fn single_entity_serializes_to_one_token() {
        let p = Panel::new(vec![e(0, 0, 2, 3, 5)]);
        assert_eq!(serialize_symbolic(&p), "[0.0:(2,3,5)]");
        assert_eq!(parse_symbolic("[0.0:(2,3,5)]").unwrap(), p);
    }

    #[test]
    fn structurally_equal_panels_serialize_identically() {
        let a = Panel::new(vec![e(0, 3, 1, 1, 1), e(0, 0, 1, 1, 1)]);
        let b = Panel::new(vec![e(0, 0, 1, 1, 1), e(0, 3, 1, 1, 1)]);
        assert_eq!(serialize_symbolic(&a), serialize_symbolic(&b));
    }

    #[test]
    fn parse_rejects_garbage() {
        assert!(parse_symbolic("0.0:(1,2,3)").is_err());
        assert!(parse_symbolic("[0.0:(1,2)]").is_err());
        assert!(parse_symbolic("[0.0:(1,2,3) 0.0:(1,2,3)]").is_err());
        assert_eq!(parse_symbolic("[]").unwrap(), Panel::new(vec![]));
    }

    #[test]
    fn distractors_are_rejected_by_oracle() {
        for config in Configuration::ALL {
            for t in 1..=config.max_transitions() {
                let p = generate_matrix(config, t, 3).unwrap();
                let consistent = p.candidates.iter().filter(|c| satisfies_all(&p, c)).count();
                assert_eq!(consistent, 1, "{config} t={t}");
                let d1 = make_distractors(&p, 7, 9).unwrap();
                assert_eq!(d1, make_distractors(&p, 7, 9).unwrap());
            }
        }
    }

    #[test]
    fn difficulty_is_monotone_in_transitions() {
        for config in Configuration::ALL {
            let tiers: Vec<Difficulty> = (0..10)
                .map(|n| classify_raven_difficulty(config, n))
                .collect();
            assert!(tiers.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
