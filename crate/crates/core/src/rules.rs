//! Surrogate decision lists explaining which action an agent takes in
//! which state.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::protocol::EvaluationProtocol;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RulesError {
    #[error("no episodes in [{lo}, {hi}]")]
    EmptyInterval { lo: u32, hi: u32 },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` cannot form two nonempty buckets")]
    ConstantColumn(String),
    #[error("at least two buckets are required")]
    TooFewBuckets,
    #[error("dataset has no rows")]
    EmptyData,
    #[error("rule set does not fit the data: {0}")]
    SchemaMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Cat(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Num(v) => write!(f, "{v}"),
            Cell::Cat(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
}

/// Which state accompanies each action in a concatenated table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Each protocol row as recorded: the action with the state it led to.
    #[default]
    AsRecorded,
    /// Each action with the state the agent acted in, i.e. the previous
    /// row's state. The first row of an episode has none and is skipped.
    DecisionState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowTable {
    pub columns: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
    /// Episode of each row.
    pub episodes: Vec<u32>,
    /// Episode interval the rows were taken from.
    #[serde(default)]
    pub interval: Option<(u32, u32)>,
}

impl RowTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

/// Concatenates the protocols whose episode lies in `[lo, hi]`, ordered by
/// (episode, step). Columns are the state variables, `action`, `reward` and
/// `delta_reward`.
pub fn concatenate_evaluations(
    protocols: &[EvaluationProtocol],
    lo: u32,
    hi: u32,
    alignment: Alignment,
) -> Result<RowTable, RulesError> {
    let mut chosen: Vec<&EvaluationProtocol> = protocols
        .iter()
        .filter(|p| lo <= p.episode && p.episode <= hi && !p.rows.is_empty())
        .collect();
    if lo > hi || chosen.is_empty() {
        return Err(RulesError::EmptyInterval { lo, hi });
    }
    chosen.sort_by_key(|p| p.episode);
    let arity = chosen[0].rows[0].state.len();
    let names: Vec<String> = if chosen[0].state_names.len() == arity {
        chosen[0].state_names.clone()
    } else {
        (0..arity).map(|i| format!("s_{i}")).collect()
    };
    let mut columns: Vec<Column> = names
        .into_iter()
        .map(|name| Column {
            name,
            kind: ColumnKind::Numeric,
        })
        .collect();
    columns.push(Column {
        name: "action".into(),
        kind: ColumnKind::Categorical,
    });
    for name in ["reward", "delta_reward"] {
        columns.push(Column {
            name: name.into(),
            kind: ColumnKind::Numeric,
        });
    }
    let mut rows = Vec::new();
    let mut episodes = Vec::new();
    for p in chosen {
        let mut sorted = p.rows.clone();
        sorted.sort_by_key(|r| r.step);
        for (i, row) in sorted.iter().enumerate() {
            let state = match alignment {
                Alignment::AsRecorded => &row.state,
                Alignment::DecisionState => {
                    if i == 0 || sorted[i - 1].step + 1 != row.step {
                        continue;
                    }
                    &sorted[i - 1].state
                }
            };
            if state.len() != arity {
                return Err(RulesError::SchemaMismatch(format!(
                    "episode {} has {} state values, expected {arity}",
                    p.episode,
                    state.len()
                )));
            }
            let mut cells: Vec<Cell> = state.iter().map(|v| Cell::Num(*v)).collect();
            cells.push(Cell::Cat(row.action.clone()));
            cells.push(Cell::Num(row.reward));
            cells.push(Cell::Num(row.delta_reward));
            rows.push(cells);
            episodes.push(p.episode);
        }
    }
    Ok(RowTable {
        columns,
        rows,
        episodes,
        interval: Some((lo, hi)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BucketStrategy {
    EqualWidth,
    EqualFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub features: Vec<Column>,
    pub rows: Vec<Vec<Cell>>,
    pub labels: Vec<String>,
    /// The column the labels came from; it is not among the features.
    pub label_column: String,
    /// Bucket boundaries of a numeric label column: bucket `Bi` holds
    /// values in `[b_{i-1}, b_i)`.
    pub boundaries: Vec<f64>,
    #[serde(default)]
    pub interval: Option<(u32, u32)>,
}

impl LabeledDataset {
    pub fn new(features: Vec<Column>, rows: Vec<Vec<Cell>>, labels: Vec<String>, label_column: &str) -> LabeledDataset {
        LabeledDataset {
            features,
            rows,
            labels,
            label_column: label_column.to_string(),
            boundaries: Vec::new(),
            interval: None,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn majority(&self, rows: impl Iterator<Item = usize>) -> Option<(String, usize)> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for i in rows {
            *counts.entry(&self.labels[i]).or_default() += 1;
        }
        let mut best: Option<(&str, usize)> = None;
        for (label, n) in counts {
            if best.is_none_or(|(_, b)| n > b) {
                best = Some((label, n));
            }
        }
        best.map(|(l, n)| (l.to_string(), n))
    }
}

/// Turns `column` into the prediction label. Categorical columns pass
/// through; numeric ones are cut into `n_buckets` buckets named `B0, B1, …`.
pub fn bucketize(
    table: &RowTable,
    column: &str,
    n_buckets: usize,
    strategy: BucketStrategy,
) -> Result<LabeledDataset, RulesError> {
    let c = table.column(column).ok_or_else(|| RulesError::UnknownColumn(column.into()))?;
    if table.rows.is_empty() {
        return Err(RulesError::EmptyData);
    }
    let features: Vec<Column> = table
        .columns
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != c)
        .map(|(_, col)| col.clone())
        .collect();
    let rows: Vec<Vec<Cell>> = table
        .rows
        .iter()
        .map(|r| r.iter().enumerate().filter(|(i, _)| *i != c).map(|(_, v)| v.clone()).collect())
        .collect();
    if table.columns[c].kind == ColumnKind::Categorical {
        let labels = table.rows.iter().map(|r| r[c].to_string()).collect();
        let mut data = LabeledDataset::new(features, rows, labels, column);
        data.interval = table.interval;
        return Ok(data);
    }
    if n_buckets < 2 {
        return Err(RulesError::TooFewBuckets);
    }
    let values: Vec<f64> = table
        .rows
        .iter()
        .map(|r| match &r[c] {
            Cell::Num(v) => Ok(*v),
            Cell::Cat(_) => Err(RulesError::SchemaMismatch(format!("`{column}` holds text"))),
        })
        .collect::<Result<_, _>>()?;
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let mut boundaries: Vec<f64> = match strategy {
        BucketStrategy::EqualWidth => (1..n_buckets)
            .map(|i| lo + (hi - lo) * i as f64 / n_buckets as f64)
            .collect(),
        BucketStrategy::EqualFrequency => (1..n_buckets)
            .filter_map(|i| {
                let p = i * sorted.len() / n_buckets;
                (p > 0 && p < sorted.len()).then(|| (sorted[p - 1] + sorted[p]) / 2.0)
            })
            .collect(),
    };
    boundaries.dedup();
    let bucket = |v: f64| boundaries.iter().filter(|b| v >= **b).count();
    let ids: Vec<usize> = values.iter().map(|v| bucket(*v)).collect();
    let mut used = ids.clone();
    used.sort_unstable();
    used.dedup();
    if used.len() < 2 {
        return Err(RulesError::ConstantColumn(column.into()));
    }
    Ok(LabeledDataset {
        features,
        rows,
        labels: ids.iter().map(|i| format!("B{i}")).collect(),
        label_column: column.into(),
        boundaries,
        interval: table.interval,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Op {
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "=")]
    Eq,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Le => "≤",
            Op::Gt => ">",
            Op::Eq => "=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: String,
    pub op: Op,
    pub threshold: Cell,
}

impl Condition {
    fn holds(&self, value: &Cell) -> bool {
        match (self.op, value, &self.threshold) {
            (Op::Le, Cell::Num(v), Cell::Num(t)) => v <= t,
            (Op::Gt, Cell::Num(v), Cell::Num(t)) => v > t,
            (Op::Eq, Cell::Cat(v), Cell::Cat(t)) => v == t,
            (Op::Eq, Cell::Num(v), Cell::Num(t)) => v == t,
            _ => false,
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.feature, self.op, self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub label: String,
    /// Empty only for the default rule.
    pub conditions: Vec<Condition>,
    pub coverage_count: usize,
    pub correct_count: usize,
}

impl Rule {
    pub fn precision(&self) -> f64 {
        if self.coverage_count == 0 {
            0.0
        } else {
            self.correct_count as f64 / self.coverage_count as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreemapEntry {
    /// Position in the decision list; the default rule has index `rules.len()`.
    pub rule_index: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub rules: Vec<Rule>,
    pub default: Rule,
    pub features: Vec<Column>,
    pub label_column: String,
    pub total_rows: usize,
    pub treemap: Vec<TreemapEntry>,
    /// Every row has the same features but labels differ.
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InduceOptions {
    pub max_conditions: usize,
    pub min_coverage: usize,
}

impl InduceOptions {
    /// Three conditions and 1 % of the rows (at least one).
    pub fn for_rows(n: usize) -> InduceOptions {
        InduceOptions {
            max_conditions: 3,
            min_coverage: (n / 100).max(1),
        }
    }
}

/// Fixed-size row set.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Bits(Vec<u64>);

impl Bits {
    fn empty(n: usize) -> Bits {
        Bits(vec![0; n.div_ceil(64)])
    }

    fn full(n: usize) -> Bits {
        let mut b = Bits::empty(n);
        for i in 0..n {
            b.set(i);
        }
        b
    }

    fn set(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn get(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    fn and(&self, o: &Bits) -> Bits {
        Bits(self.0.iter().zip(&o.0).map(|(a, b)| a & b).collect())
    }

    fn minus(&self, o: &Bits) -> Bits {
        Bits(self.0.iter().zip(&o.0).map(|(a, b)| a & !b).collect())
    }

    fn count(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn ones(&self, n: usize) -> impl Iterator<Item = usize> + '_ {
        (0..n).filter(|i| self.get(*i))
    }
}

struct Atom {
    condition: Condition,
    rows: Bits,
}

/// Candidate atoms in canonical order: by feature, then `≤` before `>`
/// before `=`, then threshold. Numeric thresholds are midpoints between
/// consecutive distinct values of the full dataset.
fn atoms(data: &LabeledDataset) -> Vec<Atom> {
    let n = data.len();
    let mut out = Vec::new();
    for (f, col) in data.features.iter().enumerate() {
        match col.kind {
            ColumnKind::Numeric => {
                let mut vals: Vec<f64> = data
                    .rows
                    .iter()
                    .filter_map(|r| match r[f] {
                        Cell::Num(v) => Some(v),
                        Cell::Cat(_) => None,
                    })
                    .collect();
                vals.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
                vals.dedup();
                let cuts: Vec<f64> = vals.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect();
                for op in [Op::Le, Op::Gt] {
                    for t in &cuts {
                        let condition = Condition {
                            feature: col.name.clone(),
                            op,
                            threshold: Cell::Num(*t),
                        };
                        out.push(atom(data, f, condition, n));
                    }
                }
            }
            ColumnKind::Categorical => {
                let mut vals: Vec<String> = data.rows.iter().map(|r| r[f].to_string()).collect();
                vals.sort();
                vals.dedup();
                for v in vals {
                    let condition = Condition {
                        feature: col.name.clone(),
                        op: Op::Eq,
                        threshold: Cell::Cat(v),
                    };
                    out.push(atom(data, f, condition, n));
                }
            }
        }
    }
    out
}

fn atom(data: &LabeledDataset, f: usize, condition: Condition, n: usize) -> Atom {
    let mut rows = Bits::empty(n);
    for (i, r) in data.rows.iter().enumerate() {
        if condition.holds(&r[f]) {
            rows.set(i);
        }
    }
    Atom { condition, rows }
}

struct Grown {
    label: usize,
    atoms: Vec<usize>,
    cover: Bits,
    coverage: usize,
    correct: usize,
}

/// Greedy specialization of one label's rule on the residue: repeatedly
/// add the atom giving the highest precision (then most correct rows, then
/// first atom), while precision improves.
fn grow(atoms: &[Atom], residue: &Bits, label_rows: &Bits, label: usize, opts: &InduceOptions) -> Option<Grown> {
    let mut chosen: Vec<usize> = Vec::new();
    let mut cover = residue.clone();
    let mut precision = {
        let r = residue.count();
        if r == 0 {
            return None;
        }
        cover.and(label_rows).count() as f64 / r as f64
    };
    while chosen.len() < opts.max_conditions && precision < 1.0 {
        let mut best: Option<(f64, usize, usize, Bits)> = None;
        for (a, atom) in atoms.iter().enumerate() {
            if chosen.contains(&a) {
                continue;
            }
            let next = cover.and(&atom.rows);
            let coverage = next.count();
            if coverage < opts.min_coverage {
                continue;
            }
            let correct = next.and(label_rows).count();
            if correct == 0 {
                continue;
            }
            let p = correct as f64 / coverage as f64;
            let better = match &best {
                None => true,
                Some((bp, bc, _, _)) => p > *bp || (p == *bp && correct > *bc),
            };
            if better {
                best = Some((p, correct, a, next));
            }
        }
        let Some((p, _, a, next)) = best else { break };
        if !chosen.is_empty() && p <= precision {
            break;
        }
        chosen.push(a);
        cover = next;
        precision = p;
    }
    if chosen.is_empty() {
        return None;
    }
    let coverage = cover.count();
    let correct = cover.and(label_rows).count();
    chosen.sort_unstable();
    Some(Grown {
        label,
        atoms: chosen,
        cover,
        coverage,
        correct,
    })
}

fn better(a: &Grown, b: &Grown, labels: &[String]) -> bool {
    let ord = b
        .correct
        .cmp(&a.correct)
        .then(a.atoms.len().cmp(&b.atoms.len()))
        .then_with(|| a.atoms.cmp(&b.atoms))
        .then_with(|| labels[a.label].cmp(&labels[b.label]));
    ord == Ordering::Less
}

/// Sequential covering: on the uncovered residue, grow one rule per label,
/// keep the one with the most correctly covered rows (then fewer
/// conditions, then canonical atom order), remove what it covers, repeat.
///
/// A rule is only admitted if it covers at least `min_coverage` residue
/// rows and no more than its predecessor, so coverage never increases
/// down the list. When the residue becomes pure, one last single-atom rule
/// is added if some atom covers all of it; the default rule takes whatever
/// remains. If the list would score below its own shorter prefixes on the
/// training rows it is cut back to the best prefix.
pub fn induce_rules(data: &LabeledDataset, opts: InduceOptions) -> Result<RuleSet, RulesError> {
    let n = data.len();
    if n == 0 {
        return Err(RulesError::EmptyData);
    }
    let mut label_names: Vec<String> = data.labels.clone();
    label_names.sort();
    label_names.dedup();
    let label_rows: Vec<Bits> = label_names
        .iter()
        .map(|l| {
            let mut b = Bits::empty(n);
            for (i, x) in data.labels.iter().enumerate() {
                if x == l {
                    b.set(i);
                }
            }
            b
        })
        .collect();
    let atoms = atoms(data);
    let degenerate = label_names.len() > 1 && data.rows.iter().all(|r| *r == data.rows[0]);

    let mut rules: Vec<(Grown, Bits)> = Vec::new();
    let mut residue = Bits::full(n);
    if !degenerate {
        loop {
            let r = residue.count();
            if r == 0 {
                break;
            }
            let previous = rules.last().map_or(usize::MAX, |(g, _)| g.coverage);
            let present: Vec<usize> = (0..label_names.len())
                .filter(|l| residue.and(&label_rows[*l]).count() > 0)
                .collect();
            if present.len() == 1 {
                // pure residue: close it with one atom if possible
                if !rules.is_empty() && r >= opts.min_coverage && r <= previous {
                    if let Some(a) = atoms.iter().position(|a| residue.and(&a.rows) == residue) {
                        let g = Grown {
                            label: present[0],
                            atoms: vec![a],
                            cover: residue.clone(),
                            coverage: r,
                            correct: r,
                        };
                        rules.push((g, residue.clone()));
                    }
                }
                break;
            }
            let mut best: Option<Grown> = None;
            for &l in &present {
                if let Some(g) = grow(&atoms, &residue, &label_rows[l], l, &opts) {
                    if g.coverage < opts.min_coverage || g.coverage > previous {
                        continue;
                    }
                    if best.as_ref().is_none_or(|b| better(&g, b, &label_names)) {
                        best = Some(g);
                    }
                }
            }
            let Some(g) = best else { break };
            let before = residue.clone();
            residue = residue.minus(&g.cover);
            rules.push((g, before));
        }
    }

    // accuracy of each prefix: its rules' correct rows plus the residue majority
    let residue_after = |rules: &[(Grown, Bits)], p: usize| -> Bits {
        if p == 0 {
            Bits::full(n)
        } else {
            rules[p - 1].1.minus(&rules[p - 1].0.cover)
        }
    };
    let mut best_p = 0;
    let mut best_acc = 0;
    let mut correct_so_far = 0;
    for p in 0..=rules.len() {
        if p > 0 {
            correct_so_far += rules[p - 1].0.correct;
        }
        let res = residue_after(&rules, p);
        let maj = data.majority(res.ones(n)).map_or(0, |(_, c)| c);
        let acc = correct_so_far + maj;
        if acc >= best_acc {
            best_acc = acc;
            best_p = p;
        }
    }
    let res = residue_after(&rules, best_p);
    rules.truncate(best_p);
    let (default_label, default_correct) = match data.majority(res.ones(n)) {
        Some(m) => m,
        None => (data.majority(0..n).expect("nonempty").0, 0),
    };
    let rules: Vec<Rule> = rules
        .into_iter()
        .map(|(g, _)| Rule {
            label: label_names[g.label].clone(),
            conditions: g.atoms.iter().map(|a| atoms[*a].condition.clone()).collect(),
            coverage_count: g.coverage,
            correct_count: g.correct,
        })
        .collect();
    let default = Rule {
        label: default_label,
        conditions: Vec::new(),
        coverage_count: res.count(),
        correct_count: default_correct,
    };
    let mut set = RuleSet {
        rules,
        default,
        features: data.features.clone(),
        label_column: data.label_column.clone(),
        total_rows: n,
        treemap: Vec::new(),
        degenerate,
    };
    set.treemap = treemap(&set);
    Ok(set)
}

fn treemap(set: &RuleSet) -> Vec<TreemapEntry> {
    let n = set.total_rows.max(1) as f64;
    set.rules
        .iter()
        .chain(std::iter::once(&set.default))
        .enumerate()
        .map(|(i, r)| TreemapEntry {
            rule_index: i,
            weight: r.coverage_count as f64 / n,
        })
        .collect()
}

impl RuleSet {
    fn feature_index(&self, data: &LabeledDataset) -> Result<Vec<Vec<usize>>, RulesError> {
        self.rules
            .iter()
            .map(|r| {
                r.conditions
                    .iter()
                    .map(|c| {
                        data.features
                            .iter()
                            .position(|f| f.name == c.feature)
                            .ok_or_else(|| RulesError::SchemaMismatch(format!("no feature `{}`", c.feature)))
                    })
                    .collect()
            })
            .collect()
    }

    /// Index of the first rule matching row `i`, or `rules.len()` for the default.
    fn first_match(&self, idx: &[Vec<usize>], row: &[Cell]) -> usize {
        self.rules
            .iter()
            .zip(idx)
            .position(|(r, cols)| r.conditions.iter().zip(cols).all(|(c, f)| c.holds(&row[*f])))
            .unwrap_or(self.rules.len())
    }

    pub fn predict(&self, data: &LabeledDataset) -> Result<Vec<String>, RulesError> {
        let idx = self.feature_index(data)?;
        Ok(data
            .rows
            .iter()
            .map(|row| {
                let i = self.first_match(&idx, row);
                self.rules.get(i).unwrap_or(&self.default).label.clone()
            })
            .collect())
    }

    pub fn accuracy(&self, data: &LabeledDataset) -> Result<f64, RulesError> {
        let pred = self.predict(data)?;
        let hits = pred.iter().zip(&data.labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / data.len().max(1) as f64)
    }

    pub fn export(&self) -> RuleSetExport {
        let n = self.total_rows.max(1) as f64;
        RuleSetExport {
            rules: self
                .rules
                .iter()
                .map(|r| RuleExport {
                    label: r.label.clone(),
                    conditions: r.conditions.clone(),
                    coverage: r.coverage_count as f64 / n,
                    precision: r.precision(),
                })
                .collect(),
            default_label: self.default.label.clone(),
            treemap: self.treemap.clone(),
        }
    }

    /// One line per rule, default last.
    pub fn render(&self) -> String {
        let n = self.total_rows.max(1) as f64;
        let pct = |x: f64| (x * 100.0).round() as i64;
        let mut out = String::new();
        for r in &self.rules {
            let conds: Vec<String> = r.conditions.iter().map(ToString::to_string).collect();
            out.push_str(&format!(
                "IF {} THEN {} (coverage {} %, precision {} %)\n",
                conds.join(" AND "),
                r.label,
                pct(r.coverage_count as f64 / n),
                pct(r.precision())
            ));
        }
        out.push_str(&format!(
            "ELSE {} (coverage {} %, precision {} %)\n",
            self.default.label,
            pct(self.default.coverage_count as f64 / n),
            pct(self.default.precision())
        ));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleExport {
    pub label: String,
    pub conditions: Vec<Condition>,
    pub coverage: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSetExport {
    pub rules: Vec<RuleExport>,
    pub default_label: String,
    pub treemap: Vec<TreemapEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCoverage {
    pub rule_index: usize,
    pub coverage_count: usize,
    pub correct_count: usize,
    pub coverage: f64,
    pub precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    /// Per rule in list order, the default rule last.
    pub rules: Vec<RuleCoverage>,
    pub treemap: Vec<TreemapEntry>,
}

/// First-match coverage of each rule on `data`.
pub fn coverage_stats(set: &RuleSet, data: &LabeledDataset) -> Result<CoverageStats, RulesError> {
    for c in set.rules.iter().flat_map(|r| &r.conditions) {
        let f = data
            .features
            .iter()
            .find(|f| f.name == c.feature)
            .ok_or_else(|| RulesError::SchemaMismatch(format!("no feature `{}`", c.feature)))?;
        let numeric = matches!(c.threshold, Cell::Num(_));
        if numeric != (f.kind == ColumnKind::Numeric) {
            return Err(RulesError::SchemaMismatch(format!("feature `{}` changed kind", c.feature)));
        }
    }
    let idx = set.feature_index(data)?;
    let k = set.rules.len() + 1;
    let mut covered = vec![0usize; k];
    let mut correct = vec![0usize; k];
    for (row, label) in data.rows.iter().zip(&data.labels) {
        let i = set.first_match(&idx, row);
        covered[i] += 1;
        let rule = set.rules.get(i).unwrap_or(&set.default);
        if rule.label == *label {
            correct[i] += 1;
        }
    }
    let n = data.len().max(1) as f64;
    let rules: Vec<RuleCoverage> = (0..k)
        .map(|i| RuleCoverage {
            rule_index: i,
            coverage_count: covered[i],
            correct_count: correct[i],
            coverage: covered[i] as f64 / n,
            precision: if covered[i] == 0 {
                0.0
            } else {
                correct[i] as f64 / covered[i] as f64
            },
        })
        .collect();
    let treemap = rules
        .iter()
        .map(|r| TreemapEntry {
            rule_index: r.rule_index,
            weight: r.coverage,
        })
        .collect();
    Ok(CoverageStats { rules, treemap })
}
