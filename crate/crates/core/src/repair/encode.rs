//! SMT-LIB encodings of the instance and prototype rule bundles.
//!
//! Every cell the bundle may change is a boolean `e_i_j`; instance rows that
//! may stay active get `a_i`. Chain positions and first/last parent
//! positions are the uninterpreted functions `pos`, `fp` and `lp` over row
//! numbers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{PaddedMatrix, PartitionKind};
use crate::model::LevelKind;
use crate::validate::Rule;

/// The constraints for one partition of the repair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintBundle {
    pub name: String,
    pub rules: BTreeSet<Rule>,
    /// Rows whose cells the bundle covers.
    pub scope: Vec<usize>,
    /// Cells the bundle reads but must not change.
    pub frozen: BTreeMap<(usize, usize), bool>,
    /// Free cells, each with its current value (the soft target).
    pub cells: Vec<((usize, usize), bool)>,
    /// Rows with a free activeness variable.
    pub activeness: Vec<usize>,
    /// Weighted soft literals for flips a choice forces on later partitions,
    /// added to the flip count so each stage minimizes its own flips plus
    /// those it commits the rest of the repair to: a row switched off loses its set cells outside the bundle,
    /// and a chain edge between rows with identical prototype parents
    /// costs at least one prototype swap (two flips).
    #[serde(default)]
    pub penalties: Vec<(Penalty, usize)>,
    hard: Vec<String>,
}

/// A choice that commits later partitions to extra flips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Penalty {
    /// The instance row is switched off.
    Off(usize),
    /// The cell is set.
    Edge(usize, usize),
}

impl Penalty {
    /// The soft literal that avoids the penalty.
    fn literal(&self) -> String {
        match *self {
            Penalty::Off(r) => act_var(r),
            Penalty::Edge(i, j) => format!("(not {})", edge_var(i, j)),
        }
    }

    /// Whether a solution with these cells and activeness incurs it.
    pub fn applies(&self, m: &PaddedMatrix, active: &[bool]) -> bool {
        match *self {
            Penalty::Off(r) => !active[r],
            Penalty::Edge(i, j) => m.adj.get(i, j) == 1,
        }
    }
}

pub(crate) fn edge_var(i: usize, j: usize) -> String {
    format!("e_{i}_{j}")
}

pub(crate) fn act_var(i: usize) -> String {
    format!("a_{i}")
}

fn sum(terms: &[String]) -> String {
    match terms {
        [] => "0".into(),
        [t] => format!("(ite {t} 1 0)"),
        _ => {
            let mut s = String::from("(+");
            for t in terms {
                write!(s, " (ite {t} 1 0)").unwrap();
            }
            s.push(')');
            s
        }
    }
}

fn or(terms: &[String]) -> String {
    match terms {
        [] => "false".into(),
        [t] => t.clone(),
        _ => format!("(or {})", terms.join(" ")),
    }
}

impl ConstraintBundle {
    fn new(name: String, rules: &[Rule]) -> Self {
        ConstraintBundle {
            name,
            rules: rules.iter().copied().collect(),
            scope: Vec::new(),
            frozen: BTreeMap::new(),
            cells: Vec::new(),
            activeness: Vec::new(),
            penalties: Vec::new(),
            hard: Vec::new(),
        }
    }

    /// Free cells that are set in the solution differ from the input in
    /// `flips` cells; this is the soft objective.
    pub fn free_cells(&self) -> usize {
        self.cells.len()
    }

    fn freeze(&mut self, i: usize, j: usize, v: bool) -> Result<()> {
        if let Some(&old) = self.frozen.get(&(i, j)) {
            if old != v {
                return Err(Error::Encoding(format!("cell ({i}, {j}) frozen both ways")));
            }
        }
        self.frozen.insert((i, j), v);
        Ok(())
    }

    fn assert(&mut self, s: String) {
        self.hard.push(format!("(assert {s})"));
    }

    /// The full script: declarations, hard rules, one soft constraint per
    /// free cell, then the model query.
    pub fn to_smtlib(&self, timeout_ms: u64, lns: bool) -> String {
        let mut s = String::new();
        writeln!(s, "; {}", self.name).unwrap();
        if lns {
            writeln!(s, "(set-option :opt.enable_lns true)").unwrap();
        }
        if timeout_ms > 0 {
            writeln!(s, "(set-option :timeout {timeout_ms})").unwrap();
        }
        for f in ["pos", "fp", "lp"] {
            writeln!(s, "(declare-fun {f} (Int) Int)").unwrap();
        }
        for &((i, j), _) in &self.cells {
            writeln!(s, "(declare-const {} Bool)", edge_var(i, j)).unwrap();
        }
        for &r in &self.activeness {
            writeln!(s, "(declare-const {} Bool)", act_var(r)).unwrap();
        }
        for h in &self.hard {
            writeln!(s, "{h}").unwrap();
        }
        for &((i, j), v) in &self.cells {
            let lit = if v { edge_var(i, j) } else { format!("(not {})", edge_var(i, j)) };
            writeln!(s, "(assert-soft {lit} :weight 1)").unwrap();
        }
        for (p, w) in &self.penalties {
            writeln!(s, "(assert-soft {} :weight {w})", p.literal()).unwrap();
        }
        writeln!(s, "(check-sat)").unwrap();
        let names: Vec<String> = self
            .cells
            .iter()
            .map(|&((i, j), _)| edge_var(i, j))
            .chain(self.activeness.iter().map(|&r| act_var(r)))
            .collect();
        if !names.is_empty() {
            writeln!(s, "(get-value ({}))", names.join(" ")).unwrap();
        }
        writeln!(s, "(exit)").unwrap();
        s
    }
}

/// Which rows may be active, and which are fixed, while a bundle is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Activeness {
    /// Fixed by an earlier partition.
    Fixed(bool),
    /// May be switched off (never on).
    Free,
}

/// Cell expressions of a bundle: a variable for free cells, a constant
/// otherwise.
struct Cells<'a> {
    m: &'a PaddedMatrix,
    free: BTreeMap<(usize, usize), String>,
}

impl Cells<'_> {
    fn get(&self, i: usize, j: usize) -> String {
        self.free.get(&(i, j)).cloned().unwrap_or_else(|| "false".into())
    }

    fn add(&mut self, b: &mut ConstraintBundle, i: usize, j: usize) {
        let v = edge_var(i, j);
        b.cells.push(((i, j), self.m.adj.get(i, j) == 1));
        self.free.insert((i, j), v);
    }
}

fn act_expr(act: &[Activeness], r: usize) -> String {
    match act[r] {
        Activeness::Fixed(true) => "true".into(),
        Activeness::Fixed(false) => "false".into(),
        Activeness::Free => act_var(r),
    }
}

fn rows_of(m: &PaddedMatrix, level: LevelKind) -> Result<Vec<usize>> {
    m.partitions
        .instance_partition(level)
        .map(|p| p.rows().collect())
        .ok_or_else(|| Error::Encoding(format!("no instance partition for {level}")))
}

/// Linear chain (I2) over the active rows of one level, with chain
/// positions `pos` and the count of active rows.
fn chain_rules(b: &mut ConstraintBundle, cells: &mut Cells, act: &[Activeness], rows: &[usize]) -> String {
    for &i in rows {
        for &j in rows {
            let possible = i != j && act[i] != Activeness::Fixed(false) && act[j] != Activeness::Fixed(false);
            if possible || (i != j && cells.m.adj.get(i, j) == 1) {
                cells.add(b, i, j);
            }
        }
    }
    let acts: Vec<String> = rows.iter().map(|&r| act_expr(act, r)).collect();
    let cnt = sum(&acts);
    b.assert(format!("(>= {cnt} 1)"));
    for &i in rows {
        let ai = act_expr(act, i);
        b.assert(format!("(=> {ai} (and (<= 0 (pos {i})) (< (pos {i}) {cnt})))"));
        let outs: Vec<String> = rows.iter().filter(|&&j| j != i).map(|&j| cells.get(i, j)).collect();
        let ins: Vec<String> = rows.iter().filter(|&&j| j != i).map(|&j| cells.get(j, i)).collect();
        let (out, inn) = (sum(&outs), sum(&ins));
        b.assert(format!("(<= {out} 1)"));
        b.assert(format!("(<= {inn} 1)"));
        b.assert(format!("(=> (and {ai} (< (pos {i}) (- {cnt} 1))) (= {out} 1))"));
        b.assert(format!("(=> (and {ai} (> (pos {i}) 0)) (= {inn} 1))"));
        for &j in rows {
            if j == i {
                continue;
            }
            let e = cells.get(i, j);
            if e != "false" {
                let aj = act_expr(act, j);
                b.assert(format!("(=> {e} (and {ai} {aj} (= (pos {j}) (+ (pos {i}) 1))))"));
            }
            if i < j {
                let aj = act_expr(act, j);
                b.assert(format!("(=> (and {ai} {aj}) (distinct (pos {i}) (pos {j})))"));
            }
        }
    }
    cnt
}

/// Active rows of a level in chain order, from the current matrix.
fn frozen_chain(m: &PaddedMatrix, rows: &[usize], active: &[bool]) -> Result<Vec<usize>> {
    let live: Vec<usize> = rows.iter().copied().filter(|&r| active[r]).collect();
    let next = |i: usize| live.iter().copied().find(|&j| j != i && m.adj.get(i, j) == 1);
    let heads: Vec<usize> = live
        .iter()
        .copied()
        .filter(|&j| !live.iter().any(|&i| i != j && m.adj.get(i, j) == 1))
        .collect();
    let [head] = heads[..] else {
        return Err(Error::Encoding("frozen level is not a linear chain".into()));
    };
    let mut chain = vec![head];
    while let Some(n) = next(*chain.last().unwrap()) {
        if chain.contains(&n) || chain.len() > live.len() {
            return Err(Error::Encoding("frozen level chain has a cycle".into()));
        }
        chain.push(n);
    }
    if chain.len() != live.len() {
        return Err(Error::Encoding("frozen level chain misses active rows".into()));
    }
    Ok(chain)
}

/// Instance rules over one level pair (or the top level alone when `upper`
/// is `None`). With `upper_frozen` the upper level's chain and activeness
/// are taken from `active` and the matrix as-is.
pub(crate) fn encode_instances(
    m: &PaddedMatrix,
    candidates: &[bool],
    active: &[bool],
    upper: Option<LevelKind>,
    lower: LevelKind,
    upper_frozen: bool,
) -> Result<ConstraintBundle> {
    let levels = m.partitions.levels();
    let lp = levels
        .iter()
        .position(|&l| l == lower)
        .ok_or_else(|| Error::Encoding(format!("level {lower} not in matrix")))?;
    if let Some(u) = upper {
        if lp == 0 || levels[lp - 1] != u {
            return Err(Error::Encoding(format!("levels {u} and {lower} are not adjacent")));
        }
    }
    let name = match upper {
        Some(u) => format!("instances {u}-{lower}"),
        None => format!("instances {lower}"),
    };
    let mut rules = vec![Rule::I2];
    if upper.is_some() {
        rules.extend([Rule::I1, Rule::I3, Rule::I5]);
        if !lower.allows_overlap() {
            rules.push(Rule::I4);
        }
    }
    let mut b = ConstraintBundle::new(name, &rules);
    let lower_rows = rows_of(m, lower)?;
    let upper_rows = match upper {
        Some(u) => rows_of(m, u)?,
        None => Vec::new(),
    };
    let mut act: Vec<Activeness> = candidates
        .iter()
        .map(|&c| if c { Activeness::Free } else { Activeness::Fixed(false) })
        .collect();
    for &r in &upper_rows {
        if upper_frozen {
            act[r] = Activeness::Fixed(active[r]);
        }
    }
    let mut cells = Cells {
        m,
        free: BTreeMap::new(),
    };
    b.scope = upper_rows.iter().chain(&lower_rows).copied().collect();

    // Upper chain: solved here for the top pair, fixed positions otherwise.
    let cnt_upper = if let Some(_) = upper {
        if upper_frozen {
            let chain = frozen_chain(m, &upper_rows, active)?;
            for &i in &upper_rows {
                for &j in &upper_rows {
                    if i != j {
                        b.freeze(i, j, m.adj.get(i, j) == 1)?;
                    }
                }
            }
            for (k, &u) in chain.iter().enumerate() {
                b.assert(format!("(= (pos {u}) {k})"));
            }
            chain.len().to_string()
        } else {
            chain_rules(&mut b, &mut cells, &act, &upper_rows)
        }
    } else {
        String::new()
    };
    let cnt_lower = chain_rules(&mut b, &mut cells, &act, &lower_rows);

    if upper.is_some() {
        for &u in &upper_rows {
            for &l in &lower_rows {
                let possible = act[u] != Activeness::Fixed(false) && act[l] != Activeness::Fixed(false);
                if possible || m.adj.get(u, l) == 1 {
                    cells.add(&mut b, u, l);
                }
            }
        }
        for &l in &lower_rows {
            let al = act_expr(&act, l);
            let hs: Vec<(usize, String)> = upper_rows
                .iter()
                .map(|&u| (u, cells.get(u, l)))
                .filter(|(_, e)| e != "false")
                .collect();
            let terms: Vec<String> = hs.iter().map(|(_, e)| e.clone()).collect();
            let parents = sum(&terms);
            b.assert(format!("(=> {al} (and (>= {parents} 1) (<= {parents} 2)))"));
            let mut first = Vec::new();
            let mut last = Vec::new();
            for (u, e) in &hs {
                let au = act_expr(&act, *u);
                b.assert(format!(
                    "(=> {e} (and {au} {al} (<= (fp {l}) (pos {u})) (<= (pos {u}) (lp {l}))))"
                ));
                first.push(format!("(and {e} (= (pos {u}) (fp {l})))"));
                last.push(format!("(and {e} (= (pos {u}) (lp {l})))"));
            }
            b.assert(format!("(=> {al} {})", or(&first)));
            b.assert(format!("(=> {al} {})", or(&last)));
            b.assert(format!("(=> (and {al} (= (pos {l}) 0)) (= (fp {l}) 0))"));
            b.assert(format!(
                "(=> (and {al} (= (pos {l}) (- {cnt_lower} 1))) (= (lp {l}) (- {cnt_upper} 1)))"
            ));
        }
        for &l in &lower_rows {
            for &n in &lower_rows {
                let e = cells.get(l, n);
                if l == n || e == "false" {
                    continue;
                }
                if !lower.allows_overlap() {
                    b.assert(format!("(=> {e} (>= (fp {n}) (lp {l})))"));
                }
                b.assert(format!("(=> {e} (>= (fp {n}) (fp {l})))"));
            }
        }
    }
    b.activeness = b.scope.iter().copied().filter(|&r| act[r] == Activeness::Free).collect();
    let inside: BTreeSet<(usize, usize)> = b.cells.iter().map(|&(c, _)| c).chain(b.frozen.keys().copied()).collect();
    for &r in &b.activeness {
        let lost = (0..m.dim())
            .flat_map(|x| [(r, x), (x, r)])
            .filter(|&(i, j)| m.adj.get(i, j) == 1 && !inside.contains(&(i, j)))
            .count();
        if lost > 0 {
            b.penalties.push((Penalty::Off(r), lost));
        }
    }
    let parents = |r: usize| -> Vec<usize> {
        (0..m.dim())
            .filter(|&p| !m.partitions.kind_of(p).is_instance() && m.adj.get(p, r) == 1)
            .collect()
    };
    for &((i, j), _) in &b.cells {
        let same_level = m.partitions.part_of(i) == m.partitions.part_of(j) && m.partitions.kind_of(i).is_instance();
        if same_level {
            let pi = parents(i);
            if !pi.is_empty() && pi == parents(j) {
                b.penalties.push((Penalty::Edge(i, j), 2));
            }
        }
    }
    Ok(b)
}

/// Prototype rows of `level` that may carry edges: labeled rows (first of
/// each label) and as many unlabeled rows as the feature has unused legal
/// values.
pub(crate) fn prototype_candidates(m: &PaddedMatrix, level: LevelKind) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    for part in m.partitions.partitions() {
        let PartitionKind::Prototype { level: l, feature } = &part.kind else {
            continue;
        };
        if *l != level {
            continue;
        }
        let mut used = BTreeSet::new();
        for r in part.rows() {
            if let Some(v) = &m.labels[r] {
                if used.insert(v.clone()) {
                    out.push((r, feature.as_str()));
                }
            }
        }
        for r in part.rows() {
            if m.labels[r].is_none() {
                let v = crate::matrix::fresh_value(level, feature, &used);
                if v.is_empty() || used.contains(&v) {
                    break;
                }
                used.insert(v);
                out.push((r, feature.as_str()));
            }
        }
    }
    out.sort_unstable();
    out
}

/// Prototype rules (P1, and P2 where the level requires it) for one level
/// whose instance subgraph is already final.
pub(crate) fn encode_prototypes(m: &PaddedMatrix, active: &[bool], level: LevelKind) -> Result<ConstraintBundle> {
    let rows = rows_of(m, level)?;
    let chain = frozen_chain(m, &rows, active)
        .map_err(|_| Error::Encoding(format!("instance subgraph of {level} is not repaired")))?;
    let mut rules = vec![Rule::P1];
    if level.requires_distinct_neighbors() {
        rules.push(Rule::P2);
    }
    let mut b = ConstraintBundle::new(format!("prototypes {level}"), &rules);
    for &i in &rows {
        for &j in &rows {
            if i != j {
                b.freeze(i, j, m.adj.get(i, j) == 1)?;
            }
        }
    }
    let candidates = prototype_candidates(m, level);
    let candidate_rows: BTreeSet<usize> = candidates.iter().map(|&(r, _)| r).collect();
    let mut protos = Vec::new();
    for part in m.partitions.partitions() {
        if matches!(&part.kind, PartitionKind::Prototype { level: l, .. } if *l == level) {
            protos.extend(part.rows());
        }
    }
    b.scope = protos.iter().chain(&rows).copied().collect();
    let mut cells = Cells {
        m,
        free: BTreeMap::new(),
    };
    for &p in &protos {
        for &x in &rows {
            let possible = candidate_rows.contains(&p) && active[x];
            let set = m.adj.get(p, x) == 1;
            if possible || set {
                cells.add(&mut b, p, x);
            }
            if set && !possible {
                b.assert(format!("(not {})", edge_var(p, x)));
            }
        }
    }
    for &x in &chain {
        for slot in level.slots() {
            let terms: Vec<String> = candidates
                .iter()
                .filter(|(_, f)| slot.contains(f))
                .map(|&(p, _)| cells.get(p, x))
                .collect();
            if terms.is_empty() {
                return Err(Error::Encoding(format!("no prototype rows for slot {} of {level}", slot.join("|"))));
            }
            b.assert(format!("(= {} 1)", sum(&terms)));
        }
    }
    if level.requires_distinct_neighbors() {
        for w in chain.windows(2) {
            let diffs: Vec<String> = candidates
                .iter()
                .map(|&(p, _)| format!("(xor {} {})", cells.get(p, w[0]), cells.get(p, w[1])))
                .collect();
            b.assert(or(&diffs));
        }
    }
    Ok(b)
}
