//! Earley deduction over constraint clauses and best-proof search.
//!
//! Chart items are clauses `head <- body` whose constraint has been solved
//! and applied to the atoms, kept modulo variable renaming. Prediction
//! instantiates a program clause with the selected body atom of an active
//! item; completion resolves that atom against a passive item grown from the
//! same prediction. Each item records the number of clauses in its partial
//! proof and its nesting level, so the chart is pruned with the same depth
//! bound as SLD enumeration.
//!
//! The best proof is found by dynamic programming over the recorded
//! derivations. Under subtree properties an item keeps one state per
//! signature, the top `H - 1` levels of its partial tree where `H` is the
//! tallest pattern, which is all that later pattern matches can see.

use std::cmp::Reverse;
use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fmt;
use std::sync::Arc;

use crate::clp::{enumerate_limited, proof_from_steps, Clause, ClauseId, PredKey, Program, ProofTree, Query};
use crate::error::{Error, Result};
use crate::loglinear::{Model, Pattern, Property};
use crate::term::{solve, Constraint, SolvedForm, Term, Var};

pub const QUERY_PRED: &str = "$query";

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TermAtom {
    pub pred: PredKey,
    pub args: Vec<Term>,
}

impl TermAtom {
    fn from_vars(pred: &PredKey, args: &[Var], ren: &mut impl FnMut(&Var) -> Var) -> TermAtom {
        TermAtom {
            pred: pred.clone(),
            args: args.iter().map(|v| Term::Var(ren(v))).collect(),
        }
    }

    fn apply(&self, s: &SolvedForm) -> TermAtom {
        TermAtom {
            pred: self.pred.clone(),
            args: self.args.iter().map(|t| s.apply(t)).collect(),
        }
    }

    fn rename(&self, f: &mut impl FnMut(&Var) -> Var) -> TermAtom {
        TermAtom {
            pred: self.pred.clone(),
            args: self.args.iter().map(|t| t.rename(f)).collect(),
        }
    }
}

impl fmt::Display for TermAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.pred.name)?;
        if !self.args.is_empty() {
            let args: Vec<String> = self.args.iter().map(Term::to_string).collect();
            write!(f, "({})", args.join(","))?;
        }
        Ok(())
    }
}

/// A chart clause in canonical form: variables are `_0, _1, ...` in order of
/// first occurrence, so variants are equal.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Form {
    pub head: TermAtom,
    pub body: Vec<TermAtom>,
}

impl Form {
    pub fn canonical(head: TermAtom, body: Vec<TermAtom>) -> Form {
        let mut order = Vec::new();
        for a in std::iter::once(&head).chain(&body) {
            for t in &a.args {
                t.vars_in_order(&mut order);
            }
        }
        let mut map: HashMap<Var, Var> = HashMap::new();
        for v in order {
            let k = map.len();
            map.entry(v).or_insert_with(|| Var::new(format!("_{k}")));
        }
        let mut ren = |v: &Var| map.get(v).cloned().unwrap_or_else(|| v.clone());
        Form {
            head: head.rename(&mut ren),
            body: body.iter().map(|a| a.rename(&mut ren)).collect(),
        }
    }

    /// The initial item `$query(V1,...,Vn) <- A1,...,Ak` with the query
    /// constraint applied. `None` if that constraint is unsatisfiable.
    pub fn for_query(q: &Query) -> Option<Form> {
        let sigma = solve(&q.constraint)?;
        let mut id = |v: &Var| v.clone();
        let pred = PredKey {
            name: QUERY_PRED.into(),
            arity: q.vars().len(),
        };
        let head = TermAtom::from_vars(&pred, q.vars(), &mut id).apply(&sigma);
        let body = q
            .atoms
            .iter()
            .map(|a| TermAtom::from_vars(&a.pred, &a.args, &mut id).apply(&sigma))
            .collect();
        Some(Form::canonical(head, body))
    }

    pub fn is_passive(&self) -> bool {
        self.body.is_empty()
    }
}

impl fmt::Display for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.body.is_empty() {
            return write!(f, "{}.", self.head);
        }
        let body: Vec<String> = self.body.iter().map(TermAtom::to_string).collect();
        write!(f, "{} <- {}.", self.head, body.join(", "))
    }
}

fn shift(v: &Var) -> Var {
    Var::with_idx(v.name.clone(), v.idx + 1)
}

/// Prediction: instantiates `clause` with the selected atom of `item`.
/// `None` when the item is passive or the clause does not apply.
pub fn predict(item: &Form, clause: &Clause) -> Option<Form> {
    let sel = item.body.first()?;
    if sel.pred != clause.head.pred {
        return None;
    }
    let mut eqs: Vec<(Term, Term)> = clause
        .head
        .args
        .iter()
        .zip(&sel.args)
        .map(|(v, t)| (Term::Var(shift(v)), t.clone()))
        .collect();
    eqs.extend(clause.constraint.rename(&mut shift).equations);
    let sigma = solve(&Constraint::new(eqs))?;
    let body = clause
        .body
        .iter()
        .map(|a| TermAtom::from_vars(&a.pred, &a.args, &mut shift).apply(&sigma))
        .collect();
    Some(Form::canonical(sel.apply(&sigma), body))
}

/// Completion: resolves the selected atom of `active` against the head of
/// `passive`. `None` when the pair does not combine.
pub fn complete(active: &Form, passive: &Form) -> Option<Form> {
    let sel = active.body.first()?;
    if !passive.is_passive() || sel.pred != passive.head.pred {
        return None;
    }
    let other = passive.head.rename(&mut shift);
    let eqs = sel.args.iter().cloned().zip(other.args).collect();
    let sigma = solve(&Constraint::new(eqs))?;
    let body = active.body[1..].iter().map(|a| a.apply(&sigma)).collect();
    Some(Form::canonical(active.head.apply(&sigma), body))
}

/// Canonical text of a query answer, comparable with the heads of the
/// chart's final items.
pub fn answer_key(q: &Query, answer: &SolvedForm) -> String {
    let head = TermAtom {
        pred: PredKey {
            name: QUERY_PRED.into(),
            arity: q.vars().len(),
        },
        args: q.vars().iter().map(|v| answer.apply_var(v)).collect(),
    };
    Form::canonical(head, Vec::new()).head.to_string()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Edge {
    Predict(ClauseId),
    Complete(usize, usize),
}

#[derive(Clone, Debug)]
pub struct Item {
    pub form: Form,
    pub level: u32,
    /// Clauses used in the partial proof.
    pub size: u32,
    /// Clause of the proof node this item builds; `None` on the query level.
    pub clause: Option<ClauseId>,
    origin: usize,
    edges: Vec<Edge>,
}

#[derive(Clone, Debug)]
pub struct Chart {
    pub query: Arc<Query>,
    pub depth: u32,
    items: Vec<Item>,
    finals: Vec<usize>,
}

struct Builder<'a> {
    program: &'a Program,
    depth: u32,
    items: Vec<Item>,
    agenda: VecDeque<usize>,
    predicted: HashMap<(Form, ClauseId, u32), usize>,
    derived: HashMap<(Form, usize, u32), usize>,
    waiters: HashMap<usize, Vec<usize>>,
    by_origin: HashMap<usize, Vec<usize>>,
    finals: Vec<usize>,
}

impl Builder<'_> {
    fn run(&mut self) {
        while let Some(i) = self.agenda.pop_front() {
            if self.items[i].form.is_passive() {
                self.passive(i);
            } else {
                self.active(i);
            }
        }
    }

    fn active(&mut self, i: usize) {
        let level = self.items[i].level + 1;
        // a predicted item alone contributes one clause below level - 1 ancestors
        if level > self.depth {
            return;
        }
        let pred = self.items[i].form.body[0].pred.clone();
        for clause in self.program.clauses_for(&pred) {
            let Some(form) = predict(&self.items[i].form, clause) else {
                continue;
            };
            let key = (form, clause.id, level);
            let p = match self.predicted.get(&key) {
                Some(&p) => p,
                None => {
                    let p = self.items.len();
                    self.items.push(Item {
                        form: key.0.clone(),
                        level,
                        size: 1,
                        clause: Some(clause.id),
                        origin: p,
                        edges: vec![Edge::Predict(clause.id)],
                    });
                    self.predicted.insert(key, p);
                    self.agenda.push_back(p);
                    p
                }
            };
            self.waiters.entry(p).or_default().push(i);
            let done = self.by_origin.get(&p).cloned().unwrap_or_default();
            for j in done {
                self.combine(i, j);
            }
        }
    }

    fn passive(&mut self, j: usize) {
        if self.items[j].level == 0 {
            self.finals.push(j);
            return;
        }
        let o = self.items[j].origin;
        self.by_origin.entry(o).or_default().push(j);
        let waiting = self.waiters.get(&o).cloned().unwrap_or_default();
        for w in waiting {
            self.combine(w, j);
        }
    }

    fn combine(&mut self, w: usize, j: usize) {
        let (a, b) = (&self.items[w], &self.items[j]);
        let size = a.size + b.size;
        if a.level.saturating_sub(1) + size > self.depth {
            return;
        }
        let Some(form) = complete(&a.form, &b.form) else {
            return;
        };
        let (level, origin, clause) = (a.level, a.origin, a.clause);
        let key = (form, origin, size);
        let k = match self.derived.get(&key) {
            Some(&k) => k,
            None => {
                let k = self.items.len();
                self.items.push(Item {
                    form: key.0.clone(),
                    level,
                    size,
                    clause,
                    origin,
                    edges: Vec::new(),
                });
                self.derived.insert(key, k);
                self.agenda.push_back(k);
                k
            }
        };
        self.items[k].edges.push(Edge::Complete(w, j));
    }
}

impl Chart {
    pub fn build(program: &Program, q: &Arc<Query>, depth: u32) -> Chart {
        let mut b = Builder {
            program,
            depth,
            items: Vec::new(),
            agenda: VecDeque::new(),
            predicted: HashMap::new(),
            derived: HashMap::new(),
            waiters: HashMap::new(),
            by_origin: HashMap::new(),
            finals: Vec::new(),
        };
        if let Some(form) = Form::for_query(q) {
            b.items.push(Item {
                form,
                level: 0,
                size: 0,
                clause: None,
                origin: 0,
                edges: Vec::new(),
            });
            b.agenda.push_back(0);
            b.run();
        }
        Chart {
            query: q.clone(),
            depth,
            items: b.items,
            finals: b.finals,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    /// Passive query-level items, one per (answer, proof size).
    pub fn finals(&self) -> impl Iterator<Item = &Item> {
        self.finals.iter().map(|&i| &self.items[i])
    }

    /// Distinct answers, as `answer_key` text.
    pub fn answers(&self) -> BTreeSet<String> {
        self.finals().map(|it| it.form.head.to_string()).collect()
    }

    fn best(&self, program: &Program, score: &Scorer<'_>) -> Result<Best> {
        let mut order: Vec<usize> = (0..self.items.len()).collect();
        order.sort_by_key(|&i| (Reverse(self.items[i].level), self.items[i].size, i));
        let mut states: Vec<Vec<State>> = vec![Vec::new(); self.items.len()];
        for &i in &order {
            let item = &self.items[i];
            let mut acc = States::default();
            if i == 0 {
                acc.offer(State {
                    sig: Sig::Cut,
                    score: 0.0,
                    key: Vec::new(),
                    back: Back::Start,
                });
            }
            for edge in &item.edges {
                match *edge {
                    Edge::Predict(c) => acc.offer(self.finish(
                        item,
                        score,
                        State {
                            sig: Sig::Node(c, Vec::new()),
                            score: score.clause(c),
                            key: vec![c],
                            back: Back::Predict,
                        },
                    )),
                    Edge::Complete(w, j) => {
                        for (a, sa) in states[w].iter().enumerate() {
                            for (b, sb) in states[j].iter().enumerate() {
                                let sig = match &sa.sig {
                                    Sig::Node(c, ch) if item.level > 0 => {
                                        let mut ch = ch.clone();
                                        ch.push(sb.sig.clone());
                                        Sig::Node(*c, ch)
                                    }
                                    _ => Sig::Cut,
                                };
                                let mut key = sa.key.clone();
                                key.extend_from_slice(&sb.key);
                                let st = State {
                                    sig,
                                    score: sa.score + sb.score,
                                    key,
                                    back: Back::Complete((w, a), (j, b)),
                                };
                                acc.offer(self.finish(item, score, st));
                            }
                        }
                    }
                }
            }
            states[i] = acc.list;
        }
        let mut best: Option<(usize, usize)> = None;
        for &f in &self.finals {
            for (s, st) in states[f].iter().enumerate() {
                if best.is_none_or(|(bf, bs)| better(st, &states[bf][bs])) {
                    best = Some((f, s));
                }
            }
        }
        let (f, s) = best.ok_or_else(|| Error::NoProof(self.query.source.clone()))?;
        let mut steps = Vec::new();
        self.trace(&states, f, s, &mut steps);
        debug_assert_eq!(steps, states[f][s].key);
        let tree = proof_from_steps(program, &self.query, steps)
            .ok_or_else(|| Error::Invalid("chart proof does not replay".into()))?;
        Ok(Best {
            tree,
            log_weight: states[f][s].score,
        })
    }

    /// Adds the contributions that become known when an item turns passive.
    fn finish(&self, item: &Item, score: &Scorer<'_>, mut st: State) -> State {
        if !item.form.is_passive() {
            return st;
        }
        if item.level == 0 {
            st.score += score.at_answer(&self.query, &item.form);
            return st;
        }
        st.score += score.at_node(&st.sig);
        st.sig = truncate(&st.sig, score.height.saturating_sub(1));
        st
    }

    fn trace(&self, states: &[Vec<State>], i: usize, s: usize, out: &mut Vec<ClauseId>) {
        match states[i][s].back {
            Back::Start => {}
            Back::Predict => out.extend(self.items[i].clause),
            Back::Complete((w, a), (j, b)) => {
                self.trace(states, w, a, out);
                self.trace(states, j, b, out);
            }
        }
    }
}

/// Top levels of a partial clause tree; `Cut` marks the truncation.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum Sig {
    Cut,
    Node(ClauseId, Vec<Sig>),
}

fn truncate(s: &Sig, depth: usize) -> Sig {
    match s {
        Sig::Node(c, ch) if depth > 0 => Sig::Node(*c, ch.iter().map(|x| truncate(x, depth - 1)).collect()),
        _ => Sig::Cut,
    }
}

fn sig_matches(p: &Pattern, s: &Sig) -> bool {
    let Sig::Node(c, ch) = s else {
        return false;
    };
    if *c != p.clause {
        return false;
    }
    p.children.is_empty()
        || (p.children.len() == ch.len()
            && p.children.iter().zip(ch).all(|(pc, sc)| pc.as_ref().is_none_or(|pc| sig_matches(pc, sc))))
}

#[derive(Clone, Copy, Debug)]
enum Back {
    Start,
    Predict,
    Complete((usize, usize), (usize, usize)),
}

#[derive(Clone, Debug)]
struct State {
    sig: Sig,
    score: f64,
    key: Vec<ClauseId>,
    back: Back,
}

/// Higher score; near-ties go to the lexicographically smaller clause sequence.
fn better(new: &State, old: &State) -> bool {
    let d = new.score - old.score;
    let eps = 1e-12 * old.score.abs().max(1.0);
    if d.is_nan() || d.abs() <= eps {
        new.key < old.key
    } else {
        d > 0.0
    }
}

#[derive(Default)]
struct States {
    list: Vec<State>,
    index: HashMap<Sig, usize>,
}

impl States {
    fn offer(&mut self, st: State) {
        match self.index.get(&st.sig) {
            Some(&k) => {
                if better(&st, &self.list[k]) {
                    self.list[k] = st;
                }
            }
            None => {
                self.index.insert(st.sig.clone(), self.list.len());
                self.list.push(st);
            }
        }
    }
}

struct Scorer<'a> {
    clause_w: Box<dyn Fn(ClauseId) -> f64 + 'a>,
    patterns: Vec<(&'a Pattern, f64)>,
    binds: Vec<(&'a [usize], &'a Term, f64)>,
    constant: f64,
    height: usize,
}

impl Scorer<'_> {
    fn clause(&self, c: ClauseId) -> f64 {
        (self.clause_w)(c)
    }

    fn at_node(&self, s: &Sig) -> f64 {
        self.patterns.iter().filter(|(p, _)| sig_matches(p, s)).map(|(_, l)| l).sum()
    }

    fn at_answer(&self, q: &Query, form: &Form) -> f64 {
        let mut total = self.constant;
        for &(path, value, l) in &self.binds {
            if bound_in(q, form, path) == Some(value) {
                total += l;
            }
        }
        total
    }
}

fn bound_in<'f>(q: &Query, form: &'f Form, path: &[usize]) -> Option<&'f Term> {
    let (&arg, rest) = path.split_first()?;
    let v = q.root_atom()?.args.get(arg.checked_sub(1)?)?;
    let pos = q.vars().iter().position(|x| x == v)?;
    form.head.args.get(pos)?.at_path(rest)
}

#[derive(Clone, Debug)]
pub struct Best {
    pub tree: ProofTree,
    pub log_weight: f64,
}

/// Highest-weight proof where a proof scores the sum of its clause weights
/// (missing clauses weigh 0).
pub fn best_proof_clause_weights(
    program: &Program,
    q: &Arc<Query>,
    weights: &HashMap<ClauseId, f64>,
    depth: u32,
) -> Result<Best> {
    let scorer = Scorer {
        clause_w: Box::new(|c| weights.get(&c).copied().unwrap_or(0.0)),
        patterns: Vec::new(),
        binds: Vec::new(),
        constant: 0.0,
        height: 0,
    };
    Chart::build(program, q, depth).best(program, &scorer)
}

/// Rejects models whose tree patterns share a clause id or repeat one.
pub fn check_disjoint(program: &Program, model: &Model) -> Result<()> {
    let pats: Vec<&Pattern> = model
        .properties
        .iter()
        .filter_map(|p| match p {
            Property::Tree(p) => Some(p),
            _ => None,
        })
        .collect();
    let sets: Vec<BTreeSet<ClauseId>> = pats.iter().map(|p| p.clause_ids().into_iter().collect()).collect();
    for (i, p) in pats.iter().enumerate() {
        if sets[i].len() < p.size() {
            let s = p.serialize(program);
            return Err(Error::OverlappingProperties(s.clone(), s));
        }
        for j in 0..i {
            if !sets[i].is_disjoint(&sets[j]) {
                return Err(Error::OverlappingProperties(pats[j].serialize(program), p.serialize(program)));
            }
        }
    }
    Ok(())
}

/// Highest-weight proof under a log-linear model, `log p0 + lambda . nu`.
pub fn best_proof_subtree_props(program: &Program, q: &Arc<Query>, model: &Model, depth: u32) -> Result<Best> {
    check_disjoint(program, model)?;
    let mut scorer = Scorer {
        clause_w: Box::new(|c| model.p0.get(c).ln()),
        patterns: Vec::new(),
        binds: Vec::new(),
        constant: 0.0,
        height: 0,
    };
    for (p, &l) in model.properties.iter().zip(&model.lambda) {
        match p {
            Property::Root => scorer.constant += l,
            Property::Bind { path, value } => scorer.binds.push((path, value, l)),
            Property::Tree(pat) => {
                scorer.height = scorer.height.max(pat.height());
                scorer.patterns.push((pat, l));
            }
        }
    }
    Chart::build(program, q, depth).best(program, &scorer)
}

/// Argmax over the enumerated proofs; ties go to the first enumerated.
pub fn best_by_enumeration(program: &Program, q: &Arc<Query>, model: &Model, depth: u32, limit: usize) -> Result<Best> {
    let e = enumerate_limited(program, q, depth, limit)?;
    let mut best: Option<Best> = None;
    for t in e.trees {
        let w = model.log_weight(&t);
        let replace = match &best {
            None => true,
            Some(b) => {
                let eps = 1e-12 * b.log_weight.abs().max(1.0);
                w - b.log_weight > eps
            }
        };
        if replace {
            best = Some(Best { tree: t, log_weight: w });
        }
    }
    best.ok_or_else(|| Error::NoProof(q.source.clone()))
}

/// Partial clause tree with open slots (`None`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fragment {
    pub clause: ClauseId,
    pub children: Vec<Option<Fragment>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombineMode {
    /// Union of two fragments with the same root.
    Merge,
    /// Fills the leftmost open slot of the first with the second.
    Substitute,
    /// Stacks the first over the second through its only open slot.
    Vertical,
}

impl Fragment {
    /// A clause node with one open slot per body atom.
    pub fn open(clause: ClauseId, arity: usize) -> Fragment {
        Fragment {
            clause,
            children: vec![None; arity],
        }
    }

    pub fn open_slots(&self) -> usize {
        self.children
            .iter()
            .map(|c| c.as_ref().map_or(1, Fragment::open_slots))
            .sum()
    }

    fn fill_leftmost(&mut self, t: Fragment) -> std::result::Result<(), Fragment> {
        let mut t = t;
        for slot in &mut self.children {
            match slot {
                None => {
                    *slot = Some(t);
                    return Ok(());
                }
                Some(child) => match child.fill_leftmost(t) {
                    Ok(()) => return Ok(()),
                    Err(back) => t = back,
                },
            }
        }
        Err(t)
    }

    fn merge(&self, other: &Fragment) -> Option<Fragment> {
        if self.clause != other.clause || self.children.len() != other.children.len() {
            return None;
        }
        let children = self
            .children
            .iter()
            .zip(&other.children)
            .map(|(a, b)| match (a, b) {
                (None, x) | (x, None) => Some(x.clone()),
                (Some(a), Some(b)) => a.merge(b).map(Some),
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Fragment {
            clause: self.clause,
            children,
        })
    }
}

pub fn combine_trees(mode: CombineMode, t1: &Fragment, t2: &Fragment) -> Result<Fragment> {
    let mismatch = |why: &str| Error::ShapeMismatch(format!("{why}: {t1:?} and {t2:?}"));
    match mode {
        CombineMode::Merge => t1.merge(t2).ok_or_else(|| mismatch("roots differ")),
        CombineMode::Substitute | CombineMode::Vertical => {
            if mode == CombineMode::Vertical && t1.open_slots() != 1 {
                return Err(mismatch("upper fragment needs exactly one open slot"));
            }
            let mut out = t1.clone();
            out.fill_leftmost(t2.clone()).map_err(|_| mismatch("no open slot"))?;
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clp::enumerate_proofs;
    use crate::scf::ChoiceParams;

    const FIG1: &str = "s(Z) :- p(Z), q(Z).\np(Z) :- Z = a.\np(Z) :- Z = b.\nq(Z) :- Z = a.\nq(Z) :- Z = b.\n";

    fn setup(prog: &str, query: &str) -> (Program, Arc<Query>) {
        (Program::parse(prog).unwrap(), Arc::new(Query::parse(query).unwrap()))
    }

    fn id(s: &str) -> ClauseId {
        let (c, a) = s.split_at(1);
        ClauseId {
            choice: c.parse().unwrap(),
            alt: a.parse().unwrap(),
        }
    }

    #[test]
    fn predict_and_complete_forms() {
        let (p, q) = setup(FIG1, "s(Z)");
        let start = Form::for_query(&q).unwrap();
        assert_eq!(start.to_string(), "$query(_0) <- s(_0).");
        let s = predict(&start, p.clause(id("11"))).unwrap();
        assert_eq!(s.to_string(), "s(_0) <- p(_0), q(_0).");
        let pa = predict(&s, p.clause(id("21"))).unwrap();
        assert_eq!(pa.to_string(), "p(a).");
        let s2 = complete(&s, &pa).unwrap();
        assert_eq!(s2.to_string(), "s(a) <- q(a).");
        assert!(predict(&s2, p.clause(id("32"))).is_none());
        let open_q = Form::canonical(s.head.clone(), vec![s.body[1].clone()]);
        let qb = predict(&open_q, p.clause(id("32"))).unwrap();
        assert_eq!(qb.to_string(), "q(b).");
        assert!(complete(&s2, &qb).is_none());
        assert!(predict(&pa, p.clause(id("21"))).is_none());
    }

    #[test]
    fn chart_answers_match_enumeration() {
        let (p, q) = setup(FIG1, "s(Z)");
        let chart = Chart::build(&p, &q, 3);
        let e = enumerate_proofs(&p, &q, 3);
        let want: BTreeSet<String> = e.trees.iter().map(|t| answer_key(&q, t.answer())).collect();
        assert_eq!(chart.answers(), want);
        assert_eq!(want.len(), 2);
        assert!(Chart::build(&p, &q, 2).answers().is_empty());
    }

    #[test]
    fn clause_weights_pick_heaviest() {
        let (p, q) = setup(FIG1, "s(Z)");
        let w: HashMap<ClauseId, f64> = [("11", 0.0), ("21", -1.0), ("22", -0.2), ("31", -0.1), ("32", -0.5)]
            .into_iter()
            .map(|(k, v)| (id(k), v))
            .collect();
        let b = best_proof_clause_weights(&p, &q, &w, 3).unwrap();
        assert_eq!(b.tree.bracketed(), "(11 (22) (32))");
        assert!((b.log_weight + 0.7).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_smaller_clause_sequence() {
        let (p, q) = setup(FIG1, "s(Z)");
        let b = best_proof_clause_weights(&p, &q, &HashMap::new(), 3).unwrap();
        assert_eq!(b.tree.bracketed(), "(11 (21) (31))");
    }

    #[test]
    fn no_proof_is_an_error() {
        let (p, q) = setup(FIG1, "s(c)");
        assert!(matches!(
            best_proof_clause_weights(&p, &q, &HashMap::new(), 5),
            Err(Error::NoProof(_))
        ));
    }

    #[test]
    fn subtree_props_agree_with_enumeration() {
        let (p, q) = setup(FIG1, "s(Z)");
        let mut m = Model::base(ChoiceParams::uniform(&p));
        m.push(Property::parse("tree (s/1.1 (p/1.2) _)", &p).unwrap(), 1.5);
        m.push(Property::parse("bind 1 a", &p).unwrap(), 0.4);
        let b = best_proof_subtree_props(&p, &q, &m, 3).unwrap();
        let e = best_by_enumeration(&p, &q, &m, 3, 1000).unwrap();
        assert_eq!(b.tree, e.tree);
        assert!((b.log_weight - m.log_weight(&b.tree)).abs() < 1e-12);
        assert_eq!(b.tree.bracketed(), "(11 (22) (32))");
    }

    #[test]
    fn overlapping_patterns_are_refused() {
        let (p, q) = setup(FIG1, "s(Z)");
        let mut m = Model::base(ChoiceParams::uniform(&p));
        m.push(Property::parse("tree (s/1.1 (p/1.2) _)", &p).unwrap(), 1.0);
        m.push(Property::parse("tree (p/1.2)", &p).unwrap(), 1.0);
        assert!(matches!(
            best_proof_subtree_props(&p, &q, &m, 3),
            Err(Error::OverlappingProperties(_, _))
        ));
    }

    #[test]
    fn recursion_respects_depth() {
        let (p, q) = setup("n(X) :- X = z.\nn(X) :- X = s(Y), n(Y).\n", "n(X)");
        for d in 1..6 {
            let chart = Chart::build(&p, &q, d);
            let e = enumerate_proofs(&p, &q, d);
            let want: BTreeSet<String> = e.trees.iter().map(|t| answer_key(&q, t.answer())).collect();
            assert_eq!(chart.answers(), want, "depth {d}");
            assert_eq!(want.len(), d as usize);
        }
    }

    #[test]
    fn combine_modes() {
        let (a, b, c) = (id("11"), id("21"), id("31"));
        let top = Fragment::open(a, 2);
        let left = combine_trees(CombineMode::Substitute, &top, &Fragment::open(b, 0)).unwrap();
        let right = Fragment {
            clause: a,
            children: vec![None, Some(Fragment::open(c, 0))],
        };
        let both = combine_trees(CombineMode::Merge, &left, &right).unwrap();
        assert_eq!(both.open_slots(), 0);
        assert!(combine_trees(CombineMode::Substitute, &both, &top).is_err());
        assert!(combine_trees(CombineMode::Merge, &top, &Fragment::open(b, 2)).is_err());
        assert!(combine_trees(CombineMode::Vertical, &top, &left).is_err());
        let v = combine_trees(CombineMode::Vertical, &left, &Fragment::open(c, 0)).unwrap();
        assert_eq!(v, both);
    }
}
