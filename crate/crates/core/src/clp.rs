//! Definite clause programs, goals and generalized SLD resolution.
//!
//! Atoms are kept in normal form: every argument is a variable and no
//! variable repeats within an atom. The parser moves any other argument into
//! the clause constraint as an equation. Selection is always leftmost, so a
//! derivation is determined by its sequence of clause ids, and that sequence
//! is the preorder of the proof's clause tree.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::syntax::{is_blank, Parser, RawLiteral, SyntaxError};
use crate::term::{Constraint, SolvedForm, Term, Var};

#[derive(Clone, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct PredKey {
    pub name: String,
    pub arity: usize,
}

impl fmt::Display for PredKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.arity)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Atom {
    pub pred: PredKey,
    pub args: Vec<Var>,
}

impl Atom {
    fn rename(&self, f: &mut impl FnMut(&Var) -> Var) -> Atom {
        Atom {
            pred: self.pred.clone(),
            args: self.args.iter().map(&mut *f).collect(),
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.pred.name)?;
        if !self.args.is_empty() {
            write!(f, "(")?;
            for (i, a) in self.args.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{a}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// Choice-alternative pair. `choice` is the 1-based position of the head
/// predicate in order of first definition, `alt` the 1-based position of
/// the clause among that predicate's clauses.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct ClauseId {
    pub choice: usize,
    pub alt: usize,
}

impl fmt::Display for ClauseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.choice < 10 && self.alt < 10 {
            write!(f, "{}{}", self.choice, self.alt)
        } else {
            write!(f, "{}.{}", self.choice, self.alt)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Clause {
    pub id: ClauseId,
    pub head: Atom,
    pub body: Vec<Atom>,
    pub constraint: Constraint,
}

impl Clause {
    pub fn vars(&self) -> BTreeSet<Var> {
        let mut vs: BTreeSet<Var> = self.head.args.iter().cloned().collect();
        for a in &self.body {
            vs.extend(a.args.iter().cloned());
        }
        vs.extend(self.constraint.vars());
        vs
    }

    fn rename(&self, f: &mut impl FnMut(&Var) -> Var) -> Clause {
        Clause {
            id: self.id,
            head: self.head.rename(f),
            body: self.body.iter().map(|a| a.rename(f)).collect(),
            constraint: self.constraint.rename(f),
        }
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head)?;
        let mut first = true;
        let mut sep = |f: &mut fmt::Formatter<'_>| {
            let s = if first { " :- " } else { ", " };
            first = false;
            write!(f, "{s}")
        };
        for a in &self.body {
            sep(f)?;
            write!(f, "{a}")?;
        }
        for (l, r) in &self.constraint.equations {
            sep(f)?;
            write!(f, "{l} = {r}")?;
        }
        write!(f, ".")
    }
}

/// A variant of `c` whose variables avoid `avoid`: every variable's
/// generation is shifted by the smallest amount that clears the set.
pub fn rename_apart(c: &Clause, avoid: &BTreeSet<Var>) -> Clause {
    let vars = c.vars();
    let mut k = 0;
    while vars.iter().any(|v| avoid.contains(&Var::with_idx(v.name.clone(), v.idx + k))) {
        k += 1;
    }
    c.rename(&mut |v| Var::with_idx(v.name.clone(), v.idx + k))
}

struct Normalizer {
    fresh: usize,
}

impl Normalizer {
    fn atom(&mut self, name: String, args: Vec<Term>, eqs: &mut Vec<(Term, Term)>) -> Atom {
        let mut vars: Vec<Var> = Vec::with_capacity(args.len());
        for t in args {
            match t {
                Term::Var(v) if !vars.contains(&v) => vars.push(v),
                other => {
                    self.fresh += 1;
                    let v = Var::new(format!("${}", self.fresh));
                    eqs.push((Term::Var(v.clone()), other));
                    vars.push(v);
                }
            }
        }
        Atom {
            pred: PredKey {
                name,
                arity: vars.len(),
            },
            args: vars,
        }
    }

    fn body(&mut self, lits: Vec<RawLiteral>, eqs: &mut Vec<(Term, Term)>) -> Vec<Atom> {
        let mut atoms = Vec::new();
        let mut plain = Vec::new();
        for lit in lits {
            match lit {
                RawLiteral::Atom(name, args) => atoms.push(self.atom(name, args, eqs)),
                RawLiteral::Eq(l, r) => plain.push((l, r)),
            }
        }
        eqs.extend(plain);
        atoms
    }
}

#[derive(Clone, Debug, Default)]
pub struct Program {
    preds: Vec<PredKey>,
    clauses: Vec<Vec<Clause>>,
    index: HashMap<PredKey, usize>,
}

impl Program {
    pub fn parse(text: &str) -> std::result::Result<Program, SyntaxError> {
        let mut program = Program::default();
        for (i, line) in text.lines().enumerate() {
            if is_blank(line) {
                continue;
            }
            let raw = Parser::new(line, i + 1, 0)?.clause()?;
            let mut norm = Normalizer { fresh: 0 };
            let mut eqs = Vec::new();
            let (name, args) = raw.head;
            let head = norm.atom(name, args, &mut eqs);
            let body = norm.body(raw.body, &mut eqs);
            program.push(head, body, Constraint::new(eqs));
        }
        Ok(program)
    }

    fn push(&mut self, head: Atom, body: Vec<Atom>, constraint: Constraint) {
        let choice = match self.index.get(&head.pred) {
            Some(&c) => c,
            None => {
                self.preds.push(head.pred.clone());
                self.clauses.push(Vec::new());
                self.index.insert(head.pred.clone(), self.preds.len() - 1);
                self.preds.len() - 1
            }
        };
        let alts = &mut self.clauses[choice];
        alts.push(Clause {
            id: ClauseId {
                choice: choice + 1,
                alt: alts.len() + 1,
            },
            head,
            body,
            constraint,
        });
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    /// Number of clauses.
    pub fn len(&self) -> usize {
        self.clauses.iter().map(Vec::len).sum()
    }

    pub fn preds(&self) -> &[PredKey] {
        &self.preds
    }

    pub fn choice_of(&self, pred: &PredKey) -> Option<usize> {
        self.index.get(pred).map(|c| c + 1)
    }

    pub fn clauses_for(&self, pred: &PredKey) -> &[Clause] {
        match self.index.get(pred) {
            Some(&c) => &self.clauses[c],
            None => &[],
        }
    }

    /// Alternatives of a 1-based choice.
    pub fn alternatives(&self, choice: usize) -> &[Clause] {
        &self.clauses[choice - 1]
    }

    pub fn clause(&self, id: ClauseId) -> &Clause {
        &self.clauses[id.choice - 1][id.alt - 1]
    }

    pub fn get(&self, id: ClauseId) -> Option<&Clause> {
        self.clauses.get(id.choice.checked_sub(1)?)?.get(id.alt.checked_sub(1)?)
    }

    /// All clauses in id order.
    pub fn clauses(&self) -> impl Iterator<Item = &Clause> {
        self.clauses.iter().flatten()
    }

    /// Long clause label `pred/arity.alt`, used in model files.
    pub fn label(&self, id: ClauseId) -> String {
        format!("{}.{}", self.preds[id.choice - 1], id.alt)
    }

    pub fn parse_label(&self, label: &str) -> Option<ClauseId> {
        let (pred, alt) = label.rsplit_once('.')?;
        let (name, arity) = pred.rsplit_once('/')?;
        let key = PredKey {
            name: name.to_string(),
            arity: arity.parse().ok()?,
        };
        let choice = self.choice_of(&key)?;
        let alt: usize = alt.parse().ok()?;
        (alt >= 1 && alt <= self.alternatives(choice).len()).then_some(ClauseId { choice, alt })
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in self.clauses() {
            writeln!(f, "{c}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Query {
    pub atoms: Vec<Atom>,
    pub constraint: Constraint,
    /// The query as written, without multiplicity or final period.
    pub source: String,
    vars: Vec<Var>,
    key: String,
}

impl Query {
    pub fn parse(text: &str) -> std::result::Result<Query, SyntaxError> {
        Query::parse_at(text, 1, 0)
    }

    fn parse_at(text: &str, line: usize, col: usize) -> std::result::Result<Query, SyntaxError> {
        let lits = Parser::new(text, line, col)?.query()?;
        let mut norm = Normalizer { fresh: 0 };
        let mut eqs = Vec::new();
        let atoms = norm.body(lits, &mut eqs);
        let constraint = Constraint::new(eqs);
        let mut vars = Vec::new();
        for a in &atoms {
            for v in &a.args {
                if !vars.contains(v) {
                    vars.push(v.clone());
                }
            }
        }
        for (l, r) in &constraint.equations {
            l.vars_in_order(&mut vars);
            r.vars_in_order(&mut vars);
        }
        let source = text.split('%').next().unwrap_or("").trim();
        let source = source.strip_suffix('.').unwrap_or(source).trim_end().to_string();
        let mut q = Query {
            atoms,
            constraint,
            source,
            vars,
            key: String::new(),
        };
        q.key = q.canonical();
        Ok(q)
    }

    fn canonical(&self) -> String {
        let mut parts: Vec<String> = self.atoms.iter().map(Atom::to_string).collect();
        parts.extend(self.constraint.equations.iter().map(|(l, r)| format!("{l} = {r}")));
        parts.join(", ")
    }

    /// Every variable of the query, in order of first occurrence.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Variables the user wrote (normalization variables excluded).
    pub fn user_vars(&self) -> impl Iterator<Item = &Var> {
        self.vars.iter().filter(|v| !v.name.starts_with('$'))
    }

    /// The first atom, which answer-binding properties refer to.
    pub fn root_atom(&self) -> Option<&Atom> {
        self.atoms.first()
    }
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.source)
    }
}

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub query: Arc<Query>,
    pub count: usize,
    /// Line of the first occurrence.
    pub line: usize,
}

/// A multiset of queries; repeated queries are merged into one entry.
#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub entries: Vec<CorpusEntry>,
}

fn split_count(line: &str) -> (usize, usize) {
    let digits = line.len() - line.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return (1, 0);
    }
    let rest = &line[digits..];
    let ws = rest.len() - rest.trim_start().len();
    let after = &rest[ws..];
    let marker = if after.starts_with('×') {
        '×'.len_utf8()
    } else if after.starts_with('*') || (after.starts_with('x') && after[1..].starts_with(char::is_whitespace)) {
        1
    } else {
        return (1, 0);
    };
    (line[..digits].parse().unwrap_or(usize::MAX), digits + ws + marker)
}

impl Corpus {
    pub fn parse(text: &str) -> std::result::Result<Corpus, SyntaxError> {
        let mut corpus = Corpus::default();
        for (i, line) in text.lines().enumerate() {
            if is_blank(line) {
                continue;
            }
            let lead = line.len() - line.trim_start().len();
            let (count, skip) = split_count(&line[lead..]);
            if count == 0 {
                return Err(SyntaxError {
                    line: i + 1,
                    col: lead + 1,
                    message: "multiplicity must be positive".into(),
                });
            }
            let off = lead + skip;
            let q = Query::parse_at(&line[off..], i + 1, line[..off].chars().count())?;
            corpus.add(q, count, i + 1);
        }
        Ok(corpus)
    }

    pub fn add(&mut self, q: Query, count: usize, line: usize) {
        if let Some(e) = self.entries.iter_mut().find(|e| e.query.key == q.key) {
            e.count += count;
        } else {
            self.entries.push(CorpusEntry {
                query: Arc::new(q),
                count,
                line,
            });
        }
    }

    pub fn from_queries<'a>(queries: impl IntoIterator<Item = &'a str>) -> std::result::Result<Corpus, SyntaxError> {
        let mut corpus = Corpus::default();
        for (i, q) in queries.into_iter().enumerate() {
            corpus.add(Query::parse(q)?, 1, i + 1);
        }
        Ok(corpus)
    }

    /// Number of distinct queries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Corpus size counting multiplicities.
    pub fn total(&self) -> usize {
        self.entries.iter().map(|e| e.count).sum()
    }
}

/// A resolvent: remaining atoms and the accumulated solved constraint,
/// restricted to the variables still relevant.
#[derive(Clone, Debug, PartialEq)]
pub struct Goal {
    pub atoms: Vec<Atom>,
    pub sigma: SolvedForm,
    pub depth: u32,
    keep: Arc<[Var]>,
}

impl Goal {
    /// `None` when the query's own constraint is unsatisfiable.
    pub fn initial(q: &Query) -> Option<Goal> {
        let sigma = crate::term::solve(&q.constraint)?;
        let keep: Arc<[Var]> = q.vars.clone().into();
        Some(Goal {
            atoms: q.atoms.clone(),
            sigma: sigma.restrict(keep.iter()),
            depth: 0,
            keep,
        })
    }

    pub fn is_success(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// One resolution step on the leftmost atom followed by constraint solving.
/// Head variables are identified with the selected atom's arguments and the
/// clause's other variables move to generation `depth + 1`.
pub fn reduce(g: &Goal, c: &Clause) -> Option<Goal> {
    let sel = g.atoms.first()?;
    if sel.pred != c.head.pred {
        return None;
    }
    let generation = g.depth + 1;
    let mut map = |v: &Var| match c.head.args.iter().position(|h| h == v) {
        Some(i) => sel.args[i].clone(),
        None => Var::with_idx(v.name.clone(), generation),
    };
    let constraint = c.constraint.rename(&mut map);
    let sigma = g.sigma.conjoin(&constraint)?;
    let mut atoms: Vec<Atom> = c.body.iter().map(|a| a.rename(&mut map)).collect();
    atoms.extend(g.atoms[1..].iter().cloned());
    let mut live: BTreeSet<&Var> = g.keep.iter().collect();
    for a in &atoms {
        live.extend(a.args.iter());
    }
    let sigma = sigma.restrict(live);
    Some(Goal {
        atoms,
        sigma,
        depth: generation,
        keep: g.keep.clone(),
    })
}

/// Clause-labelled AND-tree of a proof.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ClauseNode {
    pub id: ClauseId,
    pub children: Vec<ClauseNode>,
}

impl ClauseNode {
    pub fn size(&self) -> usize {
        1 + self.children.iter().map(ClauseNode::size).sum::<usize>()
    }

    pub fn height(&self) -> usize {
        1 + self.children.iter().map(ClauseNode::height).max().unwrap_or(0)
    }

    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a ClauseNode)) {
        f(self);
        for c in &self.children {
            c.walk(f);
        }
    }
}

impl fmt::Display for ClauseNode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.id)?;
        for c in &self.children {
            write!(f, " {c}")?;
        }
        write!(f, ")")
    }
}

fn build_node(program: &Program, steps: &mut std::slice::Iter<'_, ClauseId>) -> Option<ClauseNode> {
    let id = *steps.next()?;
    let arity = program.get(id)?.body.len();
    let children = (0..arity).map(|_| build_node(program, steps)).collect::<Option<Vec<_>>>()?;
    Some(ClauseNode { id, children })
}

/// Rebuilds the clause forest (one tree per query atom) from a preorder
/// clause sequence. `None` if the sequence does not have the right shape.
pub fn clause_forest(program: &Program, q: &Query, steps: &[ClauseId]) -> Option<Vec<ClauseNode>> {
    let mut it = steps.iter();
    let forest = (0..q.atoms.len()).map(|_| build_node(program, &mut it)).collect::<Option<Vec<_>>>()?;
    it.next().is_none().then_some(forest)
}

#[derive(Clone, Debug)]
pub struct ProofTree {
    pub query: Arc<Query>,
    /// Clause ids in resolution order.
    pub steps: Vec<ClauseId>,
    pub forest: Vec<ClauseNode>,
    answer: SolvedForm,
}

impl PartialEq for ProofTree {
    fn eq(&self, other: &Self) -> bool {
        self.steps == other.steps && (Arc::ptr_eq(&self.query, &other.query) || self.query.key == other.query.key)
    }
}

impl Eq for ProofTree {}

impl ProofTree {
    /// Answer constraint restricted to the query variables.
    pub fn answer(&self) -> &SolvedForm {
        &self.answer
    }

    /// Answer with normalization variables hidden.
    pub fn user_answer(&self) -> SolvedForm {
        self.answer.restrict(self.query.user_vars())
    }

    /// Prefix clause-id form such as `(11 (21) (31))`; one group per query atom.
    pub fn bracketed(&self) -> String {
        self.forest.iter().map(ClauseNode::to_string).collect::<Vec<_>>().join(" ")
    }

    /// Number of uses of each clause id.
    pub fn clause_counts(&self) -> HashMap<ClauseId, u32> {
        let mut m = HashMap::new();
        for id in &self.steps {
            *m.entry(*id).or_insert(0) += 1;
        }
        m
    }

    /// FNV-1a over the query and the clause sequence.
    pub fn hash64(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(self.query.key.as_bytes());
        for id in &self.steps {
            eat(b"|");
            eat(id.to_string().as_bytes());
        }
        h
    }

    /// Builds a tree from a complete derivation; `None` if `goal` is not a success.
    pub fn from_derivation(program: &Program, query: Arc<Query>, steps: Vec<ClauseId>, goal: &Goal) -> Option<ProofTree> {
        if !goal.is_success() {
            return None;
        }
        let forest = clause_forest(program, &query, &steps)?;
        let answer = goal.sigma.restrict(query.vars.iter());
        Some(ProofTree {
            query,
            steps,
            forest,
            answer,
        })
    }
}

/// Rebuilds a proof tree from its clause sequence.
pub fn proof_from_steps(program: &Program, q: &Arc<Query>, steps: Vec<ClauseId>) -> Option<ProofTree> {
    let mut g = Goal::initial(q)?;
    for id in &steps {
        g = reduce(&g, program.get(*id)?)?;
    }
    ProofTree::from_derivation(program, q.clone(), steps, &g)
}

/// Re-runs a clause sequence from the query; returns the answer on success.
pub fn replay(program: &Program, q: &Query, steps: &[ClauseId]) -> Option<SolvedForm> {
    let mut g = Goal::initial(q)?;
    for id in steps {
        g = reduce(&g, program.get(*id)?)?;
    }
    g.is_success().then(|| g.sigma.restrict(q.vars.iter()))
}

#[derive(Clone, Debug, Default)]
pub struct Enumeration {
    pub trees: Vec<ProofTree>,
    /// Open branches cut off by the depth bound.
    pub censored: usize,
}

struct Search<'a> {
    program: &'a Program,
    query: &'a Arc<Query>,
    depth: u32,
    limit: usize,
    first_only: bool,
    steps: Vec<ClauseId>,
    out: Enumeration,
}

impl Search<'_> {
    fn run(&mut self, g: &Goal) -> Result<()> {
        if g.is_success() {
            if self.out.trees.len() >= self.limit {
                return Err(Error::SpaceTooLarge(self.limit));
            }
            let t = ProofTree::from_derivation(self.program, self.query.clone(), self.steps.clone(), g)
                .expect("successful derivation has a well-formed clause sequence");
            self.out.trees.push(t);
            return Ok(());
        }
        if self.first_only && !self.out.trees.is_empty() {
            return Ok(());
        }
        if g.depth >= self.depth {
            self.out.censored += 1;
            return Ok(());
        }
        for c in self.program.clauses_for(&g.atoms[0].pred) {
            if self.first_only && !self.out.trees.is_empty() {
                break;
            }
            if let Some(next) = reduce(g, c) {
                self.steps.push(c.id);
                self.run(&next)?;
                self.steps.pop();
            }
        }
        Ok(())
    }
}

/// All proofs of `q` using at most `depth` resolution steps, in
/// clause-id lexicographic order of their step sequences.
pub fn enumerate_proofs(program: &Program, q: &Arc<Query>, depth: u32) -> Enumeration {
    enumerate_limited(program, q, depth, usize::MAX).expect("unbounded enumeration cannot overflow its limit")
}

/// As [`enumerate_proofs`], failing once more than `limit` proofs are found.
pub fn enumerate_limited(program: &Program, q: &Arc<Query>, depth: u32, limit: usize) -> Result<Enumeration> {
    let mut s = Search {
        program,
        query: q,
        depth,
        limit,
        first_only: false,
        steps: Vec::new(),
        out: Enumeration::default(),
    };
    if let Some(g) = Goal::initial(q) {
        s.run(&g)?;
    }
    Ok(s.out)
}

/// The first proof found by leftmost depth-first search.
pub fn first_proof(program: &Program, q: &Arc<Query>, depth: u32) -> Option<ProofTree> {
    let mut s = Search {
        program,
        query: q,
        depth,
        limit: 1,
        first_only: true,
        steps: Vec::new(),
        out: Enumeration::default(),
    };
    s.run(&Goal::initial(q)?).ok()?;
    s.out.trees.pop()
}
