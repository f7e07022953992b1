//! Log-linear distributions over proof trees,
//! `p(x) = exp(lambda . nu(x)) p0(x) / Z`, with properties that count
//! clause-tree patterns or test the answer binding of a query argument.
//!
//! Exact computations run over a [`Space`]: the disjoint union of the
//! depth-bounded proof sets of the corpus queries.

use std::fmt;
use std::fmt::Write as _;
use std::ops::Range;
use std::sync::Arc;

use crate::clp::{enumerate_limited, ClauseId, ClauseNode, Corpus, ProofTree, Program, Query};
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, normalize_log};
use crate::scf::ChoiceParams;
use crate::syntax::parse_term;
use crate::term::Term;

/// Connected clause-tree fragment. A node either has no children (its
/// subtree is unconstrained) or one slot per body atom of its clause, where
/// `None` leaves that subtree unconstrained.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pattern {
    pub clause: ClauseId,
    pub children: Vec<Option<Pattern>>,
}

impl Pattern {
    pub fn leaf(clause: ClauseId) -> Pattern {
        Pattern {
            clause,
            children: Vec::new(),
        }
    }

    pub fn matches(&self, node: &ClauseNode) -> bool {
        if node.id != self.clause {
            return false;
        }
        if self.children.is_empty() {
            return true;
        }
        self.children.len() == node.children.len()
            && self
                .children
                .iter()
                .zip(&node.children)
                .all(|(p, n)| p.as_ref().is_none_or(|p| p.matches(n)))
    }

    /// Number of nodes of the forest where the pattern matches.
    pub fn count_in(&self, forest: &[ClauseNode]) -> u32 {
        let mut n = 0;
        for root in forest {
            root.walk(&mut |node| n += u32::from(self.matches(node)));
        }
        n
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().flatten().map(Pattern::size).sum::<usize>()
    }

    pub fn height(&self) -> usize {
        1 + self.children.iter().flatten().map(Pattern::height).max().unwrap_or(0)
    }

    /// Clause ids of all nodes, preorder.
    pub fn clause_ids(&self) -> Vec<ClauseId> {
        let mut out = vec![self.clause];
        for c in self.children.iter().flatten() {
            out.extend(c.clause_ids());
        }
        out
    }

    fn write(&self, program: &Program, out: &mut String) {
        out.push('(');
        out.push_str(&program.label(self.clause));
        for c in &self.children {
            match c {
                Some(p) => {
                    out.push(' ');
                    p.write(program, out);
                }
                None => out.push_str(" _"),
            }
        }
        out.push(')');
    }

    /// Long form with `pred/arity.alt` labels, e.g. `(s/1.1 (p/1.1) _)`.
    pub fn serialize(&self, program: &Program) -> String {
        let mut s = String::new();
        self.write(program, &mut s);
        s
    }

    pub fn parse(text: &str, program: &Program) -> Result<Pattern> {
        let spaced = text.replace('(', " ( ").replace(')', " ) ");
        let toks: Vec<&str> = spaced.split_whitespace().collect();
        let mut pos = 0;
        let p = parse_pattern(&toks, &mut pos, program)?;
        if pos != toks.len() {
            return Err(Error::Invalid(format!("trailing input in pattern `{text}`")));
        }
        Ok(p)
    }

    /// Checks slot counts and that each child's clause can resolve the
    /// corresponding body atom.
    pub fn validate(&self, program: &Program) -> Result<()> {
        let c = program
            .get(self.clause)
            .ok_or_else(|| Error::Invalid(format!("unknown clause {}", self.clause)))?;
        if !self.children.is_empty() && self.children.len() != c.body.len() {
            return Err(Error::Invalid(format!(
                "pattern node {} has {} children, clause has {} body atoms",
                program.label(self.clause),
                self.children.len(),
                c.body.len()
            )));
        }
        for (child, atom) in self.children.iter().zip(&c.body) {
            if let Some(child) = child {
                let cc = program
                    .get(child.clause)
                    .ok_or_else(|| Error::Invalid(format!("unknown clause {}", child.clause)))?;
                if cc.head.pred != atom.pred {
                    return Err(Error::Invalid(format!(
                        "{} cannot resolve {}",
                        program.label(child.clause),
                        atom.pred
                    )));
                }
                child.validate(program)?;
            }
        }
        Ok(())
    }
}

fn parse_pattern(toks: &[&str], pos: &mut usize, program: &Program) -> Result<Pattern> {
    let bad = |m: &str| Error::Invalid(format!("pattern: {m}"));
    if toks.get(*pos) != Some(&"(") {
        return Err(bad("expected `(`"));
    }
    *pos += 1;
    let label = toks.get(*pos).ok_or_else(|| bad("missing clause label"))?;
    let clause = program
        .parse_label(label)
        .ok_or_else(|| bad(&format!("unknown clause `{label}`")))?;
    *pos += 1;
    let mut children = Vec::new();
    loop {
        match toks.get(*pos) {
            Some(&")") => {
                *pos += 1;
                break;
            }
            Some(&"_") => {
                *pos += 1;
                children.push(None);
            }
            Some(&"(") => children.push(Some(parse_pattern(toks, pos, program)?)),
            Some(t) => return Err(bad(&format!("unexpected `{t}`"))),
            None => return Err(bad("unbalanced parentheses")),
        }
    }
    let p = Pattern { clause, children };
    p.validate(program)?;
    Ok(p)
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.clause)?;
        for c in &self.children {
            match c {
                Some(p) => write!(f, " {p}")?,
                None => write!(f, " _")?,
            }
        }
        write!(f, ")")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Property {
    /// Fires once on every tree.
    Root,
    /// Fires once when the answer binds the root-atom argument at `path`
    /// (1-based: argument, then positions inside compound terms) to `value`.
    Bind { path: Vec<usize>, value: Term },
    /// Counts embeddings of a clause-tree pattern anywhere in the proof.
    Tree(Pattern),
}

impl Property {
    pub fn count(&self, x: &ProofTree) -> u32 {
        match self {
            Property::Root => 1,
            Property::Bind { path, value } => u32::from(bound_at(&x.query, x, path).as_ref() == Some(value)),
            Property::Tree(p) => p.count_in(&x.forest),
        }
    }

    pub fn serialize(&self, program: &Program) -> String {
        match self {
            Property::Root => "root".into(),
            Property::Bind { path, value } => format!("bind {} {value}", path_string(path)),
            Property::Tree(p) => format!("tree {}", p.serialize(program)),
        }
    }

    pub fn parse(text: &str, program: &Program) -> Result<Property> {
        let text = text.trim();
        let (kind, rest) = text.split_once(char::is_whitespace).unwrap_or((text, ""));
        let rest = rest.trim();
        match kind {
            "root" if rest.is_empty() => Ok(Property::Root),
            "bind" => {
                let (path, term) = rest
                    .split_once(char::is_whitespace)
                    .ok_or_else(|| Error::Invalid(format!("bad bind property `{text}`")))?;
                let path = path
                    .split('.')
                    .map(|s| s.parse::<usize>().ok().filter(|&i| i >= 1))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| Error::Invalid(format!("bad argument path `{path}`")))?;
                let value = parse_term(term.trim())?;
                if !value.is_ground() {
                    return Err(Error::Invalid(format!("bound value `{value}` is not ground")));
                }
                Ok(Property::Bind { path, value })
            }
            "tree" => Ok(Property::Tree(Pattern::parse(rest, program)?)),
            _ => Err(Error::Invalid(format!("unknown property `{text}`"))),
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Property::Root => write!(f, "root"),
            Property::Bind { path, value } => write!(f, "bind {} {value}", path_string(path)),
            Property::Tree(p) => write!(f, "tree {p}"),
        }
    }
}

fn path_string(path: &[usize]) -> String {
    path.iter().map(usize::to_string).collect::<Vec<_>>().join(".")
}

/// The answer's value at a root-atom argument path, if it exists.
pub fn bound_at(q: &Query, x: &ProofTree, path: &[usize]) -> Option<Term> {
    let (&arg, rest) = path.split_first()?;
    let v = q.root_atom()?.args.get(arg.checked_sub(1)?)?;
    let t = x.answer().apply_var(v);
    t.at_path(rest).cloned()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub properties: Vec<Property>,
    pub lambda: Vec<f64>,
    pub p0: ChoiceParams,
}

impl Model {
    /// The model with only the root property: `p = p0`.
    pub fn base(p0: ChoiceParams) -> Model {
        Model {
            properties: vec![Property::Root],
            lambda: vec![0.0],
            p0,
        }
    }

    pub fn push(&mut self, property: Property, lambda: f64) {
        self.properties.push(property);
        self.lambda.push(lambda);
    }

    pub fn len(&self) -> usize {
        self.properties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.properties.is_empty()
    }

    pub fn contains(&self, p: &Property) -> bool {
        self.properties.contains(p)
    }

    pub fn log_weight(&self, x: &ProofTree) -> f64 {
        self.dot(x) + self.p0.log_prob(x)
    }

    /// `lambda . nu(x)`.
    pub fn dot(&self, x: &ProofTree) -> f64 {
        self.properties
            .iter()
            .zip(&self.lambda)
            .map(|(p, l)| if *l == 0.0 { 0.0 } else { l * f64::from(p.count(x)) })
            .sum()
    }

    pub fn write(&self, program: &Program) -> String {
        let mut out = String::new();
        for (p, l) in self.properties.iter().zip(&self.lambda) {
            let _ = writeln!(out, "{} {l:.16e}", p.serialize(program));
        }
        out
    }

    /// Reads a model file. A missing `root` line is added with weight 0.
    pub fn parse(text: &str, program: &Program, p0: ChoiceParams) -> Result<Model> {
        let mut props = Vec::new();
        let mut lambda = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let code = line.split('%').next().unwrap_or("").trim();
            if code.is_empty() {
                continue;
            }
            let ctx = |e: Error| Error::Invalid(format!("model line {}: {e}", n + 1));
            let (prop, lam) = code
                .rsplit_once(char::is_whitespace)
                .ok_or_else(|| ctx(Error::Invalid("missing weight".into())))?;
            let lam: f64 = lam
                .parse()
                .map_err(|_| ctx(Error::Invalid(format!("bad weight `{lam}`"))))?;
            let prop = Property::parse(prop, program).map_err(ctx)?;
            if props.contains(&prop) {
                return Err(ctx(Error::Invalid(format!("duplicate property `{prop}`"))));
            }
            props.push(prop);
            lambda.push(lam);
        }
        match props.iter().position(|p| *p == Property::Root) {
            Some(0) => {}
            Some(i) => {
                let p = props.remove(i);
                let l = lambda.remove(i);
                props.insert(0, p);
                lambda.insert(0, l);
            }
            None => {
                props.insert(0, Property::Root);
                lambda.insert(0, 0.0);
            }
        }
        Ok(Model {
            properties: props,
            lambda,
            p0,
        })
    }
}

/// The proofs of every distinct corpus query, concatenated.
#[derive(Clone, Debug)]
pub struct Space {
    pub trees: Vec<ProofTree>,
    /// Tree range of each corpus entry.
    pub ranges: Vec<Range<usize>>,
    /// Corpus index of each tree.
    pub query_of: Vec<usize>,
    /// Multiplicity of each corpus entry.
    pub counts: Vec<f64>,
    pub queries: Vec<Arc<Query>>,
    pub censored: usize,
}

pub const DEFAULT_SPACE_LIMIT: usize = 100_000;

impl Space {
    /// Fails with `NoProof` if some query has no proof within `depth`.
    pub fn build(program: &Program, corpus: &Corpus, depth: u32, limit: usize) -> Result<Space> {
        let mut s = Space {
            trees: Vec::new(),
            ranges: Vec::new(),
            query_of: Vec::new(),
            counts: Vec::new(),
            queries: Vec::new(),
            censored: 0,
        };
        for (i, e) in corpus.entries.iter().enumerate() {
            let room = limit.saturating_sub(s.trees.len());
            let en = enumerate_limited(program, &e.query, depth, room).map_err(|_| Error::SpaceTooLarge(limit))?;
            if en.trees.is_empty() {
                return Err(Error::NoProof(e.query.to_string()));
            }
            let start = s.trees.len();
            s.query_of.extend(std::iter::repeat_n(i, en.trees.len()));
            s.trees.extend(en.trees);
            s.ranges.push(start..s.trees.len());
            s.counts.push(e.count as f64);
            s.queries.push(e.query.clone());
            s.censored += en.censored;
        }
        Ok(s)
    }

    /// Corpus size `N`.
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.trees.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trees.is_empty()
    }

    pub fn counts_of(&self, props: &[Property]) -> Vec<Vec<f64>> {
        self.trees
            .iter()
            .map(|t| props.iter().map(|p| f64::from(p.count(t))).collect())
            .collect()
    }

    pub fn column(&self, prop: &Property) -> Vec<f64> {
        self.trees.iter().map(|t| f64::from(prop.count(t))).collect()
    }
}

/// A model evaluated on a space: counts, joint masses `p`, per-query
/// conditional masses `k`, and the log-likelihood.
#[derive(Clone, Debug)]
pub struct Evaluation {
    /// `nu[x][i]`.
    pub nu: Vec<Vec<f64>>,
    pub log_p0: Vec<f64>,
    pub log_w: Vec<f64>,
    pub log_z: f64,
    pub p: Vec<f64>,
    pub k: Vec<f64>,
    pub log_lik: f64,
}

impl Evaluation {
    pub fn new(model: &Model, space: &Space) -> Evaluation {
        let nu = space.counts_of(&model.properties);
        let log_p0 = space.trees.iter().map(|t| model.p0.log_prob(t)).collect();
        Evaluation::from_counts(space, nu, log_p0, &model.lambda)
    }

    pub fn from_counts(space: &Space, nu: Vec<Vec<f64>>, log_p0: Vec<f64>, lambda: &[f64]) -> Evaluation {
        let log_w: Vec<f64> = nu
            .iter()
            .zip(&log_p0)
            .map(|(row, lp)| lp + row.iter().zip(lambda).map(|(n, l)| if *n == 0.0 { 0.0 } else { n * l }).sum::<f64>())
            .collect();
        let log_z = log_sum_exp(log_w.iter().copied());
        let p = if space.is_empty() { Vec::new() } else { normalize_log(&log_w) };
        let mut k = vec![0.0; space.len()];
        let mut log_lik = 0.0;
        for (r, c) in space.ranges.iter().zip(&space.counts) {
            let lz_y = log_sum_exp(log_w[r.clone()].iter().copied());
            for x in r.clone() {
                k[x] = (log_w[x] - lz_y).exp();
            }
            log_lik += c * (lz_y - log_z);
        }
        Evaluation {
            nu,
            log_p0,
            log_w,
            log_z,
            p,
            k,
            log_lik,
        }
    }

    /// Same counts, new parameters.
    pub fn with_lambda(&self, space: &Space, lambda: &[f64]) -> Evaluation {
        Evaluation::from_counts(space, self.nu.clone(), self.log_p0.clone(), lambda)
    }

    /// `sum_y c_y k_y[f]` for a per-tree function.
    pub fn corpus_k(&self, space: &Space, f: impl Fn(usize) -> f64) -> f64 {
        (0..space.len()).map(|x| space.counts[space.query_of[x]] * self.k[x] * f(x)).sum()
    }

    /// `p[f]` over the whole space.
    pub fn joint(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.p.iter().enumerate().map(|(x, p)| p * f(x)).sum()
    }
}

#[derive(Clone, Debug)]
pub struct TreeDistribution {
    pub support: Vec<ProofTree>,
    pub mass: Vec<f64>,
}

/// `p` normalized over the given trees.
pub fn exact_dist(model: &Model, trees: &[ProofTree]) -> TreeDistribution {
    let lw: Vec<f64> = trees.iter().map(|t| model.log_weight(t)).collect();
    TreeDistribution {
        support: trees.to_vec(),
        mass: normalize_log(&lw),
    }
}

pub fn log_likelihood(model: &Model, corpus: &Corpus, program: &Program, depth: u32) -> Result<f64> {
    let space = Space::build(program, corpus, depth, DEFAULT_SPACE_LIMIT)?;
    Ok(Evaluation::new(model, &space).log_lik)
}

/// `p` renormalized over the proofs of one query.
pub fn conditional(model: &Model, program: &Program, q: &Arc<Query>, depth: u32) -> Result<TreeDistribution> {
    let trees = enumerate_limited(program, q, depth, DEFAULT_SPACE_LIMIT)?.trees;
    if trees.is_empty() {
        return Err(Error::NoProof(q.to_string()));
    }
    Ok(exact_dist(model, &trees))
}

/// Normalizes `exp(f(x)) p(x)`: the distribution of a model extended by
/// properties whose weighted counts are `f`, computed from the old masses.
pub fn tilt(mass: &[f64], log_factor: &[f64]) -> Vec<f64> {
    let lw: Vec<f64> = mass.iter().zip(log_factor).map(|(p, f)| p.ln() + f).collect();
    normalize_log(&lw)
}

/// `sum_y c_y log q(y)` for a distribution `q` over the space's trees.
pub fn space_log_lik(space: &Space, mass: &[f64]) -> f64 {
    space
        .ranges
        .iter()
        .zip(&space.counts)
        .map(|(r, c)| c * mass[r.clone()].iter().sum::<f64>().ln())
        .sum()
}

/// Maximum-likelihood distribution over the space's trees with no model
/// structure, by EM from `start`.
pub fn tree_ml(space: &Space, start: &[f64], max_iters: usize) -> Vec<f64> {
    let n = space.total();
    let mut q = start.to_vec();
    for _ in 0..max_iters {
        let mut next = vec![0.0; q.len()];
        for (r, c) in space.ranges.iter().zip(&space.counts) {
            let z: f64 = q[r.clone()].iter().sum();
            for x in r.clone() {
                next[x] = if z > 0.0 { c * q[x] / (z * n) } else { 0.0 };
            }
        }
        let moved = next.iter().zip(&q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q = next;
        if moved < 1e-15 {
            break;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clp::enumerate_proofs;

    const FIG1: &str = "\
s(Z) :- p(Z), q(Z).
p(Z) :- Z = a.
p(Z) :- Z = b.
q(Z) :- Z = a.
q(Z) :- Z = b.
";

    fn fig1() -> (Program, Corpus, Vec<ProofTree>) {
        let p = Program::parse(FIG1).unwrap();
        let c = Corpus::parse("2× s(Z), Z = a\ns(Z), Z = b\n").unwrap();
        let trees = enumerate_proofs(&p, &Arc::new(Query::parse("s(Z)").unwrap()), 5).trees;
        (p, c, trees)
    }

    fn bind(v: &str) -> Property {
        Property::Bind {
            path: vec![1],
            value: Term::constant(v),
        }
    }

    #[test]
    fn counts() {
        let (p, _, t) = fig1();
        assert_eq!(Property::Root.count(&t[0]), 1);
        assert_eq!(bind("a").count(&t[0]), 1);
        assert_eq!(bind("a").count(&t[1]), 0);
        let pat = Property::parse("tree (s/1.1 (p/1.1) (q/1.1))", &p).unwrap();
        assert_eq!(pat.to_string(), "tree (11 (21) (31))");
        assert_eq!((pat.count(&t[0]), pat.count(&t[1])), (1, 0));
        let open = Property::parse("tree (s/1.1 _ (q/1.2))", &p).unwrap();
        assert_eq!((open.count(&t[0]), open.count(&t[1])), (0, 1));
        let leaf = Property::parse("tree (s/1.1)", &p).unwrap();
        assert_eq!((leaf.count(&t[0]), leaf.count(&t[1])), (1, 1));
    }

    #[test]
    fn recursive_patterns_count_every_embedding() {
        let p = Program::parse("n(X) :- X = z.\nn(X) :- n(Y), X = s(Y).").unwrap();
        let t = enumerate_proofs(&p, &Arc::new(Query::parse("n(X)").unwrap()), 4).trees;
        let step = Property::parse("tree (n/1.2)", &p).unwrap();
        let c: Vec<u32> = t.iter().map(|x| step.count(x)).collect();
        assert_eq!(c, [0, 1, 2, 3]);
        let two = Property::parse("tree (n/1.2 (n/1.2))", &p).unwrap();
        assert_eq!(two.count(&t[3]), 2);
        let deep = Property::Bind {
            path: vec![1, 1],
            value: Term::app("s", vec![Term::constant("z")]),
        };
        assert_eq!(deep.count(&t[2]), 1);
        assert_eq!(deep.count(&t[1]), 0);
    }

    #[test]
    fn pattern_validation() {
        let (p, _, _) = fig1();
        assert!(Pattern::parse("(s/1.1 (p/1.1))", &p).is_err());
        assert!(Pattern::parse("(s/1.1 (q/1.1) _)", &p).is_err());
        assert!(Pattern::parse("(s/1.1 _ _", &p).is_err());
        assert!(Pattern::parse("(s/1.3)", &p).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let (p, _, _) = fig1();
        let mut m = Model::base(ChoiceParams::uniform(&p));
        m.push(bind("a"), 2f64.ln());
        m.push(Property::parse("tree (s/1.1 (p/1.2) _)", &p).unwrap(), -1.0 / 3.0);
        let text = m.write(&p);
        assert!(text.starts_with("root 0.0000000000000000e0\nbind 1 a 6.9314718055994529e-1\n"), "{text}");
        let back = Model::parse(&text, &p, ChoiceParams::uniform(&p)).unwrap();
        assert_eq!(back, m);
        let no_root = Model::parse("bind 1 b 1.5", &p, ChoiceParams::uniform(&p)).unwrap();
        assert_eq!(no_root.properties[0], Property::Root);
        assert!(Model::parse("bind 1 X 1.5", &p, ChoiceParams::uniform(&p)).is_err());
    }

    #[test]
    fn log_two_model() {
        let (p, c, t) = fig1();
        let mut m = Model::base(ChoiceParams::uniform(&p));
        m.push(bind("a"), 2f64.ln());
        assert!(((m.log_weight(&t[0]) - m.log_weight(&t[1])).exp() - 2.0).abs() < 1e-12);
        let d = exact_dist(&m, &t);
        assert!((d.mass[0] - 2.0 / 3.0).abs() < 1e-12);
        let l = log_likelihood(&m, &c, &p, 5).unwrap();
        assert!((l.exp() - 4.0 / 27.0).abs() < 1e-12);
        let q = Arc::new(Query::parse("s(Z)").unwrap());
        let k = conditional(&m, &p, &q, 5).unwrap();
        assert!((k.mass[1] - 1.0 / 3.0).abs() < 1e-12);
        let unique = conditional(&m, &p, &Arc::new(Query::parse("s(Z), Z = b").unwrap()), 5).unwrap();
        assert_eq!(unique.mass, [1.0]);

        let uniform = Model::base(ChoiceParams::uniform(&p));
        let l0 = log_likelihood(&uniform, &c, &p, 5).unwrap();
        assert!((l0.exp() - 0.125).abs() < 1e-12);
    }

    #[test]
    fn empty_corpus_has_zero_log_likelihood() {
        let (p, _, _) = fig1();
        let l = log_likelihood(&Model::base(ChoiceParams::uniform(&p)), &Corpus::default(), &p, 5).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn missing_proof_is_an_error() {
        let (p, _, _) = fig1();
        let c = Corpus::parse("s(Z), Z = c").unwrap();
        let err = log_likelihood(&Model::base(ChoiceParams::uniform(&p)), &c, &p, 5).unwrap_err();
        assert!(matches!(err, Error::NoProof(_)));
    }
}
