//! Stochastic clause-choice model: every predicate is a choice point and
//! each of its clauses an alternative with probability `pi[choice][alt]`.
//! A proof's probability is the product over the clauses it uses.

use std::fmt::Write as _;

use rand::Rng;

use crate::clp::{enumerate_proofs, reduce, ClauseId, Corpus, Goal, ProofTree, Program, Query};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ChoiceParams {
    probs: Vec<Vec<f64>>,
}

impl ChoiceParams {
    pub fn uniform(program: &Program) -> ChoiceParams {
        let probs = (1..=program.preds().len())
            .map(|c| {
                let n = program.alternatives(c).len();
                vec![1.0 / n as f64; n]
            })
            .collect();
        ChoiceParams { probs }
    }

    pub fn get(&self, id: ClauseId) -> f64 {
        self.probs[id.choice - 1][id.alt - 1]
    }

    /// Probabilities of the alternatives of a 1-based choice.
    pub fn row(&self, choice: usize) -> &[f64] {
        &self.probs[choice - 1]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn from_rows(program: &Program, probs: Vec<Vec<f64>>) -> Result<ChoiceParams> {
        let p = ChoiceParams { probs };
        p.validate(program)?;
        Ok(p)
    }

    pub fn validate(&self, program: &Program) -> Result<()> {
        if self.probs.len() != program.preds().len() {
            return Err(Error::InvalidParams("wrong number of predicates".into()));
        }
        for (i, row) in self.probs.iter().enumerate() {
            let pred = &program.preds()[i];
            if row.len() != program.alternatives(i + 1).len() {
                return Err(Error::InvalidParams(format!("wrong number of alternatives for {pred}")));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidParams(format!("probability out of range for {pred}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidParams(format!("probabilities for {pred} sum to {sum}")));
            }
        }
        Ok(())
    }

    /// Lines `pred/arity <alt> <prob>`. Predicates not mentioned stay uniform.
    pub fn parse(text: &str, program: &Program) -> Result<ChoiceParams> {
        let mut p = ChoiceParams::uniform(program);
        let mut seen = vec![false; p.probs.len()];
        for (n, line) in text.lines().enumerate() {
            let code = line.split('%').next().unwrap_or("").trim();
            if code.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::Invalid(format!("line {}: {msg}", n + 1));
            let fields: Vec<&str> = code.split_whitespace().collect();
            let [pred, alt, prob] = fields[..] else {
                return Err(bad("expected `pred/arity <alt> <prob>`"));
            };
            let id = program
                .parse_label(&format!("{pred}.{alt}"))
                .ok_or_else(|| bad(&format!("unknown clause {pred} {alt}")))?;
            let prob: f64 = prob.parse().map_err(|_| bad("bad probability"))?;
            if !seen[id.choice - 1] {
                seen[id.choice - 1] = true;
                p.probs[id.choice - 1].iter_mut().for_each(|x| *x = 0.0);
            }
            p.probs[id.choice - 1][id.alt - 1] = prob;
        }
        p.validate(program)?;
        Ok(p)
    }

    pub fn write(&self, program: &Program) -> String {
        let mut out = String::new();
        for c in program.clauses() {
            let _ = writeln!(out, "{} {} {}", program.preds()[c.id.choice - 1], c.id.alt, self.get(c.id));
        }
        out
    }

    /// Clause frequencies of weighted trees, smoothed by `smoothing` pseudo
    /// counts per alternative. Used to match a proposal to the current model.
    pub fn from_weighted_trees<'a>(
        program: &Program,
        trees: impl IntoIterator<Item = (&'a ProofTree, f64)>,
        smoothing: f64,
    ) -> ChoiceParams {
        let mut counts: Vec<Vec<f64>> = (1..=program.preds().len())
            .map(|c| vec![smoothing; program.alternatives(c).len()])
            .collect();
        for (t, w) in trees {
            for id in &t.steps {
                counts[id.choice - 1][id.alt - 1] += w;
            }
        }
        let probs = counts
            .into_iter()
            .map(|row| {
                let s: f64 = row.iter().sum();
                if s > 0.0 {
                    row.iter().map(|x| x / s).collect()
                } else {
                    vec![1.0 / row.len() as f64; row.len()]
                }
            })
            .collect();
        ChoiceParams { probs }
    }

    pub fn log_prob(&self, x: &ProofTree) -> f64 {
        x.steps.iter().map(|id| self.get(*id).ln()).sum()
    }
}

/// `p(x; pi)`, the product of the chosen alternatives' probabilities.
pub fn scf_prob(pi: &ChoiceParams, x: &ProofTree) -> f64 {
    pi.log_prob(x).exp()
}

/// `p(x; pi)` renormalized over the given trees.
pub fn normalized_tree_dist(pi: &ChoiceParams, trees: &[ProofTree]) -> Result<Vec<f64>> {
    let w: Vec<f64> = trees.iter().map(|t| scf_prob(pi, t)).collect();
    let z: f64 = w.iter().sum();
    if !(z > 0.0) {
        return Err(Error::AllZero);
    }
    Ok(w.iter().map(|x| x / z).collect())
}

/// One reestimation step with its expected-frequency table.
#[derive(Clone, Debug)]
pub struct ErfTable {
    /// Corpus total of expected clause uses, indexed like the parameters.
    pub expected: Vec<Vec<f64>>,
    /// Per choice: total expected uses of any alternative.
    pub denominators: Vec<f64>,
    pub params: ChoiceParams,
}

impl ErfTable {
    pub fn expected_of(&self, id: ClauseId) -> f64 {
        self.expected[id.choice - 1][id.alt - 1]
    }

    pub fn denominator_of(&self, id: ClauseId) -> f64 {
        self.denominators[id.choice - 1]
    }
}

/// Expected clause frequencies under `p(x|y)` over each query's proofs,
/// summed over the corpus and normalized per choice. Choices that no proof
/// uses keep their old parameters.
pub fn erf_reestimate(pi: &ChoiceParams, program: &Program, corpus: &Corpus, depth: u32) -> Result<ErfTable> {
    let mut expected: Vec<Vec<f64>> = pi.rows().iter().map(|r| vec![0.0; r.len()]).collect();
    for e in &corpus.entries {
        let trees = enumerate_proofs(program, &e.query, depth).trees;
        if trees.is_empty() {
            return Err(Error::NoProof(e.query.to_string()));
        }
        let cond = normalized_tree_dist(pi, &trees)?;
        for (t, w) in trees.iter().zip(&cond) {
            for id in &t.steps {
                expected[id.choice - 1][id.alt - 1] += e.count as f64 * w;
            }
        }
    }
    let denominators: Vec<f64> = expected.iter().map(|r| r.iter().sum()).collect();
    let probs = expected
        .iter()
        .zip(&denominators)
        .zip(pi.rows())
        .map(|((row, &d), old)| if d > 0.0 { row.iter().map(|n| n / d).collect() } else { old.clone() })
        .collect();
    Ok(ErfTable {
        expected,
        denominators,
        params: ChoiceParams { probs },
    })
}

fn choose(rng: &mut impl Rng, probs: &[f64]) -> Option<usize> {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = None;
    for (j, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last = Some(j);
            if u < acc {
                return Some(j);
            }
        }
    }
    last
}

/// One top-down stochastic derivation; `None` when it fails or runs past
/// the depth bound.
pub fn derive_once(
    program: &Program,
    pi: &ChoiceParams,
    q: &std::sync::Arc<Query>,
    depth: u32,
    rng: &mut impl Rng,
) -> Option<ProofTree> {
    let mut g = Goal::initial(q)?;
    let mut steps = Vec::new();
    while !g.is_success() {
        if g.depth >= depth {
            return None;
        }
        let choice = program.choice_of(&g.atoms[0].pred)?;
        let j = choose(rng, pi.row(choice))?;
        let c = &program.alternatives(choice)[j];
        g = reduce(&g, c)?;
        steps.push(c.id);
    }
    ProofTree::from_derivation(program, q.clone(), steps, &g)
}

#[derive(Clone, Debug)]
pub struct Draw {
    pub tree: ProofTree,
    pub rejections: usize,
}

/// Draws from `p(x; pi)` restricted to the proofs of `q` within `depth`,
/// restarting failed derivations up to `max_restarts` times.
pub fn sample_derivation(
    program: &Program,
    pi: &ChoiceParams,
    q: &std::sync::Arc<Query>,
    depth: u32,
    rng: &mut impl Rng,
    max_restarts: usize,
) -> Result<Draw> {
    for rejections in 0..=max_restarts {
        if let Some(tree) = derive_once(program, pi, q, depth, rng) {
            return Ok(Draw { tree, rejections });
        }
    }
    Err(Error::BudgetExhausted(max_restarts + 1))
}
