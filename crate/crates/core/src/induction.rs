//! Parameter estimation from queries by iterative maximization of the
//! auxiliary function, and greedy property induction by approximate gain.
//!
//! Everything here is exact: expectations are sums over a [`Space`]. The
//! sampler module provides Monte-Carlo counterparts of the Newton updates.

use std::collections::BTreeMap;
use std::sync::Arc;

use log::{info, warn};

use crate::clp::{ProofTree, Program, Query};
use crate::error::{Error, Result};
use crate::loglinear::{Evaluation, Model, Pattern, Property, Space};
use crate::numeric::solve_decreasing;
use crate::term::Term;

/// Which properties make up the scaling mass `nu_#(x)` in the auxiliary
/// function.
///
/// With `ExcludeRoot` the always-on root property is left out: trees where
/// no other property fires have `nu_# = 0` and contribute exactly 1 to the
/// bound, and the root weight is never updated (it cancels in `Z`). With
/// `IncludeRoot` every property counts, so `nu_# >= 1` everywhere.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScalingMass {
    #[default]
    ExcludeRoot,
    IncludeRoot,
}

impl ScalingMass {
    pub fn scales(self, p: &Property) -> bool {
        match self {
            ScalingMass::ExcludeRoot => *p != Property::Root,
            ScalingMass::IncludeRoot => true,
        }
    }

    /// `nu_#` for every tree.
    pub fn masses(self, props: &[Property], nu: &[Vec<f64>]) -> Vec<f64> {
        let on: Vec<bool> = props.iter().map(|p| self.scales(p)).collect();
        nu.iter()
            .map(|row| row.iter().zip(&on).filter(|(_, on)| **on).map(|(n, _)| n).sum())
            .collect()
    }
}

/// `A(gamma + lambda)`, the lower bound on `L(gamma + lambda) - L(lambda)`.
/// Coordinates outside the scaling mass are ignored (they do not change `L`).
pub fn aux_a(gamma: &[f64], model: &Model, space: &Space, scaling: ScalingMass) -> f64 {
    let ev = Evaluation::new(model, space);
    aux_a_eval(gamma, &model.properties, &ev, space, scaling)
}

pub fn aux_a_eval(gamma: &[f64], props: &[Property], ev: &Evaluation, space: &Space, scaling: ScalingMass) -> f64 {
    let on: Vec<bool> = props.iter().map(|p| scaling.scales(p)).collect();
    let mass = scaling.masses(props, &ev.nu);
    let dot = |x: usize| -> f64 {
        ev.nu[x]
            .iter()
            .zip(gamma)
            .zip(&on)
            .filter(|(_, on)| **on)
            .map(|((n, g), _)| n * g)
            .sum()
    };
    let bracket = |x: usize| -> f64 {
        let m = mass[x];
        if m == 0.0 {
            return 1.0;
        }
        ev.nu[x]
            .iter()
            .zip(gamma)
            .zip(&on)
            .filter(|(_, on)| **on)
            .map(|((n, g), _)| n / m * (g * m).exp())
            .sum()
    };
    space.total() + ev.corpus_k(space, dot) - space.total() * ev.joint(bracket)
}

#[derive(Clone, Debug)]
pub struct ImStep {
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
}

/// One iterative-maximization step: every scaled coordinate solves its own
/// stationarity condition `sum_y k[nu_i] = N p[nu_i exp(gamma_i nu_#)]`
/// from the same current parameters.
pub fn im_step(model: &Model, space: &Space, scaling: ScalingMass) -> Result<ImStep> {
    let ev = Evaluation::new(model, space);
    im_step_eval(model, &ev, space, scaling)
}

pub fn im_step_eval(model: &Model, ev: &Evaluation, space: &Space, scaling: ScalingMass) -> Result<ImStep> {
    let mass = scaling.masses(&model.properties, &ev.nu);
    let n = space.total();
    let mut gamma = vec![0.0; model.len()];
    for (i, prop) in model.properties.iter().enumerate() {
        if !scaling.scales(prop) || ev.nu.iter().all(|row| row[i] == 0.0) {
            continue;
        }
        let target = ev.corpus_k(space, |x| ev.nu[x][i]);
        let f = |g: f64| {
            let mut v = 0.0;
            let mut d = 0.0;
            for x in 0..space.len() {
                let nu = ev.nu[x][i];
                if nu != 0.0 {
                    let e = ev.p[x] * nu * (g * mass[x]).exp();
                    v += e;
                    d += e * mass[x];
                }
            }
            (target - n * v, -n * d)
        };
        gamma[i] = solve_decreasing(f, 0.0).ok_or(Error::NewtonDiverged(i))?.x;
    }
    let lambda = model.lambda.iter().zip(&gamma).map(|(l, g)| l + g).collect();
    Ok(ImStep { gamma, lambda })
}

#[derive(Clone, Copy, Debug)]
pub struct ImOptions {
    /// Converged once the log-likelihood moves by less than this...
    pub tol: f64,
    /// ...and no weight moves by more than this.
    pub step_tol: f64,
    pub max_iters: usize,
    pub scaling: ScalingMass,
}

impl Default for ImOptions {
    fn default() -> Self {
        ImOptions {
            tol: 1e-9,
            step_tol: 1e-8,
            max_iters: 1000,
            scaling: ScalingMass::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ImFit {
    pub model: Model,
    /// Log-likelihood before the first step and after each step.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl ImFit {
    pub fn log_lik(&self) -> f64 {
        *self.trace.last().expect("trace holds the starting value")
    }
}

/// Removes non-root properties that are zero on the whole space.
pub fn drop_unsupported(model: &Model, space: &Space) -> Model {
    let mut out = Model::base(model.p0.clone());
    out.lambda[0] = model.lambda[0];
    for (p, l) in model.properties.iter().zip(&model.lambda).skip(1) {
        if space.trees.iter().any(|t| p.count(t) > 0) {
            out.push(p.clone(), *l);
        } else {
            warn!("dropping property `{p}`: it occurs in no proof of the corpus");
        }
    }
    out
}

/// Iterates [`im_step`] until both the log-likelihood and the weights settle.
pub fn im_estimate(model: &Model, space: &Space, opts: &ImOptions) -> Result<ImFit> {
    let mut model = drop_unsupported(model, space);
    let mut ev = Evaluation::new(&model, space);
    let mut trace = vec![ev.log_lik];
    let mut converged = false;
    for _ in 0..opts.max_iters {
        let step = im_step_eval(&model, &ev, space, opts.scaling)?;
        let next = ev.with_lambda(space, &step.lambda);
        let delta = next.log_lik - ev.log_lik;
        let moved = step.gamma.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        model.lambda = step.lambda;
        ev = next;
        trace.push(ev.log_lik);
        if delta.abs() < opts.tol && moved < opts.step_tol {
            converged = true;
            break;
        }
    }
    Ok(ImFit {
        model,
        trace,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    pub property: Property,
    pub gain: f64,
    pub alpha: f64,
    /// Constant on the whole space; gain and alpha are reported as 0.
    pub degenerate: bool,
}

/// `G_c(alpha + lambda) = sum_y (1 + k[alpha c] - p[exp(alpha c)])` for a
/// per-tree count column.
pub fn gain_value(alpha: f64, col: &[f64], ev: &Evaluation, space: &Space) -> f64 {
    let n = space.total();
    n + alpha * ev.corpus_k(space, |x| col[x]) - n * ev.joint(|x| (alpha * col[x]).exp())
}

/// Approximate gain of adding `c` to the model, at its maximizing weight.
pub fn gain(c: &Property, model: &Model, space: &Space) -> Result<Candidate> {
    let ev = Evaluation::new(model, space);
    gain_eval(c, &ev, space)
}

pub fn gain_eval(c: &Property, ev: &Evaluation, space: &Space) -> Result<Candidate> {
    let col = space.column(c);
    if col.windows(2).all(|w| w[0] == w[1]) {
        return Ok(Candidate {
            property: c.clone(),
            gain: 0.0,
            alpha: 0.0,
            degenerate: true,
        });
    }
    let n = space.total();
    let target = ev.corpus_k(space, |x| col[x]);
    let f = |a: f64| {
        let mut v = 0.0;
        let mut d = 0.0;
        for (x, &cx) in col.iter().enumerate() {
            if cx != 0.0 {
                let e = ev.p[x] * cx * (a * cx).exp();
                v += e;
                d += e * cx;
            }
        }
        (target - n * v, -n * d)
    };
    let alpha = solve_decreasing(f, 0.0).ok_or(Error::NewtonDiverged(0))?.x;
    Ok(Candidate {
        property: c.clone(),
        gain: gain_value(alpha, &col, ev, space),
        alpha,
        degenerate: false,
    })
}

fn ground_subterms(t: &Term, path: &mut Vec<usize>, out: &mut Vec<(Vec<usize>, Term)>) {
    if t.is_ground() {
        out.push((path.clone(), t.clone()));
    }
    if let Term::App(_, args) = t {
        for (j, a) in args.iter().enumerate() {
            path.push(j + 1);
            ground_subterms(a, path, out);
            path.pop();
        }
    }
}

fn extensions(p: &Pattern, program: &Program) -> Vec<Pattern> {
    let mut out = Vec::new();
    let body = &program.clause(p.clause).body;
    let open: Vec<usize> = if p.children.is_empty() {
        (0..body.len()).collect()
    } else {
        (0..body.len()).filter(|&s| p.children[s].is_none()).collect()
    };
    for s in open {
        for d in program.clauses_for(&body[s].pred) {
            let mut q = p.clone();
            if q.children.is_empty() {
                q.children = vec![None; body.len()];
            }
            q.children[s] = Some(Pattern::leaf(d.id));
            out.push(q);
        }
    }
    for (s, child) in p.children.iter().enumerate() {
        if let Some(child) = child {
            for e in extensions(child, program) {
                let mut q = p.clone();
                q.children[s] = Some(e);
                out.push(q);
            }
        }
    }
    out
}

pub const DEFAULT_CANDIDATE_CAP: usize = 10_000;

/// Candidate properties: single-clause patterns for the queries' root atoms,
/// answer bindings seen in `trees`, and one-node extensions of the model's
/// patterns. Sorted by serialization, without duplicates or model members,
/// truncated to `cap`.
pub fn generate_candidates<'a>(
    model: &Model,
    program: &Program,
    queries: &[Arc<Query>],
    trees: impl IntoIterator<Item = &'a ProofTree>,
    cap: usize,
) -> Vec<Property> {
    let mut found: BTreeMap<String, Property> = BTreeMap::new();
    let mut add = |p: Property| {
        if !model.contains(&p) {
            found.entry(p.serialize(program)).or_insert(p);
        }
    };
    for q in queries {
        if let Some(a) = q.root_atom() {
            for c in program.clauses_for(&a.pred) {
                add(Property::Tree(Pattern::leaf(c.id)));
            }
        }
    }
    for t in trees {
        let Some(a) = t.query.root_atom() else { continue };
        for (i, v) in a.args.iter().enumerate() {
            let mut subs = Vec::new();
            ground_subterms(&t.answer().apply_var(v), &mut vec![i + 1], &mut subs);
            for (path, value) in subs {
                add(Property::Bind { path, value });
            }
        }
    }
    for p in &model.properties {
        if let Property::Tree(pat) = p {
            for e in extensions(pat, program) {
                add(Property::Tree(e));
            }
        }
    }
    if found.len() > cap {
        warn!("candidate pool truncated from {} to {cap}", found.len());
    }
    found.into_values().take(cap).collect()
}

#[derive(Clone, Debug)]
pub struct Selection {
    pub best: Candidate,
    pub candidates: Vec<Candidate>,
}

/// Picks the highest-gain candidate. Candidates arrive sorted by
/// serialization, so the first of equal gains wins.
pub fn choose_best(candidates: Vec<Candidate>) -> Result<Selection> {
    let mut best: Option<usize> = None;
    for (i, c) in candidates.iter().enumerate() {
        if best.is_none_or(|b| c.gain > candidates[b].gain + 1e-12) {
            best = Some(i);
        }
    }
    let best = candidates[best.ok_or(Error::NoCandidates)?].clone();
    Ok(Selection { best, candidates })
}

pub fn select_property(model: &Model, space: &Space, program: &Program, cap: usize) -> Result<Selection> {
    let ev = Evaluation::new(model, space);
    let props = generate_candidates(model, program, &space.queries, &space.trees, cap);
    let mut cands = Vec::with_capacity(props.len());
    for p in &props {
        match gain_eval(p, &ev, space) {
            Ok(c) => cands.push(c),
            Err(e) => warn!("skipping candidate `{p}`: {e}"),
        }
    }
    choose_best(cands)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub gain: f64,
    pub property: String,
    pub log_lik: f64,
}

#[derive(Clone, Debug)]
pub struct InduceOptions {
    pub rounds: usize,
    /// Stop when the best gain falls below this.
    pub gain_tol: f64,
    pub im: ImOptions,
    /// Refit every weight from 0 instead of starting the new one at its
    /// gain maximizer.
    pub cold_start: bool,
    pub cap: usize,
}

impl Default for InduceOptions {
    fn default() -> Self {
        InduceOptions {
            rounds: 1,
            gain_tol: 1e-9,
            im: ImOptions::default(),
            cold_start: false,
            cap: DEFAULT_CANDIDATE_CAP,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Induction {
    pub model: Model,
    pub rounds: Vec<RoundLog>,
    /// Stopped before `rounds` because no candidate had enough gain.
    pub stopped_early: bool,
}

/// Alternates property selection and parameter estimation.
pub fn induce(start: Model, space: &Space, program: &Program, opts: &InduceOptions) -> Result<Induction> {
    if opts.rounds == 0 {
        return Err(Error::Invalid("at least one induction round is required".into()));
    }
    let mut model = start;
    let mut rounds = Vec::new();
    let mut stopped_early = false;
    for round in 1..=opts.rounds {
        let sel = match select_property(&model, space, program, opts.cap) {
            Ok(s) => s,
            Err(Error::NoCandidates) => {
                info!("round {round}: no candidates left");
                stopped_early = true;
                break;
            }
            Err(e) => return Err(e),
        };
        if sel.best.degenerate || sel.best.gain < opts.gain_tol {
            info!("round {round}: best gain {} below tolerance, stopping", sel.best.gain);
            stopped_early = true;
            break;
        }
        let label = sel.best.property.serialize(program);
        if opts.cold_start {
            model.lambda.iter_mut().for_each(|l| *l = 0.0);
            model.push(sel.best.property, 0.0);
        } else {
            model.push(sel.best.property, sel.best.alpha);
        }
        let fit = im_estimate(&model, space, &opts.im)?;
        if !fit.converged {
            warn!("round {round}: estimation stopped after {} iterations without converging", opts.im.max_iters);
        }
        info!("round {round}: selected `{label}` gain {} log-likelihood {}", sel.best.gain, fit.log_lik());
        rounds.push(RoundLog {
            round,
            gain: sel.best.gain,
            property: label,
            log_lik: fit.log_lik(),
        });
        model = fit.model;
    }
    Ok(Induction {
        model,
        rounds,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clp::Corpus;
    use crate::loglinear::DEFAULT_SPACE_LIMIT;
    use crate::scf::ChoiceParams;

    const FIG1: &str = "\
s(Z) :- p(Z), q(Z).
p(Z) :- Z = a.
p(Z) :- Z = b.
q(Z) :- Z = a.
q(Z) :- Z = b.
";

    fn setup() -> (Program, Space, Model) {
        let p = Program::parse(FIG1).unwrap();
        let c = Corpus::parse("2× s(Z), Z = a\ns(Z), Z = b\n").unwrap();
        let s = Space::build(&p, &c, 5, DEFAULT_SPACE_LIMIT).unwrap();
        let m = Model::base(ChoiceParams::uniform(&p));
        (p, s, m)
    }

    fn bind(v: &str) -> Property {
        Property::Bind {
            path: vec![1],
            value: Term::constant(v),
        }
    }

    #[test]
    fn aux_closed_form() {
        let (_, s, mut m) = setup();
        m.push(bind("a"), 0.0);
        for g in [-1.0, 0.0, 0.3, 2.0] {
            let want = 3.0 + 2.0 * g - 1.5 * (f64::exp(g) + 1.0);
            assert!((aux_a(&[0.0, g], &m, &s, ScalingMass::ExcludeRoot) - want).abs() < 1e-12);
        }
        let g = (4.0f64 / 3.0).ln();
        let at = aux_a(&[0.0, g], &m, &s, ScalingMass::ExcludeRoot);
        assert!((at - (2.0 * g - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn first_step_and_fixed_point() {
        let (_, s, mut m) = setup();
        m.push(bind("a"), 0.0);
        let st = im_step(&m, &s, ScalingMass::ExcludeRoot).unwrap();
        assert_eq!(st.gamma[0], 0.0);
        assert!((st.gamma[1] - (4.0f64 / 3.0).ln()).abs() < 1e-10);
        let inc = im_step(&m, &s, ScalingMass::IncludeRoot).unwrap();
        assert!((inc.gamma[1] - 0.5 * (4.0f64 / 3.0).ln()).abs() < 1e-10);

        let opts = ImOptions {
            tol: 1e-14,
            max_iters: 200,
            ..ImOptions::default()
        };
        let fit = im_estimate(&m, &s, &opts).unwrap();
        assert!(fit.converged);
        assert!((fit.model.lambda[1] - 2f64.ln()).abs() < 1e-6);
        assert!((fit.log_lik().exp() - 4.0 / 27.0).abs() < 1e-9);
        assert!(fit.trace.windows(2).all(|w| w[1] >= w[0] - 1e-12));

        m.lambda[1] = 2f64.ln();
        let st = im_step(&m, &s, ScalingMass::ExcludeRoot).unwrap();
        assert!(st.gamma[1].abs() < 1e-9);
    }

    #[test]
    fn start_point_does_not_matter() {
        let (_, s, mut m) = setup();
        m.push(bind("a"), 3.0);
        let opts = ImOptions {
            tol: 1e-14,
            max_iters: 500,
            ..ImOptions::default()
        };
        let hi = im_estimate(&m, &s, &opts).unwrap();
        m.lambda[1] = -3.0;
        let lo = im_estimate(&m, &s, &opts).unwrap();
        assert!((hi.model.lambda[1] - 2f64.ln()).abs() < 1e-6);
        assert!((lo.model.lambda[1] - 2f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn unambiguous_single_query() {
        let p = Program::parse(FIG1).unwrap();
        let c = Corpus::parse("s(Z), Z = a").unwrap();
        let s = Space::build(&p, &c, 5, DEFAULT_SPACE_LIMIT).unwrap();
        let m = Model::base(ChoiceParams::uniform(&p));
        let fit = im_estimate(&m, &s, &ImOptions::default()).unwrap();
        assert_eq!(fit.log_lik(), 0.0);
        let out = induce(m.clone(), &s, &p, &InduceOptions::default()).unwrap();
        assert!(out.stopped_early && out.rounds.is_empty());
        assert_eq!(out.model, m);
        let zero = InduceOptions {
            rounds: 0,
            ..InduceOptions::default()
        };
        assert!(induce(m, &s, &p, &zero).is_err());
    }

    #[test]
    fn gains() {
        let (p, s, m) = setup();
        let ga = gain(&bind("a"), &m, &s).unwrap();
        assert!((ga.alpha - (4.0f64 / 3.0).ln()).abs() < 1e-10);
        assert!((ga.gain - (2.0 * (4.0f64 / 3.0).ln() - 0.5)).abs() < 1e-12);
        let gb = gain(&bind("b"), &m, &s).unwrap();
        assert!((gb.alpha - (2.0f64 / 3.0).ln()).abs() < 1e-10);
        assert!((gb.gain - ((2.0f64 / 3.0).ln() + 0.5)).abs() < 1e-12);
        let root = gain(&Property::Root, &m, &s).unwrap();
        assert!(root.degenerate && root.gain == 0.0);
        let leaf = gain(&Property::parse("tree (s/1.1)", &p).unwrap(), &m, &s).unwrap();
        assert!(leaf.degenerate);
    }

    #[test]
    fn candidates() {
        let (p, s, mut m) = setup();
        let c = generate_candidates(&m, &p, &s.queries, &s.trees, DEFAULT_CANDIDATE_CAP);
        let names: Vec<String> = c.iter().map(|x| x.serialize(&p)).collect();
        assert_eq!(names, ["bind 1 a", "bind 1 b", "tree (s/1.1)"]);
        m.push(Property::parse("tree (s/1.1)", &p).unwrap(), 0.0);
        let c = generate_candidates(&m, &p, &s.queries, &s.trees, DEFAULT_CANDIDATE_CAP);
        let names: Vec<String> = c.iter().map(|x| x.to_string()).collect();
        assert_eq!(
            names,
            ["bind 1 a", "bind 1 b", "tree (11 (21) _)", "tree (11 (22) _)", "tree (11 _ (31))", "tree (11 _ (32))"]
        );
        let capped = generate_candidates(&m, &p, &s.queries, &s.trees, 2);
        assert_eq!(capped.len(), 2);
    }

    #[test]
    fn selection_prefers_larger_gain() {
        let (p, s, m) = setup();
        let sel = select_property(&m, &s, &p, DEFAULT_CANDIDATE_CAP).unwrap();
        assert_eq!(sel.best.property, bind("b"));
        let out = induce(m, &s, &p, &InduceOptions {
            im: ImOptions {
                tol: 1e-14,
                max_iters: 500,
                ..ImOptions::default()
            },
            ..InduceOptions::default()
        })
        .unwrap();
        assert_eq!(out.model.properties, [Property::Root, bind("b")]);
        assert!((out.model.lambda[1] - 0.5f64.ln()).abs() < 1e-6);
        assert!((out.rounds[0].log_lik.exp() - 4.0 / 27.0).abs() < 1e-9);
    }

    #[test]
    fn ties_go_to_the_first_serialization() {
        let mk = |name: &str, gain: f64| Candidate {
            property: bind(name),
            gain,
            alpha: 0.0,
            degenerate: false,
        };
        let sel = choose_best(vec![mk("a", 0.5), mk("b", 0.5), mk("c", 0.2)]).unwrap();
        assert_eq!(sel.best.property, bind("a"));
        assert!(matches!(choose_best(Vec::new()), Err(Error::NoCandidates)));
    }
}
