//! Metropolis-Hastings sampling of proof trees and the Monte-Carlo versions
//! of the Newton updates for gains and parameters.
//!
//! Proposals come from the stochastic clause-choice model. A per-query
//! chain targets the model conditioned on that query; its proposal restarts
//! failed derivations, so it is supported exactly on the query's proofs. The
//! joint chain targets the model over the whole space: it proposes a query
//! uniformly and makes a single derivation attempt, staying put on failure.
//!
//! Samples carry weights so that an exhaustive pseudo-sample (every tree at
//! its exact mass) can be fed through the same estimators.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::clp::{first_proof, ClauseId, Corpus, ProofTree, Program, Query};
use crate::error::{Error, Result};
use crate::induction::{choose_best, generate_candidates, Candidate, InduceOptions, Induction, RoundLog, ScalingMass};
use crate::loglinear::{Evaluation, Model, Property, Space, DEFAULT_SPACE_LIMIT};
use crate::numeric::{log_sum_exp, solve_decreasing};
use crate::scf::{derive_once, sample_derivation, ChoiceParams};

/// Caches target and proposal log weights by clause sequence.
struct Scorer<'a> {
    model: &'a Model,
    proposal: &'a ChoiceParams,
    cache: HashMap<(usize, Vec<ClauseId>), (f64, f64)>,
}

impl<'a> Scorer<'a> {
    fn new(model: &'a Model, proposal: &'a ChoiceParams) -> Self {
        Scorer {
            model,
            proposal,
            cache: HashMap::new(),
        }
    }

    /// (target, proposal) log weights.
    fn score(&mut self, q: usize, x: &ProofTree) -> (f64, f64) {
        let (model, proposal) = (self.model, self.proposal);
        *self
            .cache
            .entry((q, x.steps.clone()))
            .or_insert_with(|| (model.log_weight(x), proposal.log_prob(x)))
    }
}

fn accept(rng: &mut impl Rng, sx: (f64, f64), sz: (f64, f64)) -> bool {
    let log_alpha = (sz.0 - sx.0) + (sx.1 - sz.1);
    if log_alpha >= 0.0 {
        return true;
    }
    let u: f64 = rng.gen();
    u <= log_alpha.exp()
}

/// Runs `k` steps of the per-query chain from `x0`; returns `X_0..X_k`.
#[allow(clippy::too_many_arguments)]
pub fn mh_sample(
    program: &Program,
    target: &Model,
    proposal: &ChoiceParams,
    q: &Arc<Query>,
    depth: u32,
    k: usize,
    x0: ProofTree,
    rng: &mut impl Rng,
    max_restarts: usize,
) -> Result<Vec<ProofTree>> {
    let mut scorer = Scorer::new(target, proposal);
    let mut out = Vec::with_capacity(k + 1);
    let mut sx = scorer.score(0, &x0);
    out.push(x0);
    for _ in 0..k {
        let z = sample_derivation(program, proposal, q, depth, rng, max_restarts)?.tree;
        let x = out.last().expect("chain is nonempty");
        if z.steps == x.steps {
            out.push(z);
            continue;
        }
        let sz = scorer.score(0, &z);
        if accept(rng, sx, sz) {
            sx = sz;
            out.push(z);
        } else {
            out.push(x.clone());
        }
    }
    Ok(out)
}

/// Runs `k` steps of the joint chain over all queries' proofs.
#[allow(clippy::too_many_arguments)]
pub fn mh_joint(
    program: &Program,
    target: &Model,
    proposal: &ChoiceParams,
    queries: &[Arc<Query>],
    depth: u32,
    k: usize,
    x0: (usize, ProofTree),
    rng: &mut impl Rng,
) -> Vec<(usize, ProofTree)> {
    let mut scorer = Scorer::new(target, proposal);
    let mut sx = scorer.score(x0.0, &x0.1);
    let mut out = Vec::with_capacity(k + 1);
    out.push(x0);
    for _ in 0..k {
        let y = rng.gen_range(0..queries.len());
        let prev = out.last().expect("chain is nonempty").clone();
        let Some(z) = derive_once(program, proposal, &queries[y], depth, rng) else {
            out.push(prev);
            continue;
        };
        if y == prev.0 && z.steps == prev.1.steps {
            out.push(prev);
            continue;
        }
        let sz = scorer.score(y, &z);
        if accept(rng, sx, sz) {
            sx = sz;
            out.push((y, z));
        } else {
            out.push(prev);
        }
    }
    out
}

/// Transition matrix of the independence chain with the given unnormalized
/// target and proposal log weights over a finite support.
pub fn transition_matrix(log_target: &[f64], log_proposal: &[f64]) -> Vec<Vec<f64>> {
    let lz = log_sum_exp(log_proposal.iter().copied());
    let q: Vec<f64> = log_proposal.iter().map(|l| (l - lz).exp()).collect();
    let n = q.len();
    let mut m = vec![vec![0.0; n]; n];
    for x in 0..n {
        let mut stay = 1.0;
        for z in 0..n {
            if z == x {
                continue;
            }
            let la = (log_target[z] - log_target[x]) + (log_proposal[x] - log_proposal[z]);
            let p = q[z] * la.min(0.0).exp();
            m[x][z] = p;
            stay -= p;
        }
        m[x][x] = stay;
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ProposalKind {
    /// Uniform choice of alternatives.
    #[default]
    Uniform,
    /// Clause frequencies of a pilot sample from the current model.
    MomentMatched,
}

#[derive(Clone, Debug)]
pub struct SamplerOptions {
    /// Retained draws per query.
    pub samples: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub max_restarts: usize,
    pub proposal: ProposalKind,
    pub seed: u64,
    /// Also run the joint chain and use it for the whole-space expectations.
    pub joint: bool,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            samples: 10_000,
            burn_in: 1_000,
            thin: 1,
            max_restarts: 10_000,
            proposal: ProposalKind::Uniform,
            seed: 0,
            joint: false,
        }
    }
}

/// Weighted samples: one chain per distinct query and optionally a joint
/// chain.
#[derive(Clone, Debug)]
pub struct SampleSet {
    pub queries: Vec<Arc<Query>>,
    /// Query multiplicities.
    pub counts: Vec<f64>,
    pub chains: Vec<Vec<(ProofTree, f64)>>,
    /// Samples from the whole space, tagged with their query.
    pub joint: Option<Vec<(usize, ProofTree, f64)>>,
}

impl SampleSet {
    /// Every tree at its exact conditional (chains) and joint mass.
    pub fn exhaustive(space: &Space, ev: &Evaluation, size: f64) -> SampleSet {
        let chains = space
            .ranges
            .iter()
            .map(|r| r.clone().map(|x| (space.trees[x].clone(), ev.k[x] * size)).collect())
            .collect();
        let joint = (0..space.len())
            .map(|x| (space.query_of[x], space.trees[x].clone(), ev.p[x] * size * space.len() as f64))
            .collect();
        SampleSet {
            queries: space.queries.clone(),
            counts: space.counts.clone(),
            chains,
            joint: Some(joint),
        }
    }

    /// Corpus size `N`.
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// Every sampled tree once per draw, for candidate generation.
    pub fn trees(&self) -> impl Iterator<Item = &ProofTree> {
        let joint = self.joint.iter().flatten().map(|(_, t, _)| t);
        self.chains.iter().flatten().map(|(t, _)| t).chain(joint)
    }
}

fn chain_rng(seed: u64, epoch: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
    rng.set_stream(stream);
    rng
}

fn retained<T>(chain: Vec<T>, burn_in: usize, thin: usize) -> impl Iterator<Item = T> {
    chain
        .into_iter()
        .skip(burn_in + 1)
        .enumerate()
        .filter(move |(i, _)| (i + 1) % thin.max(1) == 0)
        .map(|(_, x)| x)
}

/// Draws a sample set from `model`. `epoch` separates the random streams of
/// successive calls under one master seed.
pub fn draw_samples(
    program: &Program,
    model: &Model,
    corpus: &Corpus,
    depth: u32,
    opts: &SamplerOptions,
    epoch: u64,
) -> Result<SampleSet> {
    let queries: Vec<Arc<Query>> = corpus.entries.iter().map(|e| e.query.clone()).collect();
    let counts: Vec<f64> = corpus.entries.iter().map(|e| e.count as f64).collect();
    let uniform = ChoiceParams::uniform(program);
    let proposal = match opts.proposal {
        ProposalKind::Uniform => uniform,
        ProposalKind::MomentMatched => {
            let pilot = SamplerOptions {
                proposal: ProposalKind::Uniform,
                joint: false,
                samples: (opts.samples / 10).max(100),
                ..opts.clone()
            };
            let s = draw_samples(program, model, corpus, depth, &pilot, epoch.wrapping_add(1 << 32))?;
            let weighted = s
                .chains
                .iter()
                .zip(&counts)
                .flat_map(|(ch, c)| ch.iter().map(move |(t, w)| (t, w * c)));
            ChoiceParams::from_weighted_trees(program, weighted, 1.0)
        }
    };
    let len = opts.burn_in + opts.samples * opts.thin.max(1);
    let mut chains = Vec::with_capacity(queries.len());
    let mut firsts = Vec::with_capacity(queries.len());
    for (i, q) in queries.iter().enumerate() {
        let x0 = first_proof(program, q, depth).ok_or_else(|| Error::NoProof(q.to_string()))?;
        firsts.push(x0.clone());
        let mut rng = chain_rng(opts.seed, epoch, i as u64 + 1);
        let chain = mh_sample(program, model, &proposal, q, depth, len, x0, &mut rng, opts.max_restarts)?;
        chains.push(retained(chain, opts.burn_in, opts.thin).map(|t| (t, 1.0)).collect());
    }
    let joint = if opts.joint && !queries.is_empty() {
        let mut rng = chain_rng(opts.seed, epoch, 0);
        let jlen = opts.burn_in + opts.samples * queries.len() * opts.thin.max(1);
        let chain = mh_joint(program, model, &proposal, &queries, depth, jlen, (0, firsts[0].clone()), &mut rng);
        Some(retained(chain, opts.burn_in, opts.thin).map(|(y, t)| (y, t, 1.0)).collect())
    } else {
        None
    };
    Ok(SampleSet {
        queries,
        counts,
        chains,
        joint,
    })
}

type Table = BTreeMap<u32, f64>;

/// Value-count tables of the sampled properties.
#[derive(Clone, Debug)]
pub struct CountTables {
    /// `S[c][v]`: weighted count of whole-space samples where `c = v`.
    pub s: Vec<Table>,
    /// `T[y][c][v]`: the same within the chain of query `y`.
    pub t: Vec<Vec<Table>>,
    /// `U[i][m]`: sum of `nu_i` over whole-space samples with `nu_# = m`.
    pub u: Vec<Table>,
    /// Chain sizes `M_y`.
    pub m: Vec<f64>,
    /// Whole-space sample size `L`.
    pub l: f64,
    /// Query multiplicities.
    pub counts: Vec<f64>,
}

fn collapse<'a>(items: impl Iterator<Item = (usize, &'a ProofTree, f64)>) -> Vec<(&'a ProofTree, f64)> {
    let mut seen: HashMap<(usize, &'a [ClauseId]), usize> = HashMap::new();
    let mut out: Vec<(&ProofTree, f64)> = Vec::new();
    for (y, t, w) in items {
        match seen.get(&(y, t.steps.as_slice())) {
            Some(&i) => out[i].1 += w,
            None => {
                seen.insert((y, t.steps.as_slice()), out.len());
                out.push((t, w));
            }
        }
    }
    out
}

impl CountTables {
    /// Without a joint chain the whole-space sample is the union of the
    /// per-query chains, each repeated by its query's multiplicity.
    pub fn build(samples: &SampleSet, props: &[Property], scaling: ScalingMass) -> CountTables {
        let on: Vec<bool> = props.iter().map(|p| scaling.scales(p)).collect();
        let nu_of = |t: &ProofTree| -> Vec<u32> { props.iter().map(|p| p.count(t)).collect() };
        let mut t = Vec::with_capacity(samples.chains.len());
        let mut m = Vec::with_capacity(samples.chains.len());
        for (y, chain) in samples.chains.iter().enumerate() {
            let mut ty = vec![Table::new(); props.len()];
            let mut my = 0.0;
            for (tree, w) in collapse(chain.iter().map(|(t, w)| (y, t, *w))) {
                for (c, v) in nu_of(tree).into_iter().enumerate() {
                    *ty[c].entry(v).or_insert(0.0) += w;
                }
                my += w;
            }
            t.push(ty);
            m.push(my);
        }
        let whole: Vec<(&ProofTree, f64)> = match &samples.joint {
            Some(j) => collapse(j.iter().map(|(y, t, w)| (*y, t, *w))),
            None => collapse(
                samples
                    .chains
                    .iter()
                    .enumerate()
                    .flat_map(|(y, ch)| ch.iter().map(move |(t, w)| (y, t, w * samples.counts[y]))),
            ),
        };
        let mut s = vec![Table::new(); props.len()];
        let mut u = vec![Table::new(); props.len()];
        let mut l = 0.0;
        for (tree, w) in whole {
            let nu = nu_of(tree);
            let mass: u32 = nu.iter().zip(&on).filter(|(_, on)| **on).map(|(n, _)| n).sum();
            for (c, &v) in nu.iter().enumerate() {
                *s[c].entry(v).or_insert(0.0) += w;
                if v > 0 {
                    *u[c].entry(mass).or_insert(0.0) += w * f64::from(v);
                }
            }
            l += w;
        }
        CountTables {
            s,
            t,
            u,
            m,
            l,
            counts: samples.counts.clone(),
        }
    }

    /// Corpus size `N`.
    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// `s_r(alpha, c) = sum_v S[c][v] exp(alpha v) v^r`, summed in log space.
    pub fn s_r(&self, r: i32, alpha: f64, c: usize) -> f64 {
        moment(&self.s[c], r, alpha)
    }

    /// `t_y(c) = (1/M) sum_v T[y][c][v] v`.
    pub fn t_y(&self, y: usize, c: usize) -> f64 {
        if self.m[y] == 0.0 {
            return 0.0;
        }
        self.t[y][c].iter().map(|(v, n)| f64::from(*v) * n).sum::<f64>() / self.m[y]
    }

    /// `sum_y t_y(c)` over the corpus, with multiplicities.
    pub fn t_sum(&self, c: usize) -> f64 {
        (0..self.t.len()).map(|y| self.counts[y] * self.t_y(y, c)).sum()
    }

    /// `u_r(alpha, i) = sum_m U[i][m] exp(alpha m) m^r`.
    pub fn u_r(&self, r: i32, alpha: f64, i: usize) -> f64 {
        moment(&self.u[i], r, alpha)
    }
}

fn moment(table: &Table, r: i32, alpha: f64) -> f64 {
    let terms = table
        .iter()
        .filter(|(v, n)| **n > 0.0 && (r == 0 || **v > 0))
        .map(|(v, n)| {
            let v = f64::from(*v);
            n.ln() + alpha * v + if r == 0 { 0.0 } else { f64::from(r) * v.ln() }
        });
    log_sum_exp(terms).exp()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McRoot {
    pub alpha: f64,
    pub iterations: usize,
}

/// Newton iteration `alpha += f(alpha) / -f'(alpha)` until the step is below
/// 1e-8 or 50 steps, with a bracketing fallback.
fn mc_newton(f: impl Fn(f64) -> (f64, f64), start: f64, what: &'static str) -> Result<McRoot> {
    let mut a = start;
    for it in 1..=50 {
        let (v, d) = f(a);
        if !v.is_finite() || !d.is_finite() {
            return Err(Error::NonFinite(what));
        }
        if !(d < 0.0) {
            break;
        }
        let step = -v / d;
        a += step;
        if step.abs() < 1e-8 {
            return Ok(McRoot { alpha: a, iterations: it });
        }
    }
    let r = solve_decreasing(&f, start).ok_or(Error::NonFinite(what))?;
    Ok(McRoot {
        alpha: r.x,
        iterations: r.iterations,
    })
}

/// Weight maximizing the sampled gain of table column `c`.
pub fn mc_newton_select(c: usize, tables: &CountTables, alpha0: f64) -> Result<McRoot> {
    let ratio = tables.total() / tables.l;
    let target = tables.t_sum(c);
    mc_newton(
        |a| (target - ratio * tables.s_r(1, a, c), -ratio * tables.s_r(2, a, c)),
        alpha0,
        "gain update",
    )
}

/// Sampled gain `N + alpha sum_y t_y(c) - (N/L) s_0(alpha, c)`.
pub fn mc_gain(c: usize, tables: &CountTables, alpha: f64) -> f64 {
    let n = tables.total();
    n + alpha * tables.t_sum(c) - n / tables.l * tables.s_r(0, alpha, c)
}

/// Sampled solution of the parameter condition for coordinate `i`.
pub fn mc_newton_estimate(i: usize, tables: &CountTables, gamma0: f64) -> Result<McRoot> {
    let ratio = tables.total() / tables.l;
    let target = tables.t_sum(i);
    mc_newton(
        |a| (target - ratio * tables.u_r(0, a, i), -ratio * tables.u_r(1, a, i)),
        gamma0,
        "parameter update",
    )
}

/// Sampled gains of candidate properties, in the order given.
pub fn mc_gains(samples: &SampleSet, candidates: &[Property]) -> Vec<Candidate> {
    let tables = CountTables::build(samples, candidates, ScalingMass::IncludeRoot);
    candidates
        .iter()
        .enumerate()
        .filter_map(|(c, p)| {
            let vals: Vec<&u32> = tables.s[c].keys().collect();
            if vals.len() <= 1 {
                return Some(Candidate {
                    property: p.clone(),
                    gain: 0.0,
                    alpha: 0.0,
                    degenerate: true,
                });
            }
            match mc_newton_select(c, &tables, 0.0) {
                Ok(r) => Some(Candidate {
                    property: p.clone(),
                    gain: mc_gain(c, &tables, r.alpha),
                    alpha: r.alpha,
                    degenerate: false,
                }),
                Err(e) => {
                    warn!("skipping candidate `{p}`: {e}");
                    None
                }
            }
        })
        .collect()
}

/// One sampled parameter step; properties absent from the samples keep
/// their weight.
pub fn mc_im_step(model: &Model, samples: &SampleSet, scaling: ScalingMass) -> Result<Vec<f64>> {
    let tables = CountTables::build(samples, &model.properties, scaling);
    let mut lambda = model.lambda.clone();
    for (i, p) in model.properties.iter().enumerate() {
        if !scaling.scales(p) {
            continue;
        }
        if tables.u[i].is_empty() || tables.t_sum(i) == 0.0 {
            warn!("property `{p}` does not occur in the sample; weight left unchanged");
            continue;
        }
        lambda[i] += mc_newton_estimate(i, &tables, 0.0)?.alpha;
    }
    Ok(lambda)
}

#[derive(Clone, Debug)]
pub struct McOptions {
    pub sampler: SamplerOptions,
    /// Sampled parameter steps per round.
    pub iters: usize,
    /// Stop a round's estimation when no weight moves by more than this.
    pub tol: f64,
    pub scaling: ScalingMass,
}

/// Property induction with every expectation estimated from samples. The
/// log-likelihood column is exact when the space is small enough to
/// enumerate and NaN otherwise.
pub fn induce_mc(
    start: Model,
    program: &Program,
    corpus: &Corpus,
    depth: u32,
    opts: &InduceOptions,
    mc: &McOptions,
) -> Result<Induction> {
    if opts.rounds == 0 {
        return Err(Error::Invalid("at least one induction round is required".into()));
    }
    let space = Space::build(program, corpus, depth, DEFAULT_SPACE_LIMIT).ok();
    let exact_l = |m: &Model| space.as_ref().map_or(f64::NAN, |s| Evaluation::new(m, s).log_lik);
    let mut model = start;
    let mut rounds = Vec::new();
    let mut stopped_early = false;
    let mut epoch = 0u64;
    for round in 1..=opts.rounds {
        let samples = draw_samples(program, &model, corpus, depth, &mc.sampler, epoch)?;
        epoch += 1;
        let props = generate_candidates(&model, program, &samples.queries, samples.trees(), opts.cap);
        let best = match choose_best(mc_gains(&samples, &props)) {
            Ok(sel) => sel.best,
            Err(Error::NoCandidates) => {
                stopped_early = true;
                break;
            }
            Err(e) => return Err(e),
        };
        if best.degenerate || best.gain < opts.gain_tol {
            stopped_early = true;
            break;
        }
        let label = best.property.serialize(program);
        if opts.cold_start {
            model.lambda.iter_mut().for_each(|l| *l = 0.0);
            model.push(best.property, 0.0);
        } else {
            model.push(best.property, best.alpha);
        }
        for _ in 0..mc.iters {
            let samples = draw_samples(program, &model, corpus, depth, &mc.sampler, epoch)?;
            epoch += 1;
            let next = mc_im_step(&model, &samples, mc.scaling)?;
            let moved = next.iter().zip(&model.lambda).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            model.lambda = next;
            if moved < mc.tol {
                break;
            }
        }
        rounds.push(RoundLog {
            round,
            gain: best.gain,
            property: label,
            log_lik: exact_l(&model),
        });
    }
    Ok(Induction {
        model,
        rounds,
        stopped_early,
    })
}
