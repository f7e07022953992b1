//! `pclp`: batch front end for proof enumeration, clause-choice
//! reestimation, property induction, sampling and best-proof search.

mod regression;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use pclp_core::clp::{enumerate_limited, Corpus, Program};
use pclp_core::earley::{
    best_by_enumeration, best_proof_clause_weights, best_proof_subtree_props, check_disjoint, Best,
};
use pclp_core::induction::{induce, ImOptions, InduceOptions, Induction, ScalingMass};
use pclp_core::loglinear::{space_log_lik, tree_ml, Evaluation, Model, Property, Space, DEFAULT_SPACE_LIMIT};
use pclp_core::numeric::fmt_num;
use pclp_core::sampler::{draw_samples, induce_mc, McOptions, SamplerOptions};
use pclp_core::scf::{erf_reestimate, normalized_tree_dist, scf_prob, ChoiceParams};
use pclp_core::Error;

#[derive(Parser)]
#[command(name = "pclp", version, about = "Probabilistic constraint logic programs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// List every proof of every corpus query.
    Enumerate,
    /// One expected-frequency reestimation step, compared with the
    /// maximum-likelihood tree distribution.
    ErfDemo,
    /// Select properties and fit their weights.
    Induce,
    /// Dump Metropolis-Hastings samples.
    Sample,
    /// Highest-weight proof of each query.
    Best,
    /// Corpus likelihood under a model, or the built-in regression checks
    /// when no program is given.
    Eval,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Exact,
    Mc,
}

#[derive(Args, Clone)]
struct Opts {
    #[arg(long, global = true)]
    program: Option<PathBuf>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Maximum number of resolution steps per proof.
    #[arg(long, global = true, default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..))]
    depth: u32,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Mode::Exact)]
    mode: Mode,
    /// Retained samples per query.
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    samples: Option<u64>,
    #[arg(long, global = true, default_value_t = 1000)]
    burnin: usize,
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    rounds: u64,
    /// Estimation iterations per round (exact: at most; mc: sampled steps).
    #[arg(long, global = true, value_parser = clap::value_parser!(u64).range(1..))]
    iters: Option<u64>,
    #[arg(long, global = true, value_parser = positive)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Exit with status 3 when some query has no proof.
    #[arg(long, global = true)]
    strict: bool,
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Failure {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    fn other(message: impl Into<String>) -> Failure {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn from_core(e: Error, strict: bool) -> Failure {
        let code = match e {
            Error::Syntax(_) => 2,
            Error::NoProof(_) if strict => 3,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<String, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PCLP_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Enumerate => cmd_enumerate(&cli.opts),
        Command::ErfDemo => cmd_erf_demo(&cli.opts),
        Command::Induce => cmd_induce(&cli.opts),
        Command::Sample => cmd_sample(&cli.opts),
        Command::Best => cmd_best(&cli.opts),
        Command::Eval => cmd_eval(&cli.opts),
    };
    match result {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("pclp: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::other(format!("{}: {e}", path.display())))
}

fn load_program(opts: &Opts) -> Result<Program, Failure> {
    let path = opts.program.as_deref().ok_or_else(|| Failure::usage("--program is required"))?;
    Program::parse(&read(path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn load_corpus(opts: &Opts) -> Result<Corpus, Failure> {
    let path = opts.corpus.as_deref().ok_or_else(|| Failure::usage("--corpus is required"))?;
    let c = Corpus::parse(&read(path)?).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    if c.is_empty() {
        return Err(Failure::usage(format!("{}: no queries", path.display())));
    }
    Ok(c)
}

fn load_model(opts: &Opts, program: &Program) -> Result<Model, Failure> {
    let p0 = ChoiceParams::uniform(program);
    match &opts.model {
        None => Ok(Model::base(p0)),
        Some(path) => {
            Model::parse(&read(path)?, program, p0).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
        }
    }
}

fn write_out(opts: &Opts, text: &str) -> Result<(), Failure> {
    if let Some(path) = &opts.out {
        fs::write(path, text).map_err(|e| Failure::other(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn build_space(program: &Program, corpus: &Corpus, opts: &Opts) -> Result<Space, Failure> {
    Space::build(program, corpus, opts.depth, DEFAULT_SPACE_LIMIT).map_err(|e| Failure::from_core(e, opts.strict))
}

fn cmd_enumerate(opts: &Opts) -> Outcome {
    let program = load_program(opts)?;
    let corpus = load_corpus(opts)?;
    let p0 = ChoiceParams::uniform(&program);
    let mut out = String::new();
    let mut missing = Vec::new();
    for (i, e) in corpus.entries.iter().enumerate() {
        let en = enumerate_limited(&program, &e.query, opts.depth, DEFAULT_SPACE_LIMIT)
            .map_err(|err| Failure::from_core(err, opts.strict))?;
        let _ = writeln!(out, "query {}\t{}\tx{}", i + 1, e.query, e.count);
        if en.trees.is_empty() {
            let _ = writeln!(out, "  no proof");
            missing.push(e.query.to_string());
        }
        for t in &en.trees {
            let _ = writeln!(out, "  {}\t{}\t{}", t.bracketed(), t.user_answer(), fmt_num(scf_prob(&p0, t)));
        }
        let _ = writeln!(out, "  {} trees, {} censored", en.trees.len(), en.censored);
    }
    finish_with_missing(opts, out, &missing)
}

fn finish_with_missing(opts: &Opts, out: String, missing: &[String]) -> Outcome {
    if opts.strict && !missing.is_empty() {
        print!("{out}");
        return Err(Failure {
            code: 3,
            message: format!("no proof for {}", missing.join("; ")),
        });
    }
    write_out(opts, &out)?;
    Ok(out)
}

fn cmd_erf_demo(opts: &Opts) -> Outcome {
    let program = load_program(opts)?;
    let corpus = load_corpus(opts)?;
    let space = build_space(&program, &corpus, opts)?;
    let pi = ChoiceParams::uniform(&program);
    let table = erf_reestimate(&pi, &program, &corpus, opts.depth).map_err(|e| Failure::from_core(e, opts.strict))?;
    let mut out = String::from("clause\tN\tdenominator\tpi\n");
    for c in program.clauses() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            program.label(c.id),
            fmt_num(table.expected_of(c.id)),
            fmt_num(table.denominator_of(c.id)),
            fmt_num(table.params.get(c.id))
        );
    }
    let renorm = normalized_tree_dist(&table.params, &space.trees).map_err(|e| Failure::from_core(e, opts.strict))?;
    let ml = tree_ml(&space, &renorm, 100_000);
    out.push_str("query\ttree\treestimated\tml\n");
    for (x, t) in space.trees.iter().enumerate() {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", t.query, t.bracketed(), fmt_num(renorm[x]), fmt_num(ml[x]));
    }
    let (l1, l2) = (space_log_lik(&space, &renorm), space_log_lik(&space, &ml));
    let _ = writeln!(out, "likelihood reestimated\t{}", fmt_num(l1.exp()));
    let _ = writeln!(out, "likelihood ml\t{}", fmt_num(l2.exp()));
    let verdict = if l2 > l1 + 1e-12 { "ml is higher" } else { "reestimation is not worse" };
    let _ = writeln!(out, "verdict\t{verdict}");
    write_out(opts, &out)?;
    Ok(out)
}

fn cmd_induce(opts: &Opts) -> Outcome {
    let program = load_program(opts)?;
    let corpus = load_corpus(opts)?;
    let start = load_model(opts, &program)?;
    let core = |e| Failure::from_core(e, opts.strict);
    let mut iopts = InduceOptions {
        rounds: opts.rounds as usize,
        ..InduceOptions::default()
    };
    let result: Induction = match opts.mode {
        Mode::Exact => {
            iopts.im = ImOptions {
                tol: opts.tol.unwrap_or(ImOptions::default().tol),
                max_iters: opts.iters.map_or(ImOptions::default().max_iters, |n| n as usize),
                scaling: ScalingMass::ExcludeRoot,
                ..ImOptions::default()
            };
            let space = build_space(&program, &corpus, opts)?;
            induce(start, &space, &program, &iopts).map_err(core)?
        }
        Mode::Mc => {
            let mc = McOptions {
                sampler: mc_sampler(opts)?,
                iters: opts.iters.map_or(10, |n| n as usize),
                tol: opts.tol.unwrap_or(1e-3),
                scaling: ScalingMass::ExcludeRoot,
            };
            induce_mc(start, &program, &corpus, opts.depth, &iopts, &mc).map_err(core)?
        }
    };
    let mut out = String::from("round\tgain\tproperty\tL\texpL\n");
    for r in &result.rounds {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.round,
            fmt_num(r.gain),
            r.property,
            fmt_num(r.log_lik),
            fmt_num(r.log_lik.exp())
        );
    }
    if result.stopped_early {
        let _ = writeln!(out, "# stopped early: no candidate improves the likelihood");
    }
    let model_text = result.model.write(&program);
    match &opts.out {
        Some(path) => fs::write(path, &model_text).map_err(|e| Failure::other(format!("{}: {e}", path.display())))?,
        None => {
            out.push('\n');
            out.push_str(&model_text);
        }
    }
    Ok(out)
}

fn mc_sampler(opts: &Opts) -> Result<SamplerOptions, Failure> {
    let (Some(seed), Some(samples)) = (opts.seed, opts.samples) else {
        return Err(Failure::usage("--mode mc needs --seed and --samples"));
    };
    Ok(SamplerOptions {
        samples: samples as usize,
        burn_in: opts.burnin,
        seed,
        joint: true,
        ..SamplerOptions::default()
    })
}

fn cmd_sample(opts: &Opts) -> Outcome {
    let program = load_program(opts)?;
    let corpus = load_corpus(opts)?;
    let model = load_model(opts, &program)?;
    let sopts = SamplerOptions {
        samples: opts.samples.map_or(SamplerOptions::default().samples, |n| n as usize),
        burn_in: opts.burnin,
        seed: opts.seed.unwrap_or(0),
        ..SamplerOptions::default()
    };
    let set = draw_samples(&program, &model, &corpus, opts.depth, &sopts, 0).map_err(|e| Failure::from_core(e, opts.strict))?;
    let mut out = String::new();
    for (i, chain) in set.chains.iter().enumerate() {
        for (t, _) in chain {
            let nu: Vec<String> = model.properties.iter().map(|p| p.count(t).to_string()).collect();
            let _ = writeln!(out, "{}\t{:016x}\t{}", i + 1, t.hash64(), nu.join(","));
        }
    }
    write_out(opts, &out)?;
    if opts.out.is_some() {
        return Ok(String::new());
    }
    Ok(out)
}

/// Properties other than `root` that are all single-node patterns.
fn clause_level(model: &Model) -> bool {
    model.properties.iter().all(|p| match p {
        Property::Root => true,
        Property::Tree(pat) => pat.children.iter().all(Option::is_none),
        Property::Bind { .. } => false,
    })
}

fn best_of(program: &Program, q: &std::sync::Arc<pclp_core::clp::Query>, model: &Model, depth: u32) -> pclp_core::Result<Best> {
    if clause_level(model) {
        let mut weights: std::collections::HashMap<_, f64> =
            program.clauses().map(|c| (c.id, model.p0.get(c.id).ln())).collect();
        let mut constant = 0.0;
        for (p, l) in model.properties.iter().zip(&model.lambda) {
            match p {
                Property::Tree(pat) => *weights.get_mut(&pat.clause).expect("validated pattern") += l,
                _ => constant += l,
            }
        }
        let mut b = best_proof_clause_weights(program, q, &weights, depth)?;
        b.log_weight += constant;
        return Ok(b);
    }
    match check_disjoint(program, model) {
        Ok(()) => best_proof_subtree_props(program, q, model, depth),
        Err(e) => {
            warn!("{e}; scoring every proof instead");
            best_by_enumeration(program, q, model, depth, DEFAULT_SPACE_LIMIT)
        }
    }
}

fn cmd_best(opts: &Opts) -> Outcome {
    let program = load_program(opts)?;
    let corpus = load_corpus(opts)?;
    let model = load_model(opts, &program)?;
    let mut out = String::new();
    let mut missing = Vec::new();
    for e in &corpus.entries {
        match best_of(&program, &e.query, &model, opts.depth) {
            Ok(b) => {
                let _ = writeln!(out, "{}\t{}\t{}", e.query, fmt_num(b.log_weight), b.tree.bracketed());
            }
            Err(Error::NoProof(_)) => {
                let _ = writeln!(out, "{}\tno proof", e.query);
                missing.push(e.query.to_string());
            }
            Err(err) => return Err(Failure::from_core(err, opts.strict)),
        }
    }
    finish_with_missing(opts, out, &missing)
}

fn cmd_eval(opts: &Opts) -> Outcome {
    if opts.program.is_none() {
        let report = regression::run();
        let text = report.text();
        write_out(opts, &text)?;
        if report.failures() > 0 {
            print!("{text}");
            return Err(Failure::other(format!("{} regression checks failed", report.failures())));
        }
        return Ok(text);
    }
    let program = load_program(opts)?;
    let corpus = load_corpus(opts)?;
    let model = load_model(opts, &program)?;
    let space = build_space(&program, &corpus, opts)?;
    info!("{} trees over {} queries", space.len(), space.queries.len());
    let l = Evaluation::new(&model, &space).log_lik;
    let out = format!("L\t{}\nexpL\t{}\n", fmt_num(l), fmt_num(l.exp()));
    write_out(opts, &out)?;
    Ok(out)
}
