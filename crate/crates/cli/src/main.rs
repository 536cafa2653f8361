//! `mirage` — drive the attack pipeline from the shell: parse/inspect
//! functions, embed, explain, attack, evaluate, build transfer matrices
//! and generate corpora.
//!
//! Exit codes: 0 success, 2 usage/config error, 1 runtime error. All
//! diagnostics go to stderr; reports with fixed seeds are byte-identical
//! across runs (wall-clock timings live in a separate `timing.txt`).

use clap::{Parser, Subcommand};
use mirage_core::asm::parse_function;
use mirage_core::attack::{
    baseline_exhaustive_select, run_attack, AttackConfig, AttackResult, BudgetMode,
    SelectionStrategy,
};
use mirage_core::corpus::{generate_corpus, CorpusConfig};
use mirage_core::eval::{
    evaluate, timing_report, transfer_matrix, FunctionPool, PoolEntry, Scenario,
};
use mirage_core::explain::{
    explain_sequence, gnn_explain, map_instructions_direct, map_tokens_to_instructions,
    type_vocab_map, InstructionImportance, LimeConfig,
};
use mirage_core::{FunctionUnit, Model, ModelKind};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "mirage", version, about = "Adversarial attacks on code-similarity models")]
struct Cli {
    /// Seed for every random choice in the command.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Similarity model: seq-token | seq-instr | graph.
    #[arg(long, global = true, default_value = "seq-instr")]
    model: String,
    /// Output directory; stdout when omitted (where sensible).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// key=value config file; flags win over file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a .basm file (or every .basm in a directory) and print a
    /// CFG summary.
    Parse { path: PathBuf },
    /// Print the model embedding of a function.
    Embed { path: PathBuf },
    /// Explain the similarity of SOURCE to TARGET; emits feature weights
    /// and per-instruction importance.
    Explain { source: PathBuf, target: PathBuf },
    /// Run the targeted attack of SOURCE against one or more TARGETS.
    Attack {
        source: PathBuf,
        #[arg(required = true)]
        targets: Vec<PathBuf>,
    },
    /// Attack + evaluate every scenario in a generated corpus directory.
    Eval { dir: PathBuf },
    /// Cross-model transferability matrix over a corpus directory.
    Transfer { dir: PathBuf },
    /// Generate a seeded corpus under --out.
    GenCorpus,
}

enum CliError {
    /// Bad usage, config or input format → exit 2.
    Usage(String),
    /// Legitimate command that failed at runtime → exit 1.
    Runtime(String),
}

impl CliError {
    fn usage(msg: impl Into<String>) -> CliError {
        CliError::Usage(msg.into())
    }
    fn runtime(msg: impl Into<String>) -> CliError {
        CliError::Runtime(msg.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

// ---------------------------------------------------------------------------
// Settings
// ---------------------------------------------------------------------------

struct Settings {
    attack: AttackConfig,
    corpus: CorpusConfig,
    k: usize,
}

impl Settings {
    fn load(cli: &Cli) -> Result<Settings, CliError> {
        let mut s = Settings {
            attack: AttackConfig {
                seed: cli.seed,
                ..AttackConfig::default()
            },
            corpus: CorpusConfig {
                seed: cli.seed,
                ..CorpusConfig::default()
            },
            k: 5,
        };
        if let Some(path) = &cli.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
            s.apply(&text)?;
        }
        // The command line owns the seed even when the file sets one.
        s.attack.seed = cli.seed;
        s.corpus.seed = cli.seed;
        Ok(s)
    }

    fn apply(&mut self, text: &str) -> Result<(), CliError> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("config line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: &dyn std::fmt::Display| {
                CliError::usage(format!("config key `{key}`: {e}"))
            };
            macro_rules! num {
                () => {
                    value.parse().map_err(|e| bad(&e))?
                };
            }
            match key {
                "thres" => self.attack.thres = num!(),
                "max_iter" => self.attack.max_iter = num!(),
                "budget" => self.attack.budget = num!(),
                "p_u" => self.attack.p_u = num!(),
                "top_n" => self.attack.top_n = num!(),
                "oracle_trials" => self.attack.oracle_trials = num!(),
                "budget_mode" => {
                    self.attack.budget_mode = match value {
                        "per-iteration" => BudgetMode::PerIteration,
                        "per-site" => BudgetMode::PerSite,
                        _ => return Err(CliError::usage(format!("budget_mode `{value}`"))),
                    }
                }
                "selection" => {
                    self.attack.selection = match value {
                        "explainer" => SelectionStrategy::Explainer,
                        "exhaustive" => SelectionStrategy::Exhaustive,
                        "random" => SelectionStrategy::Random,
                        _ => return Err(CliError::usage(format!("selection `{value}`"))),
                    }
                }
                "lime_samples" => self.attack.lime.samples = Some(num!()),
                "lime_flip_prob" => self.attack.lime.flip_prob = num!(),
                "lime_ridge" => self.attack.lime.ridge = num!(),
                "gnn_steps" => self.attack.gnn.steps = num!(),
                "gnn_lr" => self.attack.gnn.learning_rate = num!(),
                "gnn_lambda_size" => self.attack.gnn.lambda_size = num!(),
                "gnn_lambda_entropy" => self.attack.gnn.lambda_entropy = num!(),
                "pool_size" => self.corpus.pool_size = num!(),
                "scenarios" => self.corpus.scenarios = num!(),
                "related_source_prob" => self.corpus.related_source_prob = num!(),
                "instr_min" => self.corpus.instr_range.0 = num!(),
                "instr_max" => self.corpus.instr_range.1 = num!(),
                "block_min" => self.corpus.block_range.0 = num!(),
                "block_max" => self.corpus.block_range.1 = num!(),
                "k" => self.k = num!(),
                _ => return Err(CliError::usage(format!("unknown config key `{key}`"))),
            }
        }
        Ok(())
    }
}

fn model_from(cli: &Cli) -> Result<Model, CliError> {
    let kind = ModelKind::from_name(&cli.model)
        .ok_or_else(|| CliError::usage(format!("unknown model `{}`", cli.model)))?;
    Ok(Model::new(kind, cli.seed))
}

// ---------------------------------------------------------------------------
// IO helpers
// ---------------------------------------------------------------------------

fn read_function(path: &Path) -> Result<FunctionUnit, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let f = parse_function(&text)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    f.validate()
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok(f)
}

fn basm_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::usage(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "basm"))
        .collect();
    files.sort();
    Ok(files)
}

fn write_out(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, content)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn emit(out: &Option<PathBuf>, name: &str, content: &str) -> Result<(), CliError> {
    match out {
        Some(dir) => write_out(dir, name, content),
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn run(cli: &Cli) -> Result<(), CliError> {
    let settings = Settings::load(cli)?;
    match &cli.command {
        Command::Parse { path } => cmd_parse(path),
        Command::Embed { path } => cmd_embed(cli, path),
        Command::Explain { source, target } => cmd_explain(cli, &settings, source, target),
        Command::Attack { source, targets } => cmd_attack(cli, &settings, source, targets),
        Command::Eval { dir } => cmd_eval(cli, &settings, dir),
        Command::Transfer { dir } => cmd_transfer(cli, &settings, dir),
        Command::GenCorpus => cmd_gen_corpus(cli, &settings),
    }
}

fn cmd_parse(path: &Path) -> Result<(), CliError> {
    let files = if path.is_dir() {
        basm_files(path)?
    } else {
        vec![path.to_path_buf()]
    };
    if files.is_empty() {
        return Err(CliError::usage(format!("{}: no .basm files", path.display())));
    }
    for file in files {
        let f = read_function(&file)?;
        let edges = f.edges().map_err(|e| CliError::usage(e.to_string()))?;
        println!(
            "{}: fn {} blocks={} instrs={} edges={}",
            file.display(),
            f.name,
            f.blocks.len(),
            f.instruction_count(),
            edges.len()
        );
    }
    Ok(())
}

fn cmd_embed(cli: &Cli, path: &Path) -> Result<(), CliError> {
    let model = model_from(cli)?;
    let f = read_function(path)?;
    emit(&cli.out, "embedding.txt", &model.embed(&f).dump())
}

fn render_importance(imp: &InstructionImportance, f: &FunctionUnit) -> String {
    let mut out = String::new();
    for (g, _, _, instr) in f.instructions() {
        let _ = writeln!(out, "{g}\t{:.17e}\t{}", imp.scores[g], instr.render());
    }
    let ranking: Vec<String> = imp.ranking().iter().map(|i| i.to_string()).collect();
    let _ = writeln!(out, "ranking\t{}", ranking.join(","));
    out
}

fn cmd_explain(cli: &Cli, s: &Settings, source: &Path, target: &Path) -> Result<(), CliError> {
    let model = model_from(cli)?;
    let src = read_function(source)?;
    let tgt = read_function(target)?;
    let (weights_text, importance) = match model.kind {
        ModelKind::SeqToken | ModelKind::SeqInstr => {
            let view = model.feature_view(&src);
            let lime = LimeConfig {
                seed: cli.seed,
                ..s.attack.lime.clone()
            };
            let w = explain_sequence(&model, &view, &model.embed(&tgt), &lime)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            let mut text = String::new();
            for (i, v) in w.weights.iter().enumerate() {
                let _ = writeln!(text, "{i}\t{v:.17e}");
            }
            let _ = writeln!(text, "intercept\t{:.17e}", w.intercept);
            let _ = writeln!(text, "r_squared\t{:.17e}", w.r_squared);
            let imp = match model.kind {
                ModelKind::SeqToken => map_tokens_to_instructions(&w, &view),
                _ => map_instructions_direct(&w, &view),
            }
            .map_err(|e| CliError::runtime(e.to_string()))?;
            (text, imp)
        }
        ModelKind::Graph => {
            let g = gnn_explain(&model, &src, &tgt, &s.attack.gnn)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            let mut text = String::new();
            for (b, row) in g.feature_mask.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
                let _ = writeln!(text, "block{b}\t{}", cells.join("\t"));
            }
            for (e, v) in g.edge_mask.iter().enumerate() {
                let _ = writeln!(text, "edge{e}\t{v:.17e}");
            }
            let _ = writeln!(text, "final_loss\t{:.17e}", g.final_loss);
            let imp = type_vocab_map(&g.feature_mask, &src)
                .map_err(|e| CliError::runtime(e.to_string()))?;
            (text, imp)
        }
    };
    emit(&cli.out, "weights.txt", &weights_text)?;
    emit(&cli.out, "importance.txt", &render_importance(&importance, &src))
}

fn render_trace(result: &AttackResult) -> String {
    let mut out = String::new();
    for row in &result.trace {
        let sites: Vec<String> = row.sites.iter().map(|s| s.to_string()).collect();
        let accepted = row
            .accepted
            .as_ref()
            .map(|p| p.describe())
            .unwrap_or_else(|| "-".to_string());
        let _ = writeln!(
            out,
            "iter={} target={} sites={} sampled={} valid={} accepted={} runner_up={} sim_before={:.12} sim_after={:.12} objective={:.12}",
            row.iter,
            row.target_index,
            sites.join(","),
            row.candidates_sampled,
            row.candidates_valid,
            accepted,
            row.accepted_runner_up,
            row.sim_before,
            row.sim_after,
            row.objective,
        );
    }
    out
}

fn render_attack_summary(result: &AttackResult) -> String {
    let history: Vec<String> = result
        .objective_history
        .iter()
        .map(|o| format!("{o:.12}"))
        .collect();
    format!(
        "iterations={} m_instrs={} m_nodes={} objective_history={}\n",
        result.trace.len(),
        result.stats.m_instrs,
        result.stats.m_nodes,
        history.join(","),
    )
}

fn cmd_attack(cli: &Cli, s: &Settings, source: &Path, targets: &[PathBuf]) -> Result<(), CliError> {
    let model = model_from(cli)?;
    let src = read_function(source)?;
    let tgts: Vec<FunctionUnit> = targets
        .iter()
        .map(|p| read_function(p))
        .collect::<Result<_, _>>()?;
    let result =
        run_attack(&src, &tgts, &s.attack, &model).map_err(|e| CliError::runtime(e.to_string()))?;
    print!("{}", render_attack_summary(&result));
    if let Some(dir) = &cli.out {
        write_out(dir, "final.basm", &result.function.serialize())?;
        write_out(dir, "trace.txt", &render_trace(&result))?;
        write_out(dir, "stats.txt", &render_attack_summary(&result))?;
        let timing = format!(
            "explain={:.6}s perturb={:.6}s evaluate={:.6}s total={:.6}s\n",
            result.timing.explain_secs,
            result.timing.perturb_secs,
            result.timing.evaluate_secs,
            result.timing.total_secs,
        );
        write_out(dir, "timing.txt", &timing)?;
    }
    Ok(())
}

fn cmd_gen_corpus(cli: &Cli, s: &Settings) -> Result<(), CliError> {
    let dir = cli
        .out
        .as_ref()
        .ok_or_else(|| CliError::usage("gen-corpus requires --out"))?;
    let corpus = generate_corpus(&s.corpus);
    write_out(dir, "manifest.txt", &corpus.manifest)?;
    let pool_dir = dir.join("pool");
    // Distractors are shared across scenarios, so write them once from the
    // first pool.
    if let Some(first) = corpus.scenarios.first() {
        for e in first.pool.entries.iter().filter(|e| !e.is_target) {
            write_out(&pool_dir, &format!("{}.basm", e.function.name), &e.function.serialize())?;
        }
    }
    for scenario in &corpus.scenarios {
        let sdir = dir.join("scenarios").join(&scenario.name);
        write_out(&sdir, "source.basm", &scenario.source.serialize())?;
        for e in scenario.pool.entries.iter().filter(|e| e.is_target) {
            write_out(&sdir, &format!("{}.basm", e.function.name), &e.function.serialize())?;
        }
    }
    println!(
        "wrote {} scenarios, pool size {}",
        corpus.scenarios.len(),
        s.corpus.pool_size
    );
    Ok(())
}

struct CorpusOnDisk {
    distractors: Vec<FunctionUnit>,
    /// (scenario name, source, variants).
    scenarios: Vec<(String, FunctionUnit, Vec<FunctionUnit>)>,
}

fn read_corpus(dir: &Path) -> Result<CorpusOnDisk, CliError> {
    let distractors = basm_files(&dir.join("pool"))?
        .iter()
        .map(|p| read_function(p))
        .collect::<Result<Vec<_>, _>>()?;
    let scen_root = dir.join("scenarios");
    let mut scenario_dirs: Vec<PathBuf> = std::fs::read_dir(&scen_root)
        .map_err(|e| CliError::usage(format!("{}: {e}", scen_root.display())))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    scenario_dirs.sort();
    if scenario_dirs.is_empty() {
        return Err(CliError::usage(format!(
            "{}: no scenario directories",
            scen_root.display()
        )));
    }
    let mut scenarios = Vec::with_capacity(scenario_dirs.len());
    for sdir in scenario_dirs {
        let name = sdir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut source = None;
        let mut variants = Vec::new();
        for file in basm_files(&sdir)? {
            if file.file_name().is_some_and(|n| n == "source.basm") {
                source = Some(read_function(&file)?);
            } else {
                variants.push(read_function(&file)?);
            }
        }
        let source = source
            .ok_or_else(|| CliError::usage(format!("{}: missing source.basm", sdir.display())))?;
        if variants.is_empty() {
            return Err(CliError::usage(format!("{}: no target variants", sdir.display())));
        }
        scenarios.push((name, source, variants));
    }
    Ok(CorpusOnDisk { distractors, scenarios })
}

fn build_scenarios(
    corpus: &CorpusOnDisk,
    model: &Model,
    attack_cfg: &AttackConfig,
) -> Result<(Vec<Scenario>, Vec<AttackResult>), CliError> {
    let mut scenarios = Vec::with_capacity(corpus.scenarios.len());
    let mut results = Vec::with_capacity(corpus.scenarios.len());
    for (name, source, variants) in &corpus.scenarios {
        let result = run_attack(source, variants, attack_cfg, model)
            .map_err(|e| CliError::runtime(format!("{name}: {e}")))?;
        let mut entries: Vec<PoolEntry> = corpus
            .distractors
            .iter()
            .map(|d| PoolEntry { function: d.clone(), is_target: false })
            .collect();
        for v in variants {
            entries.push(PoolEntry { function: v.clone(), is_target: true });
        }
        let pool = FunctionPool::new(entries).map_err(|e| CliError::usage(e.to_string()))?;
        scenarios.push(Scenario {
            name: name.clone(),
            source: source.clone(),
            adversarial: result.function.clone(),
            pool,
        });
        results.push(result);
    }
    Ok((scenarios, results))
}

fn cmd_eval(cli: &Cli, s: &Settings, dir: &Path) -> Result<(), CliError> {
    let model = model_from(cli)?;
    let corpus = read_corpus(dir)?;
    let (scenarios, results) = build_scenarios(&corpus, &model, &s.attack)?;
    let report =
        evaluate(&model, &scenarios, s.k).map_err(|e| CliError::runtime(e.to_string()))?;
    print!("{}", report.render());

    let out = cli.out.clone().unwrap_or_else(|| dir.to_path_buf());
    write_out(&out, "report.txt", &report.render())?;
    write_out(&out, "rows.csv", &report.csv())?;

    // Timing lives apart from the deterministic reports.
    let select: Vec<f64> = results
        .iter()
        .flat_map(|r| r.trace.iter().map(|t| t.explain_secs))
        .collect();
    let generate: Vec<f64> = results.iter().map(|r| r.timing.total_secs).collect();
    let mut baseline = Vec::with_capacity(corpus.scenarios.len());
    for (_, source, variants) in &corpus.scenarios {
        let t = Instant::now();
        let _ = baseline_exhaustive_select(&model, source, &variants[0]);
        baseline.push(t.elapsed().as_secs_f64());
    }
    match timing_report(&select, &baseline, &generate) {
        Ok(t) => write_out(&out, "timing.txt", &t.render())?,
        Err(e) => write_out(&out, "timing.txt", &format!("unavailable: {e}\n"))?,
    }
    Ok(())
}

fn cmd_transfer(cli: &Cli, s: &Settings, dir: &Path) -> Result<(), CliError> {
    let corpus = read_corpus(dir)?;
    let kinds = [ModelKind::SeqToken, ModelKind::SeqInstr, ModelKind::Graph];
    let eval_models: Vec<Model> = kinds.iter().map(|k| Model::new(*k, cli.seed)).collect();
    let mut samples = Vec::with_capacity(kinds.len());
    for m in &eval_models {
        let (scenarios, _) = build_scenarios(&corpus, m, &s.attack)?;
        samples.push((m.kind, scenarios));
    }
    let matrix = transfer_matrix(&samples, &eval_models, s.k)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    print!("{}", matrix.render());
    if let Some(out) = &cli.out {
        write_out(out, "matrix.txt", &matrix.render())?;
    }
    Ok(())
}
