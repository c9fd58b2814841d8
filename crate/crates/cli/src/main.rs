use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use dyadica::alpert::AlpertSystem;
use dyadica::appendix::{series_report, AppendixConfig};
use dyadica::constants::{ordering_report, OrderingParams, Pair};
use dyadica::corona::{check_quantitative, cz_stopping, shifted_overlap};
use dyadica::estimate::ConstantEstimate;
use dyadica::forms::{is_good, random_wavelet, FormParams, Forms};
use dyadica::grid::CubeId;
use dyadica::kernel::{AscentOptions, KernelSpec};
use dyadica::measure::{doubling_report, generate, AppendixSide, MeasureFile, MeasureKind};
use dyadica::report::{csv_field, csv_preamble, envelope};
use dyadica::squarefn::{ratio_report, SquareKind};
use dyadica::verify::{verify_all, VerifyConfig};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "dyadica", version, about = "Dyadic two-weight harmonic analysis at desk scale")]
struct Cli {
    /// Worker threads (overrides DYADICA_WORKERS).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate or inspect measures.
    #[command(subcommand)]
    Measure(MeasureCmd),
    /// CZ stopping tree of |f| and its quantitative properties.
    Corona(CoronaArgs),
    /// Square-function ratios over seeded random functions.
    Square(SquareArgs),
    /// Testing, Muckenhoupt, WBP and norm constants of a weight pair.
    Constants(ConstantsArgs),
    /// Decomposition identities of the bilinear form.
    Forms(FormsArgs),
    /// Quadratic sums of the weight pair separating A_p from its quadratic offset version.
    Counterexample(CounterArgs),
    /// Run the acceptance suite.
    VerifyAll(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Uniform,
    Cascade,
    Binomial,
    Power,
    Appendix,
}

#[derive(Subcommand)]
enum MeasureCmd {
    /// Write a measure file of point masses.
    Gen(GenArgs),
    /// Doubling constant and exponent of a measure file.
    Report {
        #[arg(long)]
        measure: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long)]
    depth: u32,
    #[arg(long, default_value_t = 0.25)]
    beta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Left-child share of the binomial cascade.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    t: f64,
    /// Exponent of the power density.
    #[arg(long, default_value_t = 1.0)]
    a: f64,
    #[arg(long, default_value_t = 1.5)]
    p: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// `sigma` or `omega` for the appendix weights.
    #[arg(long, default_value = "sigma")]
    side: String,
    #[arg(short = 'o', long)]
    out: PathBuf,
}

#[derive(Args)]
struct CoronaArgs {
    #[arg(long)]
    measure: PathBuf,
    /// JSON array of values (or `{"values": [...]}`) in the measure file's atom order.
    #[arg(long)]
    f: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 2)]
    tau: u32,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SqKind {
    Haar,
    Alpert,
    Corona,
    Shifted,
    RhoDelta,
}

#[derive(Args)]
struct SquareArgs {
    #[arg(long, value_enum)]
    kind: SqKind,
    #[arg(long, default_value_t = 1)]
    kappa: u32,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long)]
    seed: u64,
    /// Measure file; a depth-8 cascade with the same seed when absent.
    #[arg(long)]
    measure: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 2)]
    tau: u32,
    #[arg(long, default_value_t = 1)]
    rho: u32,
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    /// Use the scalar weight form of the rho-delta square function.
    #[arg(long)]
    literal: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ConstantsArgs {
    /// Kernel spec JSON, e.g. {"family":"hilbert","lambda":0,"delta":0.1,"R":1.0}.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    sigma: PathBuf,
    #[arg(long)]
    omega: PathBuf,
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    #[arg(long, default_value_t = 1)]
    kappa: u32,
    #[arg(long, default_value_t = 1)]
    rho: u32,
    #[arg(long, default_value_t = 3.0)]
    c0: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    starts: usize,
    #[arg(long, default_value_t = 500)]
    iterations: usize,
    /// CSV table of constants (JSON when the path ends in .json).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Identity {
    All,
    Size,
    Canonical,
    FarBelow,
    Ntv,
}

#[derive(Args)]
struct FormsArgs {
    #[arg(long, value_enum, default_value = "all")]
    identity: Identity,
    #[arg(long, default_value_t = 5)]
    depth: u32,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 2)]
    kappa: u32,
    #[arg(long, default_value_t = 3)]
    rho: u32,
    #[arg(long, default_value_t = 0.9)]
    eps: f64,
    #[arg(long, default_value_t = 2)]
    tau: u32,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 1.0 / 64.0)]
    delta: f64,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct CounterArgs {
    #[arg(long, default_value_t = 1.5)]
    p: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 1_000_000)]
    nmax: usize,
    #[arg(long, default_value_t = 1000)]
    n0: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 8)]
    depth: u32,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Comma-separated criterion ids; all when absent.
    #[arg(long, value_delimiter = ',')]
    only: Vec<u32>,
    #[arg(long)]
    report: Option<PathBuf>,
}

/// Usage and input errors exit with 2, failed checks with 1.
enum Failure {
    Usage(String),
    Check(String),
}

type Run = Result<(), Failure>;

fn usage<E: std::fmt::Display>(ctx: &str) -> impl Fn(E) -> Failure + '_ {
    move |e| Failure::Usage(format!("{ctx}: {e}"))
}

fn read_json(path: &Path) -> Result<Value, Failure> {
    let s = fs::read_to_string(path).map_err(usage(&path.display().to_string()))?;
    serde_json::from_str(&s).map_err(usage(&path.display().to_string()))
}

fn read_measure(path: &Path) -> Result<MeasureFile, Failure> {
    MeasureFile::from_json(&read_json(path)?).map_err(usage(&path.display().to_string()))
}

fn write(path: &Path, body: &str) -> Run {
    fs::write(path, body).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn emit_json(path: Option<&Path>, command: &str, config: &Value, result: &Value) -> Run {
    let env = envelope(command, config, result);
    let text = serde_json::to_string_pretty(&env).expect("json values serialize");
    match path {
        Some(p) => write(p, &(text + "\n")),
        None => {
            out(&(text + "\n"));
            Ok(())
        }
    }
}

/// Writes to stdout, ignoring a closed pipe.
fn out(s: &str) {
    use std::io::Write;
    let _ = std::io::stdout().write_all(s.as_bytes());
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let workers = cli.workers.or_else(|| std::env::var("DYADICA_WORKERS").ok().and_then(|v| v.parse().ok()));
    if let Some(w) = workers {
        if w == 0 {
            eprintln!("error: field `workers`: must be positive");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let r = match cli.cmd {
        Cmd::Measure(MeasureCmd::Gen(a)) => measure_gen(a),
        Cmd::Measure(MeasureCmd::Report { measure, report }) => measure_report(&measure, report.as_deref()),
        Cmd::Corona(a) => corona(a),
        Cmd::Square(a) => square(a),
        Cmd::Constants(a) => constants(a),
        Cmd::Forms(a) => forms(a),
        Cmd::Counterexample(a) => counterexample(a),
        Cmd::VerifyAll(a) => verify(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn measure_gen(a: GenArgs) -> Run {
    let kind = match a.kind {
        GenKind::Uniform => MeasureKind::Uniform { n: a.n, depth: a.depth },
        GenKind::Cascade => MeasureKind::Cascade { n: a.n, depth: a.depth, beta: a.beta, seed: a.seed },
        GenKind::Binomial => MeasureKind::Binomial { depth: a.depth, t: a.t },
        GenKind::Power => MeasureKind::Power { depth: a.depth, a: a.a },
        GenKind::Appendix => {
            let side = match a.side.as_str() {
                "sigma" => AppendixSide::Sigma,
                "omega" => AppendixSide::Omega,
                s => return Err(Failure::Usage(format!("field `side`: expected sigma or omega, got {s}"))),
            };
            MeasureKind::AppendixDiscretized { depth: a.depth, p: a.p, alpha: a.alpha, side }
        }
    };
    let grid = kind.grid().map_err(usage("measure"))?;
    let measure = generate(&kind).map_err(usage("measure"))?;
    let file = MeasureFile { grid, measure, source: serde_json::to_value(&kind).expect("kinds serialize") };
    let mut v = file.to_json();
    v["recipe"] = file.source.clone();
    write(&a.out, &(serde_json::to_string(&v).expect("json values serialize") + "\n"))
}

fn measure_report(path: &Path, report: Option<&Path>) -> Run {
    let m = read_measure(path)?;
    let d = doubling_report(&m.measure, &m.grid);
    let cfg = json!({ "measure": path.display().to_string(), "source": m.source });
    let res = json!({ "atoms": m.measure.len(), "total_mass": m.measure.total_mass(), "doubling": d });
    emit_json(report, "measure report", &cfg, &res)
}

fn read_values(path: &Path, want: usize) -> Result<Vec<f64>, Failure> {
    let v = read_json(path)?;
    let arr = v.as_array().or_else(|| v.get("values").and_then(Value::as_array));
    let arr = arr.ok_or_else(|| Failure::Usage(format!("{}: field `values`: expected an array of numbers", path.display())))?;
    if arr.len() != want {
        return Err(Failure::Usage(format!("{}: field `values`: {} entries for {want} atoms", path.display(), arr.len())));
    }
    arr.iter()
        .enumerate()
        .map(|(i, x)| x.as_f64().ok_or_else(|| Failure::Usage(format!("{}: field `values[{i}]`: not a number", path.display()))))
        .collect()
}

fn corona(a: CoronaArgs) -> Run {
    if !(a.gamma > 1.0) {
        return Err(Failure::Usage("field `gamma`: must exceed 1".into()));
    }
    let m = read_measure(&a.measure)?;
    let f = m.measure.from_input_order(&read_values(&a.f, m.measure.len())?);
    let root = m.grid.root();
    let d = cz_stopping(&m.measure, &f, a.gamma, root, m.grid.depth).map_err(usage("corona"))?;
    let q = check_quantitative(&d, &m.measure, &f);
    let (overlap, at) = shifted_overlap(&d, a.tau);
    let cfg = json!({ "measure": a.measure.display().to_string(), "f": a.f.display().to_string(), "gamma": a.gamma, "tau": a.tau });
    let res = json!({ "stopping": d.stopping, "alpha": d.alpha, "quantitative": q, "shifted_overlap": overlap, "overlap_cube": at });
    emit_json(a.report.as_deref(), "corona", &cfg, &res)?;
    if !q.passed() || overlap > a.tau as usize {
        return Err(Failure::Check(format!("{} property failures, shifted overlap {overlap}", q.failures.len())));
    }
    Ok(())
}

fn square(a: SquareArgs) -> Run {
    let kind = match a.kind {
        SqKind::Haar => SquareKind::Haar,
        SqKind::Alpert => SquareKind::Alpert { kappa: a.kappa },
        SqKind::Corona => SquareKind::Corona { kappa: a.kappa, gamma: a.gamma },
        SqKind::Shifted => SquareKind::ShiftedCorona { kappa: a.kappa, gamma: a.gamma, tau: a.tau },
        SqKind::RhoDelta => SquareKind::RhoDelta { kappa: a.kappa, rho: a.rho, delta: a.delta, literal: a.literal },
    };
    let m = match &a.measure {
        Some(p) => read_measure(p)?,
        None => {
            let kind = MeasureKind::Cascade { n: 1, depth: 8, beta: 0.3, seed: a.seed };
            MeasureFile { grid: kind.grid().map_err(usage("measure"))?, measure: generate(&kind).map_err(usage("measure"))?, source: json!(kind) }
        }
    };
    let sys = AlpertSystem::new(&m.measure, kind.kappa(), m.grid.depth, m.grid.root()).map_err(usage("kappa"))?;
    let r = ratio_report(&kind, &sys, &m.measure, a.p, a.trials, a.seed).map_err(usage("p"))?;
    let cfg = json!({ "kind": kind, "p": a.p, "trials": a.trials, "seed": a.seed, "measure": m.source });
    let res = json!({ "max_ratio": r.max_ratio, "mean_ratio": r.mean_ratio, "witness": r.witness });
    emit_json(a.report.as_deref(), "square", &cfg, &res)
}

fn constants(a: ConstantsArgs) -> Run {
    let spec: KernelSpec = serde_json::from_value(read_json(&a.spec)?).map_err(usage(&a.spec.display().to_string()))?;
    spec.validate().map_err(usage(&a.spec.display().to_string()))?;
    if !(a.p > 1.0 && a.p.is_finite()) {
        return Err(Failure::Usage(format!("field `p`: must lie in (1, inf), got {}", a.p)));
    }
    let s = read_measure(&a.sigma)?;
    let w = read_measure(&a.omega)?;
    if s.grid != w.grid || s.grid.dim != spec.n {
        return Err(Failure::Usage("field `omega`: sigma, omega and the kernel must share dimension and depth".into()));
    }
    let pair = Pair::new(spec, s.measure, w.measure, s.grid);
    let params = OrderingParams { p: a.p, lambda: spec.lambda, kappa: a.kappa, rho: a.rho, c0: a.c0 };
    let opts = AscentOptions { starts: a.starts, iterations: a.iterations, seed: a.seed };
    let rep = ordering_report(&pair, &params, &opts);
    let cfg = json!({
        "spec": spec, "sigma": s.source, "omega": w.source, "p": a.p, "kappa": a.kappa,
        "rho": a.rho, "c0": a.c0, "seed": a.seed, "starts": a.starts, "iterations": a.iterations,
    });
    let as_json = a.report.as_ref().is_some_and(|p| p.extension().is_some_and(|e| e == "json"));
    if as_json {
        emit_json(a.report.as_deref(), "constants", &cfg, &json!(rep))?;
    } else {
        let mut text = csv_preamble("constants", &cfg);
        text += ConstantEstimate::csv_header();
        text.push('\n');
        for e in &rep.constants {
            text += &e.csv_row();
            text.push('\n');
        }
        for c in &rep.checks {
            text += &format!("# check,{},{},{},{}\n", csv_field(&c.relation), c.lhs, c.rhs, c.holds);
        }
        match &a.report {
            Some(p) => write(p, &text)?,
            None => out(&text),
        }
    }
    if rep.violations() > 0 {
        return Err(Failure::Check(format!("{} ordering violations", rep.violations())));
    }
    Ok(())
}

fn forms(a: FormsArgs) -> Run {
    if !(4..=7).contains(&a.depth) {
        return Err(Failure::Usage(format!("field `depth`: identity runs need 4..=7, got {}", a.depth)));
    }
    if !(a.eps > 0.0 && a.eps < 1.0) {
        return Err(Failure::Usage("field `eps`: must lie in (0,1)".into()));
    }
    if a.rho < a.tau {
        return Err(Failure::Usage(format!("field `rho`: must be at least tau = {}", a.tau)));
    }
    let mk = |seed| generate(&MeasureKind::Cascade { n: 1, depth: a.depth, beta: 0.3, seed }).map_err(usage("measure"));
    let grid = MeasureKind::Uniform { n: 1, depth: a.depth }.grid().map_err(usage("depth"))?;
    let spec = KernelSpec::hilbert(a.delta, 1.0);
    spec.validate().map_err(usage("delta"))?;
    let pair = Pair::new(spec, mk(a.seed)?, mk(a.seed ^ 0xABCD)?, grid);
    let root = CubeId::root(1);
    let sa = AlpertSystem::new(&pair.sigma, a.kappa, a.depth, root).map_err(usage("kappa"))?;
    let oa = AlpertSystem::new(&pair.omega, a.kappa, a.depth, root).map_err(usage("kappa"))?;
    let params = FormParams { rho: a.rho, eps: a.eps, tau: a.tau, gamma: a.gamma, kappa: a.kappa };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let good = |c: &CubeId| is_good(c, &root, a.rho, a.eps);
    let f = random_wavelet(&sa, &mut rng, good);
    let g = random_wavelet(&oa, &mut rng, good);
    let d = cz_stopping(&pair.sigma, &f, a.gamma, root, a.depth).map_err(usage("gamma"))?;
    let ledger = Forms::new(&pair, &sa, &oa, params, &f, &g).ledger(&d).map_err(usage("forms"))?;
    let prefix = match a.identity {
        Identity::All => "",
        Identity::Size => "size",
        Identity::Canonical => "canonical",
        Identity::FarBelow => "far below",
        Identity::Ntv => "ntv",
    };
    let checked: Vec<_> = ledger.identities.iter().filter(|c| c.name.starts_with(prefix)).collect();
    let cfg = json!({
        "identity": prefix, "depth": a.depth, "seed": a.seed, "kappa": a.kappa, "rho": a.rho,
        "eps": a.eps, "tau": a.tau, "gamma": a.gamma, "delta": a.delta,
    });
    emit_json(a.report.as_deref(), "forms", &cfg, &json!({ "checked": checked, "ledger": ledger }))?;
    let failed = checked.iter().filter(|c| !c.holds).count();
    if failed > 0 {
        return Err(Failure::Check(format!("{failed} identities violated")));
    }
    Ok(())
}

fn counterexample(a: CounterArgs) -> Run {
    let cfg = AppendixConfig::new(a.p, a.alpha, a.eps, a.nmax).map_err(usage("counterexample"))?;
    if a.n0 == 0 || a.n0 > a.nmax {
        return Err(Failure::Usage("field `n0`: must lie in 1..=nmax".into()));
    }
    let r = series_report(&cfg, a.n0);
    let rc = json!({ "p": a.p, "alpha": a.alpha, "eps": a.eps, "nmax": a.nmax, "n0": a.n0 });
    let as_json = a.report.as_ref().is_some_and(|p| p.extension().is_some_and(|e| e == "json"));
    if as_json {
        return emit_json(a.report.as_deref(), "counterexample", &rc, &json!(r));
    }
    let mut text = csv_preamble("counterexample", &rc);
    text += &format!(
        "# eta={},lhs_exponent={},lhs_block_slope={},rhs_tail_constant={},rhs_tail_spread={},substitution_gap={}\n",
        r.eta, r.lhs_exponent, r.lhs_block_slope, r.rhs_tail_constant, r.rhs_tail_spread, r.substitution_gap
    );
    text += "N,rhs,lhs,lhs_pre\n";
    for s in &r.sums {
        text += &format!("{},{},{},{}\n", s.n, s.rhs, s.lhs, s.lhs_pre);
    }
    match &a.report {
        Some(p) => write(p, &text),
        None => {
            out(&text);
            Ok(())
        }
    }
}

fn verify(a: VerifyArgs) -> Run {
    if let Some(bad) = a.only.iter().find(|&&id| !(1..=10).contains(&id)) {
        return Err(Failure::Usage(format!("field `only`: no criterion {bad}")));
    }
    let cfg = VerifyConfig { seed: a.seed, depth: a.depth, only: a.only };
    let rep = verify_all(&cfg);
    out(&format!("{}report hash {}\n", rep.table(), rep.hash()));
    if let Some(p) = &a.report {
        emit_json(Some(p), "verify-all", &json!(cfg), &json!(rep.criteria))?;
    }
    if !rep.passed() {
        let failed: Vec<u32> = rep.criteria.iter().filter(|c| !c.passed).map(|c| c.id).collect();
        return Err(Failure::Check(format!("criteria {failed:?} failed")));
    }
    Ok(())
}
