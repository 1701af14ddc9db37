mod output;
mod parse;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gwlab::conditioning::{
    self, accessibility_check, double_limit_scan, limits, nakaoka_diagnostics, q_kernel, q_process_limit,
    yaglom_invariants, yaglom_type, yaglom_with,
};
use gwlab::conditioning::set::parse_state_list;
use gwlab::montecarlo::{conditioned_estimate, Condition, SimConfig};
use gwlab::progeny::{
    progeny_conditioned_path_law, progeny_pmf_dp, progeny_pmf_formula, proposition_scaling, theorem2_verify,
    ProgenyQuery, MAX_FORMULA_DIM,
};
use gwlab::spectral::{mean_power_diagnostic, model_spectrum};
use gwlab::tilt::{self, associate, critical_tilt_in, extinction_vector, tilted_rho, TiltVector};
use gwlab::{BranchingModel, GwError, LatticeBox, PathEvent};
use serde_json::json;

use output::{coord_names, ints, num, opt, Manifest, Sink, Table};

#[derive(Parser)]
#[command(name = "gw", version, about = "Exact and Monte Carlo computations for multitype Galton-Watson processes")]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, env = "GW_THREADS", global = true)]
    threads: Option<usize>,
    /// Write `<name>.csv` and `<name>.manifest.json` here instead of stdout/stderr.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a model file and print its structural diagnostics.
    Validate { model: PathBuf },
    /// Perron root and vectors, with the convergence of rho^-n M^n.
    Spectral {
        model: PathBuf,
        #[arg(long, default_value_t = 20)]
        n_max: u32,
    },
    /// Extinction probability vector q.
    Extinction { model: PathBuf },
    /// Associated (tilted) process.
    Tilt {
        model: PathBuf,
        #[command(flatten)]
        tilt: TiltArgs,
        /// Also write the tilted model here.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Q-process transition kernel on a box.
    Qprocess {
        model: PathBuf,
        #[arg(long = "box")]
        bx: String,
        /// Tilt vector (default: the extinction vector q).
        #[arg(long)]
        a: Option<String>,
    },
    /// Yaglom limit, Yaglom-type limits and ratio diagnostics.
    Yaglom {
        model: PathBuf,
        #[arg(long = "box")]
        bx: String,
        #[arg(long)]
        x0: Option<String>,
        /// Largest total-variation gap tolerated between the two routes to the limit.
        #[arg(long, default_value_t = conditioning::yaglom::ROUTE_AGREEMENT_TOL)]
        route_tol: f64,
        /// Compute the limit conditioned on survival `order` generations later.
        #[arg(long)]
        order: Option<u32>,
        /// Emit the ratio diagnostics for n = 1..=N instead.
        #[arg(long, value_name = "N")]
        nakaoka: Option<u32>,
        /// Target states for the ratio diagnostics, e.g. `[(1,0),(0,1)]`.
        #[arg(long, default_value = "")]
        targets: String,
    },
    /// Path law conditioned on `X_{k+n} in S` and extinction, against its limit.
    Condition {
        model: PathBuf,
        #[arg(long)]
        set: String,
        /// Lags, e.g. `10..40:10`.
        #[arg(long)]
        n: String,
        /// `x0;k1:x1;...`
        #[arg(long)]
        path: String,
        /// Box for the accessibility check of the set.
        #[arg(long = "box")]
        bx: Option<String>,
    },
    /// Marginal at (k, n) against the size-biased Yaglom law of the tilted process.
    DoubleLimit {
        model: PathBuf,
        #[arg(long)]
        z: String,
        #[arg(long = "box")]
        bx: String,
        /// Use k = floor(n t) instead of k = n.
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, default_value_t = 25)]
        n_max: u32,
        #[arg(long)]
        x0: Option<String>,
    },
    /// Total-progeny laws and the limits conditioned on them.
    #[command(subcommand)]
    Progeny(ProgenyCmd),
    /// Monte Carlo estimate of a path probability, possibly conditioned.
    Mc {
        model: PathBuf,
        #[arg(long)]
        path: String,
        #[arg(long)]
        set: Option<String>,
        #[arg(long)]
        n: Option<u32>,
        /// Also require extinction within the horizon.
        #[arg(long)]
        given_extinction: bool,
        /// Condition on the total progeny instead.
        #[arg(long, conflicts_with_all = ["set", "n"])]
        progeny: Option<String>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        reps: u64,
        #[arg(long, default_value_t = 200)]
        horizon: u32,
        #[arg(long, default_value_t = 100_000)]
        population_cap: u64,
    },
}

#[derive(Subcommand)]
enum ProgenyCmd {
    /// P_x0(N = n) by the closed formula and by dynamic programming.
    Pmf {
        model: PathBuf,
        #[arg(long)]
        x0: String,
        #[arg(long, required_unless_present = "cap")]
        n: Option<String>,
        /// Tabulate every n in this box instead.
        #[arg(long, conflicts_with = "n")]
        cap: Option<String>,
    },
    /// n^{d/2+1} P_x0(N = floor(n v)) for a critical model.
    Scaling {
        model: PathBuf,
        #[arg(long)]
        x0: String,
        #[arg(long)]
        n_range: String,
        #[command(flatten)]
        tilt: OptionalTilt,
    },
    /// Path law conditioned on N = floor(n v̄) against its limit.
    Theorem2 {
        model: PathBuf,
        #[arg(long)]
        path: String,
        #[arg(long)]
        n_range: String,
        /// Critical tilt vector (default: the scalar critical tilt).
        #[arg(long)]
        a: Option<String>,
    },
    /// Conditioned path laws of a process and of its associate, side by side.
    Lemma1 {
        model: PathBuf,
        #[command(flatten)]
        tilt: TiltArgs,
        #[arg(long)]
        x0: String,
        #[arg(long)]
        n: String,
        /// Length of the paths (to every state within the progeny box).
        #[arg(long, default_value_t = 1)]
        k: u32,
    },
}

#[derive(Args)]
struct TiltArgs {
    /// Explicit tilt `c1,...,cd` (or one value for all types).
    #[arg(long, conflicts_with = "critical")]
    a: Option<String>,
    /// Critical scalar tilt (the default).
    #[arg(long)]
    critical: bool,
    /// Search bracket for the critical tilt.
    #[arg(long, default_value = "0.001,10")]
    bracket: String,
}

#[derive(Args)]
struct OptionalTilt {
    #[arg(long, conflicts_with = "critical")]
    a: Option<String>,
    /// Tilt to criticality first.
    #[arg(long)]
    critical: bool,
}

struct Failure {
    kind: String,
    message: String,
    code: u8,
}

impl From<GwError> for Failure {
    fn from(e: GwError) -> Self {
        let code = match e {
            GwError::InvalidLaw { .. }
            | GwError::InvalidModel(_)
            | GwError::Domain(_)
            | GwError::Unsupported(_)
            | GwError::ZeroExtinction { .. }
            | GwError::NoCriticalTilt { .. }
            | GwError::Periodic { .. }
            | GwError::NotPositiveDefinite(_) => 2,
            GwError::Truncation { .. } => 3,
            GwError::DegenerateCondition(_) | GwError::NoAcceptance { .. } => 4,
            _ => 1,
        };
        Failure { kind: e.kind().into(), message: e.to_string(), code }
    }
}

type Run = std::result::Result<(), Failure>;

fn load(path: &PathBuf) -> std::result::Result<BranchingModel, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure { kind: "io".into(), message: format!("{}: {e}", path.display()), code: 2 })?;
    Ok(BranchingModel::from_json(&text)?)
}

fn resolve_tilt(model: &BranchingModel, t: &TiltArgs, m: &mut Manifest) -> gwlab::Result<TiltVector> {
    match &t.a {
        Some(a) => parse::tilt(a, model.dim()),
        None => {
            let b = parse::vector(&t.bracket, 2)?;
            m.summary("bracket", &b);
            m.tolerance("critical_tilt", tilt::CRITICAL_TOL);
            critical_tilt_in(model, (b[0], b[1]))
        }
    }
}

fn start(x0: &Option<String>, d: usize) -> gwlab::Result<Vec<u32>> {
    match x0 {
        Some(s) => parse::state(s, d),
        None => {
            let mut e = vec![0; d];
            e[0] = 1;
            Ok(e)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            eprint!("{msg}");
            eprintln!("{}", json!({"error": "usage", "message": msg.lines().next().unwrap_or("")}));
            return ExitCode::from(2);
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", json!({"error": "threads", "message": e.to_string()}));
            return ExitCode::from(1);
        }
    }
    let sink = Sink { dir: cli.out.clone() };
    match dispatch(cli.cmd, &sink) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({"error": f.kind, "message": f.message}));
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Cmd, sink: &Sink) -> Run {
    match cmd {
        Cmd::Validate { model } => validate(&model, sink),
        Cmd::Spectral { model, n_max } => spectral(&model, n_max, sink),
        Cmd::Extinction { model } => extinction(&model, sink),
        Cmd::Tilt { model, tilt, model_out } => tilt_cmd(&model, &tilt, model_out, sink),
        Cmd::Qprocess { model, bx, a } => qprocess(&model, &bx, a, sink),
        Cmd::Yaglom { model, bx, x0, route_tol, order, nakaoka, targets } => {
            let m = load(&model)?;
            match (order, nakaoka) {
                (Some(_), Some(_)) => Err(GwError::Domain("--order and --nakaoka are exclusive".into()).into()),
                (Some(n), None) => yaglom_order(&m, &bx, &x0, n, sink),
                (None, Some(n)) => nakaoka_cmd(&m, &bx, &x0, n, &targets, sink),
                (None, None) => yaglom_cmd(&m, &bx, &x0, route_tol, sink),
            }
        }
        Cmd::Condition { model, set, n, path, bx } => condition(&model, &set, &n, &path, bx, sink),
        Cmd::DoubleLimit { model, z, bx, t, n_max, x0 } => double_limit(&model, &z, &bx, t, n_max, &x0, sink),
        Cmd::Progeny(p) => match p {
            ProgenyCmd::Pmf { model, x0, n, cap } => progeny_pmf(&model, &x0, n, cap, sink),
            ProgenyCmd::Scaling { model, x0, n_range, tilt } => progeny_scaling(&model, &x0, &n_range, &tilt, sink),
            ProgenyCmd::Theorem2 { model, path, n_range, a } => progeny_theorem2(&model, &path, &n_range, a, sink),
            ProgenyCmd::Lemma1 { model, tilt, x0, n, k } => progeny_lemma1(&model, &tilt, &x0, &n, k, sink),
        },
        Cmd::Mc { model, path, set, n, given_extinction, progeny, seed, reps, horizon, population_cap } => {
            let m = load(&model)?;
            let d = m.dim();
            let ev = parse::path(&path, d)?;
            let condition = match (set, n, progeny) {
                (_, _, Some(p)) => Condition::Progeny(parse::state(&p, d)?),
                (Some(s), Some(lag), None) => {
                    Condition::SetAtLag { set: parse::set(&s, d)?, lag, given_extinction }
                }
                (None, None, None) => Condition::Always,
                _ => return Err(GwError::Domain("--set and --n go together".into()).into()),
            };
            let mut cfg = SimConfig::new(seed, reps, horizon)?;
            cfg.population_cap = population_cap;
            mc(&m, &ev, &condition, &cfg, sink)
        }
    }
}

fn validate(path: &PathBuf, sink: &Sink) -> Run {
    let model = load(path)?;
    let diag = model.validate();
    let mut m = Manifest::new("validate");
    m.model(&model).tolerance("normalization", gwlab::model::NORMALIZATION_TOL);
    let ok = diag.nonsingular && diag.positive_regular;
    let rho = if ok { Some(model_spectrum(&model)?.rho) } else { None };
    let report = json!({ "dim": model.dim(), "diagnostics": diag, "rho": rho, "valid": ok });
    sink.json("validate", &report, &m)?;
    if !ok {
        return Err(GwError::InvalidModel("the model must be nonsingular and positive regular".into()).into());
    }
    Ok(())
}

fn quantity_table() -> Table {
    Table::new(&["quantity", "index", "value"])
}

fn spectral(path: &PathBuf, n_max: u32, sink: &Sink) -> Run {
    let model = load(path)?;
    let spec = model_spectrum(&model)?;
    let gaps = mean_power_diagnostic(&model, n_max)?;
    let mut t = quantity_table();
    t.push(vec!["rho".into(), "0".into(), num(spec.rho)]);
    for (i, u) in spec.u.iter().enumerate() {
        t.push(vec!["u".into(), (i + 1).to_string(), num(*u)]);
    }
    for (i, v) in spec.v.iter().enumerate() {
        t.push(vec!["v".into(), (i + 1).to_string(), num(*v)]);
    }
    for g in &gaps {
        t.push(vec!["gap".into(), g.n.to_string(), num(g.gap)]);
    }
    let mut m = Manifest::new("spectral");
    m.model(&model).tolerance("rayleigh", gwlab::spectral::RAYLEIGH_TOL).summary("spectral", &spec);
    Ok(sink.csv("spectral", &t, &m)?)
}

fn extinction(path: &PathBuf, sink: &Sink) -> Run {
    let model = load(path)?;
    let e = extinction_vector(&model)?;
    let mut t = quantity_table();
    for (i, q) in e.q.iter().enumerate() {
        t.push(vec!["q".into(), (i + 1).to_string(), num(*q)]);
    }
    t.push(vec!["residual".into(), "0".into(), num(e.residual)]);
    t.push(vec!["iterations".into(), "0".into(), e.iterations.to_string()]);
    let mut m = Manifest::new("extinction");
    m.model(&model)
        .tolerance("step", tilt::EXTINCTION_STEP_TOL)
        .tolerance("residual", tilt::EXTINCTION_RESIDUAL_TOL);
    Ok(sink.csv("extinction", &t, &m)?)
}

fn tilt_cmd(path: &PathBuf, args: &TiltArgs, model_out: Option<PathBuf>, sink: &Sink) -> Run {
    let model = load(path)?;
    let mut m = Manifest::new("tilt");
    m.model(&model);
    let a = resolve_tilt(&model, args, &mut m)?;
    let tilted = associate(&model, &a)?;
    let rho = model_spectrum(&model)?.rho;
    let rho_bar = tilted_rho(&model, &a)?;
    let q = extinction_vector(&model)?.q;
    let mut t = quantity_table();
    for (i, c) in a.a.iter().enumerate() {
        t.push(vec!["a".into(), (i + 1).to_string(), num(*c)]);
    }
    t.push(vec!["rho".into(), "0".into(), num(rho)]);
    t.push(vec!["rho_bar".into(), "0".into(), num(rho_bar)]);
    t.push(vec!["critical_residual".into(), "0".into(), num(rho_bar - 1.0)]);
    for (i, qi) in q.iter().enumerate() {
        t.push(vec!["q".into(), (i + 1).to_string(), num(*qi)]);
    }
    let tilted_json = tilted.to_json();
    m.summary("tilted_model", &serde_json::from_str::<serde_json::Value>(&tilted_json).expect("model json"));
    let io = |e: std::io::Error| Failure { kind: "io".into(), message: e.to_string(), code: 1 };
    if let Some(p) = model_out {
        fs::write(p, &tilted_json).map_err(io)?;
    }
    if let Some(dir) = &sink.dir {
        fs::create_dir_all(dir).map_err(io)?;
        fs::write(dir.join("tilted_model.json"), &tilted_json).map_err(io)?;
    }
    Ok(sink.csv("tilt", &t, &m)?)
}

fn qprocess(path: &PathBuf, bx: &str, a: Option<String>, sink: &Sink) -> Run {
    let model = load(path)?;
    let d = model.dim();
    let bx = parse::lattice_box(bx, d)?;
    let a = match a {
        Some(a) => parse::tilt(&a, d)?,
        None => TiltVector::new(extinction_vector(&model)?.q)?,
    };
    let k = q_kernel(&model, &a, &bx)?;
    let mut header = coord_names("x", d);
    header.extend(coord_names("y", d));
    header.push("q".into());
    let mut t = Table::new(&header);
    for (i, row) in k.rows.iter().enumerate().skip(1) {
        let x = bx.state(i);
        for &(j, p) in &row.entries {
            let mut r = ints(&x);
            r.extend(ints(&bx.state(j)));
            r.push(num(p));
            t.push(r);
        }
    }
    let max_overflow = k.rows.iter().map(|r| r.overflow).fold(0.0, f64::max);
    let mut m = Manifest::new("qprocess");
    m.model(&model)
        .tolerance("row_sum", conditioning::qkernel::ROW_SUM_TOL)
        .summary("tilt", &a.a)
        .summary("rho_bar", &k.rho_bar)
        .summary("u_bar", &k.u_bar)
        .summary("box", &bx.upper())
        .summary("max_row_error", &k.max_row_error())
        .summary("max_overflow", &max_overflow);
    Ok(sink.csv("qprocess", &t, &m)?)
}

fn yaglom_cmd(model: &BranchingModel, bx: &str, x0: &Option<String>, route_tol: f64, sink: &Sink) -> Run {
    let d = model.dim();
    let bx = parse::lattice_box(bx, d)?;
    let x0 = start(x0, d)?;
    let y = yaglom_with(model, &x0, &bx, route_tol)?;
    let inv = yaglom_invariants(model, &y);
    let mut header = coord_names("z", d);
    header.extend(["nu", "nu_kernel", "mu_bar", "pi"].map(String::from));
    let mut t = Table::new(&header);
    for (i, z) in bx.states().enumerate().skip(1) {
        let mut r = ints(&z);
        r.push(num(y.nu.mass.values()[i]));
        r.push(num(y.nu_kernel.mass.values()[i]));
        r.push(num(y.mu_bar.mass.values()[i]));
        r.push(num(y.pi.values()[i]));
        t.push(r);
    }
    let mut m = Manifest::new("yaglom");
    m.model(model)
        .tolerance("route_agreement", route_tol)
        .tolerance("stationarity", conditioning::yaglom::YAGLOM_TV_TOL)
        .tolerance("gradient_step", conditioning::yaglom::GRADIENT_STEP)
        .summary("box", &bx.upper())
        .summary("x0", &x0)
        .summary("rho", &y.spectral.rho)
        .summary("kernel_rho", &y.kernel_rho)
        .summary("gamma", &y.gamma)
        .summary("route_gap", &y.route_gap)
        .summary("iterations", &[y.iterations, y.kernel_iterations])
        .summary("nu_overflow", &y.nu.overflow)
        .summary("invariants", &inv);
    Ok(sink.csv("yaglom", &t, &m)?)
}

fn yaglom_order(model: &BranchingModel, bx: &str, x0: &Option<String>, n: u32, sink: &Sink) -> Run {
    let d = model.dim();
    let bx = parse::lattice_box(bx, d)?;
    let x0 = start(x0, d)?;
    let r = yaglom_type(model, n, &bx, &x0)?;
    let mut header = coord_names("z", d);
    header.push("mass".into());
    let mut t = Table::new(&header);
    for (z, p) in bx.states().zip(r.dist.mass.values()).skip(1) {
        let mut row = ints(&z);
        row.push(num(*p));
        t.push(row);
    }
    let mut m = Manifest::new("yaglom-order");
    m.model(model)
        .tolerance("tv_change", limits::YAGLOM_TYPE_TV_TOL)
        .summary("stable_steps", &limits::STABLE_STEPS)
        .summary("order", &n)
        .summary("accepted_k", &r.k)
        .summary("overflow", &r.dist.overflow);
    Ok(sink.csv("yaglom_order", &t, &m)?)
}

fn nakaoka_cmd(model: &BranchingModel, bx: &str, x0: &Option<String>, n_max: u32, targets: &str, sink: &Sink) -> Run {
    let d = model.dim();
    let bx = parse::lattice_box(bx, d)?;
    let x = start(x0, d)?;
    let targets = if targets.is_empty() { vec![x.clone()] } else { parse_state_list(targets, d)? };
    let r = nakaoka_diagnostics(model, &x, &targets, n_max, Some(&bx))?;
    let mut header: Vec<String> =
        ["n", "increment_ratio", "difference_ratio", "survival_ratio"].map(String::from).to_vec();
    header.extend((1..=targets.len()).map(|j| format!("pi_hat_{j}")));
    let mut t = Table::new(&header);
    for row in &r.rows {
        let mut cells =
            vec![row.n.to_string(), num(row.increment_ratio), num(row.difference_ratio), num(row.survival_ratio)];
        cells.extend(row.pi_hat.iter().map(|p| num(*p)));
        t.push(cells);
    }
    let mut m = Manifest::new("nakaoka");
    m.model(model)
        .summary("tilted", &r.tilted)
        .summary("rho", &r.rho)
        .summary("x_dot_u", &r.x_dot_u)
        .summary("targets", &r.targets)
        .summary("pi_reference", &r.pi_reference);
    Ok(sink.csv("nakaoka", &t, &m)?)
}

fn condition(path: &PathBuf, set: &str, lags: &str, ev: &str, bx: Option<String>, sink: &Sink) -> Run {
    let model = load(path)?;
    let d = model.dim();
    let set = parse::set(set, d)?;
    let ev = parse::path(ev, d)?;
    let lags = parse::range(lags)?;
    let ctx = conditioning::ConditioningContext::new(&model)?;
    let limit = q_process_limit(&model, &ev)?;
    let mut t = Table::new(&["n", "value", "limit", "gap"]);
    for n in lags {
        let v = ctx.conditional_path_law(&ev, &set, n)?;
        t.push(vec![n.to_string(), num(v), num(limit), num((v - limit).abs())]);
    }
    let mut m = Manifest::new("condition");
    m.model(&model).summary("set", &set.to_string()).summary("q", &ctx.q);
    if let Some(b) = bx {
        let b = parse::lattice_box(&b, d)?;
        m.summary("accessibility", &accessibility_check(&model, &set, &b)?);
    }
    Ok(sink.csv("condition", &t, &m)?)
}

fn double_limit(
    path: &PathBuf,
    z: &str,
    bx: &str,
    t: Option<f64>,
    n_max: u32,
    x0: &Option<String>,
    sink: &Sink,
) -> Run {
    let model = load(path)?;
    let d = model.dim();
    let z = parse::state(z, d)?;
    let bx = parse::lattice_box(bx, d)?;
    let x0 = start(x0, d)?;
    let schedule = match t {
        Some(t) if (0.0..=1.0).contains(&t) => limits::fraction_schedule(t, n_max),
        Some(t) => return Err(GwError::Domain(format!("t = {t} must lie in [0, 1]")).into()),
        None => limits::diagonal_schedule(n_max),
    };
    let rows = double_limit_scan(&model, &z, &schedule, &bx, &x0)?;
    let mut table = Table::new(&["k", "n", "prob_z", "mu_bar_z", "gap_z", "tv"]);
    for r in &rows {
        table.push(vec![r.k.to_string(), r.n.to_string(), num(r.prob_z), num(r.mu_bar_z), num(r.gap_z), num(r.tv)]);
    }
    let mut m = Manifest::new("double-limit");
    m.model(&model)
        .tolerance("route_agreement", conditioning::yaglom::ROUTE_AGREEMENT_TOL)
        .summary("box", &bx.upper())
        .summary("z", &z)
        .summary("t", &t);
    Ok(sink.csv("double_limit", &table, &m)?)
}

fn progeny_pmf(path: &PathBuf, x0: &str, n: Option<String>, cap: Option<String>, sink: &Sink) -> Run {
    let model = load(path)?;
    let d = model.dim();
    let x0 = parse::state(x0, d)?;
    let (cap, single) = match (n, cap) {
        (Some(n), _) => (parse::state(&n, d)?, true),
        (None, Some(c)) => (parse::lattice_box(&c, d)?.upper().to_vec(), false),
        (None, None) => return Err(GwError::Domain("give --n or --cap".into()).into()),
    };
    let dp = progeny_pmf_dp(&model, &x0, &cap)?;
    let bx = dp.lattice_box().clone();
    let mut header = coord_names("n", d);
    header.extend(["formula", "dp", "gap"].map(String::from));
    let mut t = Table::new(&header);
    let states: Vec<_> = if single { vec![cap.clone()] } else { bx.states().collect() };
    for n in states {
        let exact = dp.get(&n);
        let formula = if d <= MAX_FORMULA_DIM && n.iter().zip(&x0).all(|(a, b)| a >= b) {
            Some(progeny_pmf_formula(&model, &ProgenyQuery::new(x0.clone(), n.clone())?)?)
        } else if d <= MAX_FORMULA_DIM {
            Some(0.0)
        } else {
            None
        };
        let mut row = ints(&n);
        row.push(opt(formula));
        row.push(num(exact));
        row.push(opt(formula.map(|f| (f - exact).abs())));
        t.push(row);
    }
    let mut m = Manifest::new("progeny-pmf");
    m.model(&model).summary("x0", &x0).summary("cap", &cap);
    Ok(sink.csv("progeny_pmf", &t, &m)?)
}

fn apply_optional_tilt(model: BranchingModel, t: &OptionalTilt, m: &mut Manifest) -> gwlab::Result<BranchingModel> {
    let a = match (&t.a, t.critical) {
        (Some(a), _) => parse::tilt(a, model.dim())?,
        (None, true) => tilt::critical_tilt(&model)?,
        (None, false) => return Ok(model),
    };
    m.summary("tilt", &a.a);
    associate(&model, &a)
}

fn progeny_scaling(path: &PathBuf, x0: &str, n_range: &str, tilt: &OptionalTilt, sink: &Sink) -> Run {
    let model = load(path)?;
    let mut m = Manifest::new("progeny-scaling");
    m.model(&model);
    let model = apply_optional_tilt(model, tilt, &mut m)?;
    let d = model.dim();
    let x0 = parse::state(x0, d)?;
    let r = proposition_scaling(&model, &x0, &parse::range(n_range)?)?;
    let mut header = vec!["n".to_string()];
    header.extend(coord_names("target", d));
    header.extend(["value", "ratio", "note"].map(String::from));
    let mut t = Table::new(&header);
    for row in &r.rows {
        let mut cells = vec![row.n.to_string()];
        cells.extend(ints(&row.target));
        cells.push(opt(row.value));
        cells.push(opt(row.value.map(|v| v / r.limit_constant)));
        cells.push(row.note.clone().unwrap_or_default());
        t.push(cells);
    }
    m.summary("w", &r.w)
        .summary("plateau", &r.plateau)
        .summary("limit_constant", &r.limit_constant)
        .summary("det_sigma", &r.det_sigma);
    Ok(sink.csv("progeny_scaling", &t, &m)?)
}

fn progeny_theorem2(path: &PathBuf, ev: &str, n_range: &str, a: Option<String>, sink: &Sink) -> Run {
    let model = load(path)?;
    let d = model.dim();
    let ev = parse::path(ev, d)?;
    let a = a.map(|a| parse::tilt(&a, d)).transpose()?;
    let r = theorem2_verify(&model, a.as_ref(), &ev, &parse::range(n_range)?)?;
    let mut header = vec!["n".to_string()];
    header.extend(coord_names("target", d));
    header.extend(["value", "limit", "gap", "note"].map(String::from));
    let mut t = Table::new(&header);
    for row in &r.rows {
        let mut cells = vec![row.n.to_string()];
        cells.extend(ints(&row.target));
        cells.push(opt(row.value));
        cells.push(num(r.limit));
        cells.push(opt(row.gap));
        cells.push(row.note.clone().unwrap_or_default());
        t.push(cells);
    }
    let mut m = Manifest::new("progeny-theorem2");
    m.model(&model)
        .tolerance("critical_rho", gwlab::progeny::CRITICAL_RHO_TOL)
        .summary("tilt", &r.tilt)
        .summary("v_bar", &r.v_bar)
        .summary("u_bar", &r.u_bar)
        .summary("limit", &r.limit);
    Ok(sink.csv("progeny_theorem2", &t, &m)?)
}

fn progeny_lemma1(path: &PathBuf, tilt: &TiltArgs, x0: &str, n: &str, k: u32, sink: &Sink) -> Run {
    let model = load(path)?;
    let d = model.dim();
    let mut m = Manifest::new("progeny-lemma1");
    m.model(&model);
    let a = resolve_tilt(&model, tilt, &mut m)?;
    let tilted = associate(&model, &a)?;
    let x0 = parse::state(x0, d)?;
    let n = parse::state(n, d)?;
    let bx = LatticeBox::new(n.clone())?;
    let mut header = coord_names("y", d);
    header.extend(["plain", "tilted", "gap"].map(String::from));
    let mut t = Table::new(&header);
    let mut worst: f64 = 0.0;
    for y in bx.states() {
        let ev = PathEvent::single(x0.clone(), k, y.clone())?;
        let p = progeny_conditioned_path_law(&model, &ev, &n)?;
        let q = progeny_conditioned_path_law(&tilted, &ev, &n)?;
        worst = worst.max((p - q).abs());
        let mut row = ints(&y);
        row.extend([num(p), num(q), num((p - q).abs())]);
        t.push(row);
    }
    m.summary("tilt", &a.a).summary("k", &k).summary("max_gap", &worst);
    Ok(sink.csv("progeny_lemma1", &t, &m)?)
}

fn mc(model: &BranchingModel, ev: &PathEvent, condition: &Condition, cfg: &SimConfig, sink: &Sink) -> Run {
    let est = conditioned_estimate(model, ev, condition, cfg)?;
    let exact = match condition {
        Condition::Always => Some(gwlab::lattice::path_probability(model, ev)?),
        Condition::SetAtLag { set, lag, given_extinction: true } => {
            Some(conditioning::conditional_path_law(model, ev, set, *lag)?)
        }
        Condition::SetAtLag { .. } => None,
        Condition::Progeny(n) => Some(progeny_conditioned_path_law(model, ev, n)?),
    };
    let z = exact.map(|e| if est.std_error > 0.0 { (est.estimate - e) / est.std_error } else { f64::NAN });
    let mut t = Table::new(&["estimate", "std_error", "n_effective", "replicates", "censored", "exact", "z"]);
    t.push(vec![
        num(est.estimate),
        num(est.std_error),
        est.effective.to_string(),
        est.replicates.to_string(),
        est.censored.to_string(),
        opt(exact),
        opt(z),
    ]);
    let mut m = Manifest::new("mc");
    m.model(model).seed(cfg.seed).summary("config", cfg).summary("condition", condition);
    Ok(sink.csv("mc", &t, &m)?)
}
