use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use stealthy::attacks::{AttackKind, AttackPlan};
use stealthy::detect::{estimate_roc, DetectorKind, DetectorSpec, PfEstimator, Threshold};
use stealthy::kalman::{design, KalmanDesign};
use stealthy::model::{validate, StateSpaceModel};
use stealthy::sim::{sweep, ExperimentConfig, SWEEP_CSV_HEADER};
use stealthy::stealth::converse_bound;
use stealthy::textfmt::{format_matrix, Document, Section};
use stealthy::Error;

use crate::manifest::{sha256_hex, RunManifest, MANIFEST_FILE};

pub const SWEEP_CSV: &str = "sweep.csv";
pub const SWEEP_DAT: &str = "sweep.dat";
pub const DETECT_CSV: &str = "detect.csv";

/// A failed command and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments or unreadable input: status 2.
    Usage(String),
    /// The computation itself failed: status 1.
    Compute(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Compute(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Compute(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } | Error::InvalidArgument(_) => Failure::Usage(e.to_string()),
            Error::NotRightInvertible => Failure::Compute(format!(
                "{e}; attack a1 needs a right-invertible plant, try --attack a2"
            )),
            other => Failure::Compute(other.to_string()),
        }
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Compute(format!("cannot write {}: {e}", path.display()))
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn read_bytes(path: &Path) -> CmdResult<Vec<u8>> {
    fs::read(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn absolute(path: &Path) -> CmdResult<PathBuf> {
    std::path::absolute(path).map_err(|e| Failure::Usage(format!("bad path {}: {e}", path.display())))
}

fn load_model(path: &Path) -> CmdResult<(StateSpaceModel, KalmanDesign)> {
    let m = StateSpaceModel::load(path)?;
    let d = design(&m)?;
    Ok((m, d))
}

/// Comma-separated list, `start:stop:step` ranges allowed for integers.
pub fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> CmdResult<Vec<T>> {
    raw.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Failure::Usage(format!("invalid {what} `{t}`"))))
        .collect()
}

pub fn parse_horizons(raw: &str) -> CmdResult<Vec<usize>> {
    let parts: Vec<&str> = raw.split(':').map(str::trim).collect();
    match parts.as_slice() {
        [_] => parse_list(raw, "horizon"),
        [a, b] | [a, b, _] => {
            let num = |s: &str| s.parse::<usize>().map_err(|_| Failure::Usage(format!("invalid horizon range `{raw}`")));
            let step = if parts.len() == 3 { num(parts[2])? } else { 1 };
            let (a, b) = (num(a)?, num(b)?);
            if step == 0 || a == 0 || b < a {
                return Err(Failure::Usage(format!("invalid horizon range `{raw}`")));
            }
            Ok((a..=b).step_by(step).collect())
        }
        _ => Err(Failure::Usage(format!("invalid horizon range `{raw}`"))),
    }
}

fn join<T: fmt::Debug>(xs: &[T]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

pub fn analyze(model: &Path, out: Option<&Path>) -> CmdResult<String> {
    let (m, d) = load_model(model)?;
    let report = validate(&m);
    let mut text = report.to_string();
    text.push_str(&format!("baseline tr(PW): {:.6}\n", d.baseline_mse));

    if let Some(path) = out {
        let zeros: Vec<String> = report.invariant_zeros.iter().map(stealthy::model::format_complex).collect();
        let structure = Section::new("structure")
            .with("right_invertible", report.right_invertible)
            .with("relative_delay", report.relative_delay.map_or("-".to_string(), |d| d.to_string()))
            .with("invariant_zeros", zeros.join(" "))
            .with("baseline_mse", format!("{:?}", d.baseline_mse));
        let doc = Document {
            sections: vec![structure],
            matrices: vec![
                ("K".into(), d.gain.clone()),
                ("P".into(), d.error_covariance.clone()),
                ("sigma_z".into(), d.innovation_covariance.clone()),
            ],
        };
        write_file(path, &doc.render())?;
    }
    Ok(text)
}

pub fn design_plan(model: &Path, kind: AttackKind, eps: f64, seed: u64, out: &Path) -> CmdResult<String> {
    let (m, d) = load_model(model)?;
    let plan = AttackPlan::design(kind, &m, &d, eps, seed)?;
    write_file(out, &plan.to_document().render())?;

    let bound = converse_bound(eps, &d, m.ny());
    let predicted = plan.predicted_pw(&d, m.ny());
    let mut s = format!("attack: {kind}\nrequested eps: {eps}\n");
    match &plan {
        AttackPlan::None { .. } => {}
        AttackPlan::A1(p) => {
            s.push_str(&format!("zeta covariance:\n{}", format_matrix(&p.zeta_covariance)));
            s.push_str(&format!("relative delay: {}\npreview: {}\n", p.inverse.delay(), p.inverse.preview()));
        }
        AttackPlan::A2(p) => {
            s.push_str(&format!("alpha: {:.9}\n", p.alpha));
            s.push_str(&format!("L:\n{}", format_matrix(&p.gain)));
            s.push_str(&format!("sigma_zeta:\n{}", format_matrix(&p.sigma_zeta)));
        }
    }
    s.push_str(&format!("predicted eps: {:.9}\n", plan.predicted_eps()));
    s.push_str(&format!("predicted P_W: {:.6}\n", predicted));
    s.push_str(&format!("converse bound: {:.6}\n", bound.bound));
    s.push_str(&format!("excess over baseline: {:.6}\n", predicted - bound.baseline));
    s.push_str(&format!("gap to converse: {:.6}\n", bound.bound - predicted));
    s.push_str(&format!("plan written to {}\n", out.display()));
    Ok(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepArgs {
    pub model: PathBuf,
    pub attack: AttackKind,
    pub grid: Vec<f64>,
    pub runs: usize,
    pub horizon: usize,
    pub burn_in: Option<usize>,
    pub seed: u64,
    pub out: PathBuf,
}

fn experiment(horizon: usize, runs: usize, seed: u64, burn_in: Option<usize>) -> CmdResult<ExperimentConfig> {
    let cfg = ExperimentConfig::new(horizon, runs, seed)?;
    Ok(match burn_in {
        Some(b) => cfg.with_burn_in(b)?,
        None => cfg,
    })
}

pub fn run_sweep(args: &SweepArgs) -> CmdResult<String> {
    if args.grid.is_empty() {
        return Err(Failure::Usage("the ε grid is empty".into()));
    }
    let model = absolute(&args.model)?;
    let model_hash = sha256_hex(&read_bytes(&model)?);
    let (m, d) = load_model(&model)?;
    let cfg = experiment(args.horizon, args.runs, args.seed, args.burn_in)?;
    let rows = sweep(&m, &d, args.attack, &args.grid, &cfg)?;

    let mut csv = format!("{SWEEP_CSV_HEADER}\n");
    let mut dat = format!("# {}\n", SWEEP_CSV_HEADER.replace(',', " "));
    for r in &rows {
        csv.push_str(&r.csv_line());
        csv.push('\n');
        dat.push_str(&r.csv_line().replace(',', " "));
        dat.push('\n');
    }
    write_file(&args.out.join(SWEEP_CSV), &csv)?;
    write_file(&args.out.join(SWEEP_DAT), &dat)?;

    let config: BTreeMap<String, String> = [
        ("command", "sweep".to_string()),
        ("model", model.display().to_string()),
        ("model_sha256", model_hash),
        ("attack", args.attack.to_string()),
        ("eps_grid", join(&args.grid)),
        ("runs", args.runs.to_string()),
        ("horizon", args.horizon.to_string()),
        ("burn_in", cfg.burn_in.to_string()),
        ("seed", args.seed.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let manifest = RunManifest::new(&model, args.seed, &absolute(&args.out)?, config);
    write_file(&args.out.join(MANIFEST_FILE), &manifest.render())?;
    Ok(csv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorChoice {
    /// Change of measure when the statistic is the exact likelihood ratio,
    /// direct counting otherwise.
    Auto,
    Fixed(PfEstimator),
}

impl std::str::FromStr for EstimatorChoice {
    type Err = Failure;

    fn from_str(s: &str) -> CmdResult<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(EstimatorChoice::Auto);
        }
        s.parse().map(EstimatorChoice::Fixed).map_err(Failure::from)
    }
}

impl fmt::Display for EstimatorChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorChoice::Auto => f.write_str("auto"),
            EstimatorChoice::Fixed(e) => e.fmt(f),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectArgs {
    pub model: PathBuf,
    pub plan: PathBuf,
    pub detector: DetectorKind,
    pub delta: f64,
    pub window: Option<usize>,
    pub horizons: Vec<usize>,
    pub trials: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub estimator: EstimatorChoice,
    pub out: PathBuf,
}

pub fn run_detect(args: &DetectArgs) -> CmdResult<String> {
    let model = absolute(&args.model)?;
    let plan_path = absolute(&args.plan)?;
    let model_hash = sha256_hex(&read_bytes(&model)?);
    let plan_bytes = read_bytes(&plan_path)?;
    let (m, d) = load_model(&model)?;
    let plan_text = String::from_utf8(plan_bytes.clone())
        .map_err(|_| Failure::Usage(format!("{} is not UTF-8", plan_path.display())))?;
    let h1 = AttackPlan::from_document(&Document::parse(&plan_text)?, &m, &d)?;
    let h0 = AttackPlan::None { nx: m.nx() };

    let estimator = match args.estimator {
        EstimatorChoice::Fixed(e) => e,
        EstimatorChoice::Auto => {
            if args.detector == DetectorKind::LogLikelihoodRatio && h1.iid_innovation_covariance(&d).is_some() {
                PfEstimator::ChangeOfMeasure
            } else {
                PfEstimator::Direct
            }
        }
    };
    let spec = DetectorSpec::new(args.detector, args.window, Threshold::Calibrated { delta: args.delta })?;
    let horizon = args.burn_in + args.horizons.iter().copied().max().unwrap_or(0);
    let cfg = ExperimentConfig::new(horizon.max(args.burn_in + 1), 1, args.seed)?.with_burn_in(args.burn_in)?;
    let report = estimate_roc(&m, &d, &h0, &h1, &spec, &args.horizons, args.trials, &cfg, estimator)?;

    let mut csv = Vec::new();
    report.write_csv(&mut csv).expect("writing to memory");
    let csv = String::from_utf8(csv).expect("CSV is ASCII");
    write_file(&args.out.join(DETECT_CSV), &csv)?;

    let config: BTreeMap<String, String> = [
        ("command", "detect".to_string()),
        ("model", model.display().to_string()),
        ("model_sha256", model_hash),
        ("plan", plan_path.display().to_string()),
        ("plan_sha256", sha256_hex(&plan_bytes)),
        ("detector", args.detector.to_string()),
        ("delta", format!("{:?}", args.delta)),
        ("window", args.window.map_or("all".to_string(), |w| w.to_string())),
        ("horizons", join(&args.horizons)),
        ("trials", args.trials.to_string()),
        ("burn_in", args.burn_in.to_string()),
        ("seed", args.seed.to_string()),
        ("estimator", args.estimator.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let mut manifest = RunManifest::new(&model, args.seed, &absolute(&args.out)?, config);
    manifest.results.insert("estimator_used".into(), estimator.to_string());
    let summary = match &report.fit {
        Some(fit) => {
            manifest.results.insert("exponent".into(), format!("{:?}", fit.exponent));
            let used: Vec<String> = fit.horizons_used.iter().map(|k| k.to_string()).collect();
            manifest.results.insert("exponent_horizons".into(), used.join(","));
            format!("fitted exponent: {:.4}\n", fit.exponent)
        }
        None => {
            let why = report.fit_failure.clone().unwrap_or_default();
            manifest.results.insert("exponent".into(), "unfittable".into());
            manifest.results.insert("exponent_note".into(), why.clone());
            format!("fitted exponent: unavailable ({why})\n")
        }
    };
    write_file(&args.out.join(MANIFEST_FILE), &manifest.render())?;
    Ok(format!("{csv}{summary}"))
}

/// Repeats the run a manifest describes, writing into `out` (or the
/// manifest's own output directory).
pub fn replay(manifest_path: &Path, out: Option<&Path>) -> CmdResult<String> {
    let man = RunManifest::load(manifest_path)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| man.output_dir.clone());
    let model = PathBuf::from(man.get("model")?);
    let check = |key: &str, path: &Path| -> CmdResult {
        let now = sha256_hex(&read_bytes(path)?);
        if now != man.get(key)? {
            return Err(Failure::Usage(format!("{} changed since the manifest was written", path.display())));
        }
        Ok(())
    };
    check("model_sha256", &model)?;
    let num = |key: &str| -> CmdResult<usize> {
        man.get(key)?.parse().map_err(|_| Failure::Usage(format!("manifest: invalid `{key}`")))
    };
    let seed: u64 = man.get("seed")?.parse().map_err(|_| Failure::Usage("manifest: invalid `seed`".into()))?;
    match man.get("command")? {
        "sweep" => run_sweep(&SweepArgs {
            model,
            attack: man.get("attack")?.parse()?,
            grid: parse_list(man.get("eps_grid")?, "ε")?,
            runs: num("runs")?,
            horizon: num("horizon")?,
            burn_in: Some(num("burn_in")?),
            seed,
            out,
        }),
        "detect" => {
            let plan = PathBuf::from(man.get("plan")?);
            check("plan_sha256", &plan)?;
            let window = match man.get("window")? {
                "all" => None,
                _ => Some(num("window")?),
            };
            run_detect(&DetectArgs {
                model,
                plan,
                detector: man.get("detector")?.parse()?,
                delta: man.get("delta")?.parse().map_err(|_| Failure::Usage("manifest: invalid `delta`".into()))?,
                window,
                horizons: parse_list(man.get("horizons")?, "horizon")?,
                trials: num("trials")?,
                burn_in: num("burn_in")?,
                seed,
                estimator: man.get("estimator")?.parse()?,
                out,
            })
        }
        other => Err(Failure::Usage(format!("manifest names unknown command `{other}`"))),
    }
}

pub fn print(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
}
