use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rbsmc::armodel::Property;
use rbsmc::estimator::{read_summary, state_labels, write_summary};
use rbsmc::io::{self, fmt_f64};
use rbsmc::scenario::{
    run_average_precision_study, run_stochastic_variation_study, write_report, ObservationSet, Scenario,
    ScenarioSpec, Seeds, TruthMode,
};
use rbsmc::smc::Scheme;
use rbsmc::surrogate::{read_surrogate, write_surrogate_binary, SurrogateModel};

#[derive(Parser)]
#[command(name = "rbsmc", version, about = "Rao-Blackwellized SMC inversion on synthetic scattering data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SpecArgs {
    /// Scenario JSON file.
    #[arg(long, conflicts_with_all = ["desk", "defaults"])]
    spec: Option<PathBuf>,
    /// Built-in desk-scale scenario (the default).
    #[arg(long)]
    desk: bool,
    /// Built-in full-scale scenario.
    #[arg(long, conflicts_with = "desk")]
    defaults: bool,
    /// Master seed; derives every seed of the scenario.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    #[arg(long)]
    particles: Option<usize>,
}

impl SpecArgs {
    fn load(&self) -> Result<ScenarioSpec> {
        let mut spec = match (&self.spec, self.defaults) {
            (Some(path), _) => io::read_json(path).with_context(|| format!("reading {}", path.display()))?,
            (None, true) => ScenarioSpec::full_scale(),
            (None, false) => ScenarioSpec::desk(),
        };
        if let Some(seed) = self.seed {
            spec.seeds = Seeds::from_base(seed);
        }
        if let Some(scheme) = self.scheme {
            spec.smc.scheme = scheme;
        }
        if let Some(n) = self.particles {
            spec.smc.num_particles = n;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    s.parse().map_err(|e: rbsmc::Error| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Write a scenario, its ground truth and one simulated dataset.
    GenerateScenario {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value = "scenario")]
        out: PathBuf,
    },
    /// Fit the linear-Gaussian surrogate of the forward model.
    TrainSurrogate {
        #[command(flatten)]
        spec: SpecArgs,
        /// Output file; a `.bin` extension selects the binary format.
        #[arg(long, default_value = "surrogate.json")]
        out: PathBuf,
    },
    /// Run the sampler on one dataset and write the posterior summary.
    Invert {
        #[command(flatten)]
        spec: SpecArgs,
        /// Surrogate file; trained from the scenario when absent.
        #[arg(long)]
        surrogate: Option<PathBuf>,
        /// Observation file; simulated from the scenario when absent.
        #[arg(long)]
        observations: Option<PathBuf>,
        /// Also write the full posterior covariance of every stage.
        #[arg(long)]
        keep_covariances: bool,
        #[arg(long, default_value = "posterior")]
        out: PathBuf,
    },
    /// Invert one dataset repeatedly with different sampler seeds.
    StudyStochastic {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 30)]
        reps: usize,
        #[arg(long, default_value = "study-stochastic")]
        out: PathBuf,
    },
    /// Invert independent datasets and compare with the truth.
    StudyPrecision {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 30)]
        datasets: usize,
        /// Draw each truth from the prior with this rho instead of the fixed perturbed profile.
        #[arg(long)]
        prior_truth: Option<f64>,
        #[arg(long, default_value = "study-precision")]
        out: PathBuf,
    },
    /// Per-zone frequency profiles with ±σ bands and rho histograms.
    ExportProfiles {
        #[command(flatten)]
        spec: SpecArgs,
        /// Directory written by `invert`.
        #[arg(long, default_value = "posterior")]
        summary: PathBuf,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        #[arg(long, default_value = "profiles")]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenerateScenario { spec, out } => generate(&spec.load()?, &out),
        Command::TrainSurrogate { spec, out } => {
            let scenario = Scenario::new(spec.load()?)?;
            let model = scenario.train_surrogate()?;
            write_surrogate(&out, &model)?;
            println!("surrogate with {} stages written to {}", model.stages.len(), out.display());
            Ok(())
        }
        Command::Invert {
            spec,
            surrogate,
            observations,
            keep_covariances,
            out,
        } => invert(&spec.load()?, surrogate.as_deref(), observations.as_deref(), keep_covariances, &out),
        Command::StudyStochastic { spec, reps, out } => {
            let report = run_stochastic_variation_study(&spec.load()?, reps)?;
            finish_study(&out, &report)
        }
        Command::StudyPrecision {
            spec,
            datasets,
            prior_truth,
            out,
        } => {
            let mut spec = spec.load()?;
            if let Some(rho) = prior_truth {
                spec.truth = TruthMode::PriorDraw { rho };
                spec.validate()?;
            }
            let report = run_average_precision_study(&spec, datasets)?;
            finish_study(&out, &report)
        }
        Command::ExportProfiles {
            spec,
            summary,
            bins,
            out,
        } => export_profiles(&spec.load()?, &summary, bins, &out),
    }
}

fn generate(spec: &ScenarioSpec, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let scenario = Scenario::new(spec.clone())?;
    let truth = scenario.truth();
    let ys = scenario.simulate(&truth, spec.seeds.observation)?;
    io::write_json(out.join("scenario.json"), spec)?;
    let labels = state_labels(&spec.prior.layout);
    io::write_csv_matrix(out.join("truth.csv"), Some(&freq_header(spec)), Some(&labels), &truth)?;
    io::write_json(
        out.join("observations.json"),
        &ObservationSet {
            frequencies_ghz: spec.prior.frequencies_ghz.values().to_vec(),
            y: ys,
        },
    )?;
    println!(
        "scenario: {} zones, {} areas, {} frequencies, {} observation components, {} particles",
        spec.prior.layout.num_zones(),
        spec.prior.layout.num_areas(),
        spec.num_stages(),
        spec.obs_dim(),
        spec.smc.num_particles
    );
    println!("written to {}", out.display());
    Ok(())
}

fn write_surrogate(path: &Path, model: &SurrogateModel) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    if path.extension().is_some_and(|e| e == "bin") {
        write_surrogate_binary(path, model)?;
    } else {
        io::write_json(path, model)?;
    }
    Ok(())
}

fn invert(
    spec: &ScenarioSpec,
    surrogate: Option<&Path>,
    observations: Option<&Path>,
    keep_covariances: bool,
    out: &Path,
) -> Result<()> {
    let scenario = Scenario::new(spec.clone())?;
    let model = match surrogate {
        Some(path) => read_surrogate(path).with_context(|| format!("reading {}", path.display()))?,
        None => scenario.train_surrogate()?,
    };
    let ys = match observations {
        Some(path) => {
            let set: ObservationSet = io::read_json(path).with_context(|| format!("reading {}", path.display()))?;
            if set.frequencies_ghz.len() != spec.num_stages() {
                bail!(
                    "{} has {} frequencies, the scenario {}",
                    path.display(),
                    set.frequencies_ghz.len(),
                    spec.num_stages()
                );
            }
            set.y
        }
        None => scenario.simulate(&scenario.truth(), spec.seeds.observation)?,
    };
    let problem = scenario.problem(&model, ys)?;
    let inv = scenario.invert_with(&problem, spec.seeds.smc, keep_covariances, |g| {
        println!("{}", serde_json::to_string(g).expect("trace records serialize"));
    })?;
    write_summary(out, &inv.summary, &spec.prior.layout, &spec.prior.frequencies_ghz)?;
    io::write_jsonl(out.join("trace.jsonl"), &inv.trace)?;
    let (mean, sd) = inv.cloud.rho_moments();
    println!("rho mean {mean:?}");
    println!("rho sd   {sd:?}");
    println!("posterior summary written to {}", out.display());
    Ok(())
}

fn finish_study(out: &Path, report: &rbsmc::scenario::AnalysisReport) -> Result<()> {
    fs::create_dir_all(out)?;
    write_report(out.join("report.json"), report)?;
    for (name, value) in &report.statistics {
        println!("{name:28} {value:.6e}");
    }
    println!("report written to {}", out.join("report.json").display());
    Ok(())
}

fn freq_header(spec: &ScenarioSpec) -> Vec<String> {
    std::iter::once("component".to_string())
        .chain(spec.prior.frequencies_ghz.values().iter().map(|f| fmt_f64(*f)))
        .collect()
}

fn export_profiles(spec: &ScenarioSpec, summary_dir: &Path, bins: usize, out: &Path) -> Result<()> {
    if bins == 0 {
        bail!("need at least one histogram bin");
    }
    let summary = read_summary(summary_dir).with_context(|| format!("reading {}", summary_dir.display()))?;
    let layout = &spec.prior.layout;
    if summary.xhat.shape() != (layout.state_dim(), spec.num_stages()) {
        bail!("summary in {} does not match the scenario", summary_dir.display());
    }
    fs::create_dir_all(out)?;
    let truth = rbsmc::scenario::build_truth(spec);
    let zone_area = layout.zone_area();

    let mut w = BufWriter::new(File::create(out.join("profiles.csv"))?);
    writeln!(w, "component,property,zone,area,frequency_ghz,xhat,sigma,lower,upper,truth")?;
    for p in Property::ALL {
        for zone in 0..layout.num_zones() {
            let i = p.index() * layout.num_zones() + zone;
            for (k, f) in spec.prior.frequencies_ghz.values().iter().enumerate() {
                let (x, s) = (summary.xhat[(i, k)], summary.sigma_hat[(i, k)]);
                writeln!(
                    w,
                    "{}_z{zone},{},{zone},{},{},{},{},{},{},{}",
                    p.label(),
                    p.label(),
                    zone_area[zone],
                    fmt_f64(*f),
                    fmt_f64(x),
                    fmt_f64(s),
                    fmt_f64(x - s),
                    fmt_f64(x + s),
                    fmt_f64(truth[(i, k)])
                )?;
            }
        }
    }
    w.flush()?;

    let d = summary.particles.first().map_or(0, Vec::len);
    let mut w = BufWriter::new(File::create(out.join("rho_histogram.csv"))?);
    let header: Vec<String> = ["bin_low".to_string(), "bin_high".to_string()]
        .into_iter()
        .chain((0..d).map(|j| format!("rho{j}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    for b in 0..bins {
        let lo = b as f64 / bins as f64;
        let hi = (b + 1) as f64 / bins as f64;
        let counts: Vec<String> = (0..d)
            .map(|j| {
                summary
                    .particles
                    .iter()
                    .filter(|p| ((p[j] * bins as f64) as usize).min(bins - 1) == b)
                    .count()
                    .to_string()
            })
            .collect();
        writeln!(w, "{},{},{}", fmt_f64(lo), fmt_f64(hi), counts.join(","))?;
    }
    w.flush()?;
    println!("profiles and rho histograms written to {}", out.display());
    Ok(())
}
