use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use bkst::analysis::{epsilon_estimate, fit_decay, residual_operators};
use bkst::coefficients::{gamma_family, CoefficientFamily, DEFAULT_NODES};
use bkst::dataset::{self, manifest_path, Dataset, Manifest};
use bkst::deeponet::{evaluate_indices, split_indices, train_with, Architecture, DeepONet, TrainConfig};
use bkst::kernels::{gain_slice, solve_kernels, KernelSet};
use bkst::numerics::{IntervalGrid, TriangularGrid};
use bkst::plant::{simulate, ControllerSpec, PlantState, SimTrace};

/// Environment variable that caps the worker threads used by `dataset`.
const THREADS_ENV: &str = "BKST_THREADS";

#[derive(Parser)]
#[command(name = "bkst", version, about = "Backstepping gain kernels, DeepONet surrogate and plant simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the kernel equations for the gamma family; writes kernels.csv and residuals.json.
    Solve {
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        /// Triangular grid size.
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a dataset of coefficient/kernel pairs (threads: BKST_THREADS).
    Dataset {
        #[arg(long, value_enum, default_value_t = Family::Gamma)]
        family: Family,
        #[arg(long, default_value_t = 0.5)]
        gamma_min: f64,
        #[arg(long, default_value_t = 5.0)]
        gamma_max: f64,
        /// Perturbation amplitude for the smooth family.
        #[arg(long, default_value_t = 0.3)]
        amplitude: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Coefficient nodes per sample.
        #[arg(long, default_value_t = DEFAULT_NODES)]
        m_coeff: usize,
        /// Kernel grid size.
        #[arg(long, default_value_t = 50)]
        n_grid: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Dataset file; a JSON manifest is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a DeepONet; writes the model and <model>.history.json.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: TrainOpts,
    },
    /// Relative L2 errors of a model on the train and test split of a dataset.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Must match the split used for training.
        #[arg(long, default_value_t = 0.9)]
        split: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Optional JSON output file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the plant; writes trace.csv and stability.json.
    Simulate {
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, value_enum, default_value_t = Controller::Exact)]
        controller: Controller,
        /// Model file, required for the neural controller.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 10.0)]
        t_final: f64,
        /// Spatial cells.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the kernel solver against model inference.
    Bench {
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        /// Optional JSON output file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Gamma,
    Smooth,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Controller {
    Open,
    Exact,
    Neural,
}

#[derive(clap::Args)]
struct TrainOpts {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    final_lr: Option<f64>,
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Basis size p.
    #[arg(long)]
    p: Option<usize>,
    /// Coefficient encoding nodes.
    #[arg(long)]
    m_enc: Option<usize>,
    /// Hidden width of both networks (two hidden layers each).
    #[arg(long)]
    width: Option<usize>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    quiet: bool,
}

impl TrainOpts {
    fn config(&self) -> TrainConfig {
        let d = TrainConfig::default();
        let a = &d.architecture;
        let arch = match (self.p, self.m_enc, self.width) {
            (None, None, None) => d.architecture.clone(),
            (p, m, w) => {
                let mut arch = Architecture::small(m.unwrap_or(a.m_enc), p.unwrap_or(a.p), 0);
                arch.branch_hidden = w.map(|w| vec![w, w]).unwrap_or_else(|| a.branch_hidden.clone());
                arch.trunk_hidden = w.map(|w| vec![w, w]).unwrap_or_else(|| a.trunk_hidden.clone());
                arch
            }
        };
        TrainConfig {
            architecture: arch,
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            learning_rate: self.lr.unwrap_or(d.learning_rate),
            final_learning_rate: self.final_lr.unwrap_or(d.final_learning_rate),
            split: self.split.unwrap_or(d.split),
            seed: self.seed.unwrap_or(d.seed),
            ..d
        }
    }
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve { gamma, n, out } => cmd_solve(gamma, n, &out),
        Command::Dataset {
            family,
            gamma_min,
            gamma_max,
            amplitude,
            samples,
            m_coeff,
            n_grid,
            seed,
            out,
        } => {
            let family = match family {
                Family::Gamma => CoefficientFamily::Gamma { gamma_min, gamma_max },
                Family::Smooth => CoefficientFamily::RandomSmooth {
                    gamma_min,
                    gamma_max,
                    amplitude,
                },
            };
            cmd_dataset(&family, samples, m_coeff, n_grid, seed, &out)
        }
        Command::Train { data, out, opts } => cmd_train(&data, &out, &opts),
        Command::Eval {
            model,
            data,
            split,
            seed,
            out,
        } => cmd_eval(&model, &data, split, seed, out.as_deref()),
        Command::Simulate {
            gamma,
            controller,
            model,
            t_final,
            n,
            out,
        } => cmd_simulate(gamma, controller, model.as_deref(), t_final, n, &out),
        Command::Bench {
            gamma,
            n,
            model,
            repeats,
            out,
        } => cmd_bench(gamma, n, &model, repeats, out.as_deref()),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn write_kernels_csv(path: &Path, ks: &KernelSet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(w, "x,xi,k1,k2")?;
    let grid = ks.grid();
    for (idx, (x, xi)) in grid.nodes().into_iter().enumerate() {
        writeln!(w, "{x:.16e},{xi:.16e},{:.16e},{:.16e}", ks.k1.values()[idx], ks.k2.values()[idx])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_solve(gamma: f64, n: usize, out: &Path) -> Result<()> {
    let coeffs = gamma_family(gamma, DEFAULT_NODES)?;
    let ks = solve_kernels(&coeffs, TriangularGrid::new(n)?)?;
    let report = residual_operators(&coeffs, &ks.k1, &ks.k2)?.summary();
    fs::create_dir_all(out)?;
    write_kernels_csv(&out.join("kernels.csv"), &ks)?;
    write_json(
        &out.join("residuals.json"),
        &json!({ "gamma": gamma, "residuals": report, "k1_sup": ks.k1.sup_norm(), "k2_sup": ks.k2.sup_norm() }),
    )?;
    println!(
        "gamma {gamma}, n {n}: sup|K1| {:.3e} sup|K2| {:.3e} sup|K3| {:.3e} sup|K4| {:.3e}",
        report.sup_k1, report.sup_k2, report.sup_k3, report.sup_k4
    );
    Ok(())
}

fn cmd_dataset(family: &CoefficientFamily, samples: usize, m_coeff: usize, n_grid: usize, seed: u64, out: &Path) -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let threads: usize = v.parse().with_context(|| format!("{THREADS_ENV}={v} is not a thread count"))?;
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    }
    let start = Instant::now();
    let ds = dataset::generate(family, samples, m_coeff, n_grid, seed)?;
    ds.write(out).with_context(|| format!("writing {}", out.display()))?;
    Manifest::new(&ds, family, seed).write(manifest_path(out))?;
    println!(
        "{} samples ({}) written to {} in {:.1}s",
        ds.len(),
        family.describe(),
        out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn history_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".history.json");
    s.into()
}

fn cmd_train(data: &Path, out: &Path, opts: &TrainOpts) -> Result<()> {
    let ds = Dataset::read(data).with_context(|| format!("reading {}", data.display()))?;
    let cfg = opts.config();
    let start = Instant::now();
    let quiet = opts.quiet;
    let (model, history) = train_with(&ds, &cfg, |s| {
        if !quiet && (s.epoch % 10 == 0 || s.epoch + 1 == cfg.epochs) {
            let test = s
                .test_rel_l2
                .map(|r| format!(" test rel L2 {:.3e} {:.3e}", r[0], r[1]))
                .unwrap_or_default();
            eprintln!(
                "epoch {:>5} loss {:.4e}{test} lr {:.2e} ({:.0}s)",
                s.epoch,
                s.train_loss,
                s.learning_rate,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    model.save(out).with_context(|| format!("writing {}", out.display()))?;
    write_json(&history_path(out), &json!({ "config": cfg, "history": history }))?;
    if let Some(r) = history.test_rel_l2.last() {
        println!("test relative L2: k1 {:.3e}, k2 {:.3e}", r[0], r[1]);
    }
    println!("model written to {}", out.display());
    Ok(())
}

fn cmd_eval(model: &Path, data: &Path, split: f64, seed: u64, out: Option<&Path>) -> Result<()> {
    let m = DeepONet::load(model).with_context(|| format!("reading {}", model.display()))?;
    let ds = Dataset::read(data).with_context(|| format!("reading {}", data.display()))?;
    ensure!(split > 0.0 && split < 1.0, "split must lie in (0, 1)");
    let (train, test) = split_indices(ds.len(), split, seed);
    let tr = evaluate_indices(&m, &ds, &train)?;
    println!("train ({} samples): k1 {:.3e}, k2 {:.3e}", tr.samples, tr.rel_l2[0], tr.rel_l2[1]);
    let te = if test.is_empty() {
        None
    } else {
        let te = evaluate_indices(&m, &ds, &test)?;
        println!("test  ({} samples): k1 {:.3e}, k2 {:.3e}", te.samples, te.rel_l2[0], te.rel_l2[1]);
        Some(te)
    };
    if let Some(path) = out {
        write_json(path, &json!({ "train": tr, "test": te }))?;
    }
    Ok(())
}

fn closed_loop(coeffs: &bkst::CoefficientSet, gains: bkst::GainVector, t_final: f64, grid: IntervalGrid) -> Result<SimTrace> {
    Ok(simulate(coeffs, &PlantState::reference(grid), &ControllerSpec::GainFeedback(gains), t_final, 0)?)
}

fn cmd_simulate(gamma: f64, controller: Controller, model: Option<&Path>, t_final: f64, n: usize, out: &Path) -> Result<()> {
    if controller == Controller::Neural && model.is_none() {
        bail!("the neural controller needs --model");
    }
    let coeffs = gamma_family(gamma, DEFAULT_NODES)?;
    let grid = IntervalGrid::new(n)?;
    let mut extra = serde_json::Map::new();
    let trace = match controller {
        Controller::Open => simulate(&coeffs, &PlantState::reference(grid), &ControllerSpec::OpenLoop, t_final, 0)?,
        Controller::Exact => {
            let ks = solve_kernels(&coeffs, TriangularGrid::new(n)?)?;
            closed_loop(&coeffs, gain_slice(&ks), t_final, grid)?
        }
        Controller::Neural => {
            let path = model.unwrap();
            let m = DeepONet::load(path).with_context(|| format!("reading {}", path.display()))?;
            let exact = solve_kernels(&coeffs, TriangularGrid::new(n)?)?;
            let approx = m.predict_kernels(&coeffs, exact.grid())?;
            let eps = epsilon_estimate(&coeffs, &exact, &approx)?;
            let gains = m.infer_gains(&coeffs, grid)?;
            let deviation = gains.max_deviation(&gain_slice(&exact))?;
            let neural = closed_loop(&coeffs, gains, t_final, grid)?;
            let reference = closed_loop(&coeffs, gain_slice(&exact), t_final, grid)?;
            let phi0 = neural.phi[0];
            let gap = neural
                .phi
                .iter()
                .zip(&reference.phi)
                .map(|(a, b)| (a - b).abs() / phi0)
                .fold(0.0f64, f64::max);
            extra.insert("epsilon".into(), json!(eps.summary()));
            extra.insert("max_gain_deviation".into(), json!(deviation));
            extra.insert("max_phi_gap_over_phi0".into(), json!(gap));
            println!("epsilon {:.3e}, max gain deviation {deviation:.3e}, max |phi_neural - phi_exact|/phi0 {gap:.3e}", eps.epsilon);
            neural
        }
    };
    fs::create_dir_all(out)?;
    let csv = out.join("trace.csv");
    trace.write_csv(BufWriter::new(File::create(&csv).with_context(|| format!("creating {}", csv.display()))?))?;
    extra.insert("gamma".into(), json!(gamma));
    extra.insert("blew_up".into(), json!(trace.blew_up));
    extra.insert("doubling_time".into(), json!(trace.growth_time(2.0)));
    let phi_ratio = trace.phi.last().unwrap() / trace.phi[0];
    match fit_decay(&trace, 2.0f64.min(0.2 * t_final)) {
        Ok(r) => {
            println!("c1_hat {:.4}, R^2 {:.4}, phi(T)/phi(0) {:.3e}", r.c1_hat, r.r_squared, r.phi_ratio);
            extra.insert("stability".into(), json!(r));
        }
        Err(e) => {
            println!("no decay fit ({e}); phi(end)/phi(0) {phi_ratio:.3e}, blew up: {}", trace.blew_up);
            extra.insert("phi_ratio".into(), json!(phi_ratio));
        }
    }
    write_json(&out.join("stability.json"), &serde_json::Value::Object(extra))?;
    Ok(())
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn time_it<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<f64> {
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        std::hint::black_box(f()?);
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

fn cmd_bench(gamma: f64, n: usize, model: &Path, repeats: usize, out: Option<&Path>) -> Result<()> {
    ensure!(repeats > 0, "repeats must be at least 1");
    let m = DeepONet::load(model).with_context(|| format!("reading {}", model.display()))?;
    let coeffs = gamma_family(gamma, DEFAULT_NODES)?;
    let grid = TriangularGrid::new(n)?;
    // Warm-up, which also fills the model's trunk memo for this grid.
    solve_kernels(&coeffs, grid)?;
    m.infer_gains(&coeffs, grid.interval())?;
    let solve = time_it(repeats, || Ok(solve_kernels(&coeffs, grid)?))?;
    let gains = time_it(repeats, || Ok(m.infer_gains(&coeffs, grid.interval())?))?;
    let gains_uncached = time_it(repeats, || Ok(m.infer_gains_uncached(&coeffs, grid.interval())?))?;
    let dense = time_it(repeats, || Ok(m.predict_kernels(&coeffs, grid)?))?;
    let report = json!({
        "gamma": gamma,
        "n": n,
        "repeats": repeats,
        "solve_kernels_s": solve,
        "infer_gains_s": gains,
        "infer_gains_uncached_s": gains_uncached,
        "dense_forward_s": dense,
        "speedup_gains": solve / gains,
        "speedup_gains_uncached": solve / gains_uncached,
        "speedup_dense": solve / dense,
    });
    println!(
        "median solve {:.1} us, infer_gains {:.1} us ({:.1}x), uncached {:.1} us ({:.1}x), dense forward {:.1} us ({:.2}x)",
        solve * 1e6,
        gains * 1e6,
        solve / gains,
        gains_uncached * 1e6,
        solve / gains_uncached,
        dense * 1e6,
        solve / dense
    );
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(())
}
