//! Command-line surface: argument parsing and the six subcommands.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use twopath::assoc::AssociativeMemory;
use twopath::check::{gradient_checks, TOLERANCE};
use twopath::checkpoint::Checkpoint;
use twopath::data::InputPipeline;
use twopath::noise::NoiseKind;
use twopath::Network32;

use crate::config::{CoarseArch, ExperimentConfig, Profile};
use crate::lab::{bias_checkpoint, labels, parse_noise, BiasSystem, Lab, RobustnessSystem, Task};
use crate::metrics::{write_csv, MetricsRow};
use crate::sweep::run_sweep;

#[derive(Parser, Debug)]
#[command(name = "twopath", version, about = "Two-pathway recognition experiments: FineNet, CoarseNet and their RBM association")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train FineNet on raw RGB images.
    TrainFine {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = TaskArg::Recognition)]
        task: TaskArg,
    },
    /// Train CoarseNet on low-pass or binarized grayscale images.
    TrainCoarse {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = TaskArg::Recognition)]
        task: TaskArg,
        /// Imitate the penultimate features of the FineNet in --fine-ckpt.
        #[arg(long, requires = "fine_ckpt")]
        imitate: bool,
        #[arg(long)]
        fine_ckpt: Option<PathBuf>,
        #[command(flatten)]
        input: CoarseInput,
    },
    /// Train the RBM that associates the two pathways.
    TrainRbm {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        task: MemoryTask,
        #[arg(long)]
        fine_ckpt: PathBuf,
        #[arg(long)]
        coarse_ckpt: PathBuf,
        #[command(flatten)]
        input: CoarseInput,
    },
    /// Reproduce one figure panel as a long-form CSV, training missing models on demand.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        figure: String,
    },
    /// Compare every analytic gradient against central finite differences in 64-bit.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Flip the sign of one check's analytic gradient (report sanity test).
        #[arg(long)]
        inject_fault: Option<String>,
    },
    /// Evaluate trained checkpoints on clean or corrupted test images.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = TaskArg::Recognition)]
        task: TaskArg,
        #[arg(long)]
        fine_ckpt: PathBuf,
        #[arg(long)]
        coarse_ckpt: Option<PathBuf>,
        /// Robustness or bias memory; requires --coarse-ckpt.
        #[arg(long, requires = "coarse_ckpt")]
        rbm_ckpt: Option<PathBuf>,
        /// Corruption as kind:level, e.g. uniform:0.5, salt_pepper:0.3, fgsm:0.1.
        #[arg(long)]
        noise: Option<String>,
        /// Interplay steps; defaults to interplay.steps.
        #[arg(long)]
        steps: Option<usize>,
        #[command(flatten)]
        input: CoarseInput,
    },
}

#[derive(Args, Debug, Default, Clone)]
pub struct Common {
    /// key = value config file; the `profile` key picks the base values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub profile: Option<ProfileArg>,
    /// Override one config key (repeatable), e.g. --set coarse.kernel1=9.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run only this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Epochs for the network or RBM being trained; decay steps at or beyond it are dropped.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Number of training images in the recognition task.
    #[arg(long)]
    pub subset: Option<usize>,
    /// Record wall-clock seconds in the CSV (makes reruns differ).
    #[arg(long)]
    pub timing: bool,
    #[arg(short, long)]
    pub verbose: bool,
}

#[derive(Args, Debug, Default, Clone)]
pub struct CoarseInput {
    /// Gaussian low-pass width for CoarseNet input.
    #[arg(long, conflicts_with = "binarize")]
    pub sigma: Option<f64>,
    /// Binarize grayscale input at this threshold instead of low-pass filtering.
    #[arg(long, num_args = 0..=1, default_missing_value = "0.5")]
    pub binarize: Option<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Paper,
    Desk,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    /// CIFAR-10 class subset.
    Recognition,
    /// CIFAR-100 super/sub-class subset.
    Bias,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MemoryTask {
    /// Pairs [g_C ‖ g_F].
    Robustness,
    /// Pairs [g_C ‖ c].
    Bias,
}

fn truncate_decay(decay: &mut Vec<usize>, epochs: usize) {
    decay.retain(|&d| d < epochs);
}

/// Applies config file, profile, `--set` overrides and `$TWOPATH_DATA`, in that order.
pub fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            ExperimentConfig::from_text(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => ExperimentConfig::desk(),
    };
    if let Some(p) = common.profile {
        let profile = match p {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Desk => Profile::Desk,
        };
        if common.config.is_none() {
            cfg = ExperimentConfig::for_profile(profile);
        } else if profile != cfg.profile {
            bail!("--profile {} contradicts the config file's profile {}", profile.as_str(), cfg.profile.as_str());
        }
    }
    for kv in &common.overrides {
        let (k, v) = kv.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(n) = common.subset {
        cfg.data.train_subset = n;
    }
    let cfg = cfg.with_env_overrides();
    cfg.validate()?;
    Ok(cfg)
}

fn open_lab(common: &Common, cfg: ExperimentConfig) -> Result<Lab> {
    let mut lab = Lab::new(cfg)?;
    lab.timing = common.timing;
    lab.verbose = common.verbose;
    Ok(lab)
}

fn task(lab: &Lab, t: TaskArg) -> Result<&Task> {
    match t {
        TaskArg::Recognition => lab.recognition(),
        TaskArg::Bias => lab.bias_task(),
    }
}

fn task_name(t: TaskArg) -> &'static str {
    match t {
        TaskArg::Recognition => "recognition",
        TaskArg::Bias => "bias",
    }
}

fn coarse_arch(cfg: &ExperimentConfig, input: &CoarseInput, t: TaskArg, imitate: bool) -> CoarseArch {
    let mut arch = CoarseArch { imitate, ..cfg.coarse.clone() };
    if t == TaskArg::Bias {
        arch.sigma = cfg.bias_sigma;
    }
    if let Some(s) = input.sigma {
        arch.sigma = s;
        arch.binarize = None;
    }
    if input.binarize.is_some() {
        arch.binarize = input.binarize;
    }
    arch
}

fn load_network(path: &Path, what: &str, hint: &str) -> Result<Network32> {
    if !path.exists() {
        bail!("{what} checkpoint {} does not exist; create it with `twopath {hint}` first", path.display());
    }
    Network32::from_checkpoint(&Checkpoint::load(path)?).with_context(|| format!("loading {what} from {}", path.display()))
}

fn check_classes(net: &Network32, expected: usize, what: &str) -> Result<()> {
    if net.spec().num_classes != expected {
        bail!("{what} predicts {} classes but the task has {expected}", net.spec().num_classes);
    }
    Ok(())
}

fn epoch_rows(lab: &Lab, seed: u64, metric: &str, values: &[f64]) -> Vec<MetricsRow> {
    values
        .iter()
        .enumerate()
        .map(|(e, &v)| MetricsRow {
            experiment: lab.id.clone(),
            seed,
            variable: "epoch".into(),
            value: e as f64,
            metric: metric.into(),
            metric_value: v,
            wall_seconds: 0.0,
        })
        .collect()
}

fn save(ck: &Checkpoint, path: &Path) -> Result<()> {
    ck.save(path).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn report_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    write_csv(path, rows)?;
    println!("wrote {} ({} rows)", path.display(), rows.len());
    Ok(())
}

fn cmd_train_fine(common: &Common, t: TaskArg) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(e) = common.epochs {
        cfg.fine_train.epochs = e;
        truncate_decay(&mut cfg.fine_train.lr_decay_epochs, e);
    }
    let lab = open_lab(common, cfg)?;
    let seed = lab.cfg.seeds[0];
    let task = task(&lab, t)?;
    let start = std::time::Instant::now();
    let (mut net, curve) = lab.train_fine_net(task, seed, |m| lab.log(format!("epoch {} loss {:.5}", m.epoch, m.train_loss)))?;
    let mut rows = epoch_rows(&lab, seed, "train_loss", &curve.iter().map(|m| m.train_loss).collect::<Vec<_>>());
    if lab.timing {
        let wall = start.elapsed().as_secs_f64();
        rows.iter_mut().for_each(|r| r.wall_seconds = wall);
    }
    let name = format!("fine-{}-s{seed}", task_name(t));
    save(&net.to_checkpoint(), &lab.run_dir.join(format!("{name}.tpck")))?;
    report_csv(&lab.run_dir.join(format!("train-{name}.csv")), &rows)?;
    let acc = lab.accuracy(&mut net, task, InputPipeline::Raw, &task.test, &labels(&task.test))?;
    println!("FineNet test accuracy: {acc:.4}");
    Ok(())
}

fn cmd_train_coarse(common: &Common, t: TaskArg, imitate: bool, fine_ckpt: Option<&Path>, input: &CoarseInput) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(e) = common.epochs {
        cfg.coarse_train.epochs = e;
        truncate_decay(&mut cfg.coarse_train.lr_decay_epochs, e);
    }
    let arch = coarse_arch(&cfg, input, t, imitate);
    let lab = open_lab(common, cfg)?;
    let seed = lab.cfg.seeds[0];
    let task = task(&lab, t)?;
    let mut teacher = match (imitate, fine_ckpt) {
        (true, Some(p)) => {
            let net = load_network(p, "FineNet", "train-fine")?;
            check_classes(&net, task.classes, "FineNet")?;
            Some(net)
        }
        (true, None) => bail!("--imitate requires --fine-ckpt"),
        (false, _) => None,
    };
    let start = std::time::Instant::now();
    let (mut net, curve) = lab.train_coarse_net(task, &arch, seed, teacher.as_mut(), |m| {
        lab.log(format!("epoch {} loss {:.5}", m.epoch, m.train_loss))
    })?;
    let mut rows = epoch_rows(&lab, seed, "train_loss", &curve.iter().map(|m| m.train_loss).collect::<Vec<_>>());
    if lab.timing {
        let wall = start.elapsed().as_secs_f64();
        rows.iter_mut().for_each(|r| r.wall_seconds = wall);
    }
    let name = format!("coarse-{}-s{seed}", task_name(t));
    save(&net.to_checkpoint(), &lab.run_dir.join(format!("{name}.tpck")))?;
    report_csv(&lab.run_dir.join(format!("train-{name}.csv")), &rows)?;
    let truth = if task.supers > 0 { crate::lab::super_labels(&task.test) } else { labels(&task.test) };
    let acc = lab.accuracy(&mut net, task, arch.pipeline(), &task.test, &truth)?;
    println!("CoarseNet test accuracy: {acc:.4}");
    Ok(())
}

fn cmd_train_rbm(common: &Common, mt: MemoryTask, fine_ckpt: &Path, coarse_ckpt: &Path, input: &CoarseInput) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(e) = common.epochs {
        let memory = match mt {
            MemoryTask::Robustness => &mut cfg.memory,
            MemoryTask::Bias => &mut cfg.bias_memory,
        };
        memory.train.epochs = e;
        truncate_decay(&mut memory.train.lr_decay_epochs, e);
    }
    let t = match mt {
        MemoryTask::Robustness => TaskArg::Recognition,
        MemoryTask::Bias => TaskArg::Bias,
    };
    // the pipeline the CoarseNet checkpoint was trained with
    let arch = coarse_arch(&cfg, input, t, false);
    if t == TaskArg::Bias {
        cfg.bias_sigma = arch.sigma;
    } else {
        cfg.coarse.sigma = arch.sigma;
        cfg.coarse.binarize = arch.binarize;
    }
    let lab = open_lab(common, cfg)?;
    let seed = lab.cfg.seeds[0];
    let task = task(&lab, t)?;
    let mut fine = load_network(fine_ckpt, "FineNet", "train-fine")?;
    let mut coarse = load_network(coarse_ckpt, "CoarseNet", "train-coarse")?;
    check_classes(&fine, task.classes, "FineNet")?;
    check_classes(&coarse, if task.supers > 0 { task.supers } else { task.classes }, "CoarseNet")?;
    let log = |e: usize, err: f64| lab.log(format!("epoch {e} reconstruction error {err:.6}"));
    let (ck, curve) = match mt {
        MemoryTask::Robustness => {
            let (m, curve) = lab.train_robustness_memory(task, &mut fine, &mut coarse, seed, log)?;
            (m.to_checkpoint(), curve)
        }
        MemoryTask::Bias => {
            let (m, r, curve) = lab.train_bias_components(task, &mut fine, &mut coarse, seed, log)?;
            let path = lab.run_dir.join("subset-mapping.txt");
            std::fs::write(&path, &task.mapping)?;
            println!("wrote {}", path.display());
            (bias_checkpoint(&m, &r), curve)
        }
    };
    let name = format!("rbm-{}-s{seed}", task_name(t));
    save(&ck, &lab.run_dir.join(format!("{name}.tpck")))?;
    report_csv(&lab.run_dir.join(format!("train-{name}.csv")), &epoch_rows(&lab, seed, "reconstruction_error", &curve))?;
    Ok(())
}

fn cmd_sweep(common: &Common, figure: &str) -> Result<()> {
    let cfg = load_config(common)?;
    let lab = open_lab(common, cfg)?;
    let rows = run_sweep(&lab, figure)?;
    report_csv(&lab.run_dir.join(format!("sweep-{figure}.csv")), &rows)
}

fn cmd_gradcheck(instances: usize, seed: u64, fault: Option<&str>) -> Result<bool> {
    if instances == 0 {
        bail!("--instances must be positive");
    }
    let report = gradient_checks(instances, seed, fault)?;
    println!("{:<16} {:>9} {:>14}  result", "check", "instances", "max_rel_error");
    for r in &report {
        println!("{:<16} {:>9} {:>14.3e}  {}", r.name, r.instances, r.max_rel_error, if r.passed() { "PASS" } else { "FAIL" });
    }
    let failed = report.iter().filter(|r| !r.passed()).count();
    if failed == 0 {
        println!("all {} checks within relative error {TOLERANCE:e}", report.len());
    } else {
        println!("{failed} of {} checks exceed relative error {TOLERANCE:e}", report.len());
    }
    Ok(failed == 0)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    common: &Common,
    t: TaskArg,
    fine_ckpt: &Path,
    coarse_ckpt: Option<&Path>,
    rbm_ckpt: Option<&Path>,
    noise: Option<&str>,
    steps: Option<usize>,
    input: &CoarseInput,
) -> Result<()> {
    let mut cfg = load_config(common)?;
    let arch = coarse_arch(&cfg, input, t, false);
    if t == TaskArg::Bias {
        cfg.bias_sigma = arch.sigma;
    } else {
        cfg.coarse.sigma = arch.sigma;
        cfg.coarse.binarize = arch.binarize;
    }
    let steps = steps.unwrap_or(cfg.steps);
    let lab = open_lab(common, cfg)?;
    let seed = lab.cfg.seeds[0];
    let task = task(&lab, t)?;
    let (kind, level) = noise.map(parse_noise).transpose()?.unwrap_or((NoiseKind::Uniform, 0.0));
    let mut fine = load_network(fine_ckpt, "FineNet", "train-fine")?;
    check_classes(&fine, task.classes, "FineNet")?;
    let images = lab.corrupted_test(task, kind, level, seed, &mut fine)?;
    let truth = labels(&images);
    let mut metrics = vec![("fine".to_string(), lab.accuracy(&mut fine, task, InputPipeline::Raw, &images, &truth)?)];
    if let Some(cp) = coarse_ckpt {
        let mut coarse = load_network(cp, "CoarseNet", "train-coarse")?;
        let coarse_truth = if task.supers > 0 { crate::lab::super_labels(&images) } else { truth.clone() };
        metrics.push(("coarse".into(), lab.accuracy(&mut coarse, task, arch.pipeline(), &images, &coarse_truth)?));
        if let Some(rp) = rbm_ckpt {
            if !rp.exists() {
                bail!("memory checkpoint {} does not exist; create it with `twopath train-rbm` first", rp.display());
            }
            let ck = Checkpoint::load(rp)?;
            let memory = AssociativeMemory::<f32>::from_checkpoint(&ck)?;
            match t {
                TaskArg::Recognition => {
                    let mut sys = RobustnessSystem { fine, coarse, memory };
                    let acc = lab.robustness_scores(&mut sys, task, &images, &[steps])?[0];
                    metrics.push((format!("associated_t{steps}"), acc));
                }
                TaskArg::Bias => {
                    let readout = twopath::assoc::BiasedReadout::from_checkpoint(&ck)?;
                    let mut sys = BiasSystem { fine, coarse, memory, readout };
                    let s = lab.bias_scores(&mut sys, task, &images, steps)?;
                    metrics.extend([
                        ("biased".to_string(), s.biased),
                        ("oracle".to_string(), s.oracle),
                        ("retrieval".to_string(), s.retrieval),
                    ]);
                }
            }
        }
    }
    let rows: Vec<MetricsRow> = metrics
        .iter()
        .map(|(m, v)| {
            println!("{m}: {v:.4}");
            MetricsRow {
                experiment: lab.id.clone(),
                seed,
                variable: kind.as_str().into(),
                value: level,
                metric: m.clone(),
                metric_value: *v,
                wall_seconds: 0.0,
            }
        })
        .collect();
    report_csv(&lab.run_dir.join(format!("eval-{}-{}-{level}.csv", task_name(t), kind.as_str())), &rows)
}

/// Parses `args` and runs the command. Usage errors exit 2, failures 1.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::TrainFine { common, task } => cmd_train_fine(common, *task).map(|_| true),
        Command::TrainCoarse { common, task, imitate, fine_ckpt, input } => {
            cmd_train_coarse(common, *task, *imitate, fine_ckpt.as_deref(), input).map(|_| true)
        }
        Command::TrainRbm { common, task, fine_ckpt, coarse_ckpt, input } => {
            cmd_train_rbm(common, *task, fine_ckpt, coarse_ckpt, input).map(|_| true)
        }
        Command::Sweep { common, figure } => cmd_sweep(common, figure).map(|_| true),
        Command::Gradcheck { instances, seed, inject_fault } => cmd_gradcheck(*instances, *seed, inject_fault.as_deref()),
        Command::Eval { common, task, fine_ckpt, coarse_ckpt, rbm_ckpt, noise, steps, input } => {
            cmd_eval(common, *task, fine_ckpt, coarse_ckpt.as_deref(), rbm_ckpt.as_deref(), noise.as_deref(), *steps, input)
                .map(|_| true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
