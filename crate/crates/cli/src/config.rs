//! Flat `key = value` experiment configuration with paper and desk profiles.

use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use twopath::assoc::RbmTrainConfig;
use twopath::data::InputPipeline;
use twopath::pathways::{NetworkSpec, PathwayKind, TrainConfig};
use twopath::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    Paper,
    Desk,
}

impl Profile {
    pub fn as_str(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => bail!("unknown profile {s:?} (expected paper or desk)"),
        }
    }
}

/// Dataset location and the subsets drawn from it.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Directory holding `cifar-10-batches-bin/` and `cifar-100-binary/`; `None` uses generated surrogates.
    pub root: Option<PathBuf>,
    /// CIFAR-10 classes for the recognition and robustness tasks; empty keeps all ten.
    pub classes: Vec<usize>,
    pub train_subset: usize,
    pub test_subset: usize,
    pub n_super: usize,
    pub n_sub: usize,
    pub train_per_sub: usize,
    pub test_per_sub: usize,
    pub subset_seed: u64,
    pub synthetic_seed: u64,
}

/// FineNet: `depth` identical stages.
#[derive(Clone, Debug, PartialEq)]
pub struct FineArch {
    pub channels: usize,
    pub kernel: usize,
    pub depth: usize,
    pub fc: usize,
}

/// CoarseNet: two stages and its input pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct CoarseArch {
    pub channels1: usize,
    pub kernel1: usize,
    pub channels2: usize,
    pub kernel2: usize,
    pub fc: usize,
    pub sigma: f64,
    /// Threshold for binarized input; `None` selects the low-pass pipeline.
    pub binarize: Option<f32>,
    pub imitate: bool,
}

/// Values iterated by the figure sweeps.
#[derive(Clone, Debug, PartialEq)]
pub struct Grids {
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub sigma: Vec<f64>,
    pub uniform: Vec<f64>,
    pub salt_pepper: Vec<f64>,
    pub fgsm: Vec<f64>,
    pub steps: Vec<usize>,
    /// Low-pass widths of the CoarseNets compared against FineNet under noise.
    pub coarse_sigmas: Vec<f64>,
}

impl FineArch {
    pub fn spec(&self, classes: usize) -> NetworkSpec {
        NetworkSpec {
            kind: PathwayKind::Fine,
            stages: vec![(self.channels, self.kernel); self.depth],
            fc_width: self.fc,
            num_classes: classes,
            input_channels: 3,
            input_size: twopath::data::IMAGE_SIZE,
        }
    }
}

impl CoarseArch {
    pub fn spec(&self, classes: usize) -> NetworkSpec {
        NetworkSpec {
            kind: PathwayKind::Coarse,
            stages: vec![(self.channels1, self.kernel1), (self.channels2, self.kernel2)],
            fc_width: self.fc,
            num_classes: classes,
            input_channels: 1,
            input_size: twopath::data::IMAGE_SIZE,
        }
    }

    pub fn pipeline(&self) -> InputPipeline {
        match self.binarize {
            Some(threshold) => InputPipeline::Binarize { threshold },
            None => InputPipeline::LowPass { sigma: self.sigma },
        }
    }
}

/// Size and training schedule of one associative memory.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryConfig {
    pub hidden: usize,
    pub train: RbmTrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub experiment: String,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    pub fine: FineArch,
    pub coarse: CoarseArch,
    pub fine_train: TrainConfig,
    pub coarse_train: TrainConfig,
    pub readout_train: TrainConfig,
    /// Robustness memory over `[g_C ‖ g_F]`.
    pub memory: MemoryConfig,
    /// Context memory over `[g_C ‖ c]`.
    pub bias_memory: MemoryConfig,
    pub bias_sigma: f64,
    pub steps: usize,
    pub eval_batch: usize,
    pub grids: Grids,
}

fn train_cfg(epochs: usize, lr: f64, decay: &[usize]) -> TrainConfig {
    TrainConfig { epochs, lr, lr_decay_epochs: decay.to_vec(), ..TrainConfig::default() }
}

impl ExperimentConfig {
    /// Full-size settings: every network, schedule and grid at its published value.
    pub fn paper() -> Self {
        let fine = NetworkSpec::fine(10);
        let coarse = NetworkSpec::coarse(10);
        Self {
            profile: Profile::Paper,
            experiment: "twopath".into(),
            out_dir: PathBuf::from("runs"),
            seeds: vec![0],
            data: DataConfig {
                root: None,
                classes: Vec::new(),
                train_subset: 50_000,
                test_subset: 10_000,
                n_super: 5,
                n_sub: 5,
                train_per_sub: 500,
                test_per_sub: 100,
                subset_seed: 0,
                synthetic_seed: 0,
            },
            fine: FineArch { channels: fine.stages[0].0, kernel: fine.stages[0].1, depth: fine.stages.len(), fc: fine.fc_width },
            coarse: CoarseArch {
                channels1: coarse.stages[0].0,
                kernel1: coarse.stages[0].1,
                channels2: coarse.stages[1].0,
                kernel2: coarse.stages[1].1,
                fc: coarse.fc_width,
                sigma: 2.0,
                binarize: None,
                imitate: true,
            },
            fine_train: TrainConfig::default(),
            coarse_train: TrainConfig::default(),
            readout_train: TrainConfig::default(),
            memory: MemoryConfig { hidden: 400, train: RbmTrainConfig::default() },
            bias_memory: MemoryConfig { hidden: 400, train: RbmTrainConfig::default() },
            bias_sigma: 1.4,
            steps: 10,
            eval_batch: 256,
            grids: Grids {
                channels: vec![16, 32, 64, 128, 256],
                kernels: vec![3, 5, 7, 9, 11, 13],
                sigma: vec![0.2, 0.6, 1.0, 1.4, 2.0, 3.0],
                uniform: vec![0.0, 0.1, 0.2, 0.3, 0.5, 0.8],
                salt_pepper: vec![0.0, 0.1, 0.2, 0.3, 0.5, 0.8],
                fgsm: vec![0.0, 0.01, 0.05, 0.1, 0.5],
                steps: vec![0, 1, 2, 5, 10, 20],
                coarse_sigmas: vec![2.0, 0.2],
            },
        }
    }

    /// Reduced sizes that train on one CPU core in minutes.
    pub fn desk() -> Self {
        let mut c = Self::paper();
        c.profile = Profile::Desk;
        c.seeds = vec![0, 1, 2];
        c.data.classes = vec![0, 1, 2];
        c.data.train_subset = 2000;
        c.data.test_subset = 1000;
        c.data.train_per_sub = 400;
        c.fine = FineArch { channels: 16, kernel: 3, depth: 3, fc: 128 };
        c.coarse.channels1 = 8;
        c.coarse.channels2 = 16;
        c.coarse.fc = 128;
        c.fine_train = train_cfg(20, 0.1, &[13, 17]);
        c.coarse_train = train_cfg(20, 0.01, &[13, 17]);
        c.readout_train = train_cfg(10, 0.001, &[7]);
        c.memory = MemoryConfig {
            hidden: 256,
            train: RbmTrainConfig { epochs: 600, lr: 0.5, lr_decay_epochs: vec![400, 500], ..RbmTrainConfig::default() },
        };
        c.bias_memory = MemoryConfig {
            hidden: 32,
            train: RbmTrainConfig { epochs: 30, lr: 0.1, lr_decay_epochs: vec![20, 25], ..RbmTrainConfig::default() },
        };
        c.grids.channels = vec![8, 16, 32];
        c.grids.kernels = vec![5, 11];
        c.grids.sigma = vec![0.2, 1.4, 2.0];
        c.grids.uniform = vec![0.0, 0.1, 0.5, 0.8];
        c.grids.salt_pepper = vec![0.0, 0.1, 0.3, 0.5, 0.8];
        c.grids.fgsm = vec![0.0, 0.05, 0.1, 0.5];
        c
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Paper => Self::paper(),
            Profile::Desk => Self::desk(),
        }
    }

    /// Parses a config file: the `profile` key (default desk) picks the base values, the
    /// remaining keys override them. Blank lines and `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let profile = pairs.iter().find(|(k, _)| k == "profile").map(|(_, v)| Profile::parse(v)).transpose()?;
        let mut cfg = Self::for_profile(profile.unwrap_or(Profile::Desk));
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every field as `key = value` lines in a fixed order; `from_text` inverts it.
    pub fn to_text(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Short stable identifier: the experiment name plus a hash of the full config.
    /// Name plus a hash of every setting except the output directory.
    pub fn experiment_id(&self) -> String {
        let content = Self { out_dir: PathBuf::new(), ..self.clone() }.to_text();
        format!("{}-{:08x}", self.experiment, derive_seed(0, &content) as u32)
    }

    pub fn fine_spec(&self, classes: usize) -> NetworkSpec {
        self.fine.spec(classes)
    }

    pub fn coarse_spec(&self, classes: usize) -> NetworkSpec {
        self.coarse.spec(classes)
    }

    /// Points `data.root` at `$TWOPATH_DATA` when that variable is set and non-empty.
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(root) = std::env::var_os("TWOPATH_DATA").filter(|v| !v.is_empty()) {
            self.data.root = Some(PathBuf::from(root));
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("seeds must list at least one seed");
        }
        self.fine_spec(2).validate()?;
        self.coarse_spec(2).validate()?;
        self.fine_train.validate()?;
        self.coarse_train.validate()?;
        self.readout_train.validate()?;
        self.memory.train.validate()?;
        self.bias_memory.train.validate()?;
        if self.memory.hidden == 0 || self.bias_memory.hidden == 0 || self.eval_batch == 0 {
            bail!("rbm.hidden, bias.rbm.hidden and eval.batch must be positive");
        }
        if !(self.coarse.sigma > 0.0 && self.bias_sigma > 0.0) {
            bail!("low-pass widths must be positive");
        }
        if let Some(t) = self.coarse.binarize {
            if !(t > 0.0 && t < 1.0) {
                bail!("coarse.binarize threshold must lie in (0, 1), got {t}");
            }
        }
        if self.grids.sigma.iter().chain(&self.grids.coarse_sigmas).any(|&s| !(s > 0.0)) {
            bail!("sweep sigmas must be positive");
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("profile", self.profile.as_str().into());
        put("experiment", self.experiment.clone());
        put("out_dir", self.out_dir.display().to_string());
        put("seeds", list(&self.seeds));
        put("data.root", self.data.root.as_ref().map(|p| p.display().to_string()).unwrap_or_default());
        put("data.classes", list(&self.data.classes));
        put("data.train_subset", self.data.train_subset.to_string());
        put("data.test_subset", self.data.test_subset.to_string());
        put("data.n_super", self.data.n_super.to_string());
        put("data.n_sub", self.data.n_sub.to_string());
        put("data.train_per_sub", self.data.train_per_sub.to_string());
        put("data.test_per_sub", self.data.test_per_sub.to_string());
        put("data.subset_seed", self.data.subset_seed.to_string());
        put("data.synthetic_seed", self.data.synthetic_seed.to_string());
        put("fine.channels", self.fine.channels.to_string());
        put("fine.kernel", self.fine.kernel.to_string());
        put("fine.depth", self.fine.depth.to_string());
        put("fine.fc", self.fine.fc.to_string());
        put("coarse.channels1", self.coarse.channels1.to_string());
        put("coarse.kernel1", self.coarse.kernel1.to_string());
        put("coarse.channels2", self.coarse.channels2.to_string());
        put("coarse.kernel2", self.coarse.kernel2.to_string());
        put("coarse.fc", self.coarse.fc.to_string());
        put("coarse.sigma", self.coarse.sigma.to_string());
        put("coarse.binarize", self.coarse.binarize.map(|t| t.to_string()).unwrap_or_default());
        put("coarse.imitate", self.coarse.imitate.to_string());
        for (prefix, t) in
            [("train.fine", &self.fine_train), ("train.coarse", &self.coarse_train), ("train.readout", &self.readout_train)]
        {
            put(&format!("{prefix}.epochs"), t.epochs.to_string());
            put(&format!("{prefix}.batch"), t.batch_size.to_string());
            put(&format!("{prefix}.lr"), t.lr.to_string());
            put(&format!("{prefix}.momentum"), t.momentum.to_string());
            put(&format!("{prefix}.decay_epochs"), list(&t.lr_decay_epochs));
            put(&format!("{prefix}.decay_factor"), t.lr_decay_factor.to_string());
            put(&format!("{prefix}.alpha"), t.alpha.to_string());
        }
        for (prefix, m) in [("rbm", &self.memory), ("bias.rbm", &self.bias_memory)] {
            put(&format!("{prefix}.hidden"), m.hidden.to_string());
            put(&format!("{prefix}.epochs"), m.train.epochs.to_string());
            put(&format!("{prefix}.batch"), m.train.batch_size.to_string());
            put(&format!("{prefix}.lr"), m.train.lr.to_string());
            put(&format!("{prefix}.decay_epochs"), list(&m.train.lr_decay_epochs));
            put(&format!("{prefix}.decay_factor"), m.train.lr_decay_factor.to_string());
        }
        put("bias.sigma", self.bias_sigma.to_string());
        put("interplay.steps", self.steps.to_string());
        put("eval.batch", self.eval_batch.to_string());
        put("sweep.channels", list(&self.grids.channels));
        put("sweep.kernels", list(&self.grids.kernels));
        put("sweep.sigma", list(&self.grids.sigma));
        put("sweep.uniform", list(&self.grids.uniform));
        put("sweep.salt_pepper", list(&self.grids.salt_pepper));
        put("sweep.fgsm", list(&self.grids.fgsm));
        put("sweep.steps", list(&self.grids.steps));
        put("sweep.coarse_sigmas", list(&self.grids.coarse_sigmas));
        out
    }

    /// Sets one key. Unknown keys are errors so typos never pass silently.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let ctx = || format!("config key {key} = {v:?}");
        if let Some((prefix, field)) = key.rsplit_once('.') {
            let t = match prefix {
                "train.fine" => Some(&mut self.fine_train),
                "train.coarse" => Some(&mut self.coarse_train),
                "train.readout" => Some(&mut self.readout_train),
                _ => None,
            };
            if let Some(t) = t {
                match field {
                    "epochs" => t.epochs = scalar(v).with_context(ctx)?,
                    "batch" => t.batch_size = scalar(v).with_context(ctx)?,
                    "lr" => t.lr = scalar(v).with_context(ctx)?,
                    "momentum" => t.momentum = scalar(v).with_context(ctx)?,
                    "decay_epochs" => t.lr_decay_epochs = parse_list(v).with_context(ctx)?,
                    "decay_factor" => t.lr_decay_factor = scalar(v).with_context(ctx)?,
                    "alpha" => t.alpha = scalar(v).with_context(ctx)?,
                    _ => bail!("unknown config key {key:?}"),
                }
                return Ok(());
            }
            let m = match prefix {
                "rbm" => Some(&mut self.memory),
                "bias.rbm" => Some(&mut self.bias_memory),
                _ => None,
            };
            if let Some(m) = m {
                match field {
                    "hidden" => m.hidden = scalar(v).with_context(ctx)?,
                    "epochs" => m.train.epochs = scalar(v).with_context(ctx)?,
                    "batch" => m.train.batch_size = scalar(v).with_context(ctx)?,
                    "lr" => m.train.lr = scalar(v).with_context(ctx)?,
                    "decay_epochs" => m.train.lr_decay_epochs = parse_list(v).with_context(ctx)?,
                    "decay_factor" => m.train.lr_decay_factor = scalar(v).with_context(ctx)?,
                    _ => bail!("unknown config key {key:?}"),
                }
                return Ok(());
            }
        }
        match key {
            "profile" => self.profile = Profile::parse(v)?,
            "experiment" => {
                if v.is_empty() || !v.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                    bail!("experiment name must be non-empty [A-Za-z0-9_-], got {v:?}");
                }
                self.experiment = v.to_string();
            }
            "out_dir" => self.out_dir = PathBuf::from(v),
            "seeds" => self.seeds = parse_list(v).with_context(ctx)?,
            "data.root" => self.data.root = (!v.is_empty()).then(|| PathBuf::from(v)),
            "data.classes" => self.data.classes = parse_list(v).with_context(ctx)?,
            "data.train_subset" => self.data.train_subset = scalar(v).with_context(ctx)?,
            "data.test_subset" => self.data.test_subset = scalar(v).with_context(ctx)?,
            "data.n_super" => self.data.n_super = scalar(v).with_context(ctx)?,
            "data.n_sub" => self.data.n_sub = scalar(v).with_context(ctx)?,
            "data.train_per_sub" => self.data.train_per_sub = scalar(v).with_context(ctx)?,
            "data.test_per_sub" => self.data.test_per_sub = scalar(v).with_context(ctx)?,
            "data.subset_seed" => self.data.subset_seed = scalar(v).with_context(ctx)?,
            "data.synthetic_seed" => self.data.synthetic_seed = scalar(v).with_context(ctx)?,
            "fine.channels" => self.fine.channels = scalar(v).with_context(ctx)?,
            "fine.kernel" => self.fine.kernel = scalar(v).with_context(ctx)?,
            "fine.depth" => self.fine.depth = scalar(v).with_context(ctx)?,
            "fine.fc" => self.fine.fc = scalar(v).with_context(ctx)?,
            "coarse.channels1" => self.coarse.channels1 = scalar(v).with_context(ctx)?,
            "coarse.kernel1" => self.coarse.kernel1 = scalar(v).with_context(ctx)?,
            "coarse.channels2" => self.coarse.channels2 = scalar(v).with_context(ctx)?,
            "coarse.kernel2" => self.coarse.kernel2 = scalar(v).with_context(ctx)?,
            "coarse.fc" => self.coarse.fc = scalar(v).with_context(ctx)?,
            "coarse.sigma" => self.coarse.sigma = scalar(v).with_context(ctx)?,
            "coarse.binarize" => self.coarse.binarize = if v.is_empty() { None } else { Some(scalar(v).with_context(ctx)?) },
            "coarse.imitate" => self.coarse.imitate = scalar(v).with_context(ctx)?,
            "bias.sigma" => self.bias_sigma = scalar(v).with_context(ctx)?,
            "interplay.steps" => self.steps = scalar(v).with_context(ctx)?,
            "eval.batch" => self.eval_batch = scalar(v).with_context(ctx)?,
            "sweep.channels" => self.grids.channels = parse_list(v).with_context(ctx)?,
            "sweep.kernels" => self.grids.kernels = parse_list(v).with_context(ctx)?,
            "sweep.sigma" => self.grids.sigma = parse_list(v).with_context(ctx)?,
            "sweep.uniform" => self.grids.uniform = parse_list(v).with_context(ctx)?,
            "sweep.salt_pepper" => self.grids.salt_pepper = parse_list(v).with_context(ctx)?,
            "sweep.fgsm" => self.grids.fgsm = parse_list(v).with_context(ctx)?,
            "sweep.steps" => self.grids.steps = parse_list(v).with_context(ctx)?,
            "sweep.coarse_sigmas" => self.grids.coarse_sigmas = parse_list(v).with_context(ctx)?,
            _ => bail!("unknown config key {key:?}"),
        }
        Ok(())
    }
}

fn scalar<T: FromStr>(v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| anyhow!("{e}"))
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| scalar(s.trim())).collect()
}

fn list<T: Display>(xs: &[T]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// `key = value` lines; `#` starts a comment line. Duplicate keys are rejected.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected key = value, got {line:?}", i + 1))?;
        let k = k.trim();
        if k.is_empty() {
            bail!("line {}: empty key", i + 1);
        }
        if out.iter().any(|(seen, _)| seen == k) {
            bail!("line {}: duplicate key {k:?}", i + 1);
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}
