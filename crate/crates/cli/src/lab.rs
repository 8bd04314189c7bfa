//! Datasets, checkpoint-cached training and evaluation shared by every command.

use std::cell::{OnceCell, RefCell};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use twopath::assoc::{
    concat_rows, make_context_vectors, retrieve_context, robustness_predict, rows_for, train_rbm, AssociativeMemory,
    BiasedReadout, NormStats, Rbm,
};
use twopath::checkpoint::Checkpoint;
use twopath::data::synthetic::{cifar100_like, cifar10_like, SyntheticConfig};
use twopath::data::{load_cifar10, load_cifar100, select_classes, DatasetSplit, Encoded, InputPipeline, LabeledImage, Prepared};
use twopath::noise::{fgsm, NoiseKind, NoiseSpec};
use twopath::pathways::{accuracy, forward_features, train_coarse, train_fine, EpochMetrics, Teacher, TrainConfig};
use twopath::rng::derive_seed;
use twopath::{Network32, Tensor};

use crate::config::{CoarseArch, ExperimentConfig, MemoryConfig};

/// Bumped whenever cached artifacts would change meaning.
const CACHE_VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "/1");

/// Train and test images of one task with labels already re-indexed.
pub struct Task {
    pub name: &'static str,
    pub train: Vec<LabeledImage>,
    pub test: Vec<LabeledImage>,
    pub classes: usize,
    /// Super-class count; zero when the task has no hierarchy.
    pub supers: usize,
    /// Sub-class to super-class mapping text (bias task only).
    pub mapping: String,
}

pub fn labels(images: &[LabeledImage]) -> Vec<usize> {
    images.iter().map(|im| im.fine_label).collect()
}

pub fn super_labels(images: &[LabeledImage]) -> Vec<usize> {
    images.iter().map(|im| im.coarse_label.unwrap_or(0)).collect()
}

/// The three trained components of the robustness system for one seed.
pub struct RobustnessSystem {
    pub fine: Network32,
    pub coarse: Network32,
    pub memory: AssociativeMemory<f32>,
}

/// FineNet, super-class CoarseNet, context memory and biased readout for one seed.
pub struct BiasSystem {
    pub fine: Network32,
    pub coarse: Network32,
    pub memory: AssociativeMemory<f32>,
    pub readout: BiasedReadout<f32>,
}

/// Accuracies of the bias task on one image set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasScores {
    pub unbiased: f64,
    pub biased: f64,
    pub oracle: f64,
    pub retrieval: f64,
}

pub struct Lab {
    pub cfg: ExperimentConfig,
    pub id: String,
    pub run_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub timing: bool,
    pub verbose: bool,
    recognition: OnceCell<Task>,
    bias: OnceCell<Task>,
    prepared: RefCell<BTreeMap<String, Prepared>>,
}

fn dataset_dir(root: &Path, archive: &str) -> PathBuf {
    let nested = root.join(archive);
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

impl Lab {
    /// Creates `<out_dir>/<experiment id>/` holding a copy of the config.
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let id = cfg.experiment_id();
        let run_dir = cfg.out_dir.join(&id);
        let cache_dir = cfg.out_dir.join("cache");
        std::fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
        std::fs::create_dir_all(&cache_dir).with_context(|| format!("creating {}", cache_dir.display()))?;
        std::fs::write(run_dir.join("config.txt"), cfg.to_text())?;
        Ok(Self {
            cfg,
            id,
            run_dir,
            cache_dir,
            timing: false,
            verbose: false,
            recognition: OnceCell::new(),
            bias: OnceCell::new(),
            prepared: RefCell::new(BTreeMap::new()),
        })
    }

    pub fn log(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("[{}] {}", self.id, msg.as_ref());
        }
    }

    /// CIFAR-10 classes `data.classes`, truncated to the configured subset sizes.
    pub fn recognition(&self) -> Result<&Task> {
        if let Some(t) = self.recognition.get() {
            return Ok(t);
        }
        let d = &self.cfg.data;
        let (train, test) = match &d.root {
            Some(root) => {
                let s = load_cifar10(dataset_dir(root, "cifar-10-batches-bin"))?;
                (s.train, s.test)
            }
            None => {
                let k = if d.classes.is_empty() { 10 } else { d.classes.len() };
                let cfg = SyntheticConfig {
                    train_per_class: d.train_subset.div_ceil(k),
                    test_per_class: d.test_subset.div_ceil(k),
                    seed: d.synthetic_seed,
                };
                let (train, test) = cifar10_like(&cfg);
                let names: Vec<String> = (0..10).map(|c| format!("class_{c}")).collect();
                (DatasetSplit::new(train, names.clone()), DatasetSplit::new(test, names))
            }
        };
        let (train, test) = if d.classes.is_empty() {
            (train, test)
        } else {
            (select_classes(&train, &d.classes)?, select_classes(&test, &d.classes)?)
        };
        let classes = train.num_classes();
        let task = Task {
            name: "recognition",
            train: train.truncate(d.train_subset).images,
            test: test.truncate(d.test_subset).images,
            classes,
            supers: 0,
            mapping: String::new(),
        };
        self.log(format!("recognition task: {} train / {} test images, {classes} classes", task.train.len(), task.test.len()));
        Ok(self.recognition.get_or_init(|| task))
    }

    /// `n_super` CIFAR-100 super-classes with `n_sub` sub-classes each.
    pub fn bias_task(&self) -> Result<&Task> {
        if let Some(t) = self.bias.get() {
            return Ok(t);
        }
        let d = &self.cfg.data;
        let (train, test) = match &d.root {
            Some(root) => {
                let s = load_cifar100(dataset_dir(root, "cifar-100-binary"))?;
                (s.train, s.test)
            }
            None => {
                let cfg =
                    SyntheticConfig { train_per_class: d.train_per_sub, test_per_class: d.test_per_sub, seed: d.synthetic_seed };
                let (train, test) = cifar100_like(&cfg);
                let classes = train.iter().map(|im| im.fine_label + 1).max().unwrap_or(0);
                let names: Vec<String> = (0..classes).map(|c| format!("class_{c}")).collect();
                (DatasetSplit::new(train, names.clone()), DatasetSplit::new(test, names))
            }
        };
        let subset = twopath::data::SuperclassSubset::choose(&train, d.n_super, d.n_sub, d.subset_seed)?;
        let cap = |split: DatasetSplit, per: usize| {
            let mut seen = vec![0usize; subset.num_classes()];
            let mut images = subset.apply(&split).images;
            images.retain(|im| {
                seen[im.fine_label] += 1;
                seen[im.fine_label] <= per
            });
            images
        };
        let task = Task {
            name: "bias",
            train: cap(train, d.train_per_sub),
            test: cap(test, d.test_per_sub),
            classes: subset.num_classes(),
            supers: subset.n_super,
            mapping: subset.mapping_text(),
        };
        self.log(format!(
            "bias task: {} train / {} test images, {} sub-classes",
            task.train.len(),
            task.test.len(),
            task.classes
        ));
        Ok(self.bias.get_or_init(|| task))
    }

    /// Pipeline statistics fitted on the task's training images.
    pub fn prepared(&self, task: &Task, pipeline: InputPipeline) -> Result<Prepared> {
        let key = format!("{}|{pipeline:?}", task.name);
        if let Some(p) = self.prepared.borrow().get(&key) {
            return Ok(p.clone());
        }
        let p = pipeline.fit(&task.train)?;
        self.prepared.borrow_mut().insert(key, p.clone());
        Ok(p)
    }

    pub fn encode(&self, task: &Task, pipeline: InputPipeline, images: &[LabeledImage], by_super: bool) -> Result<Encoded> {
        let mut enc = Encoded::new(&self.prepared(task, pipeline)?, images)?;
        if by_super {
            enc.labels = super_labels(images);
        }
        Ok(enc)
    }

    fn recipe(&self, task: &Task, parts: &[String]) -> String {
        format!("{CACHE_VERSION}|{}|{:?}|{}", task.name, self.cfg.data, parts.join("|"))
    }

    /// Loads `<cache>/<label>-<hash>.tpck` if present, otherwise builds and stores it.
    fn cached<V>(
        &self,
        label: &str,
        recipe: &str,
        load: impl FnOnce(&Checkpoint) -> Result<V>,
        build: impl FnOnce() -> Result<(V, Checkpoint)>,
    ) -> Result<V> {
        let path = self.cache_dir.join(format!("{label}-{:016x}.tpck", derive_seed(0, recipe)));
        if path.exists() {
            self.log(format!("cached {label}"));
            return load(&Checkpoint::load(&path)?);
        }
        let (value, ck) = build()?;
        let tmp = path.with_extension("partial");
        ck.save(&tmp)?;
        std::fs::rename(&tmp, &path)?;
        Ok(value)
    }

    fn seeded(train: &TrainConfig, seed: u64, label: &str) -> TrainConfig {
        TrainConfig { seed: derive_seed(seed, label), ..train.clone() }
    }

    /// Trains FineNet from scratch on the task's sub-class labels.
    pub fn train_fine_net(
        &self,
        task: &Task,
        seed: u64,
        on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<(Network32, Vec<EpochMetrics>)> {
        let spec = self.cfg.fine.spec(task.classes);
        let mut net = Network32::build(&spec, derive_seed(seed, "fine"))?;
        let train = self.encode(task, InputPipeline::Raw, &task.train, false)?;
        let cfg = Self::seeded(&self.cfg.fine_train, seed, "fine");
        let curve = train_fine(&mut net, &train, None, &cfg, on_epoch)?;
        Ok((net, curve))
    }

    pub fn fine_net(&self, task: &Task, seed: u64) -> Result<Network32> {
        let recipe = self.recipe(task, &[format!("fine {:?} {:?} seed={seed}", self.cfg.fine, self.cfg.fine_train)]);
        self.cached(
            &format!("fine-{}-s{seed}", task.name),
            &recipe,
            |ck| Ok(Network32::from_checkpoint(ck)?),
            || {
                self.log(format!("training FineNet on {} (seed {seed})", task.name));
                let (net, _) =
                    self.train_fine_net(task, seed, |m| self.log(format!("  fine epoch {} loss {:.4}", m.epoch, m.train_loss)))?;
                let ck = net.to_checkpoint();
                Ok((net, ck))
            },
        )
    }

    /// Trains CoarseNet, imitating `teacher` when one is given.
    ///
    /// On the bias task CoarseNet learns super-class labels.
    pub fn train_coarse_net(
        &self,
        task: &Task,
        arch: &CoarseArch,
        seed: u64,
        teacher: Option<&mut Network32>,
        on_epoch: impl FnMut(&EpochMetrics),
    ) -> Result<(Network32, Vec<EpochMetrics>)> {
        let by_super = task.supers > 0;
        let classes = if by_super { task.supers } else { task.classes };
        let mut net = Network32::build(&arch.spec(classes), derive_seed(seed, "coarse"))?;
        let train = self.encode(task, arch.pipeline(), &task.train, by_super)?;
        let cfg = Self::seeded(&self.cfg.coarse_train, seed, "coarse");
        let curve = match teacher {
            Some(t) => {
                let inputs = self.encode(task, InputPipeline::Raw, &task.train, by_super)?;
                train_coarse(&mut net, &train, None, &cfg, Some(Teacher { net: t, inputs: &inputs }), on_epoch)?
            }
            None => train_coarse(&mut net, &train, None, &cfg, None, on_epoch)?,
        };
        Ok((net, curve))
    }

    pub fn coarse_net(&self, task: &Task, arch: &CoarseArch, seed: u64) -> Result<Network32> {
        let mut parts = vec![format!("coarse {arch:?} {:?} seed={seed}", self.cfg.coarse_train)];
        if arch.imitate {
            parts.push(format!("teacher {:?} {:?}", self.cfg.fine, self.cfg.fine_train));
        }
        let recipe = self.recipe(task, &parts);
        let label = format!("coarse-{}-s{seed}", task.name);
        self.cached(
            &label,
            &recipe,
            |ck| Ok(Network32::from_checkpoint(ck)?),
            || {
                let mut teacher = if arch.imitate { Some(self.fine_net(task, seed)?) } else { None };
                self.log(format!("training CoarseNet on {} ({arch:?}, seed {seed})", task.name));
                let (net, _) = self.train_coarse_net(task, arch, seed, teacher.as_mut(), |m| {
                    self.log(format!("  coarse epoch {} loss {:.4}", m.epoch, m.train_loss))
                })?;
                let ck = net.to_checkpoint();
                Ok((net, ck))
            },
        )
    }

    /// Eval-mode penultimate features of `images` through `net` and its pipeline.
    pub fn features(
        &self,
        net: &mut Network32,
        task: &Task,
        pipeline: InputPipeline,
        images: &[LabeledImage],
    ) -> Result<Tensor<f32>> {
        let enc = self.encode(task, pipeline, images, false)?;
        Ok(forward_features(net, &enc, self.cfg.eval_batch)?.0)
    }

    /// Top-1 accuracy of `net` on `images` against `truth`.
    pub fn accuracy(
        &self,
        net: &mut Network32,
        task: &Task,
        pipeline: InputPipeline,
        images: &[LabeledImage],
        truth: &[usize],
    ) -> Result<f64> {
        let enc = self.encode(task, pipeline, images, false)?;
        let (_, p) = forward_features(net, &enc, self.cfg.eval_batch)?;
        Ok(accuracy(&p.argmax_rows(), truth))
    }

    /// Test images after corruption. FGSM perturbs against `fine`; `level = 0` returns clean copies.
    pub fn corrupted_test(
        &self,
        task: &Task,
        kind: NoiseKind,
        level: f64,
        seed: u64,
        fine: &mut Network32,
    ) -> Result<Vec<LabeledImage>> {
        let pixels: Vec<Tensor<f32>> = task.test.iter().map(|im| im.pixels.clone()).collect();
        let noisy = if level == 0.0 {
            pixels
        } else if kind == NoiseKind::Fgsm {
            let prep = self.prepared(task, InputPipeline::Raw)?;
            fgsm(fine, &prep, &pixels, &labels(&task.test), level, self.cfg.eval_batch)?
        } else {
            NoiseSpec::new(kind, level, derive_seed(seed, "eval-noise"))?.corrupt(&pixels)?
        };
        Ok(task
            .test
            .iter()
            .zip(noisy)
            .map(|(im, pixels)| LabeledImage { pixels, fine_label: im.fine_label, coarse_label: im.coarse_label })
            .collect())
    }

    fn check_pair(fine: &Network32, coarse: &Network32) -> Result<()> {
        if fine.spec().fc_width != coarse.spec().fc_width {
            bail!(
                "FineNet ({}) and CoarseNet ({}) penultimate widths differ; the memory pairs equal halves",
                fine.spec().fc_width,
                coarse.spec().fc_width
            );
        }
        Ok(())
    }

    /// Trains the robustness memory on clean training pairs `[g_C ‖ g_F]`.
    pub fn train_robustness_memory(
        &self,
        task: &Task,
        fine: &mut Network32,
        coarse: &mut Network32,
        seed: u64,
        on_epoch: impl FnMut(usize, f64),
    ) -> Result<(AssociativeMemory<f32>, Vec<f64>)> {
        Self::check_pair(fine, coarse)?;
        if fine.spec().num_classes != coarse.spec().num_classes {
            bail!("FineNet and CoarseNet were trained on different class counts");
        }
        let gc = self.features(coarse, task, self.cfg.coarse.pipeline(), &task.train)?;
        let gf = self.features(fine, task, InputPipeline::Raw, &task.train)?;
        let pairs = concat_rows(&gc, &gf)?;
        self.train_memory(pairs, None, &self.cfg.memory, seed, on_epoch)
    }

    fn train_memory(
        &self,
        pairs: Tensor<f32>,
        codebook: Option<Tensor<f32>>,
        memory: &MemoryConfig,
        seed: u64,
        on_epoch: impl FnMut(usize, f64),
    ) -> Result<(AssociativeMemory<f32>, Vec<f64>)> {
        let stats = NormStats::fit(&pairs)?;
        let mut rbm = Rbm::new(pairs.dim(1), memory.hidden, derive_seed(seed, "rbm"));
        let cfg = twopath::assoc::RbmTrainConfig { seed: derive_seed(seed, "rbm-batches"), ..memory.train.clone() };
        let curve = train_rbm(&mut rbm, &stats.normalize(&pairs)?, &cfg, on_epoch)?;
        Ok((AssociativeMemory::new(rbm, stats, codebook)?, curve))
    }

    fn memory_recipe(&self, task: &Task, memory: &MemoryConfig, seed: u64, extra: &str) -> String {
        self.recipe(
            task,
            &[
                format!("fine {:?} {:?}", self.cfg.fine, self.cfg.fine_train),
                format!("coarse {:?} {:?}", self.cfg.coarse, self.cfg.coarse_train),
                format!("rbm {memory:?} seed={seed} {extra}"),
            ],
        )
    }

    pub fn robustness_system(&self, task: &Task, seed: u64) -> Result<RobustnessSystem> {
        let mut fine = self.fine_net(task, seed)?;
        let mut coarse = self.coarse_net(task, &self.cfg.coarse, seed)?;
        let recipe = self.memory_recipe(task, &self.cfg.memory, seed, "");
        let memory = self.cached(
            &format!("rbm-robustness-s{seed}"),
            &recipe,
            |ck| Ok(AssociativeMemory::from_checkpoint(ck)?),
            || {
                self.log(format!("training robustness memory (seed {seed})"));
                let (m, _) = self.train_robustness_memory(task, &mut fine, &mut coarse, seed, |e, err| {
                    if e % 10 == 0 {
                        self.log(format!("  rbm epoch {e} reconstruction error {err:.5}"))
                    }
                })?;
                let ck = m.to_checkpoint();
                Ok((m, ck))
            },
        )?;
        Ok(RobustnessSystem { fine, coarse, memory })
    }

    /// Accuracy of the associated system after each interplay step count in `steps`.
    pub fn robustness_scores(
        &self,
        sys: &mut RobustnessSystem,
        task: &Task,
        images: &[LabeledImage],
        steps: &[usize],
    ) -> Result<Vec<f64>> {
        let gc = self.features(&mut sys.coarse, task, self.cfg.coarse.pipeline(), images)?;
        let gf = self.features(&mut sys.fine, task, InputPipeline::Raw, images)?;
        let truth = labels(images);
        steps.iter().map(|&t| Ok(accuracy(&robustness_predict(&sys.fine, &sys.memory, &gc, &gf, t)?, &truth))).collect()
    }

    /// CoarseNet for the bias task: super-class labels, low-pass width `bias.sigma`, no imitation.
    pub fn bias_coarse_arch(&self) -> CoarseArch {
        CoarseArch { sigma: self.cfg.bias_sigma, binarize: None, imitate: false, ..self.cfg.coarse.clone() }
    }

    /// Trains the context memory on `[g_C ‖ c]` and the readout over `[g_F ‖ c]`.
    pub fn train_bias_components(
        &self,
        task: &Task,
        fine: &mut Network32,
        coarse: &mut Network32,
        seed: u64,
        on_epoch: impl FnMut(usize, f64),
    ) -> Result<(AssociativeMemory<f32>, BiasedReadout<f32>, Vec<f64>)> {
        Self::check_pair(fine, coarse)?;
        if task.supers == 0 {
            bail!("the bias task needs super-class labels");
        }
        let dim = fine.spec().fc_width;
        let codebook = make_context_vectors::<f32>(task.supers, dim, derive_seed(seed, "context"))?;
        let supers = super_labels(&task.train);
        let contexts = rows_for(&codebook, &supers)?;
        let gc = self.features(coarse, task, self.bias_coarse_arch().pipeline(), &task.train)?;
        let (memory, curve) =
            self.train_memory(concat_rows(&gc, &contexts)?, Some(codebook), &self.cfg.bias_memory, seed, on_epoch)?;
        let gf = self.features(fine, task, InputPipeline::Raw, &task.train)?;
        let mut readout = BiasedReadout::from_fine(fine, dim)?;
        let cfg = Self::seeded(&self.cfg.readout_train, seed, "readout");
        readout.train(&gf, &contexts, &labels(&task.train), &cfg)?;
        Ok((memory, readout, curve))
    }

    pub fn bias_system(&self, task: &Task, seed: u64) -> Result<BiasSystem> {
        let mut fine = self.fine_net(task, seed)?;
        let mut coarse = self.coarse_net(task, &self.bias_coarse_arch(), seed)?;
        let recipe = self.memory_recipe(
            task,
            &self.cfg.bias_memory,
            seed,
            &format!("bias sigma={} readout {:?}", self.cfg.bias_sigma, self.cfg.readout_train),
        );
        let (memory, readout) = self.cached(
            &format!("rbm-bias-s{seed}"),
            &recipe,
            |ck| Ok((AssociativeMemory::from_checkpoint(ck)?, BiasedReadout::from_checkpoint(ck)?)),
            || {
                self.log(format!("training context memory and biased readout (seed {seed})"));
                let (m, r, _) = self.train_bias_components(task, &mut fine, &mut coarse, seed, |e, err| {
                    if e % 10 == 0 {
                        self.log(format!("  rbm epoch {e} reconstruction error {err:.5}"))
                    }
                })?;
                let ck = bias_checkpoint(&m, &r);
                Ok(((m, r), ck))
            },
        )?;
        Ok(BiasSystem { fine, coarse, memory, readout })
    }

    pub fn bias_scores(&self, sys: &mut BiasSystem, task: &Task, images: &[LabeledImage], steps: usize) -> Result<BiasScores> {
        let truth = labels(images);
        let supers = super_labels(images);
        let gf = self.features(&mut sys.fine, task, InputPipeline::Raw, images)?;
        let gc = self.features(&mut sys.coarse, task, self.bias_coarse_arch().pipeline(), images)?;
        let codebook = sys.memory.codebook.clone().context("bias memory has no context vectors")?;
        let retrieved = retrieve_context(&sys.memory, &gc, steps)?;
        let unbiased = accuracy(&sys.fine.logits_from_features(&gf)?.argmax_rows(), &truth);
        let biased = accuracy(&sys.readout.predict(&gf, &rows_for(&codebook, &retrieved)?)?, &truth);
        let oracle = accuracy(&sys.readout.predict(&gf, &rows_for(&codebook, &supers)?)?, &truth);
        Ok(BiasScores { unbiased, biased, oracle, retrieval: accuracy(&retrieved, &supers) })
    }
}

/// Memory and biased readout in one checkpoint.
pub fn bias_checkpoint(memory: &AssociativeMemory<f32>, readout: &BiasedReadout<f32>) -> Checkpoint {
    let mut ck = memory.to_checkpoint();
    for (name, t) in readout.to_checkpoint().entries() {
        ck.push(name.clone(), t);
    }
    ck
}

/// Parses `kind:level`, e.g. `uniform:0.5`, `salt-pepper:0.3`, `fgsm:0.1`.
pub fn parse_noise(s: &str) -> Result<(NoiseKind, f64)> {
    let (kind, level) = s.split_once(':').context("noise must look like kind:level")?;
    let level: f64 = level.parse().with_context(|| format!("noise level {level:?}"))?;
    Ok((NoiseKind::parse(kind)?, level))
}
