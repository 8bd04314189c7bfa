//! Figure sweeps: each iterates one variable over its grid for every seed.

use std::time::Instant;

use anyhow::{bail, Result};
use twopath::data::InputPipeline;
use twopath::noise::NoiseKind;

use crate::config::CoarseArch;
use crate::lab::{labels, Lab};
use crate::metrics::MetricsRow;

/// What a figure varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    Channels,
    Kernel,
    Sigma,
    Noise(NoiseKind),
}

/// What a figure measures at each grid point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Panel {
    /// CoarseNet with and without imitation; `binary` selects thresholded input.
    Imitation { binary: bool },
    /// FineNet against CoarseNets of several low-pass widths.
    PathwayNoise,
    /// FineNet after associating with CoarseNet, per interplay step count.
    Association,
    /// Sub-class accuracy with and without the retrieved context.
    Bias,
}

pub const FIGURES: [&str; 13] = ["4a", "4b", "4c", "4d", "4e", "5a", "5b", "5c", "5d", "5e", "5f", "6a", "6b"];

fn figure(id: &str) -> Result<(Axis, Panel)> {
    use NoiseKind::*;
    Ok(match id {
        "4a" => (Axis::Channels, Panel::Imitation { binary: false }),
        "4b" => (Axis::Kernel, Panel::Imitation { binary: false }),
        "4c" => (Axis::Sigma, Panel::Imitation { binary: false }),
        "4d" => (Axis::Channels, Panel::Imitation { binary: true }),
        "4e" => (Axis::Kernel, Panel::Imitation { binary: true }),
        "5a" => (Axis::Noise(Uniform), Panel::PathwayNoise),
        "5b" => (Axis::Noise(SaltPepper), Panel::PathwayNoise),
        "5c" => (Axis::Noise(Fgsm), Panel::PathwayNoise),
        "5d" => (Axis::Noise(Uniform), Panel::Association),
        "5e" => (Axis::Noise(SaltPepper), Panel::Association),
        "5f" => (Axis::Noise(Fgsm), Panel::Association),
        "6a" => (Axis::Noise(Uniform), Panel::Bias),
        "6b" => (Axis::Noise(SaltPepper), Panel::Bias),
        _ => bail!("unknown figure {id:?}; expected one of {}", FIGURES.join(", ")),
    })
}

fn axis_name(axis: Axis) -> &'static str {
    match axis {
        Axis::Channels => "channels",
        Axis::Kernel => "kernel",
        Axis::Sigma => "sigma",
        Axis::Noise(k) => k.as_str(),
    }
}

/// Metric names of a figure, in row order.
pub fn metric_names(lab: &Lab, id: &str) -> Result<Vec<String>> {
    let g = &lab.cfg.grids;
    Ok(match figure(id)?.1 {
        Panel::Imitation { .. } => vec!["accuracy_plain".into(), "accuracy_imitation".into()],
        Panel::PathwayNoise => {
            let mut m = vec!["fine".to_string()];
            m.extend(g.coarse_sigmas.iter().map(|s| format!("coarse_sigma{s}")));
            m
        }
        Panel::Association => g.steps.iter().map(|t| format!("associated_t{t}")).collect(),
        Panel::Bias => vec!["unbiased".into(), "biased".into(), "oracle".into(), "retrieval".into()],
    })
}

/// The grid a figure iterates.
pub fn grid(lab: &Lab, id: &str) -> Result<Vec<f64>> {
    let g = &lab.cfg.grids;
    Ok(match figure(id)?.0 {
        Axis::Channels => g.channels.iter().map(|&c| c as f64).collect(),
        Axis::Kernel => g.kernels.iter().map(|&k| k as f64).collect(),
        Axis::Sigma => g.sigma.clone(),
        Axis::Noise(NoiseKind::Uniform) => g.uniform.clone(),
        Axis::Noise(NoiseKind::SaltPepper) => g.salt_pepper.clone(),
        Axis::Noise(NoiseKind::Fgsm) => g.fgsm.clone(),
    })
}

/// CoarseNet architecture at one point of a channel, kernel or sigma sweep.
///
/// Channel sweeps set the second stage and keep the first at half of it; kernel sweeps
/// set the first stage and keep the second two smaller, as in the default 11/9 pair.
fn swept_arch(base: &CoarseArch, axis: Axis, value: f64, binary: bool, imitate: bool) -> CoarseArch {
    let mut arch = CoarseArch { imitate, ..base.clone() };
    arch.binarize = if binary { Some(base.binarize.unwrap_or(0.5)) } else { None };
    match axis {
        Axis::Channels => {
            arch.channels2 = value as usize;
            arch.channels1 = (value as usize / 2).max(1);
        }
        Axis::Kernel => {
            arch.kernel1 = value as usize;
            arch.kernel2 = (value as usize).saturating_sub(2).max(1);
        }
        Axis::Sigma => arch.sigma = value,
        Axis::Noise(_) => {}
    }
    arch
}

fn point(lab: &Lab, axis: Axis, panel: Panel, value: f64, seed: u64) -> Result<Vec<f64>> {
    let cfg = &lab.cfg;
    match panel {
        Panel::Imitation { binary } => {
            let task = lab.recognition()?;
            let truth = labels(&task.test);
            [false, true]
                .iter()
                .map(|&imitate| {
                    let arch = swept_arch(&cfg.coarse, axis, value, binary, imitate);
                    let mut net = lab.coarse_net(task, &arch, seed)?;
                    lab.accuracy(&mut net, task, arch.pipeline(), &task.test, &truth)
                })
                .collect()
        }
        Panel::PathwayNoise => {
            let Axis::Noise(kind) = axis else { unreachable!() };
            let task = lab.recognition()?;
            let truth = labels(&task.test);
            let mut fine = lab.fine_net(task, seed)?;
            let noisy = lab.corrupted_test(task, kind, value, seed, &mut fine)?;
            let mut out = vec![lab.accuracy(&mut fine, task, InputPipeline::Raw, &noisy, &truth)?];
            for &sigma in &cfg.grids.coarse_sigmas {
                let arch = CoarseArch { sigma, binarize: None, ..cfg.coarse.clone() };
                let mut net = lab.coarse_net(task, &arch, seed)?;
                out.push(lab.accuracy(&mut net, task, arch.pipeline(), &noisy, &truth)?);
            }
            Ok(out)
        }
        Panel::Association => {
            let Axis::Noise(kind) = axis else { unreachable!() };
            let task = lab.recognition()?;
            let mut sys = lab.robustness_system(task, seed)?;
            let noisy = lab.corrupted_test(task, kind, value, seed, &mut sys.fine)?;
            lab.robustness_scores(&mut sys, task, &noisy, &cfg.grids.steps)
        }
        Panel::Bias => {
            let Axis::Noise(kind) = axis else { unreachable!() };
            let task = lab.bias_task()?;
            let mut sys = lab.bias_system(task, seed)?;
            let noisy = lab.corrupted_test(task, kind, value, seed, &mut sys.fine)?;
            let s = lab.bias_scores(&mut sys, task, &noisy, cfg.steps)?;
            Ok(vec![s.unbiased, s.biased, s.oracle, s.retrieval])
        }
    }
}

/// Runs one figure: `|grid| × |seeds| × |metrics|` rows in grid, seed, metric order.
pub fn run_sweep(lab: &Lab, id: &str) -> Result<Vec<MetricsRow>> {
    let (axis, panel) = figure(id)?;
    let names = metric_names(lab, id)?;
    let mut rows = Vec::new();
    for value in grid(lab, id)? {
        for &seed in &lab.cfg.seeds {
            let start = Instant::now();
            let values = point(lab, axis, panel, value, seed)?;
            let wall = if lab.timing { start.elapsed().as_secs_f64() } else { 0.0 };
            lab.log(format!("{id} {}={value} seed {seed}: {values:?}", axis_name(axis)));
            for (metric, v) in names.iter().zip(values) {
                rows.push(MetricsRow {
                    experiment: lab.id.clone(),
                    seed,
                    variable: axis_name(axis).into(),
                    value,
                    metric: metric.clone(),
                    metric_value: v,
                    wall_seconds: wall,
                });
            }
        }
    }
    Ok(rows)
}
