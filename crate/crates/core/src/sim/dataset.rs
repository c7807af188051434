use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use super::render::{render_scene, SceneParams};
use crate::error::{Error, Result};
use crate::model::Example;
use crate::nn::{io, Tensor};
use crate::seed;

/// How distances are drawn over the label range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceSampling {
    #[default]
    Uniform,
    /// Uniform in `ln d`: equal mass per relative change in apparent size.
    LogUniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub count: usize,
    pub label_min: f64,
    pub label_max: f64,
    pub sampling: DistanceSampling,
    pub image_side: usize,
    pub brightness: (f64, f64),
    pub noise_level: (f64, f64),
    pub seed: u64,
}

impl DatasetConfig {
    /// Distances uniform over [2, 110] m, full brightness range, noise up to 0.3.
    pub fn uniform(count: usize, seed: u64) -> Self {
        Self {
            count,
            label_min: 2.0,
            label_max: 110.0,
            sampling: DistanceSampling::Uniform,
            image_side: 16,
            brightness: (0.5, 1.0),
            noise_level: (0.0, 0.3),
            seed,
        }
    }

    /// Profile the desk detector is tuned on: log-uniform distances over
    /// [1, 110] m so the stopping zone is inside the training range and short
    /// range is not starved of examples, and light noise.
    pub fn desk(count: usize, seed: u64) -> Self {
        Self {
            label_min: 1.0,
            sampling: DistanceSampling::LogUniform,
            noise_level: (0.0, 0.1),
            ..Self::uniform(count, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("dataset count must be at least 1".into()));
        }
        if self.sampling == DistanceSampling::LogUniform && !(self.label_min > 0.0) {
            return Err(Error::Config("log-uniform sampling needs a positive label_min".into()));
        }
        if !(self.label_min >= 0.0 && self.label_max > self.label_min && self.label_max <= 120.0) {
            return Err(Error::Config(format!(
                "label range [{}, {}] must be a non-empty subset of [0, 120]",
                self.label_min, self.label_max
            )));
        }
        let (b0, b1) = self.brightness;
        if !(0.5 <= b0 && b0 <= b1 && b1 <= 1.0) {
            return Err(Error::Config("brightness range must lie within [0.5, 1]".into()));
        }
        let (n0, n1) = self.noise_level;
        if !(0.0 <= n0 && n0 <= n1 && n1 <= 1.0) {
            return Err(Error::Config("noise range must lie within [0, 1]".into()));
        }
        SceneParams::clean(self.image_side).validate()
    }
}

/// Labelled frames plus the nuisance parameters each was rendered with.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<Example>,
    pub scenes: Vec<SceneParams>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Distances drawn per `cfg.sampling` over the label range, nuisances uniform
/// over their ranges.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed);
    let mut examples = Vec::with_capacity(cfg.count);
    let mut scenes = Vec::with_capacity(cfg.count);
    for _ in 0..cfg.count {
        let d = match cfg.sampling {
            DistanceSampling::Uniform => rng.random_range(cfg.label_min..cfg.label_max),
            DistanceSampling::LogUniform => rng
                .random_range(cfg.label_min.ln()..cfg.label_max.ln())
                .exp()
                .clamp(cfg.label_min, cfg.label_max),
        };
        let scene = SceneParams {
            image_side: cfg.image_side,
            brightness: uniform(&mut rng, cfg.brightness),
            noise_level: uniform(&mut rng, cfg.noise_level),
            seed: rng.random(),
        };
        examples.push(Example {
            x: render_scene(d, &scene)?,
            y: d,
        });
        scenes.push(scene);
    }
    Ok(Dataset { examples, scenes })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Writes the images and labels in the tensor format (`images`
    /// `[count, dim]`, `labels` `[count]`), plus a CSV label index next to it.
    pub fn save(&self, bin: &Path, index_csv: &Path) -> Result<()> {
        if self.is_empty() {
            return Err(Error::Config("refusing to save an empty dataset".into()));
        }
        let dim = self.examples[0].x.len();
        let images = Tensor::new(
            vec![self.len(), dim],
            self.examples.iter().flat_map(|e| e.x.iter().copied()).collect(),
        )?;
        let labels = Tensor::vector(self.examples.iter().map(|e| e.y).collect())?;
        io::save(bin, &[("images", &images), ("labels", &labels)])?;

        let mut csv = String::from("index,distance,brightness,noise_level,seed\n");
        for (i, (e, s)) in self.examples.iter().zip(&self.scenes).enumerate() {
            writeln!(csv, "{i},{},{},{},{}", e.y, s.brightness, s.noise_level, s.seed)
                .expect("writing to a String");
        }
        fs::write(index_csv, csv).map_err(|e| Error::io(index_csv, e))
    }

    /// Loads images and labels. Scene parameters are read from the CSV index
    /// when `index_csv` is given, otherwise left as clean defaults.
    pub fn load(bin: &Path, index_csv: Option<&Path>) -> Result<Self> {
        let tensors = io::load(bin)?;
        let find = |name: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::format(bin, format!("missing tensor {name:?}")))
        };
        let images = find("images")?;
        let labels = find("labels")?;
        if images.shape().len() != 2 || labels.shape() != [images.shape()[0]] {
            return Err(Error::format(bin, "images/labels shapes disagree"));
        }
        let (count, dim) = (images.shape()[0], images.shape()[1]);
        let side = (dim as f64).sqrt().round() as usize;
        let examples: Vec<Example> = images
            .data()
            .chunks_exact(dim)
            .zip(labels.data())
            .map(|(x, &y)| Example { x: x.to_vec(), y })
            .collect();
        let scenes = match index_csv {
            Some(path) => parse_index(path, count, side)?,
            None => vec![SceneParams::clean(side); count],
        };
        Ok(Self { examples, scenes })
    }
}

fn parse_index(path: &Path, count: usize, side: usize) -> Result<Vec<SceneParams>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::with_capacity(count);
    for (i, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::format(path, format!("line {}: malformed index row", i + 1));
        if f.len() != 5 {
            return Err(bad());
        }
        out.push(SceneParams {
            image_side: side,
            brightness: f[2].parse().map_err(|_| bad())?,
            noise_level: f[3].parse().map_err(|_| bad())?,
            seed: f[4].parse().map_err(|_| bad())?,
        });
    }
    if out.len() != count {
        return Err(Error::format(
            path,
            format!("index lists {} rows, dataset has {count}", out.len()),
        ));
    }
    Ok(out)
}
