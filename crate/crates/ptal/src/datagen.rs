//! Synthetic corpus generation and point-label simulation.
//!
//! Each class gets a fixed random prototype vector; frames inside a class-c
//! segment are `mu_c + N(0, sigma^2 I)`, background frames use a background
//! prototype. Segments never overlap and are separated by at least
//! `gap_min` background frames, so anchor points can split instances.
//! Everything is a pure function of the seed.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{PtalError, Result};
use crate::mat::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthSegment {
    pub start: usize,
    pub end: usize,
    pub class_id: usize,
}

impl GroundTruthSegment {
    /// Inclusive frame count.
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointLabel {
    pub t: usize,
    pub class_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointDistribution {
    Uniform,
    Gaussian,
}

impl std::str::FromStr for PointDistribution {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(PointDistribution::Uniform),
            "gaussian" => Ok(PointDistribution::Gaussian),
            other => Err(format!("unknown distribution '{other}' (uniform|gaussian)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_videos: usize,
    /// Frames per video (T).
    pub frames: usize,
    /// Feature dimension (D).
    pub feature_dim: usize,
    /// Number of action classes (C); background is implicit.
    pub num_classes: usize,
    pub instances_per_video: (usize, usize),
    /// Instance length range in frames, inclusive.
    pub length_range: (usize, usize),
    /// Minimum background frames around every instance.
    pub gap_min: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Leading fraction of videos assigned to the train split.
    pub train_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            num_videos: 50,
            frames: 256,
            feature_dim: 32,
            num_classes: 5,
            instances_per_video: (4, 8),
            length_range: (5, 8),
            gap_min: 8,
            noise_sigma: 0.1,
            seed: 7,
            train_fraction: 0.8,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_videos == 0
            || self.frames == 0
            || self.feature_dim == 0
            || self.num_classes == 0
        {
            return Err(PtalError::Config("counts must be >= 1".into()));
        }
        let (imin, imax) = self.instances_per_video;
        let (lmin, lmax) = self.length_range;
        if imin == 0 || imin > imax {
            return Err(PtalError::Config("bad instances_per_video range".into()));
        }
        if lmin == 0 || lmin > lmax || lmax > self.frames {
            return Err(PtalError::Config("length_range must fit inside a video".into()));
        }
        if self.gap_min == 0 {
            return Err(PtalError::Config("gap_min must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(PtalError::Config("train_fraction must be in [0,1]".into()));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(PtalError::Config("noise_sigma must be finite and >= 0".into()));
        }
        // Worst-case packing: every instance at max length plus mandatory
        // gaps (including both video ends) must fit.
        let worst = imax * lmax + (imax + 1) * self.gap_min;
        if worst > self.frames {
            return Err(PtalError::Config(format!(
                "infeasible packing: {imax} instances x {lmax} frames + gaps = {worst} > T = {}",
                self.frames
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Video {
    pub id: String,
    pub split: Split,
    /// T x D feature sequence.
    pub features: Matrix,
    pub segments: Vec<GroundTruthSegment>,
    pub points: Vec<PointLabel>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub config: SyntheticConfig,
    pub class_prototypes: Vec<Vec<f64>>,
    pub background_prototype: Vec<f64>,
    pub videos: Vec<Video>,
}

impl Corpus {
    pub fn frames(&self) -> usize {
        self.config.frames
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Video> {
        self.videos.iter().filter(move |v| v.split == split)
    }
}

fn sample_normal_vec(rng: &mut StdRng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(rng)).collect()
}

/// Generates the corpus (features + ground-truth segments, no point labels).
pub fn generate_corpus(cfg: &SyntheticConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = StdRng::seed_from_u64(cfg.seed);
    let class_prototypes: Vec<Vec<f64>> = (0..cfg.num_classes)
        .map(|_| sample_normal_vec(&mut rng, cfg.feature_dim))
        .collect();
    let background_prototype = sample_normal_vec(&mut rng, cfg.feature_dim);

    let train_count = (cfg.num_videos as f64 * cfg.train_fraction).round() as usize;
    let mut videos = Vec::with_capacity(cfg.num_videos);
    for vi in 0..cfg.num_videos {
        let segments = place_segments(cfg, &mut rng);
        let mut features = Matrix::zeros(cfg.frames, cfg.feature_dim);
        for t in 0..cfg.frames {
            let proto = segments
                .iter()
                .find(|s| s.start <= t && t <= s.end)
                .map(|s| &class_prototypes[s.class_id])
                .unwrap_or(&background_prototype);
            let row = features.row_mut(t);
            for (d, p) in proto.iter().enumerate() {
                let noise: f64 = StandardNormal.sample(&mut rng);
                row[d] = p + cfg.noise_sigma * noise;
            }
        }
        videos.push(Video {
            id: format!("v{vi:04}"),
            split: if vi < train_count { Split::Train } else { Split::Test },
            features,
            segments,
            points: Vec::new(),
        });
    }
    Ok(Corpus {
        config: cfg.clone(),
        class_prototypes,
        background_prototype,
        videos,
    })
}

fn place_segments(cfg: &SyntheticConfig, rng: &mut StdRng) -> Vec<GroundTruthSegment> {
    let n = rng.random_range(cfg.instances_per_video.0..=cfg.instances_per_video.1);
    let lengths: Vec<usize> = (0..n)
        .map(|_| rng.random_range(cfg.length_range.0..=cfg.length_range.1))
        .collect();
    let needed: usize = lengths.iter().sum::<usize>() + (n + 1) * cfg.gap_min;
    let slack = cfg.frames - needed; // validate() guarantees non-negative
    // Spread the slack over the n+1 gaps proportionally to random weights.
    let weights: Vec<f64> = (0..n + 1).map(|_| rng.random::<f64>()).collect();
    let wsum: f64 = weights.iter().sum();
    let mut extras: Vec<usize> = weights
        .iter()
        .map(|w| ((w / wsum) * slack as f64).floor() as usize)
        .collect();
    let used: usize = extras.iter().sum();
    *extras.last_mut().unwrap() += slack - used;

    let mut segments = Vec::with_capacity(n);
    let mut cursor = cfg.gap_min + extras[0];
    for i in 0..n {
        let class_id = rng.random_range(0..cfg.num_classes);
        let start = cursor;
        let end = start + lengths[i] - 1;
        segments.push(GroundTruthSegment { start, end, class_id });
        cursor = end + 1 + cfg.gap_min + extras[i + 1];
    }
    segments
}

/// Draws exactly one point label per segment.
///
/// `uniform` samples the frame uniformly from `[start, end]`; `gaussian`
/// samples from `Normal(mid, (end-start)/6)` and resamples until the draw
/// lands inside the segment, then rounds to the nearest frame.
pub fn simulate_point_labels(
    segments_per_video: &[Vec<GroundTruthSegment>],
    distribution: PointDistribution,
    seed: u64,
) -> Vec<Vec<PointLabel>> {
    let mut rng = StdRng::seed_from_u64(seed);
    segments_per_video
        .iter()
        .map(|segments| {
            segments
                .iter()
                .map(|seg| PointLabel {
                    t: sample_point(seg, distribution, &mut rng),
                    class_id: seg.class_id,
                })
                .collect()
        })
        .collect()
}

fn sample_point(seg: &GroundTruthSegment, dist: PointDistribution, rng: &mut StdRng) -> usize {
    if seg.start == seg.end {
        return seg.start;
    }
    match dist {
        PointDistribution::Uniform => rng.random_range(seg.start..=seg.end),
        PointDistribution::Gaussian => {
            let mid = (seg.start + seg.end) as f64 / 2.0;
            let std = (seg.end - seg.start) as f64 / 6.0;
            let normal = Normal::new(mid, std).expect("std > 0");
            loop {
                let x: f64 = normal.sample(rng);
                if x >= seg.start as f64 && x <= seg.end as f64 {
                    return x.round() as usize;
                }
            }
        }
    }
}

/// Attaches simulated labels to every video in place.
pub fn attach_point_labels(corpus: &mut Corpus, distribution: PointDistribution, seed: u64) {
    let segs: Vec<Vec<GroundTruthSegment>> =
        corpus.videos.iter().map(|v| v.segments.clone()).collect();
    let labels = simulate_point_labels(&segs, distribution, seed);
    for (v, pts) in corpus.videos.iter_mut().zip(labels) {
        v.points = pts;
    }
}

/// Fraction of in-segment frames whose nearest prototype is their own
/// class; 1.0 means the corpus is trivially separable.
pub fn nearest_prototype_accuracy(corpus: &Corpus) -> f64 {
    let mut total = 0usize;
    let mut correct = 0usize;
    for video in &corpus.videos {
        for seg in &video.segments {
            for t in seg.start..=seg.end {
                let frame = video.features.row(t);
                let mut best = usize::MAX;
                let mut best_d = f64::INFINITY;
                for (c, proto) in corpus
                    .class_prototypes
                    .iter()
                    .chain(std::iter::once(&corpus.background_prototype))
                    .enumerate()
                {
                    let d: f64 = frame
                        .iter()
                        .zip(proto)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                total += 1;
                if best == seg.class_id {
                    correct += 1;
                }
            }
        }
    }
    if total == 0 {
        return 1.0;
    }
    correct as f64 / total as f64
}

// --- corpus directory layout -----------------------------------------------
//
// <dir>/manifest.json        ids, dims, segments, point labels, prototypes
// <dir>/features-<id>.bin    row-major little-endian f64, T x D

#[derive(Debug, Serialize, Deserialize)]
struct ManifestVideo {
    id: String,
    split: Split,
    segments: Vec<GroundTruthSegment>,
    points: Vec<PointLabel>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    run_config: serde_json::Value,
    config: SyntheticConfig,
    class_prototypes: Vec<Vec<f64>>,
    background_prototype: Vec<f64>,
    videos: Vec<ManifestVideo>,
}

pub fn save_corpus(dir: &Path, corpus: &Corpus, run_config: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| PtalError::io(dir.display().to_string(), e))?;
    let manifest = Manifest {
        run_config,
        config: corpus.config.clone(),
        class_prototypes: corpus.class_prototypes.clone(),
        background_prototype: corpus.background_prototype.clone(),
        videos: corpus
            .videos
            .iter()
            .map(|v| ManifestVideo {
                id: v.id.clone(),
                split: v.split,
                segments: v.segments.clone(),
                points: v.points.clone(),
            })
            .collect(),
    };
    let mpath = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| PtalError::Json { path: mpath.display().to_string(), source: e })?;
    fs::write(&mpath, text).map_err(|e| PtalError::io(mpath.display().to_string(), e))?;

    for video in &corpus.videos {
        let fpath = dir.join(format!("features-{}.bin", video.id));
        let file =
            File::create(&fpath).map_err(|e| PtalError::io(fpath.display().to_string(), e))?;
        let mut w = BufWriter::new(file);
        for v in video.features.data() {
            w.write_all(&v.to_le_bytes())
                .map_err(|e| PtalError::io(fpath.display().to_string(), e))?;
        }
        w.flush().map_err(|e| PtalError::io(fpath.display().to_string(), e))?;
    }
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath)
        .map_err(|e| PtalError::io(mpath.display().to_string(), e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| PtalError::Json { path: mpath.display().to_string(), source: e })?;
    let cfg = manifest.config;
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for mv in manifest.videos {
        let fpath = dir.join(format!("features-{}.bin", mv.id));
        let file =
            File::open(&fpath).map_err(|e| PtalError::io(fpath.display().to_string(), e))?;
        let mut r = BufReader::new(file);
        let count = cfg.frames * cfg.feature_dim;
        let mut data = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)
                .map_err(|_| PtalError::format(fpath.display().to_string(), "truncated features"))?;
            data.push(f64::from_le_bytes(buf));
        }
        let mut probe = [0u8; 1];
        if matches!(r.read(&mut probe), Ok(n) if n > 0) {
            return Err(PtalError::format(
                fpath.display().to_string(),
                "trailing bytes in feature file",
            ));
        }
        videos.push(Video {
            id: mv.id,
            split: mv.split,
            features: Matrix::from_vec(cfg.frames, cfg.feature_dim, data),
            segments: mv.segments,
            points: mv.points,
        });
    }
    Ok(Corpus {
        config: cfg,
        class_prototypes: manifest.class_prototypes,
        background_prototype: manifest.background_prototype,
        videos,
    })
}
