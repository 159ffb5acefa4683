//! Seeded synthetic forum-interaction generator.
//!
//! Students post with a power-law activity profile. Threads open at uniform
//! times; each receives a Poisson number of replies spaced by exponential
//! gaps. A reply links the replier to the most recent distinct participants
//! of the thread, up to `participation_window` of them.

use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::TemporalGraph;
use crate::seed;

/// Upper bound on replies drawn for a single thread.
pub const MAX_REPLIES_PER_THREAD: usize = 50;

/// Mean gap between consecutive replies, as a fraction of the course.
const REPLY_GAP_FRACTION: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_students: usize,
    pub n_threads: usize,
    pub duration_weeks: f64,
    pub activity_exponent: f64,
    pub replies_per_thread_mean: f64,
    pub participation_window: usize,
    pub seed: u64,
}

/// Names of the shipped presets.
pub const PRESET_NAMES: [&str; 4] = ["vs-like", "ml-like", "al-like", "cp-like"];

impl GeneratorConfig {
    /// Shipped classroom presets sized after four MOOC forums
    /// (nodes / distinct edges / weeks / posts):
    ///
    /// | preset  | nodes | edges | weeks | posts |
    /// |---------|-------|-------|-------|-------|
    /// | vs-like |   677 |  4702 |     5 |  7484 |
    /// | ml-like |  3290 | 30610 |    12 | 25481 |
    /// | al-like |  1165 |  6773 |    13 | 16276 |
    /// | cp-like |   900 |  3418 |     8 |  8255 |
    ///
    /// Thread counts and reply rates were picked by simulation sweep so the
    /// seed-42 output lands within 25% of each target.
    pub fn preset(name: &str) -> Option<Self> {
        let (n_students, n_threads, duration_weeks, activity_exponent, replies, window) = match name {
            "vs-like" => (677, 900, 5.0, 1.0, 5.0, 2),
            "ml-like" => (3290, 12500, 12.0, 0.4, 2.3, 1),
            "al-like" => (1165, 1700, 13.0, 1.15, 5.5, 2),
            "cp-like" => (900, 1050, 8.0, 1.18, 4.8, 2),
            _ => return None,
        };
        Some(Self {
            n_students,
            n_threads,
            duration_weeks,
            activity_exponent,
            replies_per_thread_mean: replies,
            participation_window: window,
            seed: 42,
        })
    }

    /// The same classroom character at a different number of students:
    /// thread count scales proportionally (at least one thread).
    pub fn scaled_to(&self, n_students: usize) -> Self {
        let ratio = n_students as f64 / self.n_students as f64;
        Self {
            n_students,
            n_threads: ((self.n_threads as f64 * ratio).round() as usize).max(1),
            ..self.clone()
        }
    }

    /// Reads a TOML file holding every generator field.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.span().map(|s| text[..s.start].matches('\n').count() + 1).unwrap_or(0),
            message: e.message().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config("synth", msg));
        if self.n_students < 2 {
            return bad(format!(
                "n_students = {} cannot produce an interaction (need at least 2)",
                self.n_students
            ));
        }
        if self.n_threads == 0 {
            return bad("n_threads must be at least 1".into());
        }
        if self.participation_window == 0 {
            return bad("participation_window must be at least 1".into());
        }
        if !(self.duration_weeks.is_finite() && self.duration_weeks > 0.0) {
            return bad(format!("duration_weeks must be positive, got {}", self.duration_weeks));
        }
        if !(self.activity_exponent.is_finite() && self.activity_exponent > 0.0) {
            return bad(format!(
                "activity_exponent must be positive, got {}",
                self.activity_exponent
            ));
        }
        if !(self.replies_per_thread_mean.is_finite() && self.replies_per_thread_mean > 0.0) {
            return bad(format!(
                "replies_per_thread_mean must be positive, got {}",
                self.replies_per_thread_mean
            ));
        }
        Ok(())
    }
}

/// One reply as produced by the generator; exposed for tests and audits.
#[derive(Clone, Debug, PartialEq)]
pub struct Reply {
    pub thread: usize,
    pub author: usize,
    pub timestamp: f64,
    pub linked: Vec<usize>,
}

/// Runs the thread-reply process and returns the reply log in generation
/// order (thread by thread). Timestamps are progress fractions obtained by
/// dividing a week value by the duration.
pub fn simulate_replies(cfg: &GeneratorConfig) -> Result<Vec<Reply>> {
    cfg.validate()?;
    let mut rng = seed::rng(cfg.seed);
    let d = cfg.duration_weeks;

    // Activity rank -> student index is a seeded permutation.
    let mut students: Vec<usize> = (0..cfg.n_students).collect();
    students.shuffle(&mut rng);
    let weights: Vec<f64> = (0..cfg.n_students)
        .map(|rank| ((rank + 1) as f64).powf(-cfg.activity_exponent))
        .collect();
    let pick = WeightedIndex::new(&weights)
        .map_err(|e| Error::config("synth", format!("activity weights: {e}")))?;
    let replies_dist = Poisson::new(cfg.replies_per_thread_mean)
        .map_err(|e| Error::config("synth", format!("reply distribution: {e}")))?;
    let gap_dist = Exp::new(1.0 / (REPLY_GAP_FRACTION * d))
        .map_err(|e| Error::config("synth", format!("gap distribution: {e}")))?;

    let mut log = Vec::new();
    for thread in 0..cfg.n_threads {
        let mut week = rng.random::<f64>() * d;
        let mut last_t = week / d;
        // Distinct participants, least recent first.
        let mut participants = vec![students[pick.sample(&mut rng)]];
        let n_replies = (replies_dist.sample(&mut rng) as usize).min(MAX_REPLIES_PER_THREAD);
        for _ in 0..n_replies {
            week += gap_dist.sample(&mut rng);
            if week > d {
                break;
            }
            let t = week / d;
            let author = students[pick.sample(&mut rng)];
            if t <= last_t {
                continue;
            }
            last_t = t;
            let linked: Vec<usize> = participants
                .iter()
                .rev()
                .copied()
                .filter(|&p| p != author)
                .take(cfg.participation_window)
                .collect();
            participants.retain(|&p| p != author);
            participants.push(author);
            log.push(Reply {
                thread,
                author,
                timestamp: t,
                linked,
            });
        }
    }
    Ok(log)
}

/// Generates a synthetic classroom graph tagged `tag`.
pub fn generate_synthetic_sln(cfg: &GeneratorConfig, tag: &str) -> Result<TemporalGraph> {
    let log = simulate_replies(cfg)?;
    let events = log
        .iter()
        .flat_map(|r| r.linked.iter().map(move |&p| (r.author, p, r.timestamp)));
    TemporalGraph::new(cfg.n_students, events, cfg.duration_weeks, tag)
}
