//! Per-cycle and pooled statistics with Wilson and Student-t intervals.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::{CandidateRecord, Disposition};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("interval undefined for n = 0")]
    EmptySample,
    #[error("need at least 2 samples for a t interval, got {0}")]
    InsufficientData(usize),
    #[error("k = {k} exceeds n = {n}")]
    CountExceedsTotal { k: u64, n: u64 },
    #[error("confidence {0} outside (0, 1)")]
    BadConfidence(f64),
    #[error("no records for cycle summary")]
    EmptyCycle,
    #[error("records span cycles {0} and {1}")]
    MixedCycles(u32, u32),
}

/// Inverse standard normal CDF (Acklam's rational approximation,
/// relative error below 1.2e-9).
#[allow(clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

#[allow(clippy::excessive_precision)]
fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Continued fraction for the regularized incomplete beta (modified Lentz).
fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=300 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            break;
        }
    }
    h
}

fn regularized_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn student_t_cdf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = 0.5 * regularized_beta(df / 2.0, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

fn student_t_pdf(t: f64, df: f64) -> f64 {
    let ln = ln_gamma((df + 1.0) / 2.0)
        - ln_gamma(df / 2.0)
        - 0.5 * (df * PI).ln()
        - (df + 1.0) / 2.0 * (1.0 + t * t / df).ln();
    ln.exp()
}

/// Inverse Student-t CDF with `df` degrees of freedom.
pub fn student_t_quantile(p: f64, df: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    if p < 0.5 {
        return -student_t_quantile(1.0 - p, df);
    }
    if p == 0.5 {
        return 0.0;
    }
    // bracket [lo, hi] around the root, then safeguarded Newton
    let mut lo = 0.0;
    let mut hi = normal_quantile(p).max(1.0);
    while student_t_cdf(hi, df) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = student_t_cdf(t, df) - p;
        if f.abs() < 1e-15 {
            break;
        }
        if f > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let step = t - f / student_t_pdf(t, df);
        t = if step > lo && step < hi {
            step
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-14 * hi.max(1.0) {
            break;
        }
    }
    t
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

fn check_confidence(confidence: f64) -> Result<(), StatsError> {
    if confidence > 0.0 && confidence < 1.0 {
        Ok(())
    } else {
        Err(StatsError::BadConfidence(confidence))
    }
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, confidence: f64) -> Result<Interval, StatsError> {
    check_confidence(confidence)?;
    if n == 0 {
        return Err(StatsError::EmptySample);
    }
    if k > n {
        return Err(StatsError::CountExceedsTotal { k, n });
    }
    let z = normal_quantile(1.0 - (1.0 - confidence) / 2.0);
    let n_f = n as f64;
    let p = k as f64 / n_f;
    let z2 = z * z;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = z / denom * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt();
    let lo = if k == 0 {
        0.0
    } else {
        (center - half).clamp(0.0, p)
    };
    let hi = if k == n {
        1.0
    } else {
        (center + half).clamp(p, 1.0)
    };
    Ok(Interval { lo, hi })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanInterval {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_std(samples: &[f64]) -> f64 {
    let m = mean(samples);
    let ss: f64 = samples.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (samples.len() as f64 - 1.0)).sqrt()
}

/// `mean ± t_{(1+c)/2, n-1} · s / sqrt(n)`.
pub fn t_interval(samples: &[f64], confidence: f64) -> Result<MeanInterval, StatsError> {
    check_confidence(confidence)?;
    if samples.len() < 2 {
        return Err(StatsError::InsufficientData(samples.len()));
    }
    let n = samples.len() as f64;
    let m = mean(samples);
    let s = sample_std(samples);
    let t = student_t_quantile(1.0 - (1.0 - confidence) / 2.0, n - 1.0);
    let half = t * s / n.sqrt();
    Ok(MeanInterval {
        mean: m,
        lo: m - half,
        hi: m + half,
    })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub const CONFIDENCE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub k: u64,
    pub n: u64,
    pub value: f64,
    pub ci: Interval,
}

impl Proportion {
    pub fn new(k: u64, n: u64) -> Result<Self, StatsError> {
        Ok(Self {
            k,
            n,
            value: k as f64 / n as f64,
            ci: wilson_interval(k, n, CONFIDENCE)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub n: u64,
    pub best: f64,
    pub mean: f64,
    pub median: f64,
    /// Absent with fewer than two samples, as is `mean_ci`.
    pub std: Option<f64>,
    pub mean_ci: Option<Interval>,
}

impl AccuracySummary {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (std, mean_ci) = match t_interval(samples, CONFIDENCE) {
            Ok(ci) => (
                Some(sample_std(samples)),
                Some(Interval {
                    lo: ci.lo.max(0.0),
                    hi: ci.hi.min(1.0),
                }),
            ),
            Err(_) => (None, None),
        };
        Some(Self {
            n: samples.len() as u64,
            best: *sorted.last().expect("nonempty"),
            mean: mean(samples),
            median: median(&sorted),
            std,
            mean_ci,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispositionCounts {
    pub invalid: u64,
    pub below_threshold: u64,
    pub near_duplicate: u64,
    pub accepted: u64,
}

impl DispositionCounts {
    pub fn total(&self) -> u64 {
        self.invalid + self.below_threshold + self.near_duplicate + self.accepted
    }

    fn add(&mut self, d: Disposition) {
        match d {
            Disposition::Invalid => self.invalid += 1,
            Disposition::BelowThreshold => self.below_threshold += 1,
            Disposition::NearDuplicate => self.near_duplicate += 1,
            Disposition::Accepted => self.accepted += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleStats {
    pub cycle: u32,
    pub threshold: f64,
    pub n_gen: u64,
    pub n_valid: u64,
    pub n_above_threshold: u64,
    /// Valid candidates that passed the accuracy gate (all valid ones when it is off).
    pub n_selected: u64,
    pub n_unique_accepted: u64,
    pub dispositions: DispositionCounts,
    pub valid_rate: f64,
    pub valid_rate_ci: Interval,
    pub accuracy: Option<AccuracySummary>,
    /// Share of valid models at or above the threshold.
    pub frac_above_threshold: Option<Proportion>,
    pub corpus_size_before: u64,
    pub corpus_size_after: u64,
}

impl CycleStats {
    pub fn with_corpus_sizes(mut self, before: u64, after: u64) -> Self {
        self.corpus_size_before = before;
        self.corpus_size_after = after;
        self
    }
}

/// Accuracies of candidates that compiled and trained.
fn valid_accuracies<'a>(records: impl IntoIterator<Item = &'a CandidateRecord>) -> Vec<f64> {
    records
        .into_iter()
        .filter_map(|r| r.eval.as_ref().map(|e| e.accuracy))
        .collect()
}

/// Summarizes one cycle. Corpus sizes are left at zero for the caller.
pub fn summarize_cycle(
    records: &[CandidateRecord],
    threshold: f64,
) -> Result<CycleStats, StatsError> {
    let first = records.first().ok_or(StatsError::EmptyCycle)?;
    if let Some(other) = records.iter().find(|r| r.cycle != first.cycle) {
        return Err(StatsError::MixedCycles(first.cycle, other.cycle));
    }
    let mut dispositions = DispositionCounts::default();
    for r in records {
        dispositions.add(r.disposition);
    }
    let accs = valid_accuracies(records);
    let n_gen = records.len() as u64;
    let n_valid = accs.len() as u64;
    let n_above = accs.iter().filter(|&&a| a >= threshold).count() as u64;
    let valid = Proportion::new(n_valid, n_gen)?;
    Ok(CycleStats {
        cycle: first.cycle,
        threshold,
        n_gen,
        n_valid,
        n_above_threshold: n_above,
        n_selected: dispositions.near_duplicate + dispositions.accepted,
        n_unique_accepted: dispositions.accepted,
        dispositions,
        valid_rate: valid.value,
        valid_rate_ci: valid.ci,
        accuracy: AccuracySummary::from_samples(&accs),
        frac_above_threshold: if n_valid > 0 {
            Some(Proportion::new(n_above, n_valid)?)
        } else {
            None
        },
        corpus_size_before: 0,
        corpus_size_after: 0,
    })
}

/// Whole-run figures computed over the union of all cycles' records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledStats {
    pub n_gen: u64,
    pub n_valid: u64,
    pub valid_rate: Option<Proportion>,
    pub accuracy: Option<AccuracySummary>,
    pub frac_above_threshold: Option<Proportion>,
    pub total_accepted: u64,
}

pub fn pool<'a>(
    records: impl IntoIterator<Item = &'a CandidateRecord>,
    threshold: f64,
) -> PooledStats {
    let records: Vec<&CandidateRecord> = records.into_iter().collect();
    let accs = valid_accuracies(records.iter().copied());
    let n_gen = records.len() as u64;
    let n_valid = accs.len() as u64;
    let n_above = accs.iter().filter(|&&a| a >= threshold).count() as u64;
    PooledStats {
        n_gen,
        n_valid,
        valid_rate: Proportion::new(n_valid, n_gen).ok(),
        accuracy: AccuracySummary::from_samples(&accs),
        frac_above_threshold: Proportion::new(n_above, n_valid).ok(),
        total_accepted: records
            .iter()
            .filter(|r| r.disposition == Disposition::Accepted)
            .count() as u64,
    }
}
