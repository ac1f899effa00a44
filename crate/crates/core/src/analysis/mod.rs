//! Memorization diagnostics: frequency-banded log-probability histograms,
//! frequency-rank versus predicted-rank curves, and hidden-unit ablation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenId, UserDataset};
use crate::error::{invalid, Result};
use crate::nn::AblationMask;
use crate::seed;
use crate::textgen::{argmax, rank_of, Predictor, TextModel, PROB_FLOOR};

/// Frequency ranks of token ids, counted over a dataset's targets.
///
/// Rank 0 is the most frequent type; ties go to the smaller id. Types that
/// never occur come after all observed ones, in id order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRanks {
    ranks: Vec<usize>,
    observed: usize,
}

impl FrequencyRanks {
    pub fn from_datasets(data: &[UserDataset], vocab_size: usize) -> Self {
        let mut counts = vec![0u64; vocab_size];
        for t in data.iter().flat_map(|u| u.examples.iter()).flat_map(|e| e.y.iter()) {
            if let Some(c) = counts.get_mut(*t) {
                *c += 1;
            }
        }
        let mut order: Vec<usize> = (0..vocab_size).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        let mut ranks = vec![0; vocab_size];
        for (r, &t) in order.iter().enumerate() {
            ranks[t] = r;
        }
        Self {
            ranks,
            observed: counts.iter().filter(|&&c| c > 0).count(),
        }
    }

    pub fn rank(&self, token: TokenId) -> usize {
        self.ranks[token]
    }

    /// Number of types that occur at least once.
    pub fn observed(&self) -> usize {
        self.observed
    }

    /// Whether `token` is among the `fraction` most frequent observed types.
    pub fn in_head(&self, token: TokenId, fraction: f64) -> bool {
        self.rank(token) < head_size(self.observed, fraction)
    }
}

fn head_size(types: usize, fraction: f64) -> usize {
    ((fraction * types as f64).round() as usize).max(1)
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("band fraction {f} outside (0, 1)")))
    }
}

fn non_empty(data: &[UserDataset], what: &str) -> Result<()> {
    if data.iter().all(|u| u.examples.is_empty()) {
        return Err(invalid(format!("{what} data is empty")));
    }
    Ok(())
}

/// Visits `(target token, distribution)` for every target position.
fn for_each_target<P: Predictor + ?Sized>(
    model: &P,
    data: &[UserDataset],
    mut f: impl FnMut(TokenId, &[f64]),
) -> Result<()> {
    for ex in data.iter().flat_map(|u| u.examples.iter()) {
        for (d, &t) in model.example_distributions(ex)?.iter().zip(&ex.y) {
            f(t, d);
        }
    }
    Ok(())
}

/// Four histograms of ground-truth log2 probabilities over shared bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogprobHistograms {
    /// `n_bins + 1` ascending edges; the last bin includes its right edge.
    pub edges: Vec<f64>,
    pub band_fraction: f64,
    pub train_head: Vec<u64>,
    pub train_tail: Vec<u64>,
    pub unseen_head: Vec<u64>,
    pub unseen_tail: Vec<u64>,
}

/// Histograms of `log2 p(target)` on training and unseen data, split by
/// whether the target is within the `band_fraction` most frequent training
/// words.
pub fn logprob_histograms<P: Predictor + ?Sized>(
    model: &P,
    train_data: &[UserDataset],
    unseen_data: &[UserDataset],
    band_fraction: f64,
    n_bins: usize,
) -> Result<LogprobHistograms> {
    check_fraction(band_fraction)?;
    non_empty(train_data, "training")?;
    non_empty(unseen_data, "unseen")?;
    if n_bins == 0 {
        return Err(invalid("need at least one bin"));
    }
    let freq = FrequencyRanks::from_datasets(train_data, model.vocab_size());
    let collect = |data: &[UserDataset]| -> Result<Vec<(bool, f64)>> {
        let mut v = Vec::new();
        for_each_target(model, data, |t, d| {
            v.push((freq.in_head(t, band_fraction), d[t].max(PROB_FLOOR).log2()));
        })?;
        Ok(v)
    };
    let train = collect(train_data)?;
    let unseen = collect(unseen_data)?;
    let lo = train.iter().chain(&unseen).map(|p| p.1).fold(0.0f64, f64::min);
    let lo = if lo < 0.0 { lo } else { -1.0 };
    let width = -lo / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins).map(|i| if i == n_bins { 0.0 } else { lo + i as f64 * width }).collect();
    let bin = |x: f64| (((x - lo) / width) as usize).min(n_bins - 1);
    let fill = |vals: &[(bool, f64)], head: bool| {
        let mut h = vec![0u64; n_bins];
        for &(is_head, x) in vals {
            if is_head == head {
                h[bin(x)] += 1;
            }
        }
        h
    };
    Ok(LogprobHistograms {
        train_head: fill(&train, true),
        train_tail: fill(&train, false),
        unseen_head: fill(&unseen, true),
        unseen_tail: fill(&unseen, false),
        edges,
        band_fraction,
    })
}

impl LogprobHistograms {
    /// `bin_lo, bin_hi, train, unseen` rows for the head or the tail band.
    pub fn write_tsv<W: Write>(&self, mut out: W, head: bool) -> Result<()> {
        let (train, unseen) = if head {
            (&self.train_head, &self.unseen_head)
        } else {
            (&self.train_tail, &self.unseen_tail)
        };
        writeln!(out, "bin_lo\tbin_hi\ttrain\tunseen")?;
        for i in 0..train.len() {
            writeln!(out, "{:.6}\t{:.6}\t{}\t{}", self.edges[i], self.edges[i + 1], train[i], unseen[i])?;
        }
        Ok(())
    }
}

/// Mean and normal-approximation 95% interval of a sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankStat {
    pub count: usize,
    /// `None` when the bucket had no occurrences.
    pub mean: Option<f64>,
    /// `1.96 * sd / sqrt(n)`; `None` with fewer than two occurrences.
    pub ci95: Option<f64>,
}

impl RankStat {
    pub fn from_values(v: &[f64]) -> Self {
        let n = v.len();
        if n == 0 {
            return Self::default();
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let ci95 = (n >= 2).then(|| {
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            1.96 * var.sqrt() / (n as f64).sqrt()
        });
        Self { count: n, mean: Some(mean), ci95 }
    }

    fn interval(&self) -> Option<(f64, f64)> {
        let m = self.mean?;
        let c = self.ci95.unwrap_or(0.0);
        Some((m - c, m + c))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankShiftBucket {
    /// Frequency ranks `first_rank..=last_rank`.
    pub first_rank: usize,
    pub last_rank: usize,
    pub train: RankStat,
    pub unseen: RankStat,
}

impl RankShiftBucket {
    pub fn populated(&self) -> bool {
        self.train.count > 0 && self.unseen.count > 0
    }

    /// Whether the two 95% intervals intersect. `None` unless populated.
    pub fn intervals_overlap(&self) -> Option<bool> {
        let (a_lo, a_hi) = self.train.interval()?;
        let (b_lo, b_hi) = self.unseen.interval()?;
        Some(a_lo <= b_hi && b_lo <= a_hi)
    }
}

/// Predicted rank of each word on training versus unseen data, by
/// frequency-rank bucket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankShiftCurve {
    pub bucket_size: usize,
    /// Types observed in the training targets; ranks beyond are unseen in
    /// training.
    pub observed_types: usize,
    pub buckets: Vec<RankShiftBucket>,
}

impl RankShiftCurve {
    /// Populated buckets lying entirely in the rarer half of the observed
    /// training types.
    pub fn tail_half(&self) -> impl Iterator<Item = &RankShiftBucket> {
        let half = self.observed_types / 2;
        self.buckets
            .iter()
            .filter(move |b| b.first_rank >= half && b.last_rank < self.observed_types && b.populated())
    }

    /// `(buckets with mean train rank < mean unseen rank, populated buckets)`
    /// over the tail half.
    pub fn tail_train_lower(&self) -> (usize, usize) {
        let mut wins = 0;
        let mut total = 0;
        for b in self.tail_half() {
            total += 1;
            if b.train.mean < b.unseen.mean {
                wins += 1;
            }
        }
        (wins, total)
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        let f = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_else(|| "NA".into());
        writeln!(
            out,
            "first_rank\tlast_rank\ttrain_count\ttrain_mean\ttrain_ci95\tunseen_count\tunseen_mean\tunseen_ci95"
        )?;
        for b in &self.buckets {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                b.first_rank,
                b.last_rank,
                b.train.count,
                f(b.train.mean),
                f(b.train.ci95),
                b.unseen.count,
                f(b.unseen.mean),
                f(b.unseen.ci95)
            )?;
        }
        Ok(())
    }
}

/// Buckets words by frequency rank in `train_data` (`bucket_size` ranks
/// each) and compares the model's mean predicted rank of those words on
/// training and unseen data.
pub fn rank_shift_curve<P: Predictor + ?Sized>(
    model: &P,
    train_data: &[UserDataset],
    unseen_data: &[UserDataset],
    bucket_size: usize,
) -> Result<RankShiftCurve> {
    if bucket_size == 0 {
        return Err(invalid("bucket_size must be at least 1"));
    }
    non_empty(train_data, "training")?;
    non_empty(unseen_data, "unseen")?;
    let v = model.vocab_size();
    let freq = FrequencyRanks::from_datasets(train_data, v);
    let n_buckets = v.div_ceil(bucket_size);
    let gather = |data: &[UserDataset]| -> Result<Vec<Vec<f64>>> {
        let mut per = vec![Vec::new(); n_buckets];
        for_each_target(model, data, |t, d| {
            per[freq.rank(t) / bucket_size].push(rank_of(d, t) as f64);
        })?;
        Ok(per)
    };
    let train = gather(train_data)?;
    let unseen = gather(unseen_data)?;
    let buckets = (0..n_buckets)
        .map(|i| RankShiftBucket {
            first_rank: i * bucket_size,
            last_rank: ((i + 1) * bucket_size).min(v) - 1,
            train: RankStat::from_values(&train[i]),
            unseen: RankStat::from_values(&unseen[i]),
        })
        .collect();
    Ok(RankShiftCurve {
        bucket_size,
        observed_types: freq.observed(),
        buckets,
    })
}

/// Training accuracy with a fraction of hidden units zeroed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub fraction: f64,
    pub head_accuracy: f64,
    pub tail_accuracy: f64,
    pub head_tokens: usize,
    pub tail_tokens: usize,
}

/// For each ablation fraction, zeroes that share of hidden units (one mask
/// per fraction, shared by both bands) and measures accuracy on
/// `train_data` separately for the `head_fraction` most frequent words and
/// the rest.
pub fn ablation_analysis(
    model: &TextModel,
    train_data: &[UserDataset],
    fractions: &[f64],
    head_fraction: f64,
    seed: u64,
) -> Result<Vec<AblationRow>> {
    check_fraction(head_fraction)?;
    non_empty(train_data, "training")?;
    if model.config.dropout_rate > 0.0 {
        log::warn!("ablation analysis expects a model trained without dropout");
    }
    let freq = FrequencyRanks::from_datasets(train_data, model.vocab_size());
    fractions
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            let mask = AblationMask::new(f, model.config.hidden_dim, seed::derive_seed(seed, i as u64))?;
            let (mut hc, mut hn, mut tc, mut tn) = (0usize, 0usize, 0usize, 0usize);
            for ex in train_data.iter().flat_map(|u| u.examples.iter()) {
                for (d, &t) in model.example_distributions_masked(ex, Some(&mask))?.iter().zip(&ex.y) {
                    let hit = usize::from(argmax(d) == t);
                    if freq.in_head(t, head_fraction) {
                        hc += hit;
                        hn += 1;
                    } else {
                        tc += hit;
                        tn += 1;
                    }
                }
            }
            let acc = |c: usize, n: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
            Ok(AblationRow {
                fraction: f,
                head_accuracy: acc(hc, hn),
                tail_accuracy: acc(tc, tn),
                head_tokens: hn,
                tail_tokens: tn,
            })
        })
        .collect()
}

/// `fraction, head_accuracy, tail_accuracy` rows.
pub fn write_ablation_tsv<W: Write>(mut out: W, rows: &[AblationRow]) -> Result<()> {
    writeln!(out, "fraction\thead_accuracy\ttail_accuracy\thead_tokens\ttail_tokens")?;
    for r in rows {
        writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{}\t{}",
            r.fraction, r.head_accuracy, r.tail_accuracy, r.head_tokens, r.tail_tokens
        )?;
    }
    Ok(())
}
