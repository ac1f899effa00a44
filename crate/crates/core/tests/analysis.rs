mod common;

use paud::analysis::{ablation_analysis, logprob_histograms, rank_shift_curve, FrequencyRanks};
use paud::corpus::synthetic::{generate, zipf_head_mass, SyntheticConfig};
use paud::corpus::{build_vocabulary, encode_user, group_users, Example, UserDataset};
use paud::textgen::{argmax, rank_of, Predictor, TextModel};
use paud::train::{evaluate_accuracy, train_model};

/// Puts all mass on the target for examples whose first source token is
/// below `split`, and is uniform elsewhere.
struct Memorizer {
    vocab: usize,
    split: usize,
}

impl Predictor for Memorizer {
    fn vocab_size(&self) -> usize {
        self.vocab
    }
    fn example_distributions(&self, ex: &Example) -> paud::Result<Vec<Vec<f64>>> {
        Ok(ex
            .y
            .iter()
            .map(|&t| {
                if ex.x[0] < self.split {
                    let mut d = vec![0.0; self.vocab];
                    d[t] = 1.0;
                    d
                } else {
                    vec![1.0 / self.vocab as f64; self.vocab]
                }
            })
            .collect())
    }
}

#[test]
fn identical_data_gives_identical_histograms() {
    let (vocab, data) = common::small_corpus(3, 5, 1);
    let model = TextModel::new(common::memorizing_model(vocab.size(), 2).0).unwrap();
    let h = logprob_histograms(&model, &data, &data, 0.2, 15).unwrap();
    assert_eq!(h.train_head, h.unseen_head);
    assert_eq!(h.train_tail, h.unseen_tail);
}

#[test]
fn memorized_and_uniform_endpoints() {
    let v = 16;
    let train = vec![UserDataset::new("a", vec![Example { x: vec![1, 2, 3], y: vec![2, 3, 9] }])];
    let unseen = vec![UserDataset::new("b", vec![Example { x: vec![12, 5, 7], y: vec![5, 7, 8] }])];
    let h = logprob_histograms(&Memorizer { vocab: v, split: 10 }, &train, &unseen, 0.5, 8).unwrap();
    assert!((h.edges[0] + 4.0).abs() < 1e-12);
    assert_eq!(*h.edges.last().unwrap(), 0.0);
    let train_all: Vec<u64> = h.train_head.iter().zip(&h.train_tail).map(|(a, b)| a + b).collect();
    let unseen_all: Vec<u64> = h.unseen_head.iter().zip(&h.unseen_tail).map(|(a, b)| a + b).collect();
    assert_eq!(train_all, [0, 0, 0, 0, 0, 0, 0, 3]);
    assert_eq!(unseen_all, [3, 0, 0, 0, 0, 0, 0, 0]);
}

#[test]
fn head_band_share_matches_zipf_mass() {
    let cfg = SyntheticConfig {
        n_users: 60,
        sentences_per_user: 50,
        template_rate: 0.0,
        signature_rate: 0.0,
        punctuation: false,
        seed: 3,
        ..SyntheticConfig::default()
    };
    let users = group_users(&generate(&cfg).unwrap());
    let vocab = build_vocabulary(&users, 5000).unwrap();
    let data: Vec<UserDataset> = users.iter().map(|u| encode_user(u, &vocab, 1000)).collect();
    let ranks = FrequencyRanks::from_datasets(&data, vocab.size());
    let top = cfg.common_words / 5;
    let (mut head, mut total) = (0usize, 0usize);
    for t in data.iter().flat_map(|u| u.examples.iter()).flat_map(|e| e.x[..1].iter().chain(&e.y)) {
        total += 1;
        head += usize::from(ranks.rank(*t) < top);
    }
    let share = head as f64 / total as f64;
    let expected = zipf_head_mass(cfg.common_words, cfg.zipf_exponent, top);
    assert!((share - expected).abs() <= 0.02, "share {share}, Zipf mass {expected}");
}

#[test]
fn untrained_model_shows_no_rank_shift() {
    let (vocab, data) = common::small_corpus(10, 20, 4);
    let model = TextModel::new(common::memorizing_model(vocab.size(), 5).0).unwrap();
    let curve = rank_shift_curve(&model, &data[..5], &data[5..], 8).unwrap();
    let checks: Vec<bool> = curve.buckets.iter().filter_map(|b| b.intervals_overlap()).collect();
    assert!(checks.len() >= 5);
    let overlap = checks.iter().filter(|&&o| o).count() as f64 / checks.len() as f64;
    assert!(overlap >= 0.9, "intervals overlap in {overlap:.2} of buckets");
}

#[test]
fn bucket_means_match_a_recount() {
    let (vocab, data) = common::small_corpus(4, 6, 6);
    let v = vocab.size();
    let model = TextModel::new(common::memorizing_model(v, 7).0).unwrap();
    let (train, unseen) = data.split_at(2);
    let curve = rank_shift_curve(&model, train, unseen, 5).unwrap();

    let mut counts = vec![0u64; v];
    for t in train.iter().flat_map(|u| u.examples.iter()).flat_map(|e| e.y.iter()) {
        counts[*t] += 1;
    }
    let mut order: Vec<usize> = (0..v).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut freq_rank = vec![0; v];
    for (r, &t) in order.iter().enumerate() {
        freq_rank[t] = r;
    }

    for (data, unseen_side) in [(train, false), (unseen, true)] {
        let mut sums = vec![(0.0, 0usize); curve.buckets.len()];
        for ex in data.iter().flat_map(|u| u.examples.iter()) {
            let dists = model.example_distributions(ex).unwrap();
            for (d, &t) in dists.iter().zip(&ex.y) {
                let b = freq_rank[t] / 5;
                sums[b].0 += rank_of(d, t) as f64;
                sums[b].1 += 1;
            }
        }
        for (b, (s, n)) in curve.buckets.iter().zip(sums) {
            let stat = if unseen_side { &b.unseen } else { &b.train };
            assert_eq!(stat.count, n);
            match stat.mean {
                Some(m) => assert!((m - s / n as f64).abs() < 1e-9),
                None => assert_eq!(n, 0),
            }
        }
    }
}

#[test]
fn ablation_extremes() {
    let (vocab, data) = common::small_corpus(2, 8, 8);
    let (mut cfg, mut train) = common::memorizing_model(vocab.size(), 9);
    cfg.hidden_dim = 16;
    train.epochs = 10;
    let model = train_model(&cfg, &train, &data).unwrap().model;
    let rows = ablation_analysis(&model, &data, &[0.0, 1.0], 0.1, 3).unwrap();

    let plain = evaluate_accuracy(&model, &data).unwrap();
    let total = (rows[0].head_tokens + rows[0].tail_tokens) as f64;
    let pooled = (rows[0].head_accuracy * rows[0].head_tokens as f64 + rows[0].tail_accuracy * rows[0].tail_tokens as f64) / total;
    assert!((pooled - plain).abs() < 1e-12);

    // With every unit zeroed the output no longer depends on the input.
    let mask = paud::nn::AblationMask::new(1.0, cfg.hidden_dim, 0).unwrap();
    let constant = argmax(&model.example_distributions_masked(&data[0].examples[0], Some(&mask)).unwrap()[0]);
    let freq = FrequencyRanks::from_datasets(&data, vocab.size());
    let (mut head, mut head_n, mut tail, mut tail_n) = (0, 0, 0, 0);
    for t in data.iter().flat_map(|u| u.examples.iter()).flat_map(|e| e.y.iter()) {
        let hit = usize::from(*t == constant);
        if freq.in_head(*t, 0.1) {
            head += hit;
            head_n += 1;
        } else {
            tail += hit;
            tail_n += 1;
        }
    }
    assert_eq!(rows[1].head_accuracy, head as f64 / head_n as f64);
    assert_eq!(rows[1].tail_accuracy, tail as f64 / tail_n as f64);
}
