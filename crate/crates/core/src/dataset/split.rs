use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::DatasetError;

/// Frames per training sequence.
pub const SEQ_LEN: usize = 10;
pub const DEFAULT_K: usize = 5;
pub const DEFAULT_REPEATS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Trailing frames that do not fill a chunk.
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub repeat: usize,
    pub fold: usize,
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn chunk_count(n_frames: usize, seq_len: usize) -> Result<usize, DatasetError> {
    if seq_len == 0 {
        return Err(DatasetError::Invalid("seq_len must be at least 1".into()));
    }
    if n_frames < seq_len {
        return Err(DatasetError::TooFewFrames { n_frames, seq_len });
    }
    Ok(n_frames / seq_len)
}

fn shuffled_chunks(chunks: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..chunks).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

fn frames_of(chunks: &[usize], seq_len: usize) -> Vec<usize> {
    let mut c = chunks.to_vec();
    c.sort_unstable();
    c.iter().flat_map(|&c| c * seq_len..(c + 1) * seq_len).collect()
}

/// Shuffles aligned chunks of `seq_len` frames and gives `round(chunks *
/// train_frac)` of them to training. Indices come back sorted.
pub fn split_sequences(
    n_frames: usize,
    train_frac: f64,
    seq_len: usize,
    seed: u64,
) -> Result<SplitPlan, DatasetError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DatasetError::Invalid(format!("train_frac {train_frac} not in (0, 1)")));
    }
    let chunks = chunk_count(n_frames, seq_len)?;
    let mut n_train = (chunks as f64 * train_frac).round() as usize;
    if chunks >= 2 {
        n_train = n_train.clamp(1, chunks - 1);
    }
    let order = shuffled_chunks(chunks, seed);
    Ok(SplitPlan {
        train: frames_of(&order[..n_train], seq_len),
        test: frames_of(&order[n_train..], seq_len),
        dropped: n_frames - chunks * seq_len,
    })
}

/// Seed of one repeat, derived from the base seed with a splitmix step.
fn repeat_seed(base_seed: u64, repeat: usize) -> u64 {
    let mut z = base_seed.wrapping_add((repeat as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn kfold_plans(n_frames: usize, k: usize, repeats: usize, base_seed: u64) -> Result<Vec<FoldPlan>, DatasetError> {
    kfold_plans_with_len(n_frames, SEQ_LEN, k, repeats, base_seed)
}

/// `k * repeats` plans. Each repeat reshuffles the chunks; fold sizes differ
/// by at most one chunk, the larger folds coming last.
pub fn kfold_plans_with_len(
    n_frames: usize,
    seq_len: usize,
    k: usize,
    repeats: usize,
    base_seed: u64,
) -> Result<Vec<FoldPlan>, DatasetError> {
    if k < 2 || repeats == 0 {
        return Err(DatasetError::Invalid(format!("k = {k}, repeats = {repeats}")));
    }
    let chunks = chunk_count(n_frames, seq_len)?;
    if chunks < k {
        return Err(DatasetError::TooFewChunks { chunks, k });
    }
    let base = chunks / k;
    let extra = chunks % k;
    let mut plans = Vec::with_capacity(k * repeats);
    for repeat in 0..repeats {
        let seed = repeat_seed(base_seed, repeat);
        let order = shuffled_chunks(chunks, seed);
        let mut start = 0;
        for fold in 0..k {
            let size = base + usize::from(fold >= k - extra);
            let test = &order[start..start + size];
            let train: Vec<usize> = order[..start].iter().chain(&order[start + size..]).copied().collect();
            plans.push(FoldPlan {
                repeat,
                fold,
                seed,
                train: frames_of(&train, seq_len),
                test: frames_of(test, seq_len),
            });
            start += size;
        }
    }
    Ok(plans)
}

/// Groups sorted frame indices into aligned sequences of `seq_len`.
pub fn chunk_sequences(indices: &[usize], seq_len: usize) -> Result<Vec<Vec<usize>>, DatasetError> {
    if seq_len == 0 || indices.len() % seq_len != 0 {
        return Err(DatasetError::Invalid(format!(
            "{} indices do not form sequences of {seq_len}",
            indices.len()
        )));
    }
    indices
        .chunks(seq_len)
        .map(|c| {
            let aligned = c[0] % seq_len == 0 && c.windows(2).all(|w| w[1] == w[0] + 1);
            if aligned {
                Ok(c.to_vec())
            } else {
                Err(DatasetError::Invalid(format!("sequence starting at frame {} is not an aligned chunk", c[0])))
            }
        })
        .collect()
}

/// `fold,repeat,role,frame_index` rows. Plan seeds travel in `# seed` comment
/// lines ahead of the header.
pub fn write_plans_csv(plans: &[FoldPlan]) -> String {
    let mut out = String::new();
    for p in plans {
        writeln!(out, "# seed,{},{},{}", p.fold, p.repeat, p.seed).unwrap();
    }
    out.push_str("fold,repeat,role,frame_index\n");
    for p in plans {
        for (role, idx) in [("train", &p.train), ("test", &p.test)] {
            for i in idx {
                writeln!(out, "{},{},{role},{i}", p.fold, p.repeat).unwrap();
            }
        }
    }
    out
}

pub fn parse_plans_csv(text: &str) -> Result<Vec<FoldPlan>, DatasetError> {
    let mut plans: BTreeMap<(usize, usize), FoldPlan> = BTreeMap::new();
    let mut seen_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |detail: &str| DatasetError::PlanCsv {
            line: i + 1,
            detail: detail.to_string(),
        };
        if line.is_empty() {
            continue;
        }
        let num = |s: &str| s.trim().parse::<usize>().map_err(|_| err(&format!("bad number `{s}`")));
        if let Some(rest) = line.strip_prefix("# seed,") {
            let f: Vec<_> = rest.split(',').collect();
            if f.len() != 3 {
                return Err(err("expected `# seed,fold,repeat,seed`"));
            }
            let seed = f[2].trim().parse::<u64>().map_err(|_| err("bad seed"))?;
            let (fold, repeat) = (num(f[0])?, num(f[1])?);
            plans.entry((repeat, fold)).or_insert_with(|| empty_plan(repeat, fold)).seed = seed;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        if !seen_header {
            if line != "fold,repeat,role,frame_index" {
                return Err(err("missing `fold,repeat,role,frame_index` header"));
            }
            seen_header = true;
            continue;
        }
        let f: Vec<_> = line.split(',').collect();
        if f.len() != 4 {
            return Err(err("expected 4 fields"));
        }
        let (fold, repeat, idx) = (num(f[0])?, num(f[1])?, num(f[3])?);
        let plan = plans.entry((repeat, fold)).or_insert_with(|| empty_plan(repeat, fold));
        match f[2].trim() {
            "train" => plan.train.push(idx),
            "test" => plan.test.push(idx),
            other => return Err(err(&format!("unknown role `{other}`"))),
        }
    }
    if !seen_header {
        return Err(DatasetError::PlanCsv {
            line: 0,
            detail: "empty plan file".into(),
        });
    }
    Ok(plans.into_values().collect())
}

fn empty_plan(repeat: usize, fold: usize) -> FoldPlan {
    FoldPlan {
        repeat,
        fold,
        seed: 0,
        train: Vec::new(),
        test: Vec::new(),
    }
}
