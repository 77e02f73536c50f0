use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{split_counts, Label, Sample, Suite, TaskKind, TaskSpec};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Sentiment-style classification tasks grouped into clusters.
    Cluster,
    /// Token-tagging tasks whose labels are built level on level.
    Hierarchy,
}

/// Parameters of a synthetic suite. `(spec, seed)` determines every sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: GeneratorKind,
    #[serde(default = "defaults::clusters")]
    pub clusters: usize,
    #[serde(default = "defaults::tasks_per_cluster")]
    pub tasks_per_cluster: usize,
    /// Hierarchy suites: number of levels generated (2 = LOW, MID; 3 adds HIGH).
    #[serde(default = "defaults::levels")]
    pub levels: usize,
    pub vocab_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    #[serde(default)]
    pub noise: f64,
    pub samples_per_task: usize,
    /// Cluster suites: neutral filler words, ids `1..=filler_words`.
    #[serde(default = "defaults::filler_words")]
    pub filler_words: usize,
    /// Cluster suites: polar words following the filler range. Every cluster
    /// assigns its own polarity to each of them.
    #[serde(default = "defaults::lexicon_words")]
    pub lexicon_words: usize,
    /// Cluster suites: upper bound on polar words per sequence (their count is
    /// always odd, so the polarity sum is never zero).
    #[serde(default = "defaults::max_polar_words")]
    pub max_polar_words: usize,
    pub seed: u64,
}

mod defaults {
    pub fn clusters() -> usize {
        2
    }
    pub fn tasks_per_cluster() -> usize {
        3
    }
    pub fn levels() -> usize {
        2
    }
    pub fn filler_words() -> usize {
        20
    }
    pub fn lexicon_words() -> usize {
        40
    }
    pub fn max_polar_words() -> usize {
        3
    }
}

impl SyntheticSpec {
    pub fn cluster(clusters: usize, tasks_per_cluster: usize, samples_per_task: usize, noise: f64, seed: u64) -> Self {
        SyntheticSpec {
            kind: GeneratorKind::Cluster,
            clusters,
            tasks_per_cluster,
            levels: defaults::levels(),
            vocab_size: 1 + defaults::filler_words() + defaults::lexicon_words(),
            min_len: 6,
            max_len: 12,
            noise,
            samples_per_task,
            filler_words: defaults::filler_words(),
            lexicon_words: defaults::lexicon_words(),
            max_polar_words: defaults::max_polar_words(),
            seed,
        }
    }

    pub fn hierarchy(levels: usize, samples_per_task: usize, seed: u64) -> Self {
        SyntheticSpec {
            kind: GeneratorKind::Hierarchy,
            clusters: 1,
            tasks_per_cluster: 1,
            levels,
            vocab_size: 21,
            min_len: 5,
            max_len: 10,
            noise: 0.0,
            samples_per_task,
            filler_words: 0,
            lexicon_words: 0,
            max_polar_words: 1,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail(format!("length range {}..={} is empty", self.min_len, self.max_len));
        }
        if !(0.0..=1.0).contains(&self.noise) {
            return fail(format!("noise rate {} outside [0, 1]", self.noise));
        }
        if self.samples_per_task == 0 {
            return fail("samples_per_task must be positive".into());
        }
        match self.kind {
            GeneratorKind::Cluster => {
                if self.clusters < 2 || self.tasks_per_cluster < 2 {
                    return fail("cluster suites need >= 2 clusters of >= 2 tasks".into());
                }
                if self.lexicon_words < 2 || self.lexicon_words % 2 != 0 {
                    return fail(format!("lexicon_words {} must be even and >= 2", self.lexicon_words));
                }
                if self.filler_words == 0 {
                    return fail("filler_words must be positive".into());
                }
                if 1 + self.filler_words + self.lexicon_words > self.vocab_size {
                    return fail(format!(
                        "{} filler + {} lexicon words exceed vocabulary of {}",
                        self.filler_words, self.lexicon_words, self.vocab_size
                    ));
                }
                if self.max_polar_words == 0 {
                    return fail("max_polar_words must be positive".into());
                }
            }
            GeneratorKind::Hierarchy => {
                if !(1..=3).contains(&self.levels) {
                    return fail(format!("hierarchy levels {} outside 1..=3", self.levels));
                }
                if self.vocab_size < 3 {
                    return fail("hierarchy vocabulary needs at least two non-padding tokens".into());
                }
            }
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Suite> {
        match self.kind {
            GeneratorKind::Cluster => gen_cluster_classification_suite(self),
            GeneratorKind::Hierarchy => gen_hierarchy_labeling_suite(self),
        }
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// One cluster's word polarities: `+1`, `-1`, or `0` for neutral ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterLexicon {
    pub polarity: Vec<i8>,
}

impl ClusterLexicon {
    pub fn positive(&self) -> Vec<usize> {
        self.words_with(1)
    }

    pub fn negative(&self) -> Vec<usize> {
        self.words_with(-1)
    }

    fn words_with(&self, p: i8) -> Vec<usize> {
        (0..self.polarity.len()).filter(|&i| self.polarity[i] == p).collect()
    }
}

/// `Some(1)` when the polarity sum is positive, `Some(0)` when negative,
/// `None` on a tie.
pub fn polarity_label(tokens: &[usize], lexicon: &ClusterLexicon) -> Option<usize> {
    let sum: i64 = tokens
        .iter()
        .map(|&t| lexicon.polarity.get(t).copied().unwrap_or(0) as i64)
        .sum();
    match sum.signum() {
        1 => Some(1),
        -1 => Some(0),
        _ => None,
    }
}

fn cluster_lexicons(spec: &SyntheticSpec) -> Vec<ClusterLexicon> {
    let first = 1 + spec.filler_words;
    (0..spec.clusters)
        .map(|c| {
            let mut rng = spec.rng(1_000 + c as u64);
            let mut words: Vec<usize> = (first..first + spec.lexicon_words).collect();
            words.shuffle(&mut rng);
            let mut polarity = vec![0i8; spec.vocab_size];
            let half = spec.lexicon_words / 2;
            for (i, &w) in words.iter().enumerate() {
                polarity[w] = if i < half { 1 } else { -1 };
            }
            ClusterLexicon { polarity }
        })
        .collect()
}

/// Classification tasks grouped into clusters. Every cluster assigns its own
/// random polarity to the shared polar vocabulary, so tasks in a cluster agree
/// on which words are positive while tasks in different clusters carry no
/// information about each other. A sequence is labelled by the sign of its
/// polarity sum, then flipped with probability `noise`.
pub fn gen_cluster_classification_suite(spec: &SyntheticSpec) -> Result<Suite> {
    if spec.kind != GeneratorKind::Cluster {
        return Err(Error::Config("expected a cluster suite spec".into()));
    }
    spec.validate()?;
    let lexicons = cluster_lexicons(spec);
    let mut tasks = Vec::new();
    for (c, lex) in lexicons.iter().enumerate() {
        let (pos, neg) = (lex.positive(), lex.negative());
        for j in 0..spec.tasks_per_cluster {
            let id = tasks.len();
            let mut rng = spec.rng(id as u64);
            let samples = (0..spec.samples_per_task)
                .map(|_| {
                    let len = rng.gen_range(spec.min_len..=spec.max_len);
                    let max_polar = spec.max_polar_words.min(len);
                    let polar_count = 2 * rng.gen_range(0..(max_polar + 1) / 2) + 1;
                    let mut tokens: Vec<usize> =
                        (0..len).map(|_| rng.gen_range(1..=spec.filler_words)).collect();
                    let mut slots: Vec<usize> = (0..len).collect();
                    slots.shuffle(&mut rng);
                    for &slot in &slots[..polar_count] {
                        let pool = if rng.gen_bool(0.5) { &pos } else { &neg };
                        tokens[slot] = pool[rng.gen_range(0..pool.len())];
                    }
                    let mut label = polarity_label(&tokens, lex).expect("odd polar count never ties");
                    if spec.noise > 0.0 && rng.gen_bool(spec.noise) {
                        label = 1 - label;
                    }
                    Sample {
                        tokens,
                        label: Label::Class(label),
                    }
                })
                .collect();
            tasks.push(make_task(
                id,
                format!("c{c}t{j}"),
                TaskKind::Classification,
                vec!["negative".into(), "positive".into()],
                samples,
                Some(c),
                None,
            ));
        }
    }
    Ok(Suite {
        vocab_size: spec.vocab_size,
        tasks,
    })
}

/// Level 1: parity of the token id.
pub fn low_tags(tokens: &[usize]) -> Vec<usize> {
    tokens.iter().map(|t| t % 2).collect()
}

/// Level 2: XOR of the level-1 tags at `t - 1` and `t` (position 0 XORs with 0).
pub fn mid_tags(low: &[usize]) -> Vec<usize> {
    let mut prev = 0;
    low.iter()
        .map(|&y| {
            let tag = prev ^ y;
            prev = y;
            tag
        })
        .collect()
}

/// Level 3: 1 where a maximal run of level-2 ones begins.
pub fn high_tags(mid: &[usize]) -> Vec<usize> {
    let mut prev = 0;
    mid.iter()
        .map(|&y| {
            let tag = usize::from(y == 1 && prev == 0);
            prev = y;
            tag
        })
        .collect()
}

/// Tagging tasks LOW, MID (and HIGH) where each level's tags are a function
/// of the level below. Tokens are uniform over the non-padding vocabulary and
/// every task draws its own sentences.
pub fn gen_hierarchy_labeling_suite(spec: &SyntheticSpec) -> Result<Suite> {
    if spec.kind != GeneratorKind::Hierarchy {
        return Err(Error::Config("expected a hierarchy suite spec".into()));
    }
    spec.validate()?;
    let names = ["low", "mid", "high"];
    let mut tasks = Vec::new();
    for level in 1..=spec.levels {
        let id = level - 1;
        let mut rng = spec.rng(id as u64);
        let samples = (0..spec.samples_per_task)
            .map(|_| {
                let len = rng.gen_range(spec.min_len..=spec.max_len);
                let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(1..spec.vocab_size)).collect();
                let low = low_tags(&tokens);
                let tags = match level {
                    1 => low,
                    2 => mid_tags(&low),
                    _ => high_tags(&mid_tags(&low)),
                };
                Sample {
                    tokens,
                    label: Label::Tags(tags),
                }
            })
            .collect();
        tasks.push(make_task(
            id,
            names[id].to_string(),
            TaskKind::Tagging,
            vec!["0".into(), "1".into()],
            samples,
            None,
            Some(level),
        ));
    }
    Ok(Suite {
        vocab_size: spec.vocab_size,
        tasks,
    })
}

fn make_task(
    id: usize,
    name: String,
    kind: TaskKind,
    labels: Vec<String>,
    mut samples: Vec<Sample>,
    cluster: Option<usize>,
    level: Option<usize>,
) -> TaskSpec {
    let (n_train, n_dev) = split_counts(samples.len());
    let test = samples.split_off(n_train + n_dev);
    let dev = samples.split_off(n_train);
    TaskSpec {
        id,
        name,
        kind,
        labels,
        train: samples,
        dev,
        test,
        cluster,
        level,
    }
}
