//! Synthetic AVSD-shaped data with known latent structure.
//!
//! Each dialogue has a latent activity and people count. Features are the
//! latent mean plus a linear drift in the segment index plus Gaussian noise,
//! so the next row is predictable up to the noise. Captions and answers are
//! templated from the latents, and two question kinds refer back to earlier
//! turns so answering them requires dialogue history.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dialogs::{DialogueSample, Turn};
use super::features::VideoAudioFeatures;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ACTIVITIES: [&str; 8] = [
    "cooking", "dancing", "reading", "cleaning", "singing", "painting", "running", "sleeping",
];
pub const COUNT_WORDS: [&str; 3] = ["one", "two", "three"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_activities: usize,
    pub n_counts: usize,
    pub noise_std: f64,
    pub n_dialogues: usize,
    pub turns_per_dialogue: usize,
    pub segments: usize,
    pub d_v: usize,
    pub d_a: usize,
    /// Norm of the per-segment drift vector.
    pub drift_step: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_activities: 4,
            n_counts: 3,
            noise_std: 0.05,
            n_dialogues: 2000,
            turns_per_dialogue: 10,
            segments: 6,
            d_v: 16,
            d_a: 8,
            drift_step: 0.3,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn feature_dim(&self) -> usize {
        2 * self.d_v + self.d_a
    }

    fn validate(&self) -> Result<()> {
        if self.n_activities == 0 || self.n_activities > ACTIVITIES.len() {
            return Err(Error::Config(format!("n_activities must be in 1..={}", ACTIVITIES.len())));
        }
        if self.n_counts == 0 || self.n_counts > COUNT_WORDS.len() {
            return Err(Error::Config(format!("n_counts must be in 1..={}", COUNT_WORDS.len())));
        }
        if self.turns_per_dialogue == 0 || self.segments == 0 || self.feature_dim() == 0 {
            return Err(Error::Config("turns, segments and feature width must be positive".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise_std {} is invalid", self.noise_std)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Question {
    Activity,
    Count,
    ActivityCheck(usize),
    CountCheck(usize),
    /// Refers to the previous turn.
    PreviousTopic,
    /// Refers to the turn two back.
    EarlierTopic,
}

impl Question {
    fn is_base(self) -> bool {
        !matches!(self, Question::PreviousTopic | Question::EarlierTopic)
    }

    /// How many turns back the answer depends on.
    pub fn history_needed(self) -> usize {
        match self {
            Question::PreviousTopic => 1,
            Question::EarlierTopic => 2,
            _ => 0,
        }
    }

    fn topic(self) -> &'static str {
        match self {
            Question::Activity | Question::ActivityCheck(_) => "activity",
            _ => "people",
        }
    }

    pub fn render(self) -> String {
        match self {
            Question::Activity => "what are they doing ?".into(),
            Question::Count => "how many people are there ?".into(),
            Question::ActivityCheck(a) => format!("are they {} ?", ACTIVITIES[a]),
            Question::CountCheck(c) => format!("are there {} people ?", COUNT_WORDS[c]),
            Question::PreviousTopic => "what did i just ask about ?".into(),
            Question::EarlierTopic => "what did i ask before that ?".into(),
        }
    }
}

/// Answer text for question `n` of a dialogue about `(activity, count)`.
pub fn render_answer(questions: &[Question], n: usize, activity: usize, count: usize) -> String {
    let (act, num) = (ACTIVITIES[activity], COUNT_WORDS[count]);
    match questions[n] {
        Question::Activity => format!("they are {act} ."),
        Question::Count => format!("there are {num} people ."),
        Question::ActivityCheck(a) => {
            let yn = if a == activity { "yes" } else { "no" };
            format!("{yn} , they are {act} .")
        }
        Question::CountCheck(c) => {
            let yn = if c == count { "yes" } else { "no" };
            format!("{yn} , there are {num} .")
        }
        q @ (Question::PreviousTopic | Question::EarlierTopic) => {
            let back = q.history_needed();
            format!("you asked about the {} .", questions[n - back].topic())
        }
    }
}

pub fn render_caption(activity: usize, count: usize) -> String {
    format!("{} people are {} .", COUNT_WORDS[count], ACTIVITIES[activity])
}

fn tokens(text: &str) -> Vec<String> {
    crate::text::normalize(text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub video_id: String,
    pub activity: usize,
    pub count: usize,
    pub questions: Vec<Question>,
}

/// Everything the generator knows: latents, the feature model and the
/// Bayes-optimal yardsticks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub spec: SyntheticSpec,
    pub activity_means: Vec<Vec<f64>>,
    pub count_means: Vec<Vec<f64>>,
    pub drift: Vec<f64>,
    pub latents: Vec<Latent>,
    /// Response token accuracy of the Bayes oracle (latents inferred from
    /// features, full history) on the emitted data.
    pub bayes_accuracy: f64,
    /// Empirical next-feature MSE of the optimal predictor on the emitted data.
    pub oracle_next_feature_mse: f64,
}

impl OracleRecord {
    /// Noise-free feature row for `(activity, count)` at segment `t`.
    pub fn clean_row(&self, activity: usize, count: usize, t: usize) -> Vec<f64> {
        let tf = t as f64;
        self.activity_means[activity]
            .iter()
            .zip(&self.count_means[count])
            .zip(&self.drift)
            .map(|((a, c), d)| a + c + tf * d)
            .collect()
    }

    /// Optimal prediction of row `t + 1` given the latents.
    pub fn optimal_next_feature(&self, activity: usize, count: usize, t: usize) -> Vec<f32> {
        self.clean_row(activity, count, t + 1).iter().map(|v| *v as f32).collect()
    }

    /// Irreducible per-position next-feature error, `σ² · feature_dim`.
    pub fn noise_floor(&self) -> f64 {
        self.spec.noise_std.powi(2) * self.spec.feature_dim() as f64
    }

    /// Maximum-likelihood `(activity, count)` from a feature sequence.
    pub fn classify(&self, features: &VideoAudioFeatures) -> (usize, usize) {
        let mut best = (0, 0);
        let mut best_err = f64::INFINITY;
        for a in 0..self.spec.n_activities {
            for c in 0..self.spec.n_counts {
                let err: f64 = (0..features.segments())
                    .map(|t| {
                        self.clean_row(a, c, t)
                            .iter()
                            .zip(features.row(t))
                            .map(|(m, x)| (*x as f64 - m).powi(2))
                            .sum::<f64>()
                    })
                    .sum();
                if err < best_err {
                    best_err = err;
                    best = (a, c);
                }
            }
        }
        best
    }

    fn latent(&self, video_id: &str) -> Result<&Latent> {
        self.latents
            .iter()
            .find(|l| l.video_id == video_id)
            .ok_or_else(|| Error::Alignment(format!("no latent record for video {video_id}")))
    }

    /// Teacher-forced response token accuracy (answer tokens plus the
    /// terminal end-of-sequence) of the Bayes oracle on `samples`.
    pub fn bayes_accuracy(&self, samples: &[DialogueSample]) -> Result<f64> {
        let (mut hits, mut total) = (0usize, 0usize);
        for s in samples {
            let latent = self.latent(&s.video_id)?;
            let (a, c) = self.classify(&s.features);
            for (n, turn) in s.turns.iter().enumerate() {
                let predicted = tokens(&render_answer(&latent.questions, n, a, c));
                total += turn.answer.len() + 1;
                hits += turn.answer.iter().zip(&predicted).filter(|(g, p)| g == p).count();
                if predicted.len() == turn.answer.len() {
                    hits += 1;
                }
            }
        }
        Ok(if total == 0 { 0.0 } else { hits as f64 / total as f64 })
    }

    /// Mean squared error of [`Self::optimal_next_feature`] over every
    /// `(t, t + 1)` pair in `samples`.
    pub fn next_feature_mse(&self, samples: &[DialogueSample]) -> Result<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for s in samples {
            let latent = self.latent(&s.video_id)?;
            for t in 0..s.features.segments().saturating_sub(1) {
                let pred = self.optimal_next_feature(latent.activity, latent.count, t);
                sum += pred
                    .iter()
                    .zip(s.features.row(t + 1))
                    .map(|(p, x)| (*p as f64 - *x as f64).powi(2))
                    .sum::<f64>();
                n += 1;
            }
        }
        Ok(if n == 0 { 0.0 } else { sum / n as f64 })
    }
}

/// Every token type the templates can emit for `spec`.
pub fn template_vocabulary(spec: &SyntheticSpec) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let k = spec.n_activities.min(ACTIVITIES.len());
    let c = spec.n_counts.min(COUNT_WORDS.len());
    let mut questions = vec![Question::Activity, Question::Count];
    questions.extend((0..k).map(Question::ActivityCheck));
    questions.extend((0..c).map(Question::CountCheck));
    for a in 0..k {
        for n in 0..c {
            out.extend(tokens(&render_caption(a, n)));
            for (i, q) in questions.iter().enumerate() {
                out.extend(tokens(&q.render()));
                out.extend(tokens(&render_answer(&questions, i, a, n)));
            }
            for (prev, q) in [(Question::Activity, Question::PreviousTopic), (Question::Count, Question::EarlierTopic)] {
                let qs = [prev, prev, q];
                out.extend(tokens(&q.render()));
                out.extend(tokens(&render_answer(&qs, 2, a, n)));
            }
        }
    }
    out
}

fn random_means(rng: &mut ChaCha8Rng, n: usize, dim: usize, norm: f64) -> Vec<Vec<f64>> {
    let scale = norm / (dim as f64).sqrt();
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    z * scale
                })
                .collect()
        })
        .collect()
}

fn pick_question(rng: &mut ChaCha8Rng, spec: &SyntheticSpec, asked: &[Question], activity: usize, count: usize) -> Question {
    let n = asked.len();
    let mut kinds = vec![0, 1, 2, 3];
    if n >= 1 && asked[n - 1].is_base() {
        kinds.push(4);
    }
    if n >= 2 && asked[n - 2].is_base() {
        kinds.push(5);
    }
    let other = |rng: &mut ChaCha8Rng, truth: usize, range: usize| {
        if range == 1 || rng.random_bool(0.5) {
            truth
        } else {
            let shift = rng.random_range(1..range);
            (truth + shift) % range
        }
    };
    match kinds[rng.random_range(0..kinds.len())] {
        0 => Question::Activity,
        1 => Question::Count,
        2 => Question::ActivityCheck(other(rng, activity, spec.n_activities)),
        3 => Question::CountCheck(other(rng, count, spec.n_counts)),
        4 => Question::PreviousTopic,
        _ => Question::EarlierTopic,
    }
}

/// Generates `spec.n_dialogues` samples (video ids `syn00000`, ...) and the
/// oracle record describing them.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Vec<DialogueSample>, OracleRecord)> {
    spec.validate()?;
    let dim = spec.feature_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let activity_means = random_means(&mut rng, spec.n_activities, dim, 1.0);
    let count_means = random_means(&mut rng, spec.n_counts, dim, 0.6);
    let drift = random_means(&mut rng, 1, dim, spec.drift_step).remove(0);

    let mut oracle = OracleRecord {
        spec: spec.clone(),
        activity_means,
        count_means,
        drift,
        latents: Vec::with_capacity(spec.n_dialogues),
        bayes_accuracy: 0.0,
        oracle_next_feature_mse: 0.0,
    };

    let required = 6.0 * spec.noise_std;
    let mut closest = f64::INFINITY;
    for a1 in 0..spec.n_activities {
        for c1 in 0..spec.n_counts {
            for a2 in 0..spec.n_activities {
                for c2 in 0..spec.n_counts {
                    if (a1, c1) < (a2, c2) {
                        let d: f64 = oracle
                            .clean_row(a1, c1, 0)
                            .iter()
                            .zip(oracle.clean_row(a2, c2, 0))
                            .map(|(x, y)| (x - y).powi(2))
                            .sum::<f64>()
                            .sqrt();
                        closest = closest.min(d);
                    }
                }
            }
        }
    }
    if closest < required {
        return Err(Error::Config(format!(
            "latent means are {closest:.4} apart, need at least 6σ = {required:.4}"
        )));
    }

    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut samples = Vec::with_capacity(spec.n_dialogues);
    for i in 0..spec.n_dialogues {
        let video_id = format!("syn{i:05}");
        let activity = rng.random_range(0..spec.n_activities);
        let count = rng.random_range(0..spec.n_counts);
        let mut rows = Vec::with_capacity(spec.segments * dim);
        for t in 0..spec.segments {
            for v in oracle.clean_row(activity, count, t) {
                rows.push((v + noise.sample(&mut rng)) as f32);
            }
        }
        let features = VideoAudioFeatures::new(Tensor::new(vec![spec.segments, dim], rows)?)?;
        let mut questions = Vec::with_capacity(spec.turns_per_dialogue);
        for _ in 0..spec.turns_per_dialogue {
            let q = pick_question(&mut rng, spec, &questions, activity, count);
            questions.push(q);
        }
        let turns = questions
            .iter()
            .enumerate()
            .map(|(n, q)| Turn {
                question: tokens(&q.render()),
                answer: tokens(&render_answer(&questions, n, activity, count)),
            })
            .collect();
        samples.push(DialogueSample {
            video_id: video_id.clone(),
            caption: tokens(&render_caption(activity, count)),
            turns,
            features,
        });
        oracle.latents.push(Latent {
            video_id,
            activity,
            count,
            questions,
        });
    }
    oracle.bayes_accuracy = oracle.bayes_accuracy(&samples)?;
    oracle.oracle_next_feature_mse = oracle.next_feature_mse(&samples)?;
    Ok((samples, oracle))
}

/// Splits ids into `(train, val, test)` keeping generation order: the last
/// `n_test` go to test, the `n_val` before them to validation.
pub fn split_ids(samples: &[DialogueSample], n_val: usize, n_test: usize) -> Result<(Vec<String>, Vec<String>, Vec<String>)> {
    if n_val + n_test >= samples.len() {
        return Err(Error::Config(format!(
            "cannot hold out {} of {} dialogues",
            n_val + n_test,
            samples.len()
        )));
    }
    let ids: Vec<String> = samples.iter().map(|s| s.video_id.clone()).collect();
    let train_end = ids.len() - n_val - n_test;
    Ok((
        ids[..train_end].to_vec(),
        ids[train_end..train_end + n_val].to_vec(),
        ids[train_end + n_val..].to_vec(),
    ))
}
