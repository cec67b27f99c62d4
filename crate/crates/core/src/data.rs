//! Training tasks: a random tanh teacher and byte-level next-character prediction.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{gemm, Matrix};
use crate::model::{LossKind, Targets};

/// Inputs and targets, one sample per column.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub train_x: Matrix,
    pub train_y: Targets,
    pub val_x: Matrix,
    pub val_y: Targets,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl TaskData {
    pub fn n_train(&self) -> usize {
        self.train_x.cols()
    }

    pub fn n_val(&self) -> usize {
        self.val_x.cols()
    }

    /// MSE for regression targets, softmax cross-entropy for class labels.
    pub fn natural_loss(&self) -> LossKind {
        match self.train_y {
            Targets::Dense(_) => LossKind::Mse,
            Targets::Classes(_) => LossKind::SoftmaxCe,
        }
    }
}

/// Two-layer network `y = W₂ tanh(W₁ x)` used to label random inputs.
#[derive(Clone, Debug)]
pub struct Teacher {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl Teacher {
    pub fn sample(input_dim: usize, hidden: usize, output_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || output_dim == 0 {
            return Err(Error::Config("teacher dimensions must be positive".into()));
        }
        Ok(Self {
            w1: Matrix::random_normal(hidden, input_dim, 1.0 / (input_dim as f64).sqrt(), rng),
            w2: Matrix::random_normal(output_dim, hidden, 1.0 / (hidden as f64).sqrt(), rng),
        })
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let hidden = gemm(1.0, &self.w1, false, x, false).map(f64::tanh);
        gemm(1.0, &self.w2, false, &hidden, false)
    }
}

/// Teacher weights first, then all `n_train + n_val` inputs from one stream,
/// split so that the first `n_train` columns train and the rest validate.
pub fn gen_teacher_student(
    seed: u64,
    input_dim: usize,
    output_dim: usize,
    n_train: usize,
    n_val: usize,
    teacher_width: usize,
) -> Result<(TaskData, Teacher)> {
    if n_train == 0 || n_val == 0 {
        return Err(Error::Config("both splits need at least one sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Model init uses stream 0 of the same seed.
    rng.set_stream(1);
    let teacher = Teacher::sample(input_dim, teacher_width, output_dim, &mut rng)?;
    let x = Matrix::random_normal(input_dim, n_train + n_val, 1.0, &mut rng);
    let y = teacher.apply(&x);
    let data = TaskData {
        train_x: x.columns(0, n_train),
        train_y: Targets::Dense(y.columns(0, n_train)),
        val_x: x.columns(n_train, n_train + n_val),
        val_y: Targets::Dense(y.columns(n_train, n_train + n_val)),
        input_dim,
        output_dim,
    };
    Ok((data, teacher))
}

/// Byte contexts and their next byte, both as vocabulary indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TextExamples {
    /// Distinct bytes in ascending order.
    pub vocab: Vec<u8>,
    pub contexts: Vec<Vec<usize>>,
    pub next: Vec<usize>,
}

pub fn text_examples(bytes: &[u8], context_len: usize) -> Result<TextExamples> {
    if context_len == 0 {
        return Err(Error::Config("context_len must be at least 1".into()));
    }
    if bytes.len() <= context_len + 1 {
        return Err(Error::Config(format!(
            "corpus of {} bytes is too short for context {context_len}",
            bytes.len()
        )));
    }
    let mut vocab = bytes.to_vec();
    vocab.sort_unstable();
    vocab.dedup();
    let mut index = [usize::MAX; 256];
    for (i, &b) in vocab.iter().enumerate() {
        index[b as usize] = i;
    }
    let n = bytes.len() - context_len;
    let contexts = (0..n)
        .map(|i| bytes[i..i + context_len].iter().map(|&b| index[b as usize]).collect())
        .collect();
    let next = (0..n).map(|i| index[bytes[i + context_len] as usize]).collect();
    Ok(TextExamples { vocab, contexts, next })
}

/// Next-byte prediction from the summed one-hot encoding of the preceding
/// `context_len` bytes. The last `val_fraction` of examples (rounded) validate.
pub fn load_text_corpus(path: impl AsRef<Path>, context_len: usize, val_fraction: f64) -> Result<TaskData> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ex = text_examples(&bytes, context_len).map_err(|e| Error::io(path, e))?;
    corpus_from_examples(&ex, val_fraction).map_err(|e| Error::io(path, e))
}

pub fn corpus_from_examples(ex: &TextExamples, val_fraction: f64) -> Result<TaskData> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("val_fraction must lie in [0, 1), got {val_fraction}")));
    }
    let n = ex.next.len();
    let n_val = (n as f64 * val_fraction).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(Error::Config(format!(
            "{n} examples cannot be split with val_fraction {val_fraction}"
        )));
    }
    let vocab = ex.vocab.len();
    let mut x = Matrix::zeros(vocab, n);
    for (j, ctx) in ex.contexts.iter().enumerate() {
        for &c in ctx {
            x[(c, j)] += 1.0;
        }
    }
    let n_train = n - n_val;
    Ok(TaskData {
        train_x: x.columns(0, n_train),
        train_y: Targets::Classes(ex.next[..n_train].to_vec()),
        val_x: x.columns(n_train, n),
        val_y: Targets::Classes(ex.next[n_train..].to_vec()),
        input_dim: vocab,
        output_dim: vocab,
    })
}

/// Minibatches drawn without replacement, reshuffled every epoch.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if n == 0 || batch_size == 0 {
            return Err(Error::Config("batch size and dataset size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            order,
            pos: 0,
            batch_size,
            rng,
        })
    }

    pub fn next_indices(&mut self) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.batch_size);
        while idx.len() < self.batch_size {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            idx.push(self.order[self.pos]);
            self.pos += 1;
        }
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn teacher_student_is_deterministic_and_consistent() {
        let (a, teacher) = gen_teacher_student(3, 5, 2, 20, 7, 16).unwrap();
        let (b, _) = gen_teacher_student(3, 5, 2, 20, 7, 16).unwrap();
        assert_eq!(a.train_x, b.train_x);
        assert_eq!(a.val_y, b.val_y);
        assert_eq!(Targets::Dense(teacher.apply(&a.train_x)), a.train_y);
        assert_eq!((a.n_train(), a.n_val()), (20, 7));
        let (c, _) = gen_teacher_student(4, 5, 2, 20, 7, 16).unwrap();
        assert_ne!(a.train_x, c.train_x);
    }

    #[test]
    fn splits_share_no_samples() {
        let (d, _) = gen_teacher_student(1, 3, 1, 50, 50, 4).unwrap();
        for i in 0..d.n_train() {
            let t = d.train_x.column(i);
            for j in 0..d.n_val() {
                assert_ne!(t, d.val_x.column(j));
            }
        }
    }

    #[test]
    fn abab_enumeration() {
        let ex = text_examples(b"abab", 1).unwrap();
        assert_eq!(ex.vocab, b"ab".to_vec());
        assert_eq!(ex.contexts, vec![vec![0], vec![1], vec![0]]);
        assert_eq!(ex.next, vec![1, 0, 1]);
    }

    #[test]
    fn quarter_split_of_hundred_examples() {
        let text: Vec<u8> = (0..103).map(|i| b"xyz"[i % 3]).collect();
        let ex = text_examples(&text, 3).unwrap();
        assert_eq!(ex.next.len(), 100);
        let d = corpus_from_examples(&ex, 0.25).unwrap();
        assert_eq!((d.n_train(), d.n_val()), (75, 25));
        assert_eq!(d.input_dim, 3);
        // Summed one-hots count each byte in the window.
        assert_eq!(d.train_x.column(0), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn short_or_missing_corpus() {
        assert!(text_examples(b"ab", 1).is_err());
        let err = load_text_corpus("/definitely/not/here.txt", 2, 0.1).unwrap_err();
        assert!(err.to_string().contains("/definitely/not/here.txt"));
    }

    #[test]
    fn sampler_covers_each_epoch() {
        let mut s = BatchSampler::new(10, 4, 0).unwrap();
        let mut seen: Vec<usize> = (0..2).flat_map(|_| s.next_indices()).collect();
        seen.extend(s.next_indices().into_iter().take(2));
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }
}
