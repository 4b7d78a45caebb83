//! Task streams, unlabeled pools and triplet batches.

mod folder;
mod synthetic;

pub use folder::{ingest_image_folder, FolderData, FolderSpec};
pub use synthetic::{make_synthetic_stream, PatternParams, SyntheticSpec};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One labeled image, stored channel-major (`C×H×W`) with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    /// Unique within the training set of a stream; used by memory manifests.
    pub id: usize,
    pub label: usize,
    pub image: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub size: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.channels * self.size * self.size
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.size, self.size]
    }
}

/// Stacks images into an `N×C×H×W` tensor.
pub fn images_to_tensor<'a, T, I>(shape: ImageShape, images: I) -> Result<Tensor<T>>
where
    T: Scalar,
    I: IntoIterator<Item = &'a [f32]>,
{
    let mut data = Vec::new();
    let mut n = 0;
    for img in images {
        if img.len() != shape.len() {
            return Err(Error::shape(format!("image of {} values, expected {}", img.len(), shape.len())));
        }
        data.extend(img.iter().map(|&v| T::from_f64(v as f64)));
        n += 1;
    }
    if n == 0 {
        return Err(Error::contract("cannot stack an empty image batch"));
    }
    Tensor::new(vec![n, shape.channels, shape.size, shape.size], data)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    pub classes: Vec<usize>,
    pub train: Vec<LabeledSample>,
}

/// An ordered stream of tasks with pairwise-disjoint class sets, plus test
/// samples for every class.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    shape: ImageShape,
    tasks: Vec<Task>,
    test: Vec<LabeledSample>,
}

impl TaskStream {
    /// Partitions labeled data into tasks. Class ids `0..Σcounts` are assigned
    /// in order, so task `i` owns the next `counts[i]` ids.
    pub fn from_datasets(
        shape: ImageShape,
        train: Vec<LabeledSample>,
        test: Vec<LabeledSample>,
        counts: &[usize],
    ) -> Result<Self> {
        let total: usize = counts.iter().sum();
        let mut tasks: Vec<Task> = Vec::with_capacity(counts.len());
        let mut start = 0;
        for &k in counts {
            tasks.push(Task {
                classes: (start..start + k).collect(),
                train: Vec::new(),
            });
            start += k;
        }
        let task_of = |label: usize| -> Result<usize> {
            let mut acc = 0;
            for (i, &k) in counts.iter().enumerate() {
                acc += k;
                if label < acc {
                    return Ok(i);
                }
            }
            Err(Error::Index(format!("label {label} outside the {total} protocol classes")))
        };
        for s in &test {
            task_of(s.label)?;
        }
        for s in train {
            if s.image.len() != shape.len() {
                return Err(Error::shape("training image has the wrong size"));
            }
            tasks[task_of(s.label)?].train.push(s);
        }
        let mut ids: Vec<usize> = tasks.iter().flat_map(|t| t.train.iter().map(|s| s.id)).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::contract("training sample ids must be unique"));
        }
        Ok(Self { shape, tasks, test })
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn task(&self, i: usize) -> Result<&Task> {
        self.tasks
            .get(i)
            .ok_or_else(|| Error::Index(format!("task {i} of {}", self.tasks.len())))
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    /// Classes of tasks `0..=i`.
    pub fn seen_classes(&self, i: usize) -> Vec<usize> {
        self.tasks.iter().take(i + 1).flat_map(|t| t.classes.iter().copied()).collect()
    }

    /// Test samples whose label lies in `classes`.
    pub fn test_for(&self, classes: &[usize]) -> Vec<&LabeledSample> {
        self.test.iter().filter(|s| classes.contains(&s.label)).collect()
    }

    pub fn test(&self) -> &[LabeledSample] {
        &self.test
    }

    pub fn train_sample(&self, id: usize) -> Option<&LabeledSample> {
        self.tasks.iter().flat_map(|t| t.train.iter()).find(|s| s.id == id)
    }
}

/// Unlabeled images. Never contributes labels.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledPool {
    images: Vec<Vec<f32>>,
}

impl UnlabeledPool {
    pub fn new(images: Vec<Vec<f32>>) -> Self {
        Self { images }
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i]
    }

    /// Keeps only the first `n` images (pool-size sweeps).
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            images: self.images.iter().take(n).cloned().collect(),
        }
    }

    /// `n` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<usize>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        if self.images.is_empty() {
            return Err(Error::contract("cannot sample from an empty unlabeled pool"));
        }
        Ok((0..n).map(|_| rng.random_range(0..self.images.len())).collect())
    }

    pub fn sample_unlabeled<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<&[f32]>> {
        Ok(self
            .sample_indices(n, rng)?
            .into_iter()
            .map(|i| self.images[i].as_slice())
            .collect())
    }
}

/// `[total/2, r, …, r]` with `r = (total/2) / steps`.
pub fn split_protocol(total_classes: usize, steps: usize) -> Result<Vec<usize>> {
    let err = |m: String| Err(Error::config("protocol", m));
    if total_classes == 0 || !total_classes.is_multiple_of(2) {
        return err(format!("total classes must be even and positive, got {total_classes}"));
    }
    let half = total_classes / 2;
    if steps == 0 || !half.is_multiple_of(steps) {
        return err(format!("{steps} steps do not divide the {half} incremental classes"));
    }
    let mut counts = vec![half];
    counts.extend(std::iter::repeat_n(half / steps, steps));
    Ok(counts)
}

/// An exemplar, an unlabeled image index, and a same-class reference from
/// the current task's dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet<'a> {
    pub exemplar: &'a LabeledSample,
    pub unlabeled: usize,
    pub reference: &'a LabeledSample,
}

/// One epoch of triplet batches: a shuffled pass over `exemplars`, each
/// paired with a uniformly drawn reference of its class from `dataset` and a
/// uniformly drawn unlabeled index.
pub fn make_triplet_batches<'a, R: Rng + ?Sized>(
    exemplars: &[&'a LabeledSample],
    dataset: &'a [LabeledSample],
    pool: &UnlabeledPool,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Triplet<'a>>>> {
    if batch_size == 0 {
        return Err(Error::contract("batch size must be positive"));
    }
    if pool.is_empty() {
        return Err(Error::contract("cannot build triplets from an empty unlabeled pool"));
    }
    let mut by_class: std::collections::BTreeMap<usize, Vec<&'a LabeledSample>> = Default::default();
    for s in dataset {
        by_class.entry(s.label).or_default().push(s);
    }
    for e in exemplars {
        if !by_class.contains_key(&e.label) {
            return Err(Error::contract(format!("class {} has no samples in the task dataset", e.label)));
        }
    }
    let mut order: Vec<&'a LabeledSample> = exemplars.to_vec();
    order.shuffle(rng);
    let mut out = Vec::with_capacity(order.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let mut batch = Vec::with_capacity(chunk.len());
        for &exemplar in chunk {
            let reference = *by_class[&exemplar.label].choose(rng).expect("nonempty class");
            let unlabeled = rng.random_range(0..pool.len());
            batch.push(Triplet {
                exemplar,
                unlabeled,
                reference,
            });
        }
        out.push(batch);
    }
    Ok(out)
}
