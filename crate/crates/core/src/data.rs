//! Bag datasets: a synthetic class-conditional Gaussian pool for desk-scale
//! experiments, an IDX digit-file loader, and the bag construction protocol
//! (equal-size bags, no instance reused within a bag, positive bags carrying
//! a fixed fraction of key-class instances).

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::bag_label;
use crate::rng::{substream, Rng};
use crate::tensor::Tensor;

/// Labeled instance pool the bags are drawn from.
#[derive(Debug, Clone)]
pub struct InstancePool {
    /// [n_items, input_dim]
    pub features: Tensor,
    pub labels: Vec<u8>,
}

impl InstancePool {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }
}

/// How a generated bag dataset is laid out.
#[derive(Debug, Clone, PartialEq)]
pub struct BagSpec {
    pub n_train_bags: usize,
    pub n_val_bags: usize,
    pub n_test_bags: usize,
    pub instances_per_bag: usize,
    /// Fraction of key instances in each positive bag, in (0, 1].
    pub key_fraction: f64,
    /// Pool label counted as "key".
    pub key_class: u8,
    pub positive_bag_fraction: f64,
    pub seed: u64,
}

impl Default for BagSpec {
    /// Desk-scale defaults: small enough for test suites, large enough for
    /// the classifier to reach high accuracy.
    fn default() -> Self {
        BagSpec {
            n_train_bags: 40,
            n_val_bags: 12,
            n_test_bags: 20,
            instances_per_bag: 50,
            key_fraction: 0.1,
            key_class: 9,
            positive_bag_fraction: 0.5,
            seed: 0,
        }
    }
}

impl BagSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train_bags == 0 || self.n_val_bags == 0 || self.n_test_bags == 0 {
            return Err(Error::Config("every split needs at least one bag".into()));
        }
        if self.instances_per_bag == 0 {
            return Err(Error::Config("instances_per_bag must be at least 1".into()));
        }
        if !(self.key_fraction > 0.0 && self.key_fraction <= 1.0) {
            return Err(Error::Config("key_fraction must be in (0, 1]".into()));
        }
        if self.keys_per_positive_bag() < 1 {
            return Err(Error::Config(
                "key_fraction * instances_per_bag must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.positive_bag_fraction) {
            return Err(Error::Config(
                "positive_bag_fraction must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn keys_per_positive_bag(&self) -> usize {
        (self.key_fraction * self.instances_per_bag as f64).round() as usize
    }
}

/// Which split a bag belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Bag {
    /// [n, input_dim]
    pub instances: Tensor,
    /// Hidden per-instance labels (1 = key).
    pub instance_labels: Vec<u8>,
    pub label: u8,
    pub split: Split,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.instance_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Bag>,
    pub val: Vec<Bag>,
    pub test: Vec<Bag>,
    pub input_dim: usize,
    pub spec: BagSpec,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Bag] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

// ── Synthetic pool ──────────────────────────────────────────────────

/// Regeneration floor for class-mean separation. Random means on the
/// radius-3 sphere occasionally land close together; redrawing until the
/// minimum pairwise distance clears this keeps per-instance classes
/// distinguishable against the unit-covariance noise (and comfortably
/// above the documented > 2 invariant).
const MIN_MEAN_SEPARATION: f64 = 4.0;

/// Class-conditional Gaussian pool: one mean per class on a radius-3
/// sphere, unit covariance. Means are redrawn (bumping the substream
/// index) until all pairwise distances exceed [`MIN_MEAN_SEPARATION`].
pub fn make_synthetic_pool(
    seed: u64,
    n_classes: usize,
    input_dim: usize,
    samples_per_class: usize,
) -> Result<InstancePool> {
    if n_classes < 2 {
        return Err(Error::Config("need at least two classes".into()));
    }
    if samples_per_class == 0 {
        return Err(Error::EmptyPool);
    }

    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    for attempt in 0..256u64 {
        let mut rng = substream(seed, "pool-means", attempt);
        let means: Vec<Vec<f64>> = (0..n_classes)
            .map(|_| unit_sphere(&mut rng, input_dim, 3.0))
            .collect();
        let sep = min_pairwise_distance(&means);
        if best.as_ref().is_none_or(|(b, _)| sep > *b) {
            best = Some((sep, means));
        }
        if sep > MIN_MEAN_SEPARATION {
            break;
        }
    }
    // Low dimensions may never clear the floor; keep the best draw seen.
    let means = best.expect("at least one draw").1;

    let mut rng = substream(seed, "pool-noise", 0);
    let n = n_classes * samples_per_class;
    let mut data = Vec::with_capacity(n * input_dim);
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..samples_per_class {
            for &m in mean {
                let noise: f64 = rng.sample(StandardNormal);
                data.push(m + noise);
            }
            labels.push(class as u8);
        }
    }
    Ok(InstancePool {
        features: Tensor::new(vec![n, input_dim], data)?,
        labels,
    })
}

fn unit_sphere(rng: &mut Rng, dim: usize, radius: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x * radius / norm).collect();
        }
    }
}

fn min_pairwise_distance(means: &[Vec<f64>]) -> f64 {
    let mut min = f64::INFINITY;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            let d: f64 = means[i]
                .iter()
                .zip(&means[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            min = min.min(d);
        }
    }
    min
}

// ── IDX files ───────────────────────────────────────────────────────

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_be_u32(bytes: &[u8], offset: &mut usize, path: &Path) -> Result<u32> {
    if *offset + 4 > bytes.len() {
        return Err(Error::Truncated {
            path: path.display().to_string(),
            offset: *offset,
            needed: *offset + 4 - bytes.len(),
        });
    }
    let v = u32::from_be_bytes(bytes[*offset..*offset + 4].try_into().unwrap());
    *offset += 4;
    Ok(v)
}

/// Loads up to `limit` instances from a pair of IDX files (the standard
/// handwritten-digit layout: big-endian headers, one byte per pixel or
/// label). Pixels are scaled to [0, 1].
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: usize) -> Result<InstancePool> {
    if limit == 0 {
        return Err(Error::EmptyPool);
    }

    let img_bytes = fs::read(images_path)?;
    let mut off = 0;
    let magic = read_be_u32(&img_bytes, &mut off, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxMagic {
            path: images_path.display().to_string(),
            found: magic,
            expected: IDX_IMAGES_MAGIC,
        });
    }
    let n_images = read_be_u32(&img_bytes, &mut off, images_path)? as usize;
    let rows = read_be_u32(&img_bytes, &mut off, images_path)? as usize;
    let cols = read_be_u32(&img_bytes, &mut off, images_path)? as usize;
    let dim = rows * cols;
    let take = n_images.min(limit);
    let needed = take * dim;
    if off + needed > img_bytes.len() {
        return Err(Error::Truncated {
            path: images_path.display().to_string(),
            offset: img_bytes.len(),
            needed: off + needed - img_bytes.len(),
        });
    }

    let lbl_bytes = fs::read(labels_path)?;
    let mut loff = 0;
    let lmagic = read_be_u32(&lbl_bytes, &mut loff, labels_path)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::IdxMagic {
            path: labels_path.display().to_string(),
            found: lmagic,
            expected: IDX_LABELS_MAGIC,
        });
    }
    let n_labels = read_be_u32(&lbl_bytes, &mut loff, labels_path)? as usize;
    if n_labels != n_images {
        return Err(Error::Format(format!(
            "image/label count mismatch: {n_images} images vs {n_labels} labels"
        )));
    }
    if loff + take > lbl_bytes.len() {
        return Err(Error::Truncated {
            path: labels_path.display().to_string(),
            offset: lbl_bytes.len(),
            needed: loff + take - lbl_bytes.len(),
        });
    }

    let data: Vec<f64> = img_bytes[off..off + needed]
        .iter()
        .map(|&b| b as f64 / 255.0)
        .collect();
    let labels = lbl_bytes[loff..loff + take].to_vec();
    Ok(InstancePool {
        features: Tensor::new(vec![take, dim], data)?,
        labels,
    })
}

// ── Bag construction ────────────────────────────────────────────────

struct SplitIndices {
    keys: Vec<usize>,
    non_keys: Vec<usize>,
}

/// Builds train/val/test bags from disjoint partitions of the pool.
///
/// Within a bag every pool item appears at most once; items may recur
/// across bags of the same split. Positive bags hold exactly
/// `round(key_fraction * instances_per_bag)` key-class items, negative
/// bags hold none.
pub fn build_bags(pool: &InstancePool, spec: &BagSpec) -> Result<Dataset> {
    spec.validate()?;
    if pool.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut rng = substream(spec.seed, "bags", 0);

    // Disjoint pool partition, proportional to split bag counts.
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    indices.shuffle(&mut rng);
    let total_bags = spec.n_train_bags + spec.n_val_bags + spec.n_test_bags;
    let n_train = pool.len() * spec.n_train_bags / total_bags;
    let n_val = pool.len() * spec.n_val_bags / total_bags;
    let parts = [
        (Split::Train, &indices[..n_train]),
        (Split::Val, &indices[n_train..n_train + n_val]),
        (Split::Test, &indices[n_train + n_val..]),
    ];

    let keys_per_pos = spec.keys_per_positive_bag();
    let mut dataset = Dataset {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        input_dim: pool.input_dim(),
        spec: spec.clone(),
    };

    for (split, part) in parts {
        let si = SplitIndices {
            keys: part
                .iter()
                .copied()
                .filter(|&i| pool.labels[i] == spec.key_class)
                .collect(),
            non_keys: part
                .iter()
                .copied()
                .filter(|&i| pool.labels[i] != spec.key_class)
                .collect(),
        };
        let n_bags = match split {
            Split::Train => spec.n_train_bags,
            Split::Val => spec.n_val_bags,
            Split::Test => spec.n_test_bags,
        };
        let n_pos = (n_bags as f64 * spec.positive_bag_fraction).round() as usize;
        if si.keys.len() < keys_per_pos && n_pos > 0 {
            return Err(Error::InsufficientPool {
                split: split.name(),
                what: "key instances",
                needed: keys_per_pos,
                available: si.keys.len(),
            });
        }
        if si.non_keys.len() < spec.instances_per_bag {
            return Err(Error::InsufficientPool {
                split: split.name(),
                what: "non-key instances",
                needed: spec.instances_per_bag,
                available: si.non_keys.len(),
            });
        }
        let bags = dataset_split_mut(&mut dataset, split);
        for b in 0..n_bags {
            let positive = b < n_pos;
            bags.push(sample_bag(pool, spec, &si, split, positive, &mut rng)?);
        }
        bags.shuffle(&mut rng);
    }
    Ok(dataset)
}

fn dataset_split_mut(d: &mut Dataset, split: Split) -> &mut Vec<Bag> {
    match split {
        Split::Train => &mut d.train,
        Split::Val => &mut d.val,
        Split::Test => &mut d.test,
    }
}

fn sample_distinct(from: &[usize], count: usize, rng: &mut Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, from.len(), count)
        .into_iter()
        .map(|i| from[i])
        .collect()
}

fn sample_bag(
    pool: &InstancePool,
    spec: &BagSpec,
    si: &SplitIndices,
    split: Split,
    positive: bool,
    rng: &mut Rng,
) -> Result<Bag> {
    let n = spec.instances_per_bag;
    let keys = if positive {
        spec.keys_per_positive_bag()
    } else {
        0
    };
    let mut chosen = sample_distinct(&si.keys, keys, rng);
    chosen.extend(sample_distinct(&si.non_keys, n - keys, rng));
    chosen.shuffle(rng);

    let dim = pool.input_dim();
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for &i in &chosen {
        data.extend_from_slice(pool.features.row(i));
        labels.push((pool.labels[i] == spec.key_class) as u8);
    }
    let label = bag_label(&labels)?;
    debug_assert_eq!(label, positive as u8);
    Ok(Bag {
        instances: Tensor::new(vec![n, dim], data)?,
        instance_labels: labels,
        label,
        split,
    })
}

// ── Dataset directory format ────────────────────────────────────────
//
// One file per split (`train.bags`, `val.bags`, `test.bags`): little-endian
// u32 bag count, then per bag u32 n, u32 dim, u32 label, n instance-label
// bytes, n*dim f64 features. `manifest.txt` echoes the generation parameters as key=value
// lines.

fn write_split(path: &Path, bags: &[Bag]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&(bags.len() as u32).to_le_bytes());
    for bag in bags {
        buf.extend_from_slice(&(bag.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(bag.instances.cols() as u32).to_le_bytes());
        buf.extend_from_slice(&(bag.label as u32).to_le_bytes());
        buf.extend_from_slice(&bag.instance_labels);
        for v in bag.instances.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

fn read_split(path: &Path, split: Split) -> Result<Vec<Bag>> {
    let bytes = fs::read(path)?;
    let mut off = 0;
    let take_u32 = |off: &mut usize| -> Result<u32> {
        if *off + 4 > bytes.len() {
            return Err(Error::Truncated {
                path: path.display().to_string(),
                offset: *off,
                needed: *off + 4 - bytes.len(),
            });
        }
        let v = u32::from_le_bytes(bytes[*off..*off + 4].try_into().unwrap());
        *off += 4;
        Ok(v)
    };
    let count = take_u32(&mut off)? as usize;
    let mut bags = Vec::with_capacity(count);
    for _ in 0..count {
        let n = take_u32(&mut off)? as usize;
        let dim = take_u32(&mut off)? as usize;
        let label = take_u32(&mut off)? as u8;
        let need = n + n * dim * 8;
        if off + need > bytes.len() {
            return Err(Error::Truncated {
                path: path.display().to_string(),
                offset: off,
                needed: off + need - bytes.len(),
            });
        }
        let instance_labels = bytes[off..off + n].to_vec();
        off += n;
        let data: Vec<f64> = bytes[off..off + n * dim * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        off += n * dim * 8;
        bags.push(Bag {
            instances: Tensor::new(vec![n, dim], data)?,
            instance_labels,
            label,
            split,
        });
    }
    Ok(bags)
}

impl Dataset {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_split(&dir.join("train.bags"), &self.train)?;
        write_split(&dir.join("val.bags"), &self.val)?;
        write_split(&dir.join("test.bags"), &self.test)?;
        let mut m = fs::File::create(dir.join("manifest.txt"))?;
        writeln!(m, "[dataset]")?;
        writeln!(m, "seed = {}", self.spec.seed)?;
        writeln!(m, "n_train_bags = {}", self.spec.n_train_bags)?;
        writeln!(m, "n_val_bags = {}", self.spec.n_val_bags)?;
        writeln!(m, "n_test_bags = {}", self.spec.n_test_bags)?;
        writeln!(m, "instances_per_bag = {}", self.spec.instances_per_bag)?;
        writeln!(m, "key_fraction = {}", self.spec.key_fraction)?;
        writeln!(m, "key_class = {}", self.spec.key_class)?;
        writeln!(
            m,
            "positive_bag_fraction = {}",
            self.spec.positive_bag_fraction
        )?;
        writeln!(m, "input_dim = {}", self.input_dim)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let train = read_split(&dir.join("train.bags"), Split::Train)?;
        let val = read_split(&dir.join("val.bags"), Split::Val)?;
        let test = read_split(&dir.join("test.bags"), Split::Test)?;
        let manifest = fs::read_to_string(dir.join("manifest.txt"))?;
        let mut spec = BagSpec::default();
        let mut input_dim = train.first().map_or(0, |b| b.instances.cols());
        for line in manifest.lines() {
            let line = line.trim();
            let Some((key, value)) = line.split_once('=') else {
                continue;
            };
            let (key, value) = (key.trim(), value.trim());
            let parse = |v: &str| -> Result<usize> {
                v.parse()
                    .map_err(|_| Error::Format(format!("bad manifest value for {key}: {v}")))
            };
            match key {
                "seed" => {
                    spec.seed = value
                        .parse()
                        .map_err(|_| Error::Format(format!("bad manifest seed: {value}")))?
                }
                "n_train_bags" => spec.n_train_bags = parse(value)?,
                "n_val_bags" => spec.n_val_bags = parse(value)?,
                "n_test_bags" => spec.n_test_bags = parse(value)?,
                "instances_per_bag" => spec.instances_per_bag = parse(value)?,
                "key_fraction" => {
                    spec.key_fraction = value
                        .parse()
                        .map_err(|_| Error::Format(format!("bad key_fraction: {value}")))?
                }
                "key_class" => spec.key_class = parse(value)? as u8,
                "positive_bag_fraction" => {
                    spec.positive_bag_fraction = value
                        .parse()
                        .map_err(|_| Error::Format(format!("bad positive_bag_fraction: {value}")))?
                }
                "input_dim" => input_dim = parse(value)?,
                _ => {}
            }
        }
        Ok(Dataset {
            train,
            val,
            test,
            input_dim,
            spec,
        })
    }
}
