//! Synthetic and file-backed training objectives.
//!
//! Every random quantity is drawn from a [`CounterRng`] stream keyed by the
//! task seed, so two tasks built from the same [`TaskSpec`] produce the same
//! initial parameters, the same validation set and the same batch for every
//! step. Batches are indexed by step rather than drawn from a running stream,
//! which makes resuming a run at any step trivial.

use std::path::PathBuf;

use super::dataset::{load_csv, Column, Dataset};
use super::loss::{loss, LossKind, Targets};
use super::net::{Activation, DenseNet};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigh, Matrix};
use crate::rng::CounterRng;
use crate::scalar::Scalar;
use crate::tensor::{ParamMap, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Quadratic,
    LinearRegression,
    TeacherClassification,
    FileDataset,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(Self::Quadratic),
            "linear_regression" => Ok(Self::LinearRegression),
            "teacher_classification" => Ok(Self::TeacherClassification),
            "file_dataset" => Ok(Self::FileDataset),
            other => Err(Error::input(format!(
                "unknown task `{other}` (quadratic|linear_regression|teacher_classification|file_dataset)"
            ))),
        }
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Quadratic => "quadratic",
            Self::LinearRegression => "linear_regression",
            Self::TeacherClassification => "teacher_classification",
            Self::FileDataset => "file_dataset",
        })
    }
}

/// Everything needed to rebuild a task bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub seed: u64,
    /// Quadratic: the parameter is a `rows x cols` matrix.
    pub rows: usize,
    pub cols: usize,
    /// Quadratic: condition number of the Hessian.
    pub condition: f64,
    /// Quadratic: std of additive gradient noise. Regression: label noise.
    pub noise: f64,
    pub input_dim: usize,
    /// Regression targets or classification classes.
    pub output_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub bias: bool,
    pub teacher_hidden: Vec<usize>,
    /// Multiplies the student's initial output layer; 0 gives uniform logits.
    pub head_init_scale: f64,
    pub batch_size: usize,
    pub val_size: usize,
    pub path: Option<PathBuf>,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            kind: TaskKind::Quadratic,
            seed: 0,
            rows: 8,
            cols: 8,
            condition: 1e4,
            noise: 0.0,
            input_dim: 16,
            output_dim: 4,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            bias: true,
            teacher_hidden: vec![32],
            head_init_scale: 1.0,
            batch_size: 32,
            val_size: 512,
            path: None,
        }
    }
}

impl TaskSpec {
    /// Short human-readable identifier, also used to check that two runs
    /// are comparable.
    pub fn descriptor(&self) -> String {
        match self.kind {
            TaskKind::Quadratic => {
                format!("quadratic[{}x{},cond={},noise={}]", self.rows, self.cols, self.condition, self.noise)
            }
            TaskKind::FileDataset => format!(
                "file_dataset[{},hidden={:?}]",
                self.path.as_ref().map_or(String::new(), |p| p.display().to_string()),
                self.hidden
            ),
            kind => format!(
                "{kind}[in={},out={},hidden={:?},noise={}]",
                self.input_dim, self.output_dim, self.hidden, self.noise
            ),
        }
    }
}

/// One step's worth of data.
#[derive(Debug, Clone, PartialEq)]
pub enum Batch<T> {
    Supervised {
        inputs: Matrix<T>,
        targets: Targets<T>,
    },
    /// Additive noise for a closed-form objective's gradient, per parameter.
    Noise(ParamMap<T>),
}

/// A differentiable training objective with a fixed validation set.
pub trait Objective<T: Scalar>: Send + Sync {
    fn spec(&self) -> &TaskSpec;

    fn init_params(&self) -> ParamMap<T>;

    /// Training batch for the 0-based step `step`.
    fn sample(&self, step: u64) -> Batch<T>;

    /// Training loss on `batch` and its gradient.
    fn loss_grad(&self, params: &ParamMap<T>, batch: &Batch<T>) -> Result<(T, ParamMap<T>)>;

    fn val_loss(&self, params: &ParamMap<T>) -> Result<T>;

    /// The network being trained, for tasks that have one.
    fn net(&self) -> Option<&DenseNet<T>> {
        None
    }
}

pub fn make_task<T: Scalar>(spec: &TaskSpec) -> Result<Box<dyn Objective<T>>> {
    Ok(match spec.kind {
        TaskKind::Quadratic => Box::new(QuadraticTask::new(spec)?),
        _ => Box::new(NetTask::new(spec)?),
    })
}

fn gaussian<T: Scalar>(rows: usize, cols: usize, std: f64, rng: &mut CounterRng) -> Matrix<T> {
    Matrix::from_fn(rows, cols, |_, _| T::lit(rng.normal() * std))
}

/// Eigenvectors of a random symmetric matrix: a random orthogonal basis.
fn random_orthogonal<T: Scalar>(d: usize, rng: &mut CounterRng) -> Result<Matrix<T>> {
    let g = gaussian::<T>(d, d, 1.0, rng);
    let mut s = g.add(&g.transpose())?;
    s.symmetrize();
    Ok(sym_eigh(&s)?.q)
}

/// SPD matrix with eigenvalues log-spaced in `[lo, 1]`.
fn conditioned_spd<T: Scalar>(d: usize, lo: f64, rng: &mut CounterRng) -> Result<Matrix<T>> {
    let q = random_orthogonal::<T>(d, rng)?;
    let lambda: Vec<T> = (0..d)
        .map(|i| {
            let t = if d == 1 { 0.0 } else { i as f64 / (d - 1) as f64 };
            T::lit(lo.powf(t))
        })
        .collect();
    let mut a = q.matmul(&Matrix::diag(&lambda))?.matmul_t(&q)?;
    a.symmetrize();
    Ok(a)
}

/// `f(X) = 1/2 tr((X - X*)^T P (X - X*) Q)`, i.e. a quadratic whose Hessian is
/// the Kronecker product `P (x) Q`. Both factors get condition `sqrt(condition)`.
#[derive(Debug, Clone)]
pub struct QuadraticTask<T> {
    spec: TaskSpec,
    pub p: Matrix<T>,
    pub q: Matrix<T>,
    pub optimum: Matrix<T>,
}

pub const QUADRATIC_PARAM: &str = "theta";

impl<T: Scalar> QuadraticTask<T> {
    pub fn new(spec: &TaskSpec) -> Result<Self> {
        if spec.rows == 0 || spec.cols == 0 {
            return Err(Error::input("quadratic task needs positive rows and cols"));
        }
        if !(spec.condition >= 1.0) || !(spec.noise >= 0.0) {
            return Err(Error::input("quadratic task needs condition >= 1 and noise >= 0"));
        }
        let mut rng = CounterRng::new(spec.seed, "quadratic/hessian");
        let lo = 1.0 / spec.condition.sqrt();
        let p = conditioned_spd(spec.rows, lo, &mut rng)?;
        let q = conditioned_spd(spec.cols, lo, &mut rng)?;
        let optimum = gaussian(spec.rows, spec.cols, 1.0, &mut CounterRng::new(spec.seed, "quadratic/optimum"));
        Ok(Self { spec: spec.clone(), p, q, optimum })
    }

    fn residual(&self, params: &ParamMap<T>) -> Result<Matrix<T>> {
        let theta = params
            .get(QUADRATIC_PARAM)
            .ok_or_else(|| Error::contract(format!("missing `{QUADRATIC_PARAM}`")))?
            .to_matrix()?;
        theta.sub(&self.optimum)
    }

    fn value_and_grad(&self, params: &ParamMap<T>) -> Result<(T, Matrix<T>)> {
        let d = self.residual(params)?;
        let grad = self.p.matmul(&d)?.matmul(&self.q)?;
        let value = T::lit(0.5) * d.as_slice().iter().zip(grad.as_slice()).map(|(&a, &b)| a * b).sum::<T>();
        Ok((value, grad))
    }
}

impl<T: Scalar> Objective<T> for QuadraticTask<T> {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn init_params(&self) -> ParamMap<T> {
        let mut rng = CounterRng::new(self.spec.seed, "quadratic/init");
        let theta = gaussian::<T>(self.spec.rows, self.spec.cols, 1.0, &mut rng);
        ParamMap::from([(QUADRATIC_PARAM.to_string(), Tensor::from(theta))])
    }

    fn sample(&self, step: u64) -> Batch<T> {
        let mut rng = CounterRng::indexed(self.spec.seed, "quadratic/noise", step);
        let noise = if self.spec.noise > 0.0 {
            gaussian(self.spec.rows, self.spec.cols, self.spec.noise, &mut rng)
        } else {
            Matrix::zeros(self.spec.rows, self.spec.cols)
        };
        Batch::Noise(ParamMap::from([(QUADRATIC_PARAM.to_string(), Tensor::from(noise))]))
    }

    /// The reported loss is the noiseless objective; noise only enters the gradient.
    fn loss_grad(&self, params: &ParamMap<T>, batch: &Batch<T>) -> Result<(T, ParamMap<T>)> {
        let (value, mut grad) = self.value_and_grad(params)?;
        match batch {
            Batch::Noise(noise) => {
                let n = noise
                    .get(QUADRATIC_PARAM)
                    .ok_or_else(|| Error::contract("noise batch is missing the parameter"))?
                    .to_matrix()?;
                grad = grad.add(&n)?;
            }
            Batch::Supervised { .. } => return Err(Error::contract("quadratic task takes noise batches")),
        }
        Ok((value, ParamMap::from([(QUADRATIC_PARAM.to_string(), Tensor::from(grad))])))
    }

    fn val_loss(&self, params: &ParamMap<T>) -> Result<T> {
        Ok(self.value_and_grad(params)?.0)
    }
}

#[derive(Debug, Clone)]
enum Source<T> {
    LinearTeacher { weight: Matrix<T> },
    NetTeacher(DenseNet<T>),
    File(Dataset),
}

/// A dense network trained on regression or classification data.
#[derive(Debug, Clone)]
pub struct NetTask<T> {
    spec: TaskSpec,
    net: DenseNet<T>,
    loss: LossKind,
    source: Source<T>,
    val_inputs: Matrix<T>,
    val_targets: Targets<T>,
}

impl<T: Scalar> NetTask<T> {
    pub fn new(spec: &TaskSpec) -> Result<Self> {
        if spec.batch_size == 0 {
            return Err(Error::input("batch_size must be positive"));
        }
        let mut spec = spec.clone();
        let (source, loss) = match spec.kind {
            TaskKind::LinearRegression => {
                let mut rng = CounterRng::new(spec.seed, "teacher");
                let std = (1.0 / spec.input_dim as f64).sqrt();
                (
                    Source::LinearTeacher { weight: gaussian(spec.output_dim, spec.input_dim, std, &mut rng) },
                    LossKind::Mse,
                )
            }
            TaskKind::TeacherClassification => {
                let mut rng = CounterRng::new(spec.seed, "teacher");
                let teacher = DenseNet::mlp(
                    spec.input_dim,
                    &spec.teacher_hidden,
                    spec.output_dim,
                    spec.activation,
                    true,
                    &mut rng,
                )?;
                (Source::NetTeacher(teacher), LossKind::SoftmaxCrossEntropy)
            }
            TaskKind::FileDataset => {
                let path = spec.path.clone().ok_or_else(|| Error::input("file_dataset needs a path"))?;
                let ds = load_csv(&path)?;
                if ds.len() < 2 {
                    return Err(Error::input("file dataset needs at least two rows for a train/validation split"));
                }
                spec.input_dim = ds.feature_dim;
                let loss = match ds.classes() {
                    Some(k) => {
                        spec.output_dim = spec.output_dim.max(k).max(2);
                        LossKind::SoftmaxCrossEntropy
                    }
                    None => {
                        spec.output_dim = 1;
                        LossKind::Mse
                    }
                };
                (Source::File(ds), loss)
            }
            TaskKind::Quadratic => return Err(Error::contract("quadratic is not a network task")),
        };
        let mut net = DenseNet::mlp(
            spec.input_dim,
            &spec.hidden,
            spec.output_dim,
            spec.activation,
            spec.bias,
            &mut CounterRng::new(spec.seed, "student/init"),
        )?;
        let head = net.layers.last().expect("non-empty").weight_key();
        let scale = T::lit(spec.head_init_scale);
        let scaled = net.params[&head].map(|w| w * scale);
        net.params.insert(head, scaled);

        let mut task =
            Self { val_inputs: Matrix::zeros(0, 0), val_targets: Targets::Labels(Vec::new()), spec, net, loss, source };
        let (val_inputs, val_targets) = match &task.source {
            Source::File(ds) => {
                let split = (ds.len() * 4).div_ceil(5).min(ds.len() - 1);
                task.rows_of(ds, split..ds.len())
            }
            _ => {
                let mut rng = CounterRng::new(task.spec.seed, "validation");
                task.synthetic(task.spec.val_size.max(1), &mut rng)?
            }
        };
        task.val_inputs = val_inputs;
        task.val_targets = val_targets;
        Ok(task)
    }

    fn train_rows(&self) -> usize {
        match &self.source {
            Source::File(ds) => (ds.len() * 4).div_ceil(5).min(ds.len() - 1),
            _ => 0,
        }
    }

    fn rows_of(&self, ds: &Dataset, rows: impl Iterator<Item = usize> + Clone) -> (Matrix<T>, Targets<T>) {
        let idx: Vec<usize> = rows.collect();
        let d = ds.feature_dim;
        let inputs = Matrix::from_fn(idx.len(), d, |i, j| T::lit(ds.row(idx[i])[j]));
        let targets = match &ds.outputs {
            Column::Targets(t) => Targets::Dense(Matrix::from_fn(idx.len(), 1, |i, _| T::lit(t[idx[i]]))),
            Column::Labels(l) => Targets::Labels(idx.iter().map(|&i| l[i]).collect()),
        };
        (inputs, targets)
    }

    fn synthetic(&self, n: usize, rng: &mut CounterRng) -> Result<(Matrix<T>, Targets<T>)> {
        let x = gaussian::<T>(n, self.spec.input_dim, 1.0, rng);
        let targets = match &self.source {
            Source::LinearTeacher { weight } => {
                let mut y = x.matmul_t(weight)?;
                if self.spec.noise > 0.0 {
                    let noise = T::lit(self.spec.noise);
                    y.map_inplace(|v| v + noise * T::lit(rng.normal()));
                }
                Targets::Dense(y)
            }
            Source::NetTeacher(teacher) => {
                let (logits, _) = teacher.forward(&x)?;
                let labels = (0..n)
                    .map(|i| {
                        let row = logits.row(i);
                        (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
                    })
                    .collect();
                Targets::Labels(labels)
            }
            Source::File(_) => unreachable!("file data is not synthesized"),
        };
        Ok((x, targets))
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    pub fn validation_inputs(&self) -> &Matrix<T> {
        &self.val_inputs
    }
}

impl<T: Scalar> Objective<T> for NetTask<T> {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn init_params(&self) -> ParamMap<T> {
        self.net.params.clone()
    }

    fn sample(&self, step: u64) -> Batch<T> {
        let mut rng = CounterRng::indexed(self.spec.seed, "batch", step);
        let (inputs, targets) = match &self.source {
            Source::File(ds) => {
                let n = self.train_rows() as u64;
                let picks: Vec<usize> = (0..self.spec.batch_size).map(|_| rng.below(n) as usize).collect();
                self.rows_of(ds, picks.into_iter())
            }
            _ => {
                self.synthetic(self.spec.batch_size, &mut rng).expect("teacher dimensions were checked at construction")
            }
        };
        Batch::Supervised { inputs, targets }
    }

    fn loss_grad(&self, params: &ParamMap<T>, batch: &Batch<T>) -> Result<(T, ParamMap<T>)> {
        let Batch::Supervised { inputs, targets } = batch else {
            return Err(Error::contract("network task takes supervised batches"));
        };
        let (out, tape) = self.net.forward_with(params, inputs)?;
        let (value, dout) = loss(&out, targets, self.loss)?;
        let grads = self.net.backward_with(params, &tape, &dout)?;
        Ok((value, grads))
    }

    fn val_loss(&self, params: &ParamMap<T>) -> Result<T> {
        let (out, _) = self.net.forward_with(params, &self.val_inputs)?;
        Ok(loss(&out, &self.val_targets, self.loss)?.0)
    }

    fn net(&self) -> Option<&DenseNet<T>> {
        Some(&self.net)
    }
}
