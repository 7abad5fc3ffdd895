//! Dense f32 tensors with a dynamic reverse-mode tape.
//!
//! Every op that has at least one gradient-tracking input records a node
//! holding its parents and a backward closure. `backward` walks the
//! recorded graph once in reverse topological order and accumulates
//! gradients into the tracking leaves. Tensors are immutable; parameters
//! are updated by building fresh leaves.

mod conv;
mod ops;

pub use conv::{conv2d, conv2d_raw};
pub use ops::*;

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("dimension error in {op}: {msg}")]
    Dimension { op: &'static str, msg: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
}

pub type Result<T> = std::result::Result<T, TensorError>;

pub(crate) fn dim_err(op: &'static str, msg: impl Into<String>) -> TensorError {
    TensorError::Dimension { op, msg: msg.into() }
}

/// Element types the raw (tape-free) kernels are generic over.
pub trait Real:
    Copy
    + Default
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
{
    const ONE: Self;
    const HALF: Self;
}

impl Real for f32 {
    const ONE: Self = 1.0;
    const HALF: Self = 0.5;
}

impl Real for f64 {
    const ONE: Self = 1.0;
    const HALF: Self = 0.5;
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);
static DETECT_ANOMALY: AtomicBool = AtomicBool::new(cfg!(debug_assertions));

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Toggle the per-op finiteness check. On by default in debug builds.
pub fn set_detect_anomaly(enabled: bool) {
    DETECT_ANOMALY.store(enabled, Ordering::Relaxed);
}

pub fn detect_anomaly() -> bool {
    DETECT_ANOMALY.load(Ordering::Relaxed)
}

/// Runs `f` with graph recording disabled on the current thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Gradient function of a recorded op: maps the output gradient to one
/// optional gradient per parent (None for parents that do not track).
pub(crate) type BackwardFn = Box<dyn Fn(&[f32]) -> Vec<Option<Vec<f32>>> + Send + Sync>;

struct Node {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f32>>>,
    node: Option<Node>,
}

/// Reference-counted immutable tensor. Cloning is cheap.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.0.shape);
        if self.numel() <= 16 {
            d.field("data", &self.0.data);
        }
        d.field("requires_grad", &self.0.requires_grad).finish()
    }
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(dim_err(
                "new",
                format!("shape {shape:?} holds {n} values, got {}", data.len()),
            ));
        }
        Ok(Self::raw(shape, data, false, None))
    }

    /// A gradient-tracking leaf.
    pub fn param(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(Self::raw(t.shape().to_vec(), t.into_data(), true, None))
    }

    pub fn scalar(v: f32) -> Self {
        Self::raw(Vec::new(), vec![v], false, None)
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::raw(shape, vec![0.0; n], false, None)
    }

    pub fn full(shape: impl Into<Vec<usize>>, v: f32) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Self::raw(shape, vec![v; n], false, None)
    }

    /// Standard-normal samples.
    pub fn randn<R: rand::Rng + ?Sized>(shape: impl Into<Vec<usize>>, rng: &mut R) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| rand_distr::Distribution::<f32>::sample(&rand_distr::StandardNormal, rng))
            .collect();
        Self::raw(shape, data, false, None)
    }

    fn raw(shape: Vec<usize>, data: Vec<f32>, requires_grad: bool, node: Option<Node>) -> Self {
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node,
        }))
    }

    /// Builds the result of an op, recording a node when any parent tracks
    /// gradients and recording is enabled.
    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        data: Vec<f32>,
        parents: &[&Tensor],
        backward: impl Fn(&[f32]) -> Vec<Option<Vec<f32>>> + Send + Sync + 'static,
    ) -> Result<Self> {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        if detect_anomaly() && data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { op });
        }
        let track = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !track {
            return Ok(Self::raw(shape, data, false, None));
        }
        let node = Node {
            op,
            parents: parents.iter().map(|p| (*p).clone()).collect(),
            backward: Box::new(backward),
        };
        Ok(Self::raw(shape, data, true, Some(node)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Name of the op that produced this tensor, if it was recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    pub fn item(&self) -> Result<f32> {
        if self.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    /// Copy of the data, detached from any graph.
    pub fn detach(&self) -> Tensor {
        Self::raw(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    pub fn into_data(self) -> Vec<f32> {
        match Arc::try_unwrap(self.0) {
            Ok(inner) => inner.data,
            Err(arc) => arc.data.clone(),
        }
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().unwrap() = None;
    }

    /// Returns an error when any value is NaN or infinite.
    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.0.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    /// Reverse-mode sweep from a scalar loss. Gradients of tracking leaves
    /// accumulate until [`Tensor::zero_grad`] is called.
    pub fn backward(&self) -> Result<()> {
        if !self.0.shape.is_empty() {
            return Err(TensorError::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                self.0.shape
            )));
        }
        if !self.requires_grad() {
            return Err(TensorError::Contract(
                "backward() on a tensor that is not part of a recorded graph".into(),
            ));
        }
        let order = self.topo_order();
        let mut grads: HashMap<u64, Vec<f32>> = HashMap::new();
        grads.insert(self.0.id, vec![1.0]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.0.id) else {
                continue;
            };
            match &t.0.node {
                None => {
                    if t.requires_grad() {
                        let mut slot = t.0.grad.lock().unwrap();
                        match slot.as_mut() {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                            None => *slot = Some(g),
                        }
                    }
                }
                Some(node) => {
                    let parent_grads = (node.backward)(&g);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (p, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel(), "grad shape from {}", node.op);
                        match grads.get_mut(&p.0.id) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(p.0.id, pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order DFS over tracking tensors; each node appears once.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.0.id) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for p in &node.parents {
                    if p.requires_grad() && !visited.contains(&p.0.id) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}
