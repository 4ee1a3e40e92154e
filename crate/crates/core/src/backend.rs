//! The velocity-field interface shared by the analytic and remote backends.

use crate::condition::ConditionPair;
use crate::error::{Error, Result};
use crate::latent::Latent;

#[derive(Debug, Clone, PartialEq)]
pub struct VelocityRequest {
    pub latent: Latent,
    pub t: f64,
    pub cond: ConditionPair,
}

/// Requests evaluated together; all share one latent shape and one `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityBatch {
    requests: Vec<VelocityRequest>,
}

impl VelocityBatch {
    pub fn new(requests: Vec<VelocityRequest>) -> Result<Self> {
        let first = requests.first().ok_or_else(|| Error::Parameter("empty velocity batch".into()))?;
        let (shape, t) = (first.latent.shape(), first.t);
        if !t.is_finite() {
            return Err(Error::Parameter(format!("non-finite time {t}")));
        }
        for r in &requests[1..] {
            if r.latent.shape() != shape {
                return Err(Error::Shape(format!("batch mixes shapes {:?} and {:?}", shape, r.latent.shape())));
            }
            if r.t.to_bits() != t.to_bits() {
                return Err(Error::Parameter(format!("batch mixes times {t} and {}", r.t)));
            }
        }
        Ok(Self { requests })
    }

    /// One latent evaluated under several conditions.
    pub fn shared(latent: &Latent, t: f64, conds: impl IntoIterator<Item = ConditionPair>) -> Result<Self> {
        Self::new(conds.into_iter().map(|cond| VelocityRequest { latent: latent.clone(), t, cond }).collect())
    }

    pub fn requests(&self) -> &[VelocityRequest] {
        &self.requests
    }

    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }

    pub fn t(&self) -> f64 {
        self.requests[0].t
    }
}

/// Whether a backend tolerates concurrent `evaluate` calls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Concurrent,
    SingleThreaded,
}

/// A conditional velocity field `v(z, c_vid, c_txt, t)`.
///
/// Implementations must be pure: the same batch always yields the same
/// velocities, one per request and in request order.
pub trait VelocityField: Send + Sync {
    fn evaluate(&self, batch: &VelocityBatch) -> Result<Vec<Latent>>;

    fn access(&self) -> Access {
        Access::Concurrent
    }
}

impl<B: VelocityField + ?Sized> VelocityField for &B {
    fn evaluate(&self, batch: &VelocityBatch) -> Result<Vec<Latent>> {
        (**self).evaluate(batch)
    }
    fn access(&self) -> Access {
        (**self).access()
    }
}

impl<B: VelocityField + ?Sized> VelocityField for Box<B> {
    fn evaluate(&self, batch: &VelocityBatch) -> Result<Vec<Latent>> {
        (**self).evaluate(batch)
    }
    fn access(&self) -> Access {
        (**self).access()
    }
}

impl<B: VelocityField + ?Sized> VelocityField for std::sync::Arc<B> {
    fn evaluate(&self, batch: &VelocityBatch) -> Result<Vec<Latent>> {
        (**self).evaluate(batch)
    }
    fn access(&self) -> Access {
        (**self).access()
    }
}

/// Backend defined by a closure evaluated request by request.
pub struct FnField<F> {
    f: F,
}

impl<F> FnField<F>
where
    F: Fn(&Latent, f64, &ConditionPair) -> Result<Latent> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> VelocityField for FnField<F>
where
    F: Fn(&Latent, f64, &ConditionPair) -> Result<Latent> + Send + Sync,
{
    fn evaluate(&self, batch: &VelocityBatch) -> Result<Vec<Latent>> {
        batch.requests().iter().map(|r| (self.f)(&r.latent, r.t, &r.cond)).collect()
    }
}

/// `v ≡ 0` for every condition.
pub struct ZeroField;

impl VelocityField for ZeroField {
    fn evaluate(&self, batch: &VelocityBatch) -> Result<Vec<Latent>> {
        batch.requests().iter().map(|r| Latent::zeros(r.latent.frames(), r.latent.dims())).collect()
    }
}

/// Rounds latents to `f32` on the way in and velocities on the way out,
/// reproducing in-process exactly what a wire round trip does.
pub struct F32Boundary<B> {
    inner: B,
}

impl<B: VelocityField> F32Boundary<B> {
    pub fn new(inner: B) -> Self {
        Self { inner }
    }
}

pub fn round_f32(latent: &Latent) -> Latent {
    latent.map(|x| x as f32 as f64)
}

impl<B: VelocityField> VelocityField for F32Boundary<B> {
    fn evaluate(&self, batch: &VelocityBatch) -> Result<Vec<Latent>> {
        let rounded = VelocityBatch::new(
            batch
                .requests()
                .iter()
                .map(|r| VelocityRequest { latent: round_f32(&r.latent), t: r.t, cond: r.cond.clone() })
                .collect(),
        )?;
        Ok(self.inner.evaluate(&rounded)?.iter().map(round_f32).collect())
    }

    fn access(&self) -> Access {
        self.inner.access()
    }
}

/// Evaluates `latent` under each of `conds`, sending every distinct pair to
/// the backend once and fanning the results back out in input order.
pub fn evaluate_shared<B: VelocityField + ?Sized>(
    backend: &B,
    latent: &Latent,
    t: f64,
    conds: &[ConditionPair],
) -> Result<Vec<Latent>> {
    let mut unique: Vec<&ConditionPair> = Vec::with_capacity(conds.len());
    let slots: Vec<usize> = conds
        .iter()
        .map(|c| match unique.iter().position(|u| *u == c) {
            Some(i) => i,
            None => {
                unique.push(c);
                unique.len() - 1
            }
        })
        .collect();
    let batch = VelocityBatch::shared(latent, t, unique.into_iter().cloned())?;
    let out = backend.evaluate(&batch)?;
    if out.len() != batch.len() {
        return Err(Error::Protocol(format!("backend returned {} velocities for {} requests", out.len(), batch.len())));
    }
    for v in &out {
        latent.ensure_same_shape(v)?;
    }
    Ok(slots.into_iter().map(|i| out[i].clone()).collect())
}
