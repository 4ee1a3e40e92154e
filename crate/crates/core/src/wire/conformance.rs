//! Checks for other implementations of the protocol: frozen byte fixtures,
//! and a randomized comparison of a server hosting the negating mock model
//! against the same model evaluated in-process.

use std::path::Path;

use super::{decode, encode, EvalItem, EvalRequest, EvalResponse, Message, WireMessage, WireTensor};
use crate::backend::{F32Boundary, VelocityBatch, VelocityField, VelocityRequest};
use crate::condition::ConditionPair;
use crate::error::{Error, Result};
use crate::grid::TimestepGrid;
use crate::guidance::{GuidanceWeights, Variant};
use crate::latent::{Latent, NormalStream, Seed};
use crate::sampler::{euler_sample, SampleOptions};

pub const FIXTURE_NAMES: [&str; 3] = ["hello.bin", "eval_request.bin", "eval_response.bin"];

/// The mock served model: `v(z, t, c) = −z` for every condition.
#[derive(Debug, Clone, Copy, Default)]
pub struct NegatedEcho;

impl VelocityField for NegatedEcho {
    fn evaluate(&self, batch: &VelocityBatch) -> Result<Vec<Latent>> {
        Ok(batch.requests().iter().map(|r| r.latent.map(|x| -x)).collect())
    }
}

fn fixture_tensor() -> WireTensor {
    WireTensor { frames: 2, dims: 3, data: vec![0.0, -1.0, 0.5, 0.25, 1.5, -2.0] }
}

/// The canonical frames, in [`FIXTURE_NAMES`] order.
pub fn golden_fixtures() -> Vec<(&'static str, Vec<u8>)> {
    let request = EvalRequest {
        t: 0.5,
        items: vec![EvalItem { video: "dog_video".into(), text: "engine".into(), tensor: fixture_tensor() }],
    };
    let mut negated = fixture_tensor();
    negated.data.iter_mut().for_each(|x| *x = -*x);
    let messages = [
        WireMessage::new(0, Message::Hello),
        WireMessage::new(1, Message::EvalRequest(request)),
        WireMessage::new(1, Message::EvalResponse(EvalResponse { items: vec![negated] })),
    ];
    FIXTURE_NAMES.into_iter().zip(messages.iter().map(|m| encode(m).expect("fixtures encode"))).collect()
}

/// Writes the canonical fixtures into `dir`.
pub fn write_fixtures(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in golden_fixtures() {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

/// Checks that each fixture in `dir` decodes, re-encodes to the same bytes
/// and equals the canonical frame.
pub fn check_fixtures(dir: &Path) -> Result<()> {
    for (name, golden) in golden_fixtures() {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let msg = decode(&bytes).map_err(|e| Error::Protocol(format!("{name}: {e}")))?;
        if encode(&msg)? != bytes {
            return Err(Error::Protocol(format!("{name}: re-encoding changes the bytes")));
        }
        if bytes != golden {
            return Err(Error::Protocol(format!("{name}: differs from the canonical frame")));
        }
    }
    Ok(())
}

const IDS: [Option<&str>; 3] = [None, Some("dog_video"), Some("engine")];

fn pick<T: Copy>(rng: &mut NormalStream, xs: &[T]) -> T {
    xs[((rng.uniform() * xs.len() as f64) as usize).min(xs.len() - 1)]
}

fn random_batch(rng: &mut NormalStream) -> Result<VelocityBatch> {
    let frames = pick(rng, &[1, 2, 5, 16]);
    let dims = pick(rng, &[2, 3, 7]);
    let t = rng.uniform();
    let n = pick(rng, &[1, 2, 3, 4]);
    let requests = (0..n)
        .map(|_| {
            let data = (0..frames * dims).map(|_| 3.0 * rng.next_normal()).collect();
            let cond = ConditionPair::from_ids(pick(rng, &IDS), pick(rng, &IDS));
            Ok(VelocityRequest { latent: Latent::from_vec(frames, dims, data)?, t, cond })
        })
        .collect::<Result<Vec<_>>>()?;
    VelocityBatch::new(requests)
}

fn same_bits(a: &Latent, b: &Latent) -> bool {
    a.shape() == b.shape() && a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Compares `remote`, which must be serving [`NegatedEcho`], against the
/// in-process model behind an `f32` boundary: `runs` random batches and
/// `runs` full guided trajectories, all bit for bit.
pub fn echo_equivalence(remote: &dyn VelocityField, runs: usize, seed: Seed) -> Result<()> {
    let local = F32Boundary::new(NegatedEcho);
    let mut rng = NormalStream::new(seed);
    for run in 0..runs {
        let batch = random_batch(&mut rng)?;
        let (got, want) = (remote.evaluate(&batch)?, local.evaluate(&batch)?);
        if got.len() != want.len() || !got.iter().zip(&want).all(|(a, b)| same_bits(a, b)) {
            return Err(Error::Protocol(format!("batch {run}: served velocities differ from the mock model")));
        }
    }
    let grid = TimestepGrid::uniform(10)?;
    for run in 0..runs {
        let schedule = Variant::Counterflow.schedule("dog_video", "engine", "dog_bark", GuidanceWeights::default(), 6);
        let seed = Seed(seed.0.wrapping_add(run as u64));
        let trajectory = |b: &dyn VelocityField| {
            let opts = SampleOptions { endpoint_only: false, trace: None };
            euler_sample(b, &schedule, &grid, (4, 3), seed, opts)
        };
        let (got, want) = (trajectory(remote)?, trajectory(&local)?);
        if !got.states.iter().zip(&want.states).all(|(a, b)| same_bits(a, b)) {
            return Err(Error::Protocol(format!("trajectory {run}: served model diverges from the mock model")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_round_trip_and_are_stable() {
        let a = golden_fixtures();
        assert_eq!(a, golden_fixtures());
        assert_eq!(a[0].1.len(), 17);
        for (_, bytes) in &a {
            assert_eq!(&encode(&decode(bytes).unwrap()).unwrap(), bytes);
        }
    }

    #[test]
    fn fixture_dir_check() {
        let dir = tempfile::tempdir().unwrap();
        write_fixtures(dir.path()).unwrap();
        check_fixtures(dir.path()).unwrap();
        let mut bytes = std::fs::read(dir.path().join("eval_request.bin")).unwrap();
        *bytes.last_mut().unwrap() ^= 1;
        std::fs::write(dir.path().join("eval_request.bin"), bytes).unwrap();
        let e = check_fixtures(dir.path()).unwrap_err();
        assert!(e.to_string().contains("eval_request.bin"), "{e}");
    }

    #[test]
    fn in_process_model_is_equivalent_to_itself_only() {
        echo_equivalence(&F32Boundary::new(NegatedEcho), 5, Seed(1)).unwrap();
        assert!(echo_equivalence(&crate::backend::ZeroField, 5, Seed(1)).is_err());
        // Without the f32 boundary the comparison is no longer bit-exact.
        assert!(echo_equivalence(&NegatedEcho, 5, Seed(1)).is_err());
    }
}
