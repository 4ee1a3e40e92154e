//! Frame-score replacement metrics.
//!
//! A clip's evidence for a prompt is the maximum of its frame-level detection
//! probabilities. The replacement score of a clip is target evidence minus
//! source evidence, and the success rate over a corpus is the fraction of
//! clips whose score is strictly positive.
//!
//! Frame-score files hold one clip each:
//!
//! ```text
//! clip_7,3,2            <- clip_id,frames,prompts
//! lion_roar,dog_bark    <- prompt ids
//! 0.200000,0.100000     <- one row per frame, 6-decimal fixed
//! 0.900000,0.300000
//! 0.400000,0.500000
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gmm::{classify_identity, SceneRegistry};
use crate::latent::Latent;

#[derive(Debug, Clone, PartialEq)]
pub struct FrameScoreMatrix {
    frames: usize,
    prompt_ids: Vec<String>,
    /// Row-major, `frames × prompts`.
    scores: Vec<f64>,
}

impl FrameScoreMatrix {
    pub fn new(prompt_ids: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("score matrix needs at least one frame".into()));
        }
        if prompt_ids.is_empty() {
            return Err(Error::Shape("score matrix needs at least one prompt".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = prompt_ids.iter().find(|p| !seen.insert(p.as_str())) {
            return Err(Error::Parameter(format!("duplicate prompt id `{dup}`")));
        }
        let p = prompt_ids.len();
        let mut scores = Vec::with_capacity(rows.len() * p);
        for (l, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::Shape(format!("frame {l} has {} scores for {p} prompts", row.len())));
            }
            if let Some(bad) = row.iter().find(|s| !(0.0..=1.0).contains(*s)) {
                return Err(Error::Parameter(format!("score {bad} at frame {l} outside [0, 1]")));
            }
            scores.extend_from_slice(row);
        }
        Ok(Self { frames: rows.len(), prompt_ids, scores })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn prompt_ids(&self) -> &[String] {
        &self.prompt_ids
    }

    pub fn score(&self, frame: usize, prompt: usize) -> f64 {
        self.scores[frame * self.prompt_ids.len() + prompt]
    }

    pub fn column(&self, prompt_id: &str) -> Result<Vec<f64>> {
        let j = self
            .prompt_ids
            .iter()
            .position(|p| p == prompt_id)
            .ok_or_else(|| Error::UnknownPrompt(prompt_id.to_owned()))?;
        Ok((0..self.frames).map(|l| self.score(l, j)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRecord {
    pub clip_id: String,
    pub target_id: String,
    pub source_id: String,
    pub p_target: f64,
    pub p_source: f64,
    pub delta: f64,
}

/// Maximum frame score of one prompt.
pub fn pool_max(m: &FrameScoreMatrix, prompt_id: &str) -> Result<f64> {
    Ok(m.column(prompt_id)?.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

pub fn delta_flam(m: &FrameScoreMatrix, clip_id: &str, target_id: &str, source_id: &str) -> Result<DeltaRecord> {
    if target_id == source_id {
        return Err(Error::Parameter(format!("target and source are both `{target_id}`")));
    }
    let p_target = pool_max(m, target_id)?;
    let p_source = pool_max(m, source_id)?;
    Ok(DeltaRecord {
        clip_id: clip_id.to_owned(),
        target_id: target_id.to_owned(),
        source_id: source_id.to_owned(),
        p_target,
        p_source,
        delta: p_target - p_source,
    })
}

/// Fraction of records with `delta > 0`; a zero delta is a failure.
pub fn positive_ratio(records: &[DeltaRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::Parameter("positive ratio of an empty corpus".into()));
    }
    Ok(records.iter().filter(|r| r.delta > 0.0).count() as f64 / records.len() as f64)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Alignment(format!("need two equal series of length >= 2, got {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Alignment("constant series".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Pearson correlation between the per-frame |energy| of `z` and the video's
/// envelope. Undefined when either series is constant.
pub fn envelope_alignment(reg: &SceneRegistry, z: &Latent, video_id: &str) -> Result<f64> {
    let env = &reg.video(video_id)?.envelope;
    if z.frames() != env.len() {
        return Err(Error::Shape(format!("latent has {} frames, envelope {}", z.frames(), env.len())));
    }
    let energy: Vec<f64> = (0..z.frames()).map(|f| z[(f, 0)].abs()).collect();
    pearson(&energy, env)
}

/// Frame scores of every registered text, one row per frame.
pub fn score_matrix(reg: &SceneRegistry, z: &Latent) -> Result<FrameScoreMatrix> {
    let prompts: Vec<String> = reg.text_ids().map(str::to_owned).collect();
    let rows = (0..reg.frames)
        .map(|f| classify_identity(reg, z, f).map(|p| p.into_values().collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    FrameScoreMatrix::new(prompts, rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipScore {
    pub record: DeltaRecord,
    /// `None` when the correlation is undefined.
    pub alignment: Option<f64>,
}

pub fn score_clip(
    reg: &SceneRegistry,
    z: &Latent,
    clip_id: &str,
    target_id: &str,
    source_id: &str,
    video_id: &str,
) -> Result<ClipScore> {
    let m = score_matrix(reg, z)?;
    let record = delta_flam(&m, clip_id, target_id, source_id)?;
    let alignment = match envelope_alignment(reg, z, video_id) {
        Ok(a) => Some(a),
        Err(Error::Alignment(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(ClipScore { record, alignment })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mean_delta: f64,
    pub positive_ratio: f64,
    pub count: usize,
    /// Clips whose alignment was undefined (or that failed to score).
    pub excluded: usize,
    pub mean_alignment: Option<f64>,
}

pub fn summarize(scores: &[ClipScore]) -> Result<Summary> {
    let records: Vec<DeltaRecord> = scores.iter().map(|s| s.record.clone()).collect();
    let positive_ratio = positive_ratio(&records)?;
    let mean_delta = records.iter().map(|r| r.delta).sum::<f64>() / records.len() as f64;
    let aligned: Vec<f64> = scores.iter().filter_map(|s| s.alignment).collect();
    let mean_alignment = (!aligned.is_empty()).then(|| aligned.iter().sum::<f64>() / aligned.len() as f64);
    Ok(Summary {
        mean_delta,
        positive_ratio,
        count: records.len(),
        excluded: scores.len() - aligned.len(),
        mean_alignment,
    })
}

// ---- files ----

pub fn format_score_file(clip_id: &str, m: &FrameScoreMatrix) -> String {
    let mut out = format!("{clip_id},{},{}\n{}\n", m.frames, m.prompt_ids.len(), m.prompt_ids.join(","));
    for l in 0..m.frames {
        let row: Vec<String> = (0..m.prompt_ids.len()).map(|j| format!("{:.6}", m.score(l, j))).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreFile {
    pub clip_id: String,
    pub matrix: FrameScoreMatrix,
    /// Values outside `[0, 1]` that were clamped on read.
    pub clamped: usize,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

pub fn parse_score_file(src: &str) -> Result<ScoreFile> {
    let mut lines = src.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "missing header line"))?;
    let fields: Vec<&str> = header.split(',').collect();
    let [clip_id, frames, prompts] = fields[..] else {
        return Err(parse_err(1, "header must be `clip_id,frames,prompts`"));
    };
    let clip_id = clip_id.trim();
    if clip_id.is_empty() {
        return Err(parse_err(1, "empty clip id"));
    }
    let frames: usize = frames.trim().parse().map_err(|_| parse_err(1, format!("bad frame count `{frames}`")))?;
    let prompts: usize = prompts.trim().parse().map_err(|_| parse_err(1, format!("bad prompt count `{prompts}`")))?;
    if frames == 0 || prompts == 0 {
        return Err(parse_err(1, "frame and prompt counts must be positive"));
    }
    let (_, ids) = lines.next().ok_or_else(|| parse_err(2, "missing prompt id row"))?;
    let prompt_ids: Vec<String> = ids.split(',').map(|s| s.trim().to_owned()).collect();
    if prompt_ids.len() != prompts || prompt_ids.iter().any(String::is_empty) {
        return Err(parse_err(2, format!("expected {prompts} non-empty prompt ids")));
    }
    let mut clamped = 0;
    let mut rows = Vec::with_capacity(frames.min(1 << 16));
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if rows.len() == frames {
            return Err(parse_err(n, format!("more than {frames} frame rows")));
        }
        let row = line
            .split(',')
            .map(|s| {
                let v: f64 = s.trim().parse().map_err(|_| parse_err(n, format!("bad score `{s}`")))?;
                if v.is_nan() {
                    return Err(parse_err(n, "NaN score"));
                }
                if !(0.0..=1.0).contains(&v) {
                    clamped += 1;
                }
                Ok(v.clamp(0.0, 1.0))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != prompts {
            return Err(parse_err(n, format!("expected {prompts} scores, got {}", row.len())));
        }
        rows.push(row);
    }
    if rows.len() != frames {
        return Err(parse_err(src.lines().count(), format!("expected {frames} frame rows, got {}", rows.len())));
    }
    if clamped > 0 {
        log::warn!("clip {clip_id}: clamped {clamped} scores into [0, 1]");
    }
    let matrix = FrameScoreMatrix::new(prompt_ids, rows).map_err(|e| parse_err(2, e.to_string()))?;
    Ok(ScoreFile { clip_id: clip_id.to_owned(), matrix, clamped })
}

pub fn read_score_file(path: &Path) -> Result<ScoreFile> {
    parse_score_file(&std::fs::read_to_string(path)?)
}

pub const RECORD_HEADER: &str = "clip_id,target_id,source_id,p_target,p_source,delta";

pub fn format_records(records: &[DeltaRecord]) -> String {
    let mut out = String::from(RECORD_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6}",
            r.clip_id, r.target_id, r.source_id, r.p_target, r.p_source, r.delta
        );
    }
    out
}

pub const SUMMARY_HEADER: &str = "mean_delta,positive_ratio,M,excluded_count";

pub fn format_summary(mean_delta: f64, positive_ratio: f64, m: usize, excluded: usize) -> String {
    format!("{SUMMARY_HEADER}\n{mean_delta:.6},{positive_ratio:.6},{m},{excluded}\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_col(tar: &[f64], src: &[f64]) -> FrameScoreMatrix {
        let rows = tar.iter().zip(src).map(|(a, b)| vec![*a, *b]).collect();
        FrameScoreMatrix::new(vec!["tar".into(), "src".into()], rows).unwrap()
    }

    fn rec(delta: f64) -> DeltaRecord {
        DeltaRecord {
            clip_id: "c".into(),
            target_id: "a".into(),
            source_id: "b".into(),
            p_target: 0.0,
            p_source: 0.0,
            delta,
        }
    }

    #[test]
    fn pool_examples() {
        assert_eq!(pool_max(&two_col(&[0.2, 0.9, 0.4], &[0.0; 3]), "tar").unwrap(), 0.9);
        assert_eq!(pool_max(&two_col(&[0.7], &[0.0]), "tar").unwrap(), 0.7);
        assert_eq!(pool_max(&two_col(&[0.0; 4], &[0.5; 4]), "tar").unwrap(), 0.0);
        assert!(matches!(pool_max(&two_col(&[0.1], &[0.1]), "x"), Err(Error::UnknownPrompt(_))));
    }

    #[test]
    fn delta_examples() {
        let m = two_col(&[0.2, 0.9, 0.4], &[0.1, 0.3, 0.5]);
        let r = delta_flam(&m, "c", "tar", "src").unwrap();
        assert_eq!((r.p_target, r.p_source, r.delta), (0.9, 0.5, 0.9 - 0.5));
        assert_eq!(delta_flam(&two_col(&[0.3, 0.6], &[0.3, 0.6]), "c", "tar", "src").unwrap().delta, 0.0);
        assert_eq!(delta_flam(&two_col(&[1.0; 3], &[0.0; 3]), "c", "tar", "src").unwrap().delta, 1.0);
        assert!(matches!(delta_flam(&m, "c", "tar", "tar"), Err(Error::Parameter(_))));
    }

    #[test]
    fn ratio_examples() {
        let rs: Vec<_> = [0.4, -0.1, 0.0, 0.2].into_iter().map(rec).collect();
        assert_eq!(positive_ratio(&rs).unwrap(), 0.5);
        assert_eq!(positive_ratio(&[rec(0.1), rec(1.0)]).unwrap(), 1.0);
        assert_eq!(positive_ratio(&[rec(0.0), rec(-1.0)]).unwrap(), 0.0);
        assert!(positive_ratio(&[]).is_err());
    }

    #[test]
    fn matrix_validation() {
        assert!(FrameScoreMatrix::new(vec!["a".into(), "a".into()], vec![vec![0.1, 0.2]]).is_err());
        assert!(FrameScoreMatrix::new(vec!["a".into()], vec![]).is_err());
        assert!(FrameScoreMatrix::new(vec!["a".into()], vec![vec![1.5]]).is_err());
        assert!(FrameScoreMatrix::new(vec!["a".into()], vec![vec![0.5, 0.5]]).is_err());
    }

    #[test]
    fn alignment_examples() {
        let reg = SceneRegistry::desk();
        let env = reg.video("dog_video").unwrap().envelope.clone();
        let mut z = Latent::zeros(16, 5).unwrap();
        for (f, e) in env.iter().enumerate() {
            z[(f, 0)] = *e;
        }
        assert!((envelope_alignment(&reg, &z, "dog_video").unwrap() - 1.0).abs() < 1e-12);
        for (f, e) in env.iter().enumerate() {
            z[(f, 0)] = 1.0 - e;
        }
        assert!((envelope_alignment(&reg, &z, "dog_video").unwrap() + 1.0).abs() < 1e-12);

        let mut flat = reg.clone();
        flat.videos.get_mut("dog_video").unwrap().envelope = vec![0.5; 16];
        assert!(matches!(envelope_alignment(&flat, &z, "dog_video"), Err(Error::Alignment(_))));
        assert!(envelope_alignment(&reg, &z, "nope").is_err());
    }

    #[test]
    fn score_clip_examples() {
        let reg = SceneRegistry::desk();
        let at = |v: &str, x: &str| Latent::from_vec(16, 5, reg.component_mean(v, x).unwrap()).unwrap();
        let good = score_clip(&reg, &at("dog_video", "engine"), "c", "engine", "dog_bark", "dog_video").unwrap();
        assert!(good.record.delta > 0.0);
        assert!((good.alignment.unwrap() - 1.0).abs() < 1e-12);
        let bad = score_clip(&reg, &at("dog_video", "dog_bark"), "c", "engine", "dog_bark", "dog_video").unwrap();
        assert!(bad.record.delta < 0.0);
        let silent = score_clip(&reg, &Latent::zeros(16, 5).unwrap(), "c", "engine", "dog_bark", "dog_video").unwrap();
        assert!(silent.record.delta.abs() < 1e-12);
        assert_eq!(silent.alignment, None);
    }

    #[test]
    fn score_file_round_trip() {
        let m = two_col(&[0.2, 0.9, 0.4], &[0.1, 0.3, 0.5]);
        let text = format_score_file("clip_7", &m);
        assert_eq!(text, "clip_7,3,2\ntar,src\n0.200000,0.100000\n0.900000,0.300000\n0.400000,0.500000\n");
        let back = parse_score_file(&text).unwrap();
        assert_eq!(back.clip_id, "clip_7");
        assert_eq!(back.matrix, m);
        assert_eq!(back.clamped, 0);
    }

    #[test]
    fn score_file_clamps_and_rejects() {
        let f = parse_score_file("c,2,1\na\n1.200000\n-0.100000\n").unwrap();
        assert_eq!(f.clamped, 2);
        assert_eq!(f.matrix.column("a").unwrap(), vec![1.0, 0.0]);
        for bad in [
            "",
            "c,2\na\n",
            "c,1,1\n",
            "c,1,1\na\nx\n",
            "c,2,1\na\n0.1\n",
            "c,1,1\na\n0.1\n0.2\n",
            "c,1,2\na,a\n0.1,0.2\n",
        ] {
            assert!(parse_score_file(bad).is_err(), "{bad:?}");
        }
        assert!(matches!(parse_score_file("c,1,1\na\nnan\n"), Err(Error::Parse { line: 3, .. })));
    }

    proptest! {
        #[test]
        fn antisymmetric_and_permutation_invariant(
            rows in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..12),
            rot in 0usize..12,
        ) {
            let tar: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let src: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let m = two_col(&tar, &src);
            let ab = delta_flam(&m, "c", "tar", "src").unwrap().delta;
            let ba = delta_flam(&m, "c", "src", "tar").unwrap().delta;
            prop_assert_eq!(ab, -ba);
            let mut perm = rows.clone();
            perm.rotate_left(rot % rows.len());
            perm.reverse();
            let pm = two_col(&perm.iter().map(|r| r.0).collect::<Vec<_>>(), &perm.iter().map(|r| r.1).collect::<Vec<_>>());
            prop_assert_eq!(delta_flam(&pm, "c", "tar", "src").unwrap().delta, ab);
        }

        #[test]
        fn pool_is_monotone(col in prop::collection::vec(0.0f64..=1.0, 1..10), idx in 0usize..10, bump in 0.0f64..=1.0) {
            let i = idx % col.len();
            let before = pool_max(&two_col(&col, &col), "tar").unwrap();
            let mut raised = col.clone();
            raised[i] = raised[i].max(bump);
            prop_assert!(pool_max(&two_col(&raised, &col), "tar").unwrap() >= before);
        }

        #[test]
        fn ratio_bounded_and_order_free(deltas in prop::collection::vec(-1.0f64..1.0, 1..30)) {
            let rs: Vec<_> = deltas.iter().copied().map(rec).collect();
            let r = positive_ratio(&rs).unwrap();
            prop_assert!((0.0..=1.0).contains(&r));
            let mut rev = rs.clone();
            rev.reverse();
            prop_assert_eq!(positive_ratio(&rev).unwrap(), r);
        }

        #[test]
        fn score_file_lossless_at_six_decimals(rows in prop::collection::vec(prop::collection::vec(0u32..=1_000_000, 3), 1..8)) {
            let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|&u| u as f64 / 1e6).collect()).collect();
            let m = FrameScoreMatrix::new(vec!["a".into(), "b".into(), "c".into()], rows).unwrap();
            let text = format_score_file("k", &m);
            let back = parse_score_file(&text).unwrap();
            prop_assert_eq!(format_score_file("k", &back.matrix), text);
            for j in ["a", "b", "c"] {
                prop_assert_eq!(pool_max(&back.matrix, j).unwrap(), pool_max(&m, j).unwrap());
            }
        }
    }

    #[test]
    fn alignment_is_order_sensitive() {
        let reg = SceneRegistry::desk();
        let env = reg.video("engine_video").unwrap().envelope.clone();
        let mut z = Latent::zeros(16, 5).unwrap();
        for (f, e) in env.iter().enumerate() {
            z[(f, 0)] = *e;
        }
        let mut rev = Latent::zeros(16, 5).unwrap();
        for f in 0..16 {
            rev[(f, 0)] = z[(15 - f, 0)];
        }
        let a = envelope_alignment(&reg, &z, "engine_video").unwrap();
        let b = envelope_alignment(&reg, &rev, "engine_video").unwrap();
        assert!(a > b + 0.5);
    }
}
