//! Edit distance, relaxed transcription matching, the junk filter and the
//! end-to-end recognition protocol.

use serde::Serialize;

use super::boxes::{check_unique_ground_truth, greedy_match, BoxRecord, JointEvalReport};
use crate::error::{Error, Result};

/// Characters counted as junk in a recognized string. Frozen so results are reproducible.
pub const JUNK_CHARS: &[char] = &[
    'i', 'l', 'I', // easily hallucinated strokes
    '!', '"', '#', '$', '%', '&', '\'', '(', ')', '*', '+', ',', '-', '.', '/', ':', ';', '<', '=', '>', '?', '@',
    '[', '\\', ']', '^', '_', '`', '{', '|', '}', '~', //
    '¡', '¿', '«', '»', '‹', '›', '‘', '’', '‚', '‛', '“', '”', '„', '‟', '′', '″', //
    '–', '—', '…', '·', '•', '§', '¶', '†', '‡', '‰', '‼', '⁇', '⁈', '⁉', //
    '、', '。', '「', '」', '『', '』', '〈', '〉', '《', '》', '【', '】', '〔', '〕', '！', '？', '，', '．', '：', '；',
];

/// Relaxed match threshold on edit distance over the longer length (strict).
pub const MAX_EDIT_RATIO: f64 = 1.0 / 8.0;

pub fn is_junk_char(c: char) -> bool {
    JUNK_CHARS.contains(&c)
}

/// Levenshtein distance over Unicode scalar values with unit costs.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Case-sensitive; correct when distance / max length is strictly below 1/8.
pub fn relaxed_match(truth: &str, predicted: &str) -> Result<bool> {
    let n = truth.chars().count().max(predicted.chars().count());
    if truth.is_empty() {
        return Err(Error::input("ground-truth transcription is empty"));
    }
    Ok((levenshtein(truth, predicted) as f64) < MAX_EDIT_RATIO * n as f64)
}

/// True when the recognition should be kept. Empty strings, strings with more
/// than half junk characters, and recognitions below `threshold` are rejected.
/// A missing confidence never triggers the threshold.
pub fn junk_filter(text: &str, confidence: Option<f64>, threshold: Option<f64>) -> bool {
    let n = text.chars().count();
    if n == 0 {
        return false;
    }
    let junk = text.chars().filter(|&c| is_junk_char(c)).count();
    if 2 * junk > n {
        return false;
    }
    !matches!((confidence, threshold), (Some(c), Some(t)) if c < t)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct E2eReport {
    /// Detections removed by the junk filter before matching.
    pub rejected: usize,
    #[serde(flatten)]
    pub counts: JointEvalReport,
}

/// Junk-filtered detections are matched to ground truth as in the joint
/// protocol; a match is correct when the transcriptions agree under [`relaxed_match`].
pub fn e2e_eval(detections: &[BoxRecord], ground_truth: &[BoxRecord], threshold: Option<f64>) -> Result<E2eReport> {
    check_unique_ground_truth(ground_truth)?;
    if let Some(g) = ground_truth.iter().find(|g| g.transcription.is_none()) {
        return Err(Error::input(format!("ground-truth box in image {} has no transcription", g.image_id)));
    }
    let kept: Vec<&BoxRecord> = detections
        .iter()
        .filter(|d| junk_filter(d.transcription.as_deref().unwrap_or(""), d.confidence, threshold))
        .collect();
    let gt: Vec<&BoxRecord> = ground_truth.iter().collect();
    let mut correct = 0;
    for (i, j) in greedy_match(&kept, &gt) {
        let pred = kept[i].transcription.as_deref().unwrap_or("");
        if relaxed_match(gt[j].transcription.as_deref().unwrap_or(""), pred)? {
            correct += 1;
        }
    }
    Ok(E2eReport {
        rejected: detections.len() - kept.len(),
        counts: JointEvalReport::from_counts(correct, kept.len() - correct, ground_truth.len() - correct),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[char], b: &[char]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ra)), Some((y, rb))) => {
                let sub = naive(ra, rb) + usize::from(x != y);
                sub.min(naive(ra, b) + 1).min(naive(a, rb) + 1)
            }
        }
    }

    #[test]
    fn levenshtein_matches_recursive_definition() {
        let mut words = vec![String::new()];
        let mut frontier = vec![String::new()];
        for _ in 0..4 {
            frontier = frontier
                .iter()
                .flat_map(|w| ['a', 'b', 'c'].map(|c| format!("{w}{c}")))
                .collect();
            words.extend(frontier.iter().cloned());
        }
        for a in &words {
            for b in words.iter().step_by(3) {
                let (ca, cb): (Vec<char>, Vec<char>) = (a.chars().collect(), b.chars().collect());
                assert_eq!(levenshtein(a, b), naive(&ca, &cb), "{a} {b}");
            }
        }
    }

    #[test]
    fn relaxed_cases() {
        assert!(relaxed_match("RECOGNITION", "RECOGNITlON").unwrap());
        assert!(relaxed_match("same", "same").unwrap());
        assert!(!relaxed_match("CAT", "DOG").unwrap());
        assert!(!relaxed_match("abcdefgh", "abcdefgX").unwrap(), "1/8 exactly is not below 1/8");
        assert!(!relaxed_match("Case", "case").unwrap());
        assert!(relaxed_match("", "x").is_err());
    }

    #[test]
    fn junk_cases() {
        assert!(!junk_filter("IIii", None, None));
        assert!(junk_filter("Hello", None, None));
        assert!(!junk_filter("l!l!", None, None));
        assert!(junk_filter("Ha!!", None, None), "2 of 4 is not more than half");
        assert!(!junk_filter("Hello", Some(0.2), Some(0.5)));
        assert!(junk_filter("Hello", None, Some(0.5)));
    }

    fn rec(t: &str) -> BoxRecord {
        let mut b = BoxRecord::new("img", 0.0, 0.0, 50.0, 10.0, "latin");
        b.transcription = Some(t.into());
        b
    }

    #[test]
    fn e2e_protocol() {
        let r = e2e_eval(&[rec("RECOGNITlON")], &[rec("RECOGNITION")], None).unwrap();
        assert_eq!((r.counts.correct, r.counts.wrong, r.counts.missing, r.rejected), (1, 0, 0, 0));
        let r = e2e_eval(&[rec("IIii"), rec("l!l!")], &[rec("RECOGNITION")], None).unwrap();
        assert_eq!((r.counts.correct, r.counts.wrong, r.counts.missing, r.rejected), (0, 0, 1, 2));
        let r = e2e_eval(&[rec("CAT")], &[rec("DOG")], None).unwrap();
        assert_eq!((r.counts.correct, r.counts.wrong, r.counts.missing), (0, 1, 1));
        let mut bare = rec("x");
        bare.transcription = None;
        assert!(e2e_eval(&[], &[bare], None).is_err());
    }
}
