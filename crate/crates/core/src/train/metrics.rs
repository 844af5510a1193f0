/// Unit-cost Levenshtein distance.
pub fn edit_distance(a: &[char], b: &[char]) -> usize {
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

/// Character error rate of one hypothesis. An empty reference scores 0 if
/// the hypothesis is also empty and 1 otherwise.
pub fn cer(hypothesis: &str, reference: &str) -> f64 {
    let h: Vec<char> = hypothesis.chars().collect();
    let r: Vec<char> = reference.chars().collect();
    if r.is_empty() {
        return if h.is_empty() { 0.0 } else { 1.0 };
    }
    edit_distance(&h, &r) as f64 / r.len() as f64
}

/// Running corpus CER: total edits over total reference length.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CorpusCer {
    pub edits: usize,
    pub reference_chars: usize,
}

impl CorpusCer {
    pub fn add(&mut self, hypothesis: &str, reference: &str) {
        let h: Vec<char> = hypothesis.chars().collect();
        let r: Vec<char> = reference.chars().collect();
        self.edits += edit_distance(&h, &r);
        self.reference_chars += r.len();
    }

    /// Follows [`cer`] when every reference is empty.
    pub fn rate(&self) -> f64 {
        if self.reference_chars == 0 {
            return if self.edits == 0 { 0.0 } else { 1.0 };
        }
        self.edits as f64 / self.reference_chars as f64
    }
}
