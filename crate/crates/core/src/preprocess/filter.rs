use crate::corpus::{Encounter, LabelSpace};

/// Drops labels seen in fewer than `k` train documents, then drops documents left without labels.
pub fn filter_min_frequency(train: &[Encounter], k: usize) -> (Vec<Encounter>, LabelSpace) {
    let counts = LabelSpace::count_documents(train);
    let mut kept = Vec::with_capacity(train.len());
    for e in train {
        let codes: Vec<String> = e.codes.iter().filter(|c| counts[*c] >= k).cloned().collect();
        if !codes.is_empty() {
            kept.push(Encounter {
                codes,
                ..e.clone()
            });
        }
    }
    let retained = counts.into_iter().filter(|&(_, n)| n >= k).collect();
    (kept, LabelSpace::from_counts(retained))
}
