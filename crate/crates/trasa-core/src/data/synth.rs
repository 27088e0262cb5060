//! Synthetic corpora for desk-scale verification: a first-order markov
//! generator (memorizable structure) and a long-range corpus whose label
//! depends on an item a fixed distance before the session's end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::data::ingest::RawSession;
use crate::error::{Error, Result};

/// Markov generator parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovParams {
    pub n_items: usize,
    pub sessions: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Dirichlet concentration for each transition row; small values give
    /// peaked (easily memorized) rows, 1.0 gives uniform-random rows.
    pub concentration: f64,
    pub seed: u64,
}

impl Default for MarkovParams {
    fn default() -> Self {
        Self {
            n_items: 20,
            sessions: 50,
            min_len: 4,
            max_len: 10,
            concentration: 1.0,
            seed: 0,
        }
    }
}

/// A sampled markov corpus together with its generating matrix
/// (row-major `n×n`, each row a distribution over successor items).
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovCorpus {
    pub sessions: Vec<Vec<usize>>,
    pub transitions: Vec<f64>,
}

/// Sample sessions from a random first-order transition matrix. The first
/// item of each session is uniform, lengths are uniform over
/// `[min_len, max_len]`, and all randomness is seeded.
pub fn markov(p: &MarkovParams) -> Result<MarkovCorpus> {
    if p.n_items < 4 {
        return Err(Error::Config(format!("markov needs ≥ 4 items, got {}", p.n_items)));
    }
    if p.sessions == 0 {
        return Err(Error::Config("markov needs at least one session".into()));
    }
    if p.min_len < 2 || p.min_len > p.max_len {
        return Err(Error::Config(format!(
            "markov length bounds invalid: [{}, {}]",
            p.min_len, p.max_len
        )));
    }
    if !(p.concentration.is_finite() && p.concentration > 0.0) {
        return Err(Error::Config(format!(
            "dirichlet concentration must be positive, got {}",
            p.concentration
        )));
    }

    let n = p.n_items;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    // Dirichlet rows via normalized gamma draws.
    let gamma = Gamma::new(p.concentration, 1.0)
        .map_err(|e| Error::Config(format!("invalid concentration: {e}")))?;
    let mut transitions = vec![0.0f64; n * n];
    for row in transitions.chunks_exact_mut(n) {
        let mut sum = 0.0;
        for v in row.iter_mut() {
            // Guard against zero draws at extreme concentrations.
            *v = gamma.sample(&mut rng).max(f64::MIN_POSITIVE);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }

    let mut sessions = Vec::with_capacity(p.sessions);
    for _ in 0..p.sessions {
        let len = rng.gen_range(p.min_len..=p.max_len);
        let mut session = Vec::with_capacity(len);
        let mut current = rng.gen_range(0..n);
        session.push(current);
        for _ in 1..len {
            let row = &transitions[current * n..(current + 1) * n];
            let mut u: f64 = rng.gen();
            let mut next = n - 1;
            for (j, &p_j) in row.iter().enumerate() {
                if u < p_j {
                    next = j;
                    break;
                }
                u -= p_j;
            }
            session.push(next);
            current = next;
        }
        sessions.push(session);
    }
    Ok(MarkovCorpus { sessions, transitions })
}

/// Long-range generator parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LongRangeParams {
    pub n_items: usize,
    pub sessions: usize,
    /// Length of every session.
    pub length: usize,
    /// The label (final item) is determined by the item this many positions
    /// before the end; everything in between is uniform noise.
    pub gap: usize,
    pub seed: u64,
}

impl Default for LongRangeParams {
    fn default() -> Self {
        Self { n_items: 30, sessions: 2000, length: 10, gap: 5, seed: 0 }
    }
}

/// Sessions of fixed length where the final item is `(anchor + 1) mod n` and
/// the anchor sits `gap` positions before the end — information no local
/// transition pattern can carry.
pub fn long_range(p: &LongRangeParams) -> Result<Vec<Vec<usize>>> {
    if p.n_items < 4 {
        return Err(Error::Config(format!("long_range needs ≥ 4 items, got {}", p.n_items)));
    }
    if p.sessions == 0 {
        return Err(Error::Config("long_range needs at least one session".into()));
    }
    if p.gap == 0 || p.length < p.gap + 1 {
        return Err(Error::Config(format!(
            "long_range needs length ≥ gap+1 ≥ 2, got length {} gap {}",
            p.length, p.gap
        )));
    }

    let n = p.n_items;
    let anchor_pos = p.length - 1 - p.gap;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut sessions = Vec::with_capacity(p.sessions);
    for _ in 0..p.sessions {
        let mut s: Vec<usize> = (0..p.length - 1).map(|_| rng.gen_range(0..n)).collect();
        let label = (s[anchor_pos] + 1) % n;
        s.push(label);
        sessions.push(s);
    }
    Ok(sessions)
}

/// Bridge synthetic index sessions into the ingestion type: items become
/// decimal strings and timestamps follow generation order.
pub fn to_raw_sessions(sessions: &[Vec<usize>], start_ts: i64) -> Vec<RawSession> {
    sessions
        .iter()
        .enumerate()
        .map(|(i, s)| RawSession {
            items: s.iter().map(usize::to_string).collect(),
            last_ts: start_ts + i as i64,
            file_order: i,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markov_is_seeded_and_row_stochastic() {
        let p = MarkovParams { n_items: 6, sessions: 40, seed: 5, ..MarkovParams::default() };
        let a = markov(&p).unwrap();
        let b = markov(&p).unwrap();
        assert_eq!(a, b);
        let c = markov(&MarkovParams { seed: 6, ..p }).unwrap();
        assert_ne!(a.sessions, c.sessions);

        for row in a.transitions.chunks_exact(6) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
        for s in &a.sessions {
            assert!(s.len() >= 4 && s.len() <= 10);
            assert!(s.iter().all(|&v| v < 6));
        }
    }

    #[test]
    fn markov_bigrams_converge_to_the_generating_matrix() {
        let p = MarkovParams {
            n_items: 6,
            sessions: 10_000,
            min_len: 5,
            max_len: 10,
            concentration: 1.0,
            seed: 12,
        };
        let corpus = markov(&p).unwrap();
        let n = p.n_items;
        let mut counts = vec![0usize; n * n];
        for s in &corpus.sessions {
            for w in s.windows(2) {
                counts[w[0] * n + w[1]] += 1;
            }
        }
        for i in 0..n {
            let total: usize = counts[i * n..(i + 1) * n].iter().sum();
            assert!(total > 1000, "row {i} undersampled: {total}");
            let tv: f64 = (0..n)
                .map(|j| {
                    let emp = counts[i * n + j] as f64 / total as f64;
                    (emp - corpus.transitions[i * n + j]).abs()
                })
                .sum::<f64>()
                / 2.0;
            assert!(tv <= 0.05, "row {i} total variation {tv}");
        }
    }

    #[test]
    fn long_range_labels_follow_the_anchor_rule() {
        let p = LongRangeParams { n_items: 30, sessions: 500, length: 10, gap: 5, seed: 3 };
        let sessions = long_range(&p).unwrap();
        assert_eq!(sessions.len(), 500);
        for s in &sessions {
            assert_eq!(s.len(), 10);
            let anchor = s[10 - 1 - 5];
            assert_eq!(*s.last().unwrap(), (anchor + 1) % 30);
        }
        assert_eq!(sessions, long_range(&p).unwrap());
    }

    #[test]
    fn minimal_long_range_length_is_gap_plus_one() {
        // length = gap+1 puts the anchor at position 0.
        let p = LongRangeParams { n_items: 5, sessions: 20, length: 6, gap: 5, seed: 1 };
        let sessions = long_range(&p).unwrap();
        for s in &sessions {
            assert_eq!(*s.last().unwrap(), (s[0] + 1) % 5);
        }
    }

    #[test]
    fn invalid_parameters_are_config_errors() {
        assert!(matches!(
            markov(&MarkovParams { n_items: 2, ..MarkovParams::default() }),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            markov(&MarkovParams { min_len: 1, ..MarkovParams::default() }),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            markov(&MarkovParams { concentration: 0.0, ..MarkovParams::default() }),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            long_range(&LongRangeParams { length: 5, gap: 5, ..LongRangeParams::default() }),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            long_range(&LongRangeParams { sessions: 0, ..LongRangeParams::default() }),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn raw_bridge_preserves_order_and_items() {
        let raws = to_raw_sessions(&[vec![3, 1, 4], vec![1, 5]], 100);
        assert_eq!(raws.len(), 2);
        assert_eq!(raws[0].items, vec!["3", "1", "4"]);
        assert_eq!(raws[0].last_ts, 100);
        assert_eq!(raws[1].last_ts, 101);
        assert_eq!(raws[1].file_order, 1);
    }
}
