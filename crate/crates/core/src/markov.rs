//! Exact idealized throughputs of the cross atom with window 1.
//!
//! Chains are produced by enumerating the 32 joint outcomes of one round's
//! five link events (relay decode, two downlinks, two overhears) and applying
//! the window-1 tracking update at each destination. A destination holding
//! both the coded packet and the partner's native extracts its own packet.

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarkovError {
    #[error("probability {value} out of (0,1]")]
    ProbabilityOutOfRange { value: f64 },
    #[error("linear system is singular; chain is not absorbing")]
    Singular,
    #[error("grid step {step} out of (0, 0.1]")]
    BadStep { step: f64 },
}

fn check(p: f64) -> Result<(), MarkovError> {
    if p > 0.0 && p <= 1.0 {
        Ok(())
    } else {
        Err(MarkovError::ProbabilityOutOfRange { value: p })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Protocol {
    NonCoupledTracking,
    CoupledTracking,
}

/// Absorbing Markov chain with one-round transitions.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorbingChain {
    pub states: Vec<String>,
    /// `transient[i][j]`: probability of moving from transient state i to j.
    pub transient: Vec<Vec<f64>>,
    pub absorbing: Vec<String>,
    /// `absorb[i][s]`: probability of absorbing from i into label s.
    pub absorb: Vec<Vec<f64>>,
    /// Transient state the system restarts in after each absorbing label.
    pub restart: Vec<usize>,
}

impl AbsorbingChain {
    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    pub fn absorbing_index(&self, label: &str) -> Option<usize> {
        self.absorbing.iter().position(|s| s == label)
    }

    /// Probability of the transition `from -> to`, where `to` may be either a
    /// transient or an absorbing label.
    pub fn probability(&self, from: &str, to: &str) -> Option<f64> {
        let i = self.state_index(from)?;
        if let Some(j) = self.state_index(to) {
            return Some(self.transient[i][j]);
        }
        self.absorbing_index(to).map(|s| self.absorb[i][s])
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.transient
            .iter()
            .zip(&self.absorb)
            .map(|(q, r)| q.iter().sum::<f64>() + r.iter().sum::<f64>())
            .collect()
    }

    fn i_minus_q(&self) -> Vec<Vec<f64>> {
        let n = self.states.len();
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| f64::from(u8::from(i == j)) - self.transient[i][j])
                    .collect()
            })
            .collect()
    }

    /// `[i][s]`: probability of eventually absorbing into label `s` from
    /// transient state `i`.
    pub fn absorption_probabilities(&self) -> Result<Vec<Vec<f64>>, MarkovError> {
        solve(self.i_minus_q(), self.absorb.clone())
    }

    /// Expected number of rounds until absorption, per transient state.
    pub fn expected_sojourn(&self) -> Result<Vec<f64>, MarkovError> {
        let ones = vec![vec![1.0]; self.states.len()];
        Ok(solve(self.i_minus_q(), ones)?.into_iter().map(|r| r[0]).collect())
    }
}

/// Solves `a · x = b` for a matrix right-hand side by Gaussian elimination
/// with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>, MarkovError> {
    let n = a.len();
    let m = b.first().map_or(0, Vec::len);
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .ok_or(MarkovError::Singular)?;
        if a[piv][col].abs() < 1e-14 {
            return Err(MarkovError::Singular);
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            for k in 0..m {
                b[row][k] -= f * b[col][k];
            }
        }
    }
    let mut x = vec![vec![0.0; m]; n];
    for row in (0..n).rev() {
        for k in 0..m {
            let s: f64 = (row + 1..n).map(|j| a[row][j] * x[j][k]).sum();
            x[row][k] = (b[row][k] - s) / a[row][row];
        }
    }
    Ok(x)
}

/// Per-destination window-1 state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Dest {
    Empty,
    Overheard,
    Coded,
    Done,
}

impl Dest {
    fn update(self, coded: bool, overheard: bool) -> Dest {
        if self == Dest::Done {
            return Dest::Done;
        }
        let x = self == Dest::Coded || coded;
        let o = self == Dest::Overheard || overheard;
        match (x, o) {
            (true, true) => Dest::Done,
            (true, false) => Dest::Coded,
            (false, true) => Dest::Overheard,
            (false, false) => Dest::Empty,
        }
    }

    fn letter(self) -> &'static str {
        match self {
            Dest::Empty => "",
            Dest::Overheard => "O",
            Dest::Coded => "X",
            Dest::Done => "1",
        }
    }
}

/// Label of an unordered pair of destination states.
fn pair_label(a: Dest, b: Dest) -> String {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    let s = format!("{}{}", hi.letter(), lo.letter());
    match s.as_str() {
        "" => "phi".to_string(),
        "1" => "1phi".to_string(),
        _ => s,
    }
}

/// The 32 joint outcomes of (decode, downlink 1, downlink 2, overhear 1,
/// overhear 2) with their probabilities.
fn outcomes(p1: f64, p2: f64) -> impl Iterator<Item = ([bool; 5], f64)> {
    let probs = [p1, p1, p1, p2, p2];
    (0u32..32).map(move |bits| {
        let mut ev = [false; 5];
        let mut pr = 1.0;
        for (k, e) in ev.iter_mut().enumerate() {
            *e = bits & (1 << k) != 0;
            pr *= if *e { probs[k] } else { 1.0 - probs[k] };
        }
        (ev, pr)
    })
}

/// Builds the one-round chain of `protocol` for direct-link probability `p1`
/// and overhearing probability `p2`.
pub fn enumerate_round_transitions(p1: f64, p2: f64, protocol: Protocol) -> Result<AbsorbingChain, MarkovError> {
    check(p1)?;
    check(p2)?;
    use Dest::*;
    let pairs: Vec<(Dest, Dest)> = match protocol {
        Protocol::NonCoupledTracking => vec![
            (Empty, Empty),
            (Overheard, Empty),
            (Coded, Empty),
            (Coded, Overheard),
            (Overheard, Overheard),
            (Coded, Coded),
        ],
        Protocol::CoupledTracking => vec![
            (Empty, Empty),
            (Overheard, Empty),
            (Coded, Empty),
            (Coded, Overheard),
            (Overheard, Overheard),
            (Coded, Coded),
            (Done, Empty),
            (Done, Overheard),
            (Done, Coded),
        ],
    };
    let states: Vec<String> = pairs.iter().map(|&(a, b)| pair_label(a, b)).collect();
    let absorbing: Vec<String> = match protocol {
        Protocol::NonCoupledTracking => vec!["1".into(), "2".into()],
        Protocol::CoupledTracking => vec!["2".into()],
    };
    let n = states.len();
    let mut transient = vec![vec![0.0; n]; n];
    let mut absorb = vec![vec![0.0; absorbing.len()]; n];
    for (i, &(a, b)) in pairs.iter().enumerate() {
        for (ev, pr) in outcomes(p1, p2) {
            let [decode, c1, c2, o1, o2] = ev;
            let na = a.update(decode && c1, o1);
            let nb = b.update(decode && c2, o2);
            match protocol {
                Protocol::NonCoupledTracking => {
                    let done = usize::from(na == Done) + usize::from(nb == Done);
                    if done > 0 {
                        absorb[i][done - 1] += pr;
                    } else {
                        let j = states.iter().position(|s| *s == pair_label(na, nb)).ok_or(MarkovError::Singular)?;
                        transient[i][j] += pr;
                    }
                }
                Protocol::CoupledTracking => {
                    if na == Done && nb == Done {
                        absorb[i][0] += pr;
                    } else {
                        let j = states.iter().position(|s| *s == pair_label(na, nb)).ok_or(MarkovError::Singular)?;
                        transient[i][j] += pr;
                    }
                }
            }
        }
    }
    let restart = match protocol {
        // One delivery leaves the other destination holding its overheard
        // packet; two deliveries start from scratch.
        Protocol::NonCoupledTracking => vec![1, 0],
        Protocol::CoupledTracking => vec![0],
    };
    Ok(AbsorbingChain {
        states,
        transient,
        absorbing,
        absorb,
        restart,
    })
}

/// Idealized non-coupled throughput with stored-packet tracking, packets per
/// round.
pub fn th1(p1: f64, p2: f64) -> Result<f64, MarkovError> {
    let chain = enumerate_round_transitions(p1, p2, Protocol::NonCoupledTracking)?;
    let b = chain.absorption_probabilities()?;
    let t = chain.expected_sojourn()?;
    let (phi, o) = (0, 1);
    let p12 = b[o][1];
    let p21 = b[phi][0];
    if p12 + p21 == 0.0 {
        // Every round delivers both packets.
        return Ok(2.0 / t[phi]);
    }
    let big_p1 = p21 / (p12 + p21);
    let big_p2 = p12 / (p12 + p21);
    Ok((big_p1 + 2.0 * big_p2) / (big_p1 * t[o] + big_p2 * t[phi]))
}

/// Idealized coupled throughput with stored-packet tracking, packets per
/// round.
pub fn th2(p1: f64, p2: f64) -> Result<f64, MarkovError> {
    let chain = enumerate_round_transitions(p1, p2, Protocol::CoupledTracking)?;
    let t = chain.expected_sojourn()?;
    Ok(2.0 / t[0])
}

/// Throughput without packet storage, homogeneous form.
pub fn th3(p1: f64, p2: f64) -> Result<f64, MarkovError> {
    check(p1)?;
    check(p2)?;
    Ok(2.0 * p1 * p1 * p2)
}

/// Throughput without packet storage for link probabilities
/// `[relay decode, R->C, R->D, B->C, A->D]`.
pub fn th3_heterogeneous(p: [f64; 5]) -> Result<f64, MarkovError> {
    for &x in &p {
        check(x)?;
    }
    Ok(p[0] * (p[1] * p[3] + p[2] * p[4]))
}

/// Two-hop store-and-forward throughput in packets per slot.
pub fn hop_by_hop(p: f64) -> Result<f64, MarkovError> {
    check(p)?;
    Ok(p / 2.0)
}

/// Whether the cross atom with tracking beats hop-by-hop forwarding per slot
/// at homogeneous probability `p`.
pub fn pnc_viable(p: f64) -> Result<bool, MarkovError> {
    Ok(th1(p, p)? / 2.0 > hop_by_hop(p)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Proposition {
    /// Tracking beats no tracking: th1 - th3 > 0.
    TrackingGain,
    /// Non-coupled beats coupled: th1 - th2 > 0.
    NonCoupledGain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridReport {
    pub min_margin: f64,
    pub argmin: (f64, f64),
    pub all_positive: bool,
    pub points: usize,
}

pub fn margin(prop: Proposition, p1: f64, p2: f64) -> Result<f64, MarkovError> {
    let a = th1(p1, p2)?;
    let b = match prop {
        Proposition::TrackingGain => th3(p1, p2)?,
        Proposition::NonCoupledGain => th2(p1, p2)?,
    };
    Ok(a - b)
}

/// Evaluates the proposition margin on the open grid `(0,1)^2` with spacing
/// `step`.
pub fn grid_check(prop: Proposition, step: f64) -> Result<GridReport, MarkovError> {
    if !(step > 0.0 && step <= 0.1) {
        return Err(MarkovError::BadStep { step });
    }
    let n = (1.0 / step).round() as usize;
    let axis: Vec<f64> = (1..n).map(|i| i as f64 * step).filter(|p| *p < 1.0 - 1e-9).collect();
    let pts: Vec<(f64, f64)> = axis
        .iter()
        .flat_map(|&a| axis.iter().map(move |&b| (a, b)))
        .collect();
    let margins: Vec<(f64, (f64, f64))> = pts
        .par_iter()
        .map(|&(a, b)| margin(prop, a, b).map(|m| (m, (a, b))))
        .collect::<Result<_, _>>()?;
    let (min_margin, argmin) = margins
        .iter()
        .copied()
        .min_by(|x, y| x.0.total_cmp(&y.0))
        .unwrap_or((f64::NAN, (0.0, 0.0)));
    Ok(GridReport {
        min_margin,
        argmin,
        all_positive: margins.iter().all(|(m, _)| *m > 0.0),
        points: margins.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_channels() {
        let c = enumerate_round_transitions(1.0, 1.0, Protocol::NonCoupledTracking).unwrap();
        assert_eq!(c.probability("phi", "2"), Some(1.0));
        assert_eq!(c.absorption_probabilities().unwrap()[0], vec![0.0, 1.0]);
        assert_eq!(c.expected_sojourn().unwrap()[0], 1.0);
        assert_eq!(th1(1.0, 1.0).unwrap(), 2.0);
        assert_eq!(th2(1.0, 1.0).unwrap(), 2.0);
        assert_eq!(th3(1.0, 1.0).unwrap(), 2.0);
    }

    #[test]
    fn x_to_xo_matches_closed_form() {
        let c = enumerate_round_transitions(0.8, 0.8, Protocol::NonCoupledTracking).unwrap();
        assert!((c.probability("X", "XO").unwrap() - 0.0576).abs() < 1e-12);
    }

    #[test]
    fn rows_are_stochastic() {
        for proto in [Protocol::NonCoupledTracking, Protocol::CoupledTracking] {
            let c = enumerate_round_transitions(0.73, 0.41, proto).unwrap();
            for s in c.row_sums() {
                assert!((s - 1.0).abs() < 1e-12);
            }
            for row in c.absorption_probabilities().unwrap() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            }
            assert!(c.expected_sojourn().unwrap().iter().all(|t| *t >= 1.0));
        }
    }

    #[test]
    fn coupled_chain_has_one_delivered_states() {
        let c = enumerate_round_transitions(0.8, 0.8, Protocol::CoupledTracking).unwrap();
        for s in ["1phi", "1O", "1X"] {
            assert!(c.state_index(s).is_some(), "{s}");
        }
        assert_eq!(c.states.len(), 9);
    }

    #[test]
    fn closed_forms() {
        assert!((th3(0.8, 0.8).unwrap() - 1.024).abs() < 1e-12);
        assert!((th3_heterogeneous([0.9, 0.8, 0.8, 0.7, 0.7]).unwrap() - 1.008).abs() < 1e-12);
        assert_eq!(hop_by_hop(0.8).unwrap(), 0.4);
        assert_eq!(hop_by_hop(1.0).unwrap(), 0.5);
        assert!(th1(0.0, 0.5).is_err());
        assert!(th3(0.5, 1.5).is_err());
    }

    #[test]
    fn viability_threshold() {
        assert!(!pnc_viable(0.57).unwrap());
        assert!(pnc_viable(0.58).unwrap());
    }

    #[test]
    fn singular_system_is_reported() {
        let c = AbsorbingChain {
            states: vec!["a".into()],
            transient: vec![vec![1.0]],
            absorbing: vec!["z".into()],
            absorb: vec![vec![0.0]],
            restart: vec![0],
        };
        assert_eq!(c.expected_sojourn(), Err(MarkovError::Singular));
    }

    #[test]
    fn grid_rejects_bad_step() {
        assert!(grid_check(Proposition::TrackingGain, 0.0).is_err());
        assert!(grid_check(Proposition::TrackingGain, 0.2).is_err());
    }
}
