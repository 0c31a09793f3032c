use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{EsilError, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn as_discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(i) => Some(*i),
            Action::Continuous(_) => None,
        }
    }

    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            Action::Discrete(_) => None,
            Action::Continuous(v) => Some(v),
        }
    }
}

/// Action distribution produced by the actor head.
#[derive(Debug, Clone, PartialEq)]
pub enum PolicyDistribution {
    Categorical { logits: Vec<f64> },
    /// Independent normal per action dimension.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

/// Derivatives of a scalar (log-probability or entropy) with respect to the
/// distribution parameters: the logits or mean in `head`, and the log standard
/// deviations in `log_std` (empty for categorical).
#[derive(Debug, Clone, PartialEq)]
pub struct DistGrad {
    pub head: Vec<f64>,
    pub log_std: Vec<f64>,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::INFINITY {
        // Mass is shared uniformly by the +inf logits.
        let k = logits.iter().filter(|&&z| z == f64::INFINITY).count() as f64;
        return logits
            .iter()
            .map(|&z| if z == f64::INFINITY { -k.ln() } else { f64::NEG_INFINITY })
            .collect();
    }
    let sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    logits.iter().map(|&z| z - lse).collect()
}

impl PolicyDistribution {
    pub fn categorical(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return Err(EsilError::InvalidAction("categorical over zero actions".into()));
        }
        if logits.iter().any(|z| z.is_nan()) {
            return Err(EsilError::NonFinite {
                what: "logits",
                segment: "policy".into(),
                index: logits.iter().position(|z| z.is_nan()).unwrap(),
            });
        }
        Ok(Self::Categorical { logits })
    }

    pub fn gaussian(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(EsilError::dim("gaussian std", mean.len(), std.len()));
        }
        if let Some(i) = mean.iter().position(|m| !m.is_finite()) {
            return Err(EsilError::NonFinite {
                what: "gaussian mean",
                segment: "policy".into(),
                index: i,
            });
        }
        if let Some(i) = std.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(EsilError::NonFinite {
                what: "gaussian std (must be finite and positive)",
                segment: "policy".into(),
                index: i,
            });
        }
        Ok(Self::Gaussian { mean, std })
    }

    pub fn action_dim(&self) -> usize {
        match self {
            Self::Categorical { logits } => logits.len(),
            Self::Gaussian { mean, .. } => mean.len(),
        }
    }

    /// Softmax probabilities (categorical only).
    pub fn probabilities(&self) -> Option<Vec<f64>> {
        match self {
            Self::Categorical { logits } => Some(log_softmax(logits).into_iter().map(f64::exp).collect()),
            Self::Gaussian { .. } => None,
        }
    }

    fn check_action<'a>(&self, action: &'a Action) -> Result<ActionRef<'a>> {
        match (self, action) {
            (Self::Categorical { logits }, Action::Discrete(i)) => {
                if *i < logits.len() {
                    Ok(ActionRef::Discrete(*i))
                } else {
                    Err(EsilError::InvalidAction(format!(
                        "index {i} out of range for {} actions",
                        logits.len()
                    )))
                }
            }
            (Self::Gaussian { mean, .. }, Action::Continuous(a)) => {
                if a.len() == mean.len() {
                    Ok(ActionRef::Continuous(a))
                } else {
                    Err(EsilError::dim("continuous action", mean.len(), a.len()))
                }
            }
            (Self::Categorical { .. }, Action::Continuous(_)) => Err(EsilError::InvalidAction(
                "continuous action given to a categorical distribution".into(),
            )),
            (Self::Gaussian { .. }, Action::Discrete(_)) => Err(EsilError::InvalidAction(
                "discrete action given to a gaussian distribution".into(),
            )),
        }
    }

    /// Natural-log probability (categorical) or log-density (gaussian).
    pub fn log_prob(&self, action: &Action) -> Result<f64> {
        Ok(match (self, self.check_action(action)?) {
            (Self::Categorical { logits }, ActionRef::Discrete(i)) => log_softmax(logits)[i],
            (Self::Gaussian { mean, std }, ActionRef::Continuous(a)) => a
                .iter()
                .zip(mean)
                .zip(std)
                .map(|((&x, &m), &s)| {
                    let z = (x - m) / s;
                    -0.5 * z * z - s.ln() - HALF_LN_2PI
                })
                .sum(),
            _ => unreachable!("check_action matched kinds"),
        })
    }

    /// Log-probability together with its gradient with respect to the
    /// distribution parameters.
    pub fn log_prob_with_grad(&self, action: &Action) -> Result<(f64, DistGrad)> {
        match (self, self.check_action(action)?) {
            (Self::Categorical { logits }, ActionRef::Discrete(i)) => {
                let logp = log_softmax(logits);
                let mut head: Vec<f64> = logp.iter().map(|l| -l.exp()).collect();
                head[i] += 1.0;
                Ok((
                    logp[i],
                    DistGrad {
                        head,
                        log_std: Vec::new(),
                    },
                ))
            }
            (Self::Gaussian { mean, std }, ActionRef::Continuous(a)) => {
                let mut value = 0.0;
                let mut head = Vec::with_capacity(a.len());
                let mut log_std = Vec::with_capacity(a.len());
                for ((&x, &m), &s) in a.iter().zip(mean).zip(std) {
                    let z = (x - m) / s;
                    value += -0.5 * z * z - s.ln() - HALF_LN_2PI;
                    head.push(z / s);
                    log_std.push(z * z - 1.0);
                }
                Ok((value, DistGrad { head, log_std }))
            }
            _ => unreachable!("check_action matched kinds"),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            Self::Categorical { logits } => -log_softmax(logits)
                .into_iter()
                .map(|l| if l == f64::NEG_INFINITY { 0.0 } else { l.exp() * l })
                .sum::<f64>(),
            Self::Gaussian { std, .. } => std.iter().map(|s| s.ln() + HALF_LN_2PI + 0.5).sum(),
        }
    }

    pub fn entropy_with_grad(&self) -> (f64, DistGrad) {
        match self {
            Self::Categorical { logits } => {
                let logp = log_softmax(logits);
                let h = self.entropy();
                let head = logp
                    .iter()
                    .map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { -l.exp() * (l + h) })
                    .collect();
                (
                    h,
                    DistGrad {
                        head,
                        log_std: Vec::new(),
                    },
                )
            }
            Self::Gaussian { mean, std } => (
                self.entropy(),
                DistGrad {
                    head: vec![0.0; mean.len()],
                    log_std: vec![1.0; std.len()],
                },
            ),
        }
    }

    /// Draws an action; a deterministic function of the rng state.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        match self {
            Self::Categorical { logits } => {
                let logp = log_softmax(logits);
                let u: f64 = rng.random();
                let mut cumulative = 0.0;
                let mut last_possible = 0;
                for (i, l) in logp.iter().enumerate() {
                    let p = l.exp();
                    if p > 0.0 {
                        last_possible = i;
                    }
                    cumulative += p;
                    if u < cumulative {
                        return Action::Discrete(i);
                    }
                }
                Action::Discrete(last_possible)
            }
            Self::Gaussian { mean, std } => Action::Continuous(
                mean.iter()
                    .zip(std)
                    .map(|(&m, &s)| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + s * z
                    })
                    .collect(),
            ),
        }
    }

    /// Greedy action: argmax (lowest index on ties) or the mean.
    pub fn mode(&self) -> Action {
        match self {
            Self::Categorical { logits } => {
                let mut best = 0;
                for (i, &z) in logits.iter().enumerate() {
                    if z > logits[best] {
                        best = i;
                    }
                }
                Action::Discrete(best)
            }
            Self::Gaussian { mean, .. } => Action::Continuous(mean.clone()),
        }
    }
}

enum ActionRef<'a> {
    Discrete(usize),
    Continuous(&'a [f64]),
}
