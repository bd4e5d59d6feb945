use serde::{Deserialize, Serialize};

/// Reduce-on-plateau learning rate rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauConfig {
    pub factor: f64,
    pub patience: usize,
    pub min_delta: f64,
    /// Floor as a fraction of the initial learning rate.
    pub min_lr_ratio: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        PlateauConfig {
            factor: 0.1,
            patience: 10,
            min_delta: 1e-4,
            min_lr_ratio: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlateauScheduler {
    pub config: PlateauConfig,
    pub min_lr: f64,
    pub best: f64,
    pub bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(config: PlateauConfig, initial_lr: f64) -> Self {
        PlateauScheduler {
            min_lr: initial_lr * config.min_lr_ratio,
            config,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feed one epoch's monitored value; returns the learning rate to use next.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        if metric < self.best - self.config.min_delta {
            self.best = metric;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.config.patience {
            self.bad_epochs = 0;
            return (lr * self.config.factor).max(self.min_lr);
        }
        lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_metric_keeps_rate() {
        let mut s = PlateauScheduler::new(PlateauConfig::default(), 1e-3);
        for e in 0..50 {
            assert_eq!(s.step(1.0 - 0.01 * e as f64, 1e-3), 1e-3);
        }
    }

    #[test]
    fn flat_metric_drops_one_decade() {
        let cfg = PlateauConfig::default();
        let mut s = PlateauScheduler::new(cfg.clone(), 1e-3);
        let mut lr = 1e-3;
        for _ in 0..cfg.patience {
            lr = s.step(0.5, lr);
            assert_eq!(lr, 1e-3);
        }
        lr = s.step(0.5, lr);
        assert!((lr - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn never_below_floor() {
        let cfg = PlateauConfig {
            patience: 1,
            ..PlateauConfig::default()
        };
        let mut s = PlateauScheduler::new(cfg, 1e-3);
        let mut lr = 1e-3;
        for _ in 0..100 {
            lr = s.step(1.0, lr);
        }
        assert!((lr - 1e-6).abs() < 1e-18);
    }

    /// Independent restatement: drop whenever `patience` epochs have passed
    /// since the last epoch that beat the best by `min_delta` (or since the
    /// last drop).
    fn reference_drops(trace: &[f64], patience: usize, min_delta: f64) -> Vec<usize> {
        let mut drops = Vec::new();
        let mut best = f64::INFINITY;
        let mut anchor: Option<usize> = None;
        for (e, &v) in trace.iter().enumerate() {
            if v + min_delta < best {
                best = v;
                anchor = Some(e);
                continue;
            }
            let since = e - anchor.unwrap_or(0);
            if since >= patience {
                drops.push(e);
                anchor = Some(e);
            }
        }
        drops
    }

    #[test]
    fn noisy_trace_matches_reference() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let trace: Vec<f64> = (0..300)
            .map(|e| 1.0 / (1.0 + 0.05 * e as f64) + rng.random_range(-0.02..0.02))
            .collect();
        let cfg = PlateauConfig {
            patience: 5,
            min_lr_ratio: 0.0,
            ..PlateauConfig::default()
        };
        let mut s = PlateauScheduler::new(cfg.clone(), 1.0);
        let mut lr = 1.0;
        let mut drops = Vec::new();
        for (e, &v) in trace.iter().enumerate() {
            let next = s.step(v, lr);
            if next < lr {
                drops.push(e);
            }
            lr = next;
        }
        assert!(!drops.is_empty());
        assert_eq!(drops, reference_drops(&trace, cfg.patience, cfg.min_delta));
    }
}
