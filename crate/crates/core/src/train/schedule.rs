/// Halves the learning rate when the validation loss stops improving.
#[derive(Clone, Debug, PartialEq)]
pub struct Plateau {
    pub factor: f64,
    /// Epochs without improvement tolerated before a reduction.
    pub patience: usize,
    /// Required decrease below the best loss to count as improvement.
    pub threshold: f64,
    pub min_lr: f64,
    lr: f64,
    best: Option<f64>,
    bad_epochs: usize,
}

/// Result of feeding one epoch's validation loss to the schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PlateauStep {
    Improved,
    Waiting,
    Reduced,
    /// A reduction was due but the rate is already at its floor.
    Exhausted,
}

impl Plateau {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        Plateau {
            factor,
            patience,
            threshold: 0.0,
            min_lr,
            lr,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn observe(&mut self, val_loss: f64) -> PlateauStep {
        let improved = match self.best {
            None => true,
            Some(b) => val_loss < b - self.threshold,
        };
        if improved {
            self.best = Some(val_loss);
            self.bad_epochs = 0;
            return PlateauStep::Improved;
        }
        self.bad_epochs += 1;
        if self.bad_epochs < self.patience {
            return PlateauStep::Waiting;
        }
        self.bad_epochs = 0;
        if self.lr <= self.min_lr {
            return PlateauStep::Exhausted;
        }
        self.lr = (self.lr * self.factor).max(self.min_lr);
        PlateauStep::Reduced
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(losses: &[f64]) -> Vec<f64> {
        let mut p = Plateau::new(1.0, 0.5, 1, 1e-6);
        losses
            .iter()
            .map(|&l| {
                p.observe(l);
                p.lr()
            })
            .collect()
    }

    #[test]
    fn decreasing_losses_keep_rate() {
        assert_eq!(trace(&[4.0, 3.0, 2.0, 1.0]), vec![1.0; 4]);
    }

    #[test]
    fn flat_loss_halves_on_second_epoch() {
        assert_eq!(trace(&[1.0, 1.0]), vec![1.0, 0.5]);
    }

    #[test]
    fn rebound_halves_twice() {
        assert_eq!(trace(&[1.0, 0.9, 0.95, 0.96]), vec![1.0, 1.0, 0.5, 0.25]);
    }

    #[test]
    fn floor_is_reported() {
        let mut p = Plateau::new(2e-6, 0.5, 1, 1e-6);
        p.observe(1.0);
        assert_eq!(p.observe(1.0), PlateauStep::Reduced);
        assert_eq!(p.lr(), 1e-6);
        assert_eq!(p.observe(1.0), PlateauStep::Exhausted);
    }
}
